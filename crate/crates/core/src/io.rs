//! Binary containers for scenes, label maps, patch datasets and parameter
//! checkpoints, plus PNG rendering of label maps. All numbers are
//! little-endian; real values are stored as f32.

use std::fs;
use std::path::Path;

use crate::classify::{class_color, FeatureExtractor, LinearClassifier};
use crate::error::{Error, Result};
use crate::nn::{ConvEncoder, EncoderPlan, Network, Parameters, Tensor};
use crate::polsar::{CoherencyMatrix, LabelMap, PatchTensor, PolSarScene, Standardizer, CHANNELS};

const SCENE_MAGIC: &[u8] = b"T3BIN\0";
const LABEL_MAGIC: &[u8] = b"LBL\0";
const DATASET_MAGIC: &[u8] = b"PDS\0";
const CKPT_MAGIC: &[u8] = b"CKPT";
const VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.fail(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len()).ok() != Some(magic) {
            return Err(self.fail("bad magic bytes"));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn version(&mut self) -> Result<()> {
        match self.u32()? {
            VERSION => Ok(()),
            v => Err(self.fail(format!("unsupported version {v}"))),
        }
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }

    fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        let len = n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_scene(scene: &PolSarScene) -> Result<Vec<u8>> {
    let mut out = SCENE_MAGIC.to_vec();
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, scene.height())?;
    put_u32(&mut out, scene.width())?;
    put_f32s(&mut out, scene.pixels().iter().flat_map(|p| p.0));
    Ok(out)
}

pub fn decode_scene(bytes: &[u8], path: &Path) -> Result<PolSarScene> {
    let mut r = Reader::new(bytes, path);
    r.magic(SCENE_MAGIC)?;
    r.version()?;
    let (h, w) = (r.usize()?, r.usize()?);
    let n = h.checked_mul(w).and_then(|n| n.checked_mul(9)).ok_or_else(|| r.fail("size overflow"))?;
    let values = r.f32s(n)?;
    r.finish()?;
    let pixels = values.chunks_exact(9).map(|c| CoherencyMatrix(c.try_into().expect("9 values"))).collect();
    PolSarScene::new(h, w, pixels)
}

pub fn write_scene(path: &Path, scene: &PolSarScene) -> Result<()> {
    write_file(path, &encode_scene(scene)?)
}

pub fn read_scene(path: &Path) -> Result<PolSarScene> {
    decode_scene(&read_file(path)?, path)
}

pub fn encode_labels(labels: &LabelMap) -> Result<Vec<u8>> {
    let mut out = LABEL_MAGIC.to_vec();
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, labels.height())?;
    put_u32(&mut out, labels.width())?;
    put_u32(&mut out, labels.num_classes() as usize)?;
    for &l in labels.labels() {
        let l = i32::try_from(l).map_err(|_| Error::invalid(format!("label {l} too large")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let mut r = Reader::new(bytes, path);
    r.magic(LABEL_MAGIC)?;
    r.version()?;
    let (h, w, c) = (r.usize()?, r.usize()?, r.u32()?);
    let n = h.checked_mul(w).ok_or_else(|| r.fail("size overflow"))?;
    let raw = r.i32s(n)?;
    r.finish()?;
    let labels = raw
        .into_iter()
        .map(|l| u32::try_from(l).map_err(|_| r.fail(format!("negative label {l}"))))
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(h, w, c, labels).map_err(|e| r.fail(e.to_string()))
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_file(path, &encode_labels(labels)?)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&read_file(path)?, path)
}

pub fn encode_patches(patches: &[PatchTensor]) -> Result<Vec<u8>> {
    let (channels, size) = patches.first().map_or((CHANNELS, 0), |p| (p.channels(), p.height()));
    if patches.iter().any(|p| p.channels() != channels || p.height() != size || p.width() != size) {
        return Err(Error::shape("all patches must share channels and a square size"));
    }
    let mut out = DATASET_MAGIC.to_vec();
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, patches.len())?;
    put_u32(&mut out, channels)?;
    put_u32(&mut out, size)?;
    put_f32s(&mut out, patches.iter().flat_map(|p| p.values().iter().copied()));
    Ok(out)
}

pub fn decode_patches(bytes: &[u8], path: &Path) -> Result<Vec<PatchTensor>> {
    let mut r = Reader::new(bytes, path);
    r.magic(DATASET_MAGIC)?;
    r.version()?;
    let (count, channels, size) = (r.usize()?, r.usize()?, r.usize()?);
    let per = channels.checked_mul(size * size).ok_or_else(|| r.fail("size overflow"))?;
    let values = r.f32s(count.checked_mul(per).ok_or_else(|| r.fail("size overflow"))?)?;
    r.finish()?;
    if per == 0 {
        return Ok(Vec::new());
    }
    values.chunks_exact(per).map(|c| PatchTensor::new(channels, size, size, c.to_vec())).collect()
}

pub fn write_patches(path: &Path, patches: &[PatchTensor]) -> Result<()> {
    write_file(path, &encode_patches(patches)?)
}

pub fn read_patches(path: &Path) -> Result<Vec<PatchTensor>> {
    decode_patches(&read_file(path)?, path)
}

/// An ordered set of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

const MEAN_KEY: &str = "input.mean";
const STD_KEY: &str = "input.std";
const PATCH_KEY: &str = "input.patch_size";

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn push_parameters<P: Parameters + ?Sized>(&mut self, params: &P) {
        for (name, t) in params.named_tensors() {
            self.push(name, t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::invalid(format!("checkpoint has no tensor {name:?}")))
    }

    /// Copies tensors with matching names into `params`, checking shapes.
    pub fn load_into<P: Parameters + ?Sized>(&self, params: &mut P) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> =
            params.named_tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let mut flat = Vec::new();
        for (name, shape) in names {
            let t = self.require(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
            }
            flat.extend_from_slice(t.data());
        }
        params.assign_flat(&flat)
    }

    /// Checkpoint of a pretrained network together with the input
    /// standardization it was trained under.
    pub fn from_network(network: &Network, standardizer: &Standardizer, patch_size: usize) -> Result<Self> {
        let mut ck = Checkpoint::default();
        ck.push(PATCH_KEY, Tensor::from_vec(&[1], vec![patch_size as f64])?);
        ck.push(MEAN_KEY, Tensor::from_vec(&[standardizer.mean.len()], standardizer.mean.clone())?);
        ck.push(STD_KEY, Tensor::from_vec(&[standardizer.std.len()], standardizer.std.clone())?);
        ck.push_parameters(network);
        Ok(ck)
    }

    /// Layer widths implied by the stored tensor shapes.
    pub fn plan(&self) -> Result<EncoderPlan> {
        let patch_size = self.require(PATCH_KEY)?.data()[0].round() as usize;
        let mut conv_widths = Vec::new();
        let mut in_channels = None;
        while let Some(w) = self.get(&format!("conv{}.weight", conv_widths.len())) {
            if w.shape().len() != 4 {
                return Err(Error::shape("conv weight must be rank 4"));
            }
            in_channels.get_or_insert(w.shape()[1]);
            conv_widths.push(w.shape()[0]);
        }
        let mut head_dims = Vec::new();
        while let Some(w) = self.get(&format!("head{}.weight", head_dims.len())) {
            head_dims.push(w.shape()[0]);
        }
        let in_channels = in_channels.ok_or_else(|| Error::invalid("checkpoint has no conv layers"))?;
        let plan = EncoderPlan { in_channels, patch_size, conv_widths, head_dims };
        plan.validate()?;
        Ok(plan)
    }

    pub fn standardizer(&self) -> Result<Standardizer> {
        Ok(Standardizer { mean: self.require(MEAN_KEY)?.data().to_vec(), std: self.require(STD_KEY)?.data().to_vec() })
    }

    pub fn network(&self) -> Result<Network> {
        let mut net = Network::zeros(&self.plan()?);
        self.load_into(&mut net)?;
        Ok(net)
    }

    pub fn feature_extractor(&self) -> Result<FeatureExtractor> {
        let plan = self.plan()?;
        let mut encoder = ConvEncoder::zeros(&plan);
        self.load_into(&mut encoder)?;
        Ok(FeatureExtractor { standardizer: self.standardizer()?, encoder, patch_size: plan.patch_size })
    }

    pub fn classifier(&self) -> Result<Option<LinearClassifier>> {
        let Some(w) = self.get("classifier.weight") else {
            return Ok(None);
        };
        if w.shape().len() != 2 {
            return Err(Error::shape("classifier weight must be rank 2"));
        }
        let mut clf = LinearClassifier::zeros(w.shape()[1], w.shape()[0])?;
        self.load_into(&mut clf)?;
        Ok(Some(clf))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = CKPT_MAGIC.to_vec();
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            put_f32s(&mut out, t.data().iter().copied());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(CKPT_MAGIC)?;
        r.version()?;
        let count = r.usize()?;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let len = r.usize()?;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("tensor name is not UTF-8"))?;
            let rank = r.usize()?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.fail("size overflow"))?;
            let data = r.f32s(n)?;
            ck.push(name, Tensor::from_vec(&shape, data)?);
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}

/// Renders a label map as an 8-bit RGB PNG using the fixed class palette.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let (w, h) = (labels.width() as u32, labels.height() as u32);
    let rgb: Vec<u8> = labels.labels().iter().flat_map(|&l| class_color(l)).collect();
    let img = image::RgbImage::from_raw(w, h, rgb).ok_or_else(|| Error::shape("label map size"))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stage_rng;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn scene_round_trip() {
        let scene = PolSarScene::new(1, 2, vec![CoherencyMatrix::identity(), CoherencyMatrix::diag(0.5, 2.0, 0.25)]).unwrap();
        let bytes = encode_scene(&scene).unwrap();
        assert_eq!(&bytes[..6], b"T3BIN\0");
        assert_eq!(bytes.len(), 6 + 12 + 2 * 9 * 4);
        assert_eq!(decode_scene(&bytes, p()).unwrap(), scene);
    }

    #[test]
    fn label_round_trip_and_truncation() {
        let labels = LabelMap::new(2, 2, 3, vec![0, 1, 2, 3]).unwrap();
        let bytes = encode_labels(&labels).unwrap();
        assert_eq!(decode_labels(&bytes, p()).unwrap(), labels);
        let err = decode_labels(&bytes[..bytes.len() - 1], p()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_labels(&bad, p()).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let plan = EncoderPlan { in_channels: 9, patch_size: 5, conv_widths: vec![3, 4], head_dims: vec![4, 2] };
        let net = Network::init(&plan, &mut stage_rng(2, "ck"));
        let ck = Checkpoint::from_network(&net, &Standardizer::identity(9), 5).unwrap();
        let back = Checkpoint::decode(&ck.encode().unwrap(), p()).unwrap();
        assert_eq!(back.plan().unwrap(), plan);
        let loaded = back.network().unwrap();
        for (a, b) in net.flatten().iter().zip(loaded.flatten()) {
            assert_eq!(*a as f32 as f64, b);
        }
        assert!(back.classifier().unwrap().is_none());
    }

    #[test]
    fn patches_round_trip() {
        let patch = PatchTensor::new(9, 3, 3, (0..81).map(f64::from).collect()).unwrap();
        let bytes = encode_patches(&[patch.clone(), patch.clone()]).unwrap();
        assert_eq!(decode_patches(&bytes, p()).unwrap(), vec![patch.clone(), patch]);
    }
}
