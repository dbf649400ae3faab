//! The conv-ReLU-maxpool stack with global average pooling, and the MLP
//! projection head on top of it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::polsar::PatchTensor;

use super::layers::{gap, gap_backward, maxpool2, maxpool2_backward, relu, relu_backward, Conv2d, Linear, Pooled};
use super::tensor::{Parameters, Tensor};

/// Layer widths of the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderPlan {
    pub in_channels: usize,
    pub patch_size: usize,
    pub conv_widths: Vec<usize>,
    /// Output widths of the projection head layers; the first layer's input
    /// is the last conv width.
    pub head_dims: Vec<usize>,
}

impl Default for EncoderPlan {
    fn default() -> Self {
        EncoderPlan { in_channels: 9, patch_size: 15, conv_widths: vec![16, 32, 64], head_dims: vec![64, 32] }
    }
}

impl EncoderPlan {
    pub fn feature_dim(&self) -> usize {
        *self.conv_widths.last().unwrap_or(&self.in_channels)
    }

    pub fn output_dim(&self) -> usize {
        *self.head_dims.last().unwrap_or(&self.feature_dim())
    }

    /// Spatial size after each conv+pool stage.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut s = self.patch_size;
        self.conv_widths.iter().map(|_| {
            s /= 2;
            s
        }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_widths.is_empty() || self.head_dims.is_empty() {
            return Err(Error::invalid("encoder needs at least one conv stage and one head layer"));
        }
        let mut s = self.patch_size;
        for _ in &self.conv_widths {
            if s < 2 {
                return Err(Error::invalid(format!(
                    "patch size {} too small for {} pooling stages",
                    self.patch_size,
                    self.conv_widths.len()
                )));
            }
            s /= 2;
        }
        Ok(())
    }
}

/// Stacks patches into a `[batch, channels, h, w]` tensor.
pub fn batch_tensor(patches: &[&PatchTensor]) -> Result<Tensor> {
    let first = patches.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let shape = [first.channels(), first.height(), first.width()];
    let mut data = Vec::with_capacity(patches.len() * first.values().len());
    for p in patches {
        if [p.channels(), p.height(), p.width()] != shape {
            return Err(Error::shape("patches in a batch must share a shape"));
        }
        data.extend_from_slice(p.values());
    }
    Tensor::from_vec(&[patches.len(), shape[0], shape[1], shape[2]], data)
}

/// Convolutional encoder: patch to GAP feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub convs: Vec<Conv2d>,
}

struct StageCache {
    input: Tensor,
    pre_activation: Tensor,
    pooled: Pooled,
}

/// Activations kept for the backward pass.
pub struct ConvCache {
    stages: Vec<StageCache>,
    last_shape: Vec<usize>,
}

impl ConvCache {
    /// Smallest distance of any ReLU input from 0 and any max-pool winner from
    /// the runner-up in its window. Finite differences with a step well below
    /// this margin do not cross a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for s in &self.stages {
            m = s.pre_activation.data().iter().fold(m, |m, v| m.min(v.abs()));
            m = m.min(pool_margin(&relu(&s.pre_activation)));
        }
        m
    }
}

fn pool_margin(x: &Tensor) -> f64 {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let d = x.data();
    let mut m = f64::INFINITY;
    for plane in 0..s[0] * s[1] {
        let base = plane * h * w;
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                let mut v: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(a, b)| d[base + (2 * i + a) * w + 2 * j + b])
                    .collect();
                v.sort_by(|a, b| b.total_cmp(a));
                // all-zero windows (dead units) carry no gradient either way
                if v[0] > 0.0 {
                    m = m.min(v[0] - v[1]);
                }
            }
        }
    }
    m
}

impl ConvEncoder {
    pub fn init<R: Rng + ?Sized>(plan: &EncoderPlan, rng: &mut R) -> Self {
        let mut cin = plan.in_channels;
        let convs = plan
            .conv_widths
            .iter()
            .map(|&w| {
                let c = Conv2d::init(cin, w, rng);
                cin = w;
                c
            })
            .collect();
        ConvEncoder { convs }
    }

    pub fn zeros(plan: &EncoderPlan) -> Self {
        let mut cin = plan.in_channels;
        let convs = plan
            .conv_widths
            .iter()
            .map(|&w| {
                let c = Conv2d::zeros(cin, w);
                cin = w;
                c
            })
            .collect();
        ConvEncoder { convs }
    }

    pub fn feature_dim(&self) -> usize {
        self.convs.last().map_or(0, Conv2d::out_channels)
    }

    pub fn in_channels(&self) -> usize {
        self.convs.first().map_or(0, Conv2d::in_channels)
    }

    /// GAP features `h`, `[batch, feature_dim]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        let mut x = input.clone();
        let mut stages = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let v = conv.forward(&x)?;
            let pooled = maxpool2(&relu(&v))?;
            let next = pooled.output.clone();
            stages.push(StageCache { input: x, pre_activation: v, pooled });
            x = next;
        }
        let h = gap(&x)?;
        h.check_finite("encoder features")?;
        Ok((h, ConvCache { stages, last_shape: x.shape().to_vec() }))
    }

    /// Parameter gradients given `∂L/∂h`.
    pub fn backward(&self, cache: &ConvCache, grad_h: &Tensor) -> Result<ConvEncoder> {
        let mut g = gap_backward(&cache.last_shape, grad_h)?;
        let mut grads = Vec::with_capacity(self.convs.len());
        for (conv, stage) in self.convs.iter().zip(&cache.stages).rev() {
            let g_act = maxpool2_backward(stage.pre_activation.shape(), &stage.pooled, &g)?;
            let g_pre = relu_backward(&stage.pre_activation, &g_act)?;
            let (g_in, gp) = conv.backward(&stage.input, &g_pre)?;
            grads.push(gp);
            g = g_in;
        }
        grads.reverse();
        Ok(ConvEncoder { convs: grads })
    }
}

impl Parameters for ConvEncoder {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.named_tensors().into_iter().map(move |(n, t)| (format!("conv{i}.{n}"), t)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs.iter_mut().flat_map(|c| c.tensors_mut()).collect()
    }
}

/// MLP projection head: linear layers with ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub layers: Vec<Linear>,
}

pub struct HeadCache {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

impl HeadCache {
    pub fn kink_margin(&self) -> f64 {
        let n = self.pre_activations.len();
        self.pre_activations[..n.saturating_sub(1)]
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl ProjectionHead {
    pub fn init<R: Rng + ?Sized>(plan: &EncoderPlan, rng: &mut R) -> Self {
        let mut nin = plan.feature_dim();
        let layers = plan
            .head_dims
            .iter()
            .map(|&d| {
                let l = Linear::init(nin, d, rng);
                nin = d;
                l
            })
            .collect();
        ProjectionHead { layers }
    }

    pub fn zeros(plan: &EncoderPlan) -> Self {
        let mut nin = plan.feature_dim();
        let layers = plan
            .head_dims
            .iter()
            .map(|&d| {
                let l = Linear::zeros(nin, d);
                nin = d;
                l
            })
            .collect();
        ProjectionHead { layers }
    }

    pub fn forward_cached(&self, h: &Tensor) -> Result<(Tensor, HeadCache)> {
        let mut x = h.clone();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let v = layer.forward(&x)?;
            inputs.push(x);
            x = if i + 1 < self.layers.len() { relu(&v) } else { v.clone() };
            pre.push(v);
        }
        x.check_finite("projection output")?;
        Ok((x, HeadCache { inputs, pre_activations: pre }))
    }

    /// Returns `(∂L/∂h, parameter gradients)`.
    pub fn backward(&self, cache: &HeadCache, grad_out: &Tensor) -> Result<(Tensor, ProjectionHead)> {
        let mut g = grad_out.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                g = relu_backward(&cache.pre_activations[i], &g)?;
            }
            let (gx, gp) = layer.backward(&cache.inputs[i], &g)?;
            grads.push(gp);
            g = gx;
        }
        grads.reverse();
        Ok((g, ProjectionHead { layers: grads }))
    }
}

impl Parameters for ProjectionHead {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_tensors().into_iter().map(move |(n, t)| (format!("head{i}.{n}"), t)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Encoder plus projection head: `o = head(encoder(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: ConvEncoder,
    pub head: ProjectionHead,
}

pub struct NetworkCache {
    pub conv: ConvCache,
    pub head: HeadCache,
}

impl NetworkCache {
    pub fn kink_margin(&self) -> f64 {
        self.conv.kink_margin().min(self.head.kink_margin())
    }
}

impl Network {
    pub fn init<R: Rng + ?Sized>(plan: &EncoderPlan, rng: &mut R) -> Self {
        let encoder = ConvEncoder::init(plan, rng);
        let head = ProjectionHead::init(plan, rng);
        Network { encoder, head }
    }

    pub fn zeros(plan: &EncoderPlan) -> Self {
        Network { encoder: ConvEncoder::zeros(plan), head: ProjectionHead::zeros(plan) }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, NetworkCache)> {
        let (h, conv) = self.encoder.forward_cached(input)?;
        let (o, head) = self.head.forward_cached(&h)?;
        Ok((o, NetworkCache { conv, head }))
    }

    pub fn backward(&self, cache: &NetworkCache, grad_o: &Tensor) -> Result<Network> {
        let (grad_h, head) = self.head.backward(&cache.head, grad_o)?;
        let encoder = self.encoder.backward(&cache.conv, &grad_h)?;
        Ok(Network { encoder, head })
    }
}

impl Parameters for Network {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_tensors();
        v.extend(self.head.named_tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}
