use crate::error::{Error, Result};

/// Dense row-major f64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    /// Errors on the first NaN or infinity.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Divergence(format!("non-finite value in {what} at flat index {i}"))),
        }
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() == rank {
            Ok(())
        } else {
            Err(Error::shape(format!("{what} expects rank {rank}, got shape {:?}", self.shape)))
        }
    }
}

/// Named, ordered parameter tensors of a model (also used for gradients of
/// the same model).
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameters concatenated in declaration order.
    fn flatten(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors_mut().iter().map(|t| t.len()).sum();
        if total != flat.len() {
            return Err(Error::shape(format!("{total} parameters, got {} values", flat.len())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

pub(crate) fn same_layout<A: Parameters + ?Sized, B: Parameters + ?Sized>(a: &A, b: &B) -> Result<()> {
    let sa: Vec<_> = a.named_tensors().into_iter().map(|(_, t)| t.shape().to_vec()).collect();
    let sb: Vec<_> = b.named_tensors().into_iter().map(|(_, t)| t.shape().to_vec()).collect();
    if sa == sb {
        Ok(())
    } else {
        Err(Error::shape("parameter layouts differ"))
    }
}
