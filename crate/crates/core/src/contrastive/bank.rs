use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// FIFO queue of encoded positives with mini-batch granularity. Once full,
/// each enqueue evicts the oldest mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    batch_size: Option<usize>,
    batches: VecDeque<Vec<f64>>,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::invalid("memory bank capacity and width must be positive"));
        }
        Ok(MemoryBank { capacity, dim, batch_size: None, batches: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored vectors.
    pub fn len(&self) -> usize {
        self.batches.len() * self.batch_size.unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    /// Appends a `[batch, dim]` block, evicting the oldest block when over
    /// capacity. The first enqueue fixes the batch size, which must divide the
    /// capacity.
    pub fn enqueue(&mut self, batch: &Tensor) -> Result<()> {
        batch.expect_rank(2, "memory bank enqueue")?;
        let (n, d) = (batch.shape()[0], batch.shape()[1]);
        if d != self.dim {
            return Err(Error::shape(format!("bank width {}, batch width {d}", self.dim)));
        }
        match self.batch_size {
            None => {
                if n == 0 || !self.capacity.is_multiple_of(n) {
                    return Err(Error::invalid(format!("batch size {n} does not divide bank capacity {}", self.capacity)));
                }
                self.batch_size = Some(n);
            }
            Some(b) if b != n => {
                return Err(Error::invalid(format!("batch size changed from {b} to {n}")));
            }
            Some(_) => {}
        }
        self.batches.push_back(batch.data().to_vec());
        if self.len() > self.capacity {
            self.batches.pop_front();
        }
        Ok(())
    }

    /// All stored vectors, oldest first, flattened row-major.
    pub fn entries(&self) -> Vec<f64> {
        self.batches.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(tag: f64, n: usize) -> Tensor {
        Tensor::from_vec(&[n, 1], vec![tag; n]).unwrap()
    }

    #[test]
    fn first_enqueue_and_eviction() {
        let mut bank = MemoryBank::new(8, 1).unwrap();
        bank.enqueue(&tagged(1.0, 2)).unwrap();
        assert_eq!(bank.len(), 2);
        for t in 2..=4 {
            bank.enqueue(&tagged(t as f64, 2)).unwrap();
        }
        assert!(bank.is_full());
        bank.enqueue(&tagged(5.0, 2)).unwrap();
        assert_eq!(bank.len(), 8);
        assert_eq!(bank.entries(), vec![2., 2., 3., 3., 4., 4., 5., 5.]);
    }

    #[test]
    fn batch_size_must_stay_fixed() {
        let mut bank = MemoryBank::new(8, 1).unwrap();
        bank.enqueue(&tagged(1.0, 2)).unwrap();
        assert!(bank.enqueue(&tagged(1.0, 4)).is_err());
        let mut bank = MemoryBank::new(8, 1).unwrap();
        assert!(bank.enqueue(&tagged(1.0, 3)).is_err());
    }
}
