//! InfoNCE against a bank of constant negatives, with analytic gradients.

use crate::error::{Error, Result};
use crate::nn::Tensor;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateRepresentation);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateRepresentation);
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Gradient w.r.t. `v` of a function of `v/‖v‖`, given the gradient w.r.t.
/// the unit vector: `(I − u uᵀ) g / ‖v‖`.
fn through_normalization(u: &[f64], n: f64, g: &[f64]) -> Vec<f64> {
    let proj = dot(u, g);
    u.iter().zip(g).map(|(ui, gi)| (gi - proj * ui) / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    /// Sum over the batch of the per-anchor losses.
    pub loss: f64,
    pub grad_anchors: Tensor,
    pub grad_positives: Tensor,
}

impl InfoNceOutput {
    pub fn mean_loss(&self) -> f64 {
        self.loss / self.grad_anchors.shape()[0] as f64
    }
}

/// Sum over `i` of `−log(e^{s⁺/τ} / (e^{s⁺/τ} + Σ_j e^{s_j/τ}))`, where `s⁺`
/// is the cosine similarity of anchor `i` to its positive and `s_j` that to
/// bank entry `j`. Bank entries are constants. `negatives` is any number of
/// rows of the same width (an empty set gives zero loss).
pub fn info_nce(anchors: &Tensor, positives: &Tensor, negatives: &[f64], tau: f64) -> Result<InfoNceOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    anchors.expect_rank(2, "info_nce anchors")?;
    if anchors.shape() != positives.shape() {
        return Err(Error::shape(format!(
            "anchors {:?} vs positives {:?}",
            anchors.shape(),
            positives.shape()
        )));
    }
    let dim = anchors.shape()[1];
    if dim == 0 || !negatives.len().is_multiple_of(dim) {
        return Err(Error::shape(format!("bank width does not match representation width {dim}")));
    }
    let bank: Vec<Vec<f64>> = negatives.chunks_exact(dim).map(|v| unit(v).map(|u| u.0)).collect::<Result<_>>()?;
    let inv_tau = 1.0 / tau;
    let mut loss = 0.0;
    let mut ga = Vec::with_capacity(anchors.len());
    let mut gp = Vec::with_capacity(positives.len());
    let mut logits = Vec::with_capacity(bank.len() + 1);
    for (a, p) in anchors.data().chunks_exact(dim).zip(positives.data().chunks_exact(dim)) {
        let (ua, na) = unit(a)?;
        let (up, np) = unit(p)?;
        logits.clear();
        logits.push(dot(&ua, &up) * inv_tau);
        logits.extend(bank.iter().map(|n| dot(&ua, n) * inv_tau));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[0];
        // softmax weights; the positive's weight is reduced by one
        let w0 = (logits[0] - lse).exp() - 1.0;
        let mut g_ua: Vec<f64> = up.iter().map(|x| w0 * inv_tau * x).collect();
        for (n, s) in bank.iter().zip(&logits[1..]) {
            let wj = (s - lse).exp() * inv_tau;
            for (g, x) in g_ua.iter_mut().zip(n) {
                *g += wj * x;
            }
        }
        let g_up: Vec<f64> = ua.iter().map(|x| w0 * inv_tau * x).collect();
        ga.extend(through_normalization(&ua, na, &g_ua));
        gp.extend(through_normalization(&up, np, &g_up));
    }
    if !loss.is_finite() {
        return Err(Error::Divergence("non-finite InfoNCE loss".into()));
    }
    Ok(InfoNceOutput {
        loss,
        grad_anchors: Tensor::from_vec(anchors.shape(), ga)?,
        grad_positives: Tensor::from_vec(positives.shape(), gp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        let v = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &v[..2]).unwrap_err().to_string(), "degenerate representation");
    }

    #[test]
    fn scalar_oracle_case() {
        // <o,o+> = 1, <o,o-> = 0, tau = 1  ->  ln(1 + e^-1)
        let o = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        let out = info_nce(&o, &p, &[0.0, 3.0], 1.0).unwrap();
        assert!((out.loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((out.loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn uniform_similarity_gives_log_k_plus_one() {
        let o = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let bank: Vec<f64> = std::iter::repeat_n([3.0, 0.0], 7).flatten().collect();
        let out = info_nce(&o, &o, &bank, 0.4).unwrap();
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_temperature() {
        let o = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(info_nce(&o, &o, &[], 0.0).is_err());
        assert!(info_nce(&o, &o, &[], -1.0).is_err());
    }

    #[test]
    fn empty_bank_is_zero_loss() {
        let o = Tensor::from_vec(&[1, 2], vec![1.0, 0.5]).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![-1.0, 0.5]).unwrap();
        assert_eq!(info_nce(&o, &p, &[], 0.4).unwrap().loss, 0.0);
    }
}
