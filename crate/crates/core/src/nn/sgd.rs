use crate::error::{Error, Result};

use super::tensor::{same_layout, Parameters};

/// Plain SGD with a step schedule: the rate is multiplied by `factor` at each
/// milestone epoch (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl SgdConfig {
    pub fn constant(learning_rate: f64) -> Self {
        SgdConfig { learning_rate, milestones: Vec::new(), factor: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::invalid("factor must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.factor.powi(passed as i32)
    }

    pub fn step<P: Parameters + ?Sized, G: Parameters + ?Sized>(&self, params: &mut P, grads: &G, epoch: usize) -> Result<()> {
        sgd_step(params, grads, self.learning_rate_at(epoch))
    }
}

/// `p ← p − lr·g`. A non-finite gradient aborts before anything is written.
pub fn sgd_step<P: Parameters + ?Sized, G: Parameters + ?Sized>(params: &mut P, grads: &G, lr: f64) -> Result<()> {
    same_layout(params, grads)?;
    let grads = grads.named_tensors();
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite gradient in {name}")));
    }
    for (p, (_, g)) in params.tensors_mut().into_iter().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn schedule() {
        let cfg = SgdConfig { learning_rate: 0.1, milestones: vec![300, 500], factor: 0.5 };
        assert_eq!(cfg.learning_rate_at(0), 0.1);
        assert_eq!(cfg.learning_rate_at(299), 0.1);
        assert_eq!(cfg.learning_rate_at(300), 0.05);
        assert_eq!(cfg.learning_rate_at(499), 0.05);
        assert_eq!(cfg.learning_rate_at(500), 0.025);
    }

    #[test]
    fn scalar_step_and_zero_gradient() {
        let mut p = Linear::zeros(1, 1);
        p.weight.data_mut()[0] = 1.0;
        let mut g = Linear::zeros(1, 1);
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p.weight.data()[0], 1.0);
        g.weight.data_mut()[0] = 2.0;
        sgd_step(&mut p, &g, 0.1).unwrap();
        assert!((p.weight.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = Linear::zeros(2, 1);
        let mut g = Linear::zeros(2, 1);
        g.bias.data_mut()[0] = f64::NAN;
        let err = sgd_step(&mut p, &g, 0.1).unwrap_err();
        assert!(err.to_string().starts_with("divergence"));
        assert_eq!(p, Linear::zeros(2, 1));
    }
}
