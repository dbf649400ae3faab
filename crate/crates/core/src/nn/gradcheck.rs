//! Central finite-difference gradient checking.

/// Default perturbation.
pub const FD_STEP: f64 = 1e-4;
/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub numeric: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `point` with
/// step [`FD_STEP`].
pub fn grad_check<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], analytic: &[f64], tolerance: f64) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "one analytic partial per coordinate");
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut worst = (0.0, 0);
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let fp = f(&x);
        x[i] = orig - FD_STEP;
        let fm = f(&x);
        x[i] = orig;
        let n = (fp - fm) / (2.0 * FD_STEP);
        let e = relative_error(analytic[i], n);
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
        numeric.push(n);
    }
    GradCheckReport { max_rel_error: worst.0, worst_index: worst.1, numeric, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let r = grad_check(|x| 3.0 * x[0] - 2.0 * x[1] + 1.0, &[0.7, -1.3], &[3.0, -2.0], 1e-12);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn quadratic() {
        let r = grad_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-6);
        assert!((r.numeric[0] - 6.0).abs() < 1e-6);
        assert!(r.passed());
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = grad_check(|x| x[0] * x[0], &[3.0], &[5.0], 1e-4);
        assert!(!r.passed());
    }
}
