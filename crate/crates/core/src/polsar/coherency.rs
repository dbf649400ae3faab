//! 3×3 Hermitian coherency matrices.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat3 = [[Complex64; 3]; 3];

/// Relative tolerance below which the smallest eigenvalue triggers the
/// regularizing diagonal load before inversion.
pub const SINGULAR_REL_TOL: f64 = 1e-9;
/// Diagonal load applied to near-singular matrices, as a fraction of trace/3.
pub const SINGULAR_LOAD: f64 = 1e-6;

/// Polarimetric coherency matrix, stored as its upper triangle:
/// `[T11, T22, T33, Re T12, Im T12, Re T13, Im T13, Re T23, Im T23]`.
///
/// The lower triangle is implied by Hermitian symmetry, so any stored 9-tuple
/// is Hermitian; diagonal sign and positive semi-definiteness are checked by
/// [`validate_coherency`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoherencyMatrix(pub [f64; 9]);

impl CoherencyMatrix {
    pub const ZERO: CoherencyMatrix = CoherencyMatrix([0.0; 9]);

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        CoherencyMatrix([a, b, c, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    /// Assembles a matrix from its stored 9-tuple (the inverse of [`pixel_features`]).
    pub fn from_features(f: [f64; 9]) -> Self {
        CoherencyMatrix(f)
    }

    /// Reads the upper triangle of a full complex matrix. Imaginary parts of the
    /// diagonal are dropped.
    pub fn from_complex(m: &Mat3) -> Self {
        CoherencyMatrix([
            m[0][0].re, m[1][1].re, m[2][2].re, m[0][1].re, m[0][1].im, m[0][2].re, m[0][2].im,
            m[1][2].re, m[1][2].im,
        ])
    }

    pub fn to_complex(&self) -> Mat3 {
        let f = &self.0;
        let t12 = Complex64::new(f[3], f[4]);
        let t13 = Complex64::new(f[5], f[6]);
        let t23 = Complex64::new(f[7], f[8]);
        let r = |x: f64| Complex64::new(x, 0.0);
        [
            [r(f[0]), t12, t13],
            [t12.conj(), r(f[1]), t23],
            [t13.conj(), t23.conj(), r(f[2])],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn scaled(&self, s: f64) -> Self {
        CoherencyMatrix(self.0.map(|v| v * s))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> [f64; 3] {
        hermitian_eigenvalues(&self.to_complex())
    }

    /// Arithmetic mean; `None` for an empty slice.
    pub fn mean(items: &[CoherencyMatrix]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let mut acc = CoherencyMatrix::ZERO;
        for m in items {
            acc.add_assign(m);
        }
        Some(acc.scaled(1.0 / items.len() as f64))
    }
}

/// The fixed 9-channel real representation of a pixel.
pub fn pixel_features(t: &CoherencyMatrix) -> [f64; 9] {
    t.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherencyIssue {
    NonFinite,
    NegativeDiagonal,
    NotPsd,
}

impl std::fmt::Display for CoherencyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoherencyIssue::NonFinite => "non-finite entry",
            CoherencyIssue::NegativeDiagonal => "negative diagonal",
            CoherencyIssue::NotPsd => "not PSD",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<CoherencyIssue>,
    pub min_eigenvalue: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks diagonal sign and positive semi-definiteness (eigenvalues
/// ≥ −tol·trace). Hermitian symmetry holds by storage.
pub fn validate_coherency(t: &CoherencyMatrix, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !t.is_finite() {
        report.issues.push(CoherencyIssue::NonFinite);
        report.min_eigenvalue = f64::NAN;
        return report;
    }
    if t.0[..3].iter().any(|&d| d < 0.0) {
        report.issues.push(CoherencyIssue::NegativeDiagonal);
    }
    let eig = t.eigenvalues();
    report.min_eigenvalue = eig[2];
    let scale = t.trace().abs();
    if eig[2] < -tol * scale || (scale == 0.0 && eig[2] < 0.0) {
        report.issues.push(CoherencyIssue::NotPsd);
    }
    report
}

/// Eigenvalues of a 3×3 Hermitian matrix, descending, by cyclic complex
/// Jacobi rotations. Accurate to about ε·‖m‖ even for repeated or zero
/// eigenvalues, where invariant-based formulas lose half the digits.
pub fn hermitian_eigenvalues(m: &Mat3) -> [f64; 3] {
    let mut a = *m;
    for _ in 0..64 {
        let off: f64 = (0..3).flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].norm_sqr()).sum();
        let diag: f64 = (0..3).map(|i| a[i][i].re * a[i][i].re).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag || off < f64::MIN_POSITIVE {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            jacobi_rotate(&mut a, p, q);
        }
    }
    let mut e = [a[0][0].re, a[1][1].re, a[2][2].re];
    e.sort_by(|x, y| y.total_cmp(x));
    e
}

/// Applies `a ← Uᴴ a U` with `U` chosen to zero `a[p][q]`.
fn jacobi_rotate(a: &mut Mat3, p: usize, q: usize) {
    let g = a[p][q];
    let mag = g.norm();
    if mag == 0.0 {
        return;
    }
    let theta = (a[q][q].re - a[p][p].re) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let phase = g / mag;
    // U = diag phase correction on q followed by a real Givens rotation.
    let mut u = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    u[p][p] = Complex64::new(c, 0.0);
    u[p][q] = Complex64::new(s, 0.0);
    u[q][p] = -phase.conj() * s;
    u[q][q] = phase.conj() * c;
    let mut au = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            au[i][j] = (0..3).map(|k| a[i][k] * u[k][j]).sum();
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = (0..3).map(|k| u[k][i].conj() * au[k][j]).sum();
        }
    }
    for i in 0..3 {
        a[i][i].im = 0.0;
    }
    a[p][q] = Complex64::new(0.0, 0.0);
    a[q][p] = Complex64::new(0.0, 0.0);
}

pub(crate) fn det3(m: &Mat3) -> Complex64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &Mat3) -> Option<Mat3> {
    let det = det3(m);
    if det.norm() == 0.0 || !det.is_finite() {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    // inverse = adjugate / det; adj[i][j] = cofactor[j][i]
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    let inv_det = det.inv();
    Some(adj.map(|row| row.map(|z| z * inv_det)))
}

/// Real part of tr(A·B).
pub(crate) fn trace_product(a: &Mat3, b: &Mat3) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += (a[i][j] * b[j][i]).re;
        }
    }
    acc
}

/// A coherency matrix paired with its inverse, after the near-singular
/// diagonal load has been applied where needed.
#[derive(Debug, Clone, Copy)]
pub struct Regularized {
    pub matrix: Mat3,
    pub inverse: Mat3,
}

impl Regularized {
    pub fn new(t: &CoherencyMatrix) -> Result<Self> {
        let trace = t.trace();
        let mut matrix = t.to_complex();
        if !trace.is_finite() || trace <= 0.0 {
            return Err(Error::DistanceOverflow);
        }
        if t.eigenvalues()[2] < SINGULAR_REL_TOL * trace {
            let load = SINGULAR_LOAD * trace / 3.0;
            for (i, row) in matrix.iter_mut().enumerate() {
                row[i] += load;
            }
        }
        let inverse = inverse3(&matrix).ok_or(Error::DistanceOverflow)?;
        Ok(Regularized { matrix, inverse })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_valid() {
        assert!(validate_coherency(&CoherencyMatrix::identity(), 1e-9).is_valid());
    }

    #[test]
    fn negative_diagonal_reported() {
        let r = validate_coherency(&CoherencyMatrix::diag(1.0, 1.0, -0.5), 1e-9);
        assert!(r.issues.contains(&CoherencyIssue::NegativeDiagonal));
        assert_eq!(CoherencyIssue::NegativeDiagonal.to_string(), "negative diagonal");
    }

    #[test]
    fn slightly_negative_eigenvalue_is_not_psd() {
        // eigenvalues {2, 1, -1e-3} with nonnegative diagonal: rotate diag(2, 1, -1e-3)
        // in the (2,3) plane so the diagonal stays positive.
        let (c, s) = (0.6f64, 0.8f64);
        let (a, b) = (1.0, -1e-3);
        let t22 = c * c * a + s * s * b;
        let t33 = s * s * a + c * c * b;
        let t23 = c * s * (a - b);
        let t = CoherencyMatrix([2.0, t22, t33, 0.0, 0.0, 0.0, 0.0, t23, 0.0]);
        assert!(t22 > 0.0 && t33 > 0.0);
        let r = validate_coherency(&t, 1e-9);
        assert_eq!(r.issues, vec![CoherencyIssue::NotPsd]);
        assert!((r.min_eigenvalue + 1e-3).abs() < 1e-12);
    }

    #[test]
    fn features_read_out_fixed_order() {
        assert_eq!(pixel_features(&CoherencyMatrix::identity()), [1., 1., 1., 0., 0., 0., 0., 0., 0.]);
        let mut m = CoherencyMatrix::diag(2.0, 1.0, 1.0).to_complex();
        m[0][1] = Complex64::new(0.3, 0.4);
        m[1][0] = m[0][1].conj();
        let t = CoherencyMatrix::from_complex(&m);
        assert_eq!(pixel_features(&t), [2., 1., 1., 0.3, 0.4, 0., 0., 0., 0.]);
    }

    #[test]
    fn complex_round_trip() {
        let t = CoherencyMatrix([3.0, 2.0, 1.0, 0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        assert_eq!(CoherencyMatrix::from_complex(&t.to_complex()), t);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let t = CoherencyMatrix([3.0, 2.0, 1.5, 0.1, -0.2, 0.3, 0.4, -0.5, 0.2]);
        let r = Regularized::new(&t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut z = Complex64::new(0.0, 0.0);
                for k in 0..3 {
                    z += r.matrix[i][k] * r.inverse[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((z - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_gets_loaded() {
        let t = CoherencyMatrix::diag(1.0, 0.0, 0.0);
        let r = Regularized::new(&t).unwrap();
        assert!((r.matrix[1][1].re - 1e-6 / 3.0).abs() < 1e-18);
        assert!(Regularized::new(&CoherencyMatrix::ZERO).is_err());
    }
}
