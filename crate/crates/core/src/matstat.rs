//! Symmetric positive definite matrices and the Wishart / inverse-Wishart
//! families used for the extension and noise beliefs.
//!
//! Densities are evaluated in the log domain only. Every inversion of an SPD
//! matrix goes through a Cholesky factorization; if the factorization fails,
//! a jitter of `1e-9 * tr(A) / d` is added to the diagonal and the
//! factorization is retried once.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_FACTOR: f64 = 1e-9;

/// A symmetric positive definite matrix.
///
/// The stored matrix is exactly symmetric: construction checks symmetry to
/// `1e-10` relative and then averages the matrix with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSpd(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("matrix has non-finite entries".into()));
        }
        if !is_symmetric(&m, SYMMETRY_TOL) {
            return Err(Error::NotSpd("matrix is not symmetric".into()));
        }
        let m = symmetrize(&m);
        if Cholesky::new(m.clone()).is_none() {
            return Err(Error::NotSpd("Cholesky factorization failed".into()));
        }
        Ok(SpdMatrix(m))
    }

    pub fn identity(d: usize) -> Self {
        SpdMatrix(DMatrix::identity(d, d))
    }

    /// `c * I_d`; `c` must be positive.
    pub fn scaled_identity(d: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "identity scale must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix(DMatrix::identity(d, d) * c))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        let mut m = DMatrix::zeros(d, d);
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        SpdMatrix::new(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn inverse(&self) -> Result<SpdMatrix> {
        Ok(SpdMatrix(spd_inverse(&self.0)?))
    }

    pub fn ln_det(&self) -> f64 {
        let chol = Cholesky::new(self.0.clone()).expect("SpdMatrix invariant");
        2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        Cholesky::new(self.0.clone())
            .expect("SpdMatrix invariant")
            .l()
    }

    pub fn scaled(&self, c: f64) -> Result<SpdMatrix> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "SPD scale factor must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix(&self.0 * c))
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization with one jittered retry.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() {
        return Err(Error::NotSpd("matrix is not square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd("matrix has non-finite entries".into()));
    }
    let a = symmetrize(a);
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol);
    }
    let d = a.nrows().max(1) as f64;
    let eps = JITTER_FACTOR * a.trace() / d;
    if eps > 0.0 {
        let jittered = &a + DMatrix::identity(a.nrows(), a.ncols()) * eps;
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(chol);
        }
    }
    Err(Error::NotSpd(
        "Cholesky factorization failed after jitter".into(),
    ))
}

/// Inverse of a symmetric positive definite matrix (Cholesky, jitter policy).
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky_with_jitter(a)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Principal square root of a symmetric PSD matrix by eigendecomposition.
/// Eigenvalues are clamped at zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(a).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    vals.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose()))
}

/// Multivariate log-gamma `ln Γ_d(a)`.
pub fn mvlgamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    let mut acc = df * (df - 1.0) / 4.0 * PI.ln();
    for j in 0..d {
        acc += ln_gamma(a - j as f64 / 2.0);
    }
    acc
}

fn check_dof(dof: f64, d: usize) -> Result<()> {
    if !dof.is_finite() || dof <= d as f64 - 1.0 {
        return Err(Error::InvalidParameter(format!(
            "degrees of freedom {dof} must exceed d - 1 = {}",
            d as f64 - 1.0
        )));
    }
    Ok(())
}

/// Wishart parameters `(n, W)` with density proportional to
/// `|X|^{(n-d-1)/2} etr(-W⁻¹X/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    dof: f64,
    scale: SpdMatrix,
}

impl WishartParams {
    pub fn new(dof: f64, scale: SpdMatrix) -> Result<Self> {
        check_dof(dof, scale.dim())?;
        Ok(WishartParams { dof, scale })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }
}

/// Inverse-Wishart parameters `(n, W)` with density proportional to
/// `|Σ|^{-(n+d+1)/2} etr(-Σ⁻¹W/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseWishartParams {
    dof: f64,
    scale: SpdMatrix,
}

impl InverseWishartParams {
    pub fn new(dof: f64, scale: SpdMatrix) -> Result<Self> {
        check_dof(dof, scale.dim())?;
        Ok(InverseWishartParams { dof, scale })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }
}

fn check_same_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `tr(A⁻¹ B)` via a Cholesky solve.
fn trace_inv_product(a: &SpdMatrix, b: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_with_jitter(a.as_matrix())?;
    Ok(chol.solve(b).trace())
}

pub fn wishart_logpdf(x: &SpdMatrix, p: &WishartParams) -> Result<f64> {
    check_same_dim(p.dim(), x.dim())?;
    let d = p.dim() as f64;
    let n = p.dof;
    let tr = trace_inv_product(&p.scale, x.as_matrix())?;
    Ok(
        -0.5 * n * p.scale.ln_det() + 0.5 * (n - d - 1.0) * x.ln_det()
            - 0.5 * n * d * LN_2
            - mvlgamma(p.dim(), 0.5 * n)
            - 0.5 * tr,
    )
}

pub fn invwishart_logpdf(sigma: &SpdMatrix, p: &InverseWishartParams) -> Result<f64> {
    check_same_dim(p.dim(), sigma.dim())?;
    let d = p.dim() as f64;
    let n = p.dof;
    let tr = trace_inv_product(sigma, p.scale.as_matrix())?;
    Ok(0.5 * n * p.scale.ln_det()
        - 0.5 * (n + d + 1.0) * sigma.ln_det()
        - 0.5 * n * d * LN_2
        - mvlgamma(p.dim(), 0.5 * n)
        - 0.5 * tr)
}

/// `E[X] = n W`.
pub fn wishart_mean(p: &WishartParams) -> SpdMatrix {
    SpdMatrix(p.scale.as_matrix() * p.dof)
}

/// `E[Σ] = W / (n - d - 1)`, defined for `n > d + 1`.
pub fn invwishart_mean(p: &InverseWishartParams) -> Result<SpdMatrix> {
    let d = p.dim() as f64;
    let denom = p.dof - d - 1.0;
    if denom <= 0.0 {
        return Err(Error::UndefinedMoment(format!(
            "inverse-Wishart mean needs dof > d + 1, got dof = {}",
            p.dof
        )));
    }
    Ok(SpdMatrix(p.scale.as_matrix() / denom))
}

/// Draw from a Wishart distribution with the Bartlett construction.
///
/// `X = L A Aᵀ Lᵀ` where `W = L Lᵀ`, `A` is lower triangular with
/// `A_ii² ~ χ²(n - i)` and standard normal entries below the diagonal.
/// Fractional degrees of freedom are handled by the chi-square draws.
pub fn sample_wishart<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> SpdMatrix {
    let d = p.dim();
    let l = p.scale.cholesky_lower();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(p.dof - i as f64).expect("dof checked at construction");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let x = symmetrize(&(&la * la.transpose()));
    // A draw can be numerically singular for tiny dof; fall back to jittered form.
    match SpdMatrix::new(x.clone()) {
        Ok(m) => m,
        Err(_) => {
            let eps = JITTER_FACTOR * x.trace().max(f64::MIN_POSITIVE) / d as f64;
            SpdMatrix(x + DMatrix::identity(d, d) * eps)
        }
    }
}

/// Draw from an inverse-Wishart distribution as the inverse of a Wishart draw
/// with scale `W⁻¹`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    p: &InverseWishartParams,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let w = WishartParams::new(p.dof, p.scale.inverse()?)?;
    sample_wishart(&w, rng).inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn wishart_logpdf_at_identity() {
        let p = WishartParams::new(2.0, SpdMatrix::identity(2)).unwrap();
        let got = wishart_logpdf(&SpdMatrix::identity(2), &p).unwrap();
        // ln Γ₂(1) = ln π
        let expected = -2.0 * LN_2 - PI.ln() - 1.0;
        assert_relative_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn scalar_wishart_is_gamma() {
        use statrs::distribution::{Continuous, Gamma};
        for &(n, w) in &[(1.5, 0.7), (4.0, 1.0), (9.3, 3.2)] {
            let p = WishartParams::new(n, diag(&[w])).unwrap();
            // statrs Gamma takes (shape, rate)
            let g = Gamma::new(n / 2.0, 1.0 / (2.0 * w)).unwrap();
            for k in 1..40 {
                let x = 0.25 * k as f64;
                let got = wishart_logpdf(&diag(&[x]), &p).unwrap();
                assert_relative_eq!(got, g.ln_pdf(x), epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn inverse_wishart_logpdf_matches_change_of_variables() {
        // p_IW(Σ; n, W) = p_W(Σ⁻¹; n, W⁻¹) |Σ|^{-(d+1)}
        let w = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let s = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.8, -0.1, -0.1, 0.5])).unwrap();
        let iw = InverseWishartParams::new(5.5, w.clone()).unwrap();
        let wp = WishartParams::new(5.5, w.inverse().unwrap()).unwrap();
        let lhs = invwishart_logpdf(&s, &iw).unwrap();
        let rhs = wishart_logpdf(&s.inverse().unwrap(), &wp).unwrap() - 3.0 * s.ln_det();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn logpdf_decreases_along_trace() {
        let p = WishartParams::new(4.0, SpdMatrix::identity(2)).unwrap();
        // Scale X by c with |X| fixed: use diag(c, 1/c), whose trace grows with c.
        let mut prev = f64::INFINITY;
        for k in 1..30 {
            let c = 1.0 + 0.5 * k as f64;
            let v = wishart_logpdf(&diag(&[c, 1.0 / c]), &p).unwrap();
            assert!(v.is_finite());
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(WishartParams::new(0.5, SpdMatrix::identity(2)).is_err());
        assert!(WishartParams::new(1.0, SpdMatrix::identity(2)).is_err());
        assert!(WishartParams::new(1.01, SpdMatrix::identity(2)).is_ok());
        let p = InverseWishartParams::new(3.0, SpdMatrix::identity(2)).unwrap();
        assert!(matches!(
            invwishart_mean(&p),
            Err(Error::UndefinedMoment(_))
        ));
    }

    #[test]
    fn spd_construction_rejects_bad_input() {
        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SpdMatrix::new(nonsym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdMatrix::new(indefinite).is_err());
        assert!(SpdMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn jitter_rescues_borderline_singular() {
        // PSD but singular: plain Cholesky fails, jitter succeeds.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(a.clone()).is_none());
        assert!(cholesky_with_jitter(&a).is_ok());
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&b).is_err());
    }

    #[test]
    fn means() {
        let p = WishartParams::new(3.0, SpdMatrix::identity(2)).unwrap();
        assert_eq!(
            wishart_mean(&p).as_matrix(),
            &(DMatrix::identity(2, 2) * 3.0)
        );
        let p = WishartParams::new(5.0, diag(&[2.0, 1.0])).unwrap();
        assert_eq!(wishart_mean(&p), diag(&[10.0, 5.0]));
        let p = InverseWishartParams::new(4.0, SpdMatrix::identity(2)).unwrap();
        assert_eq!(invwishart_mean(&p).unwrap(), SpdMatrix::identity(2));
        let p = InverseWishartParams::new(5.0, SpdMatrix::identity(2)).unwrap();
        assert_eq!(invwishart_mean(&p).unwrap(), diag(&[0.5, 0.5]));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = WishartParams::new(3.1, diag(&[2.0, 0.5])).unwrap();
        let a = sample_wishart(&p, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_wishart(&p, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_draws_follow_chi_square() {
        use statrs::distribution::{ChiSquared as ChiSq, ContinuousCDF};
        let p = WishartParams::new(4.0, diag(&[1.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_wishart(&p, &mut rng).as_matrix()[(0, 0)])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let chi = ChiSq::new(4.0).unwrap();
        let mut dmax: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let f = chi.cdf(*x);
            dmax = dmax
                .max((f - i as f64 / n as f64).abs())
                .max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // KS critical value at alpha = 0.01
        let crit = 1.628 / (n as f64).sqrt();
        assert!(dmax < crit, "KS statistic {dmax} >= {crit}");
    }

    #[test]
    fn inverse_roundtrip() {
        let a = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        ))
        .unwrap();
        let back = a.inverse().unwrap().inverse().unwrap();
        let err = (back.as_matrix() - a.as_matrix()).norm() / a.as_matrix().norm();
        assert!(err < 1e-8);
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 3.0]);
        let r = sqrt_psd(&a);
        assert_relative_eq!(&r * &r, a, epsilon = 1e-12);
    }
}
