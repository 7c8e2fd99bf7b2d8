//! Gaussian Wasserstein distance between ellipses and its RMS aggregate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matstat::{is_symmetric, sqrt_psd, symmetrize};

/// An ellipse given by its center and shape matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipseEstimate {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
}

impl EllipseEstimate {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Self {
        EllipseEstimate { center, shape }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

fn check_shape(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.nrows(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) || !is_symmetric(a, 1e-9) {
        return Err(Error::NotSpd(
            "shape matrix must be finite and symmetric".into(),
        ));
    }
    let min_eig = symmetrize(a).symmetric_eigenvalues().min();
    if min_eig < -1e-9 * a.amax().max(1.0) {
        return Err(Error::NotSpd(format!(
            "shape matrix has negative eigenvalue {min_eig}"
        )));
    }
    Ok(())
}

/// Squared distance
/// `‖μ_A - μ_B‖² + tr(A + B - 2 (A^{½} B A^{½})^{½})`.
///
/// Shapes must be symmetric positive semidefinite; a degenerate (flat)
/// ellipse is allowed. Roundoff that would make the result negative is
/// clamped to zero.
pub fn gwd_squared(a: &EllipseEstimate, b: &EllipseEstimate) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.dim(),
        });
    }
    check_shape(&a.shape, d)?;
    check_shape(&b.shape, d)?;
    let loc_term = (&a.center - &b.center).norm_squared();
    if a.shape == b.shape {
        return Ok(loc_term);
    }
    let sa = symmetrize(&a.shape);
    let sb = symmetrize(&b.shape);
    let ra = sqrt_psd(&sa);
    let cross = sqrt_psd(&symmetrize(&(&ra * &sb * &ra)));
    let shape_term = sa.trace() + sb.trace() - 2.0 * cross.trace();
    Ok((loc_term + shape_term).max(0.0))
}

pub fn gwd(a: &EllipseEstimate, b: &EllipseEstimate) -> Result<f64> {
    gwd_squared(a, b).map(f64::sqrt)
}

/// Root mean of squared distances over Monte-Carlo runs.
pub fn rgwe(squared: &[f64]) -> Result<f64> {
    if squared.is_empty() {
        return Err(Error::Empty("squared distances"));
    }
    Ok((squared.iter().sum::<f64>() / squared.len() as f64).sqrt())
}

/// RGWE of one scan with several nodes: squared distances are averaged over
/// nodes (`per_run[r][k]`) and then over runs.
pub fn node_averaged_rgwe(per_run: &[Vec<f64>]) -> Result<f64> {
    let means = per_run
        .iter()
        .map(|nodes| {
            if nodes.is_empty() {
                Err(Error::Empty("node distances"))
            } else {
                Ok(nodes.iter().sum::<f64>() / nodes.len() as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    rgwe(&means)
}
