//! Dynamics and measurement model matrices.
//!
//! The kinematic state of a `d`-dimensional object stacks position, velocity
//! and acceleration as `[p₁..p_d, v₁..v_d, a₁..a_d]`. With that ordering the
//! lifted operators are Kronecker products `F ⊗ I_d` and `H ⊗ I_d`, and the
//! library stores the mean as a `3 × d` matrix whose row-major flattening is
//! the state vector. `(F ⊗ I_d) x` is then simply `F · M`.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity in m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Parameters of the kinematic and extension evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Scan time Δt in seconds.
    pub scan_time: f64,
    /// Maneuver correlation time θ in seconds.
    pub maneuver_correlation: f64,
    /// Acceleration rms Σ in m/s².
    pub accel_rms: f64,
    /// Temporal decay τ of the extension degrees of freedom, in seconds.
    pub extension_decay: f64,
    /// Degrees of freedom η of the Wishart extension transition. Only the
    /// ground-truth generator draws from that transition.
    pub extension_dof: f64,
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidParameter(format!(
                "{what} has invalid value {v}"
            )))
        };
        if !(self.scan_time >= 0.0) || !self.scan_time.is_finite() {
            return bad("scan_time", self.scan_time);
        }
        if !(self.maneuver_correlation > 0.0) {
            return bad("maneuver_correlation", self.maneuver_correlation);
        }
        if !(self.accel_rms >= 0.0) || !self.accel_rms.is_finite() {
            return bad("accel_rms", self.accel_rms);
        }
        if !(self.extension_decay > 0.0) {
            return bad("extension_decay", self.extension_decay);
        }
        if !(self.extension_dof > 0.0) {
            return bad("extension_dof", self.extension_dof);
        }
        Ok(())
    }

    /// `e^{-Δt/θ}`, the acceleration decay per scan.
    pub fn accel_decay(&self) -> f64 {
        (-self.scan_time / self.maneuver_correlation).exp()
    }

    /// `e^{-Δt/τ}`, the decay applied to the extension degrees of freedom.
    pub fn dof_decay(&self) -> f64 {
        (-self.scan_time / self.extension_decay).exp()
    }
}

impl Default for MotionParams {
    /// Δt = 10 s, θ = 40 s, Σ = 1 g, τ = Δt, η = 50.
    fn default() -> Self {
        MotionParams {
            scan_time: 10.0,
            maneuver_correlation: 40.0,
            accel_rms: STANDARD_GRAVITY,
            extension_decay: 10.0,
            extension_dof: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial dimension d.
    pub dim: usize,
    /// Scaling factor s between extension and measurement spread.
    pub scaling: f64,
    pub motion: MotionParams,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        if !(self.scaling > 0.0) || !self.scaling.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scaling factor must be positive, got {}",
                self.scaling
            )));
        }
        self.motion.validate()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 2,
            scaling: 0.25,
            motion: MotionParams::default(),
        }
    }
}

/// One-dimensional dynamic matrix `F`.
pub fn build_f(p: &MotionParams) -> Matrix3<f64> {
    let dt = p.scan_time;
    Matrix3::new(
        1.0,
        dt,
        0.5 * dt * dt, //
        0.0,
        1.0,
        dt, //
        0.0,
        0.0,
        p.accel_decay(),
    )
}

/// Process noise factor from van Keuk's model: `Σ²(1 - e^{-2Δt/θ}) diag(0, 0, 1)`.
pub fn build_q(p: &MotionParams) -> Matrix3<f64> {
    let q = p.accel_rms.powi(2) * (1.0 - (-2.0 * p.scan_time / p.maneuver_correlation).exp());
    let mut m = Matrix3::zeros();
    m[(2, 2)] = q;
    m
}

/// Row `H = [1 0 0]` selecting position in one dimension.
pub fn measurement_row() -> RowVector3<f64> {
    RowVector3::new(1.0, 0.0, 0.0)
}

/// The map `H ⊗ I_d` from the `3d` kinematic state to the `d` position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementProjection {
    dim: usize,
}

impl MeasurementProjection {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        Ok(MeasurementProjection { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies the projection to a flat `3d` state vector.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != 3 * self.dim {
            return Err(Error::DimensionMismatch {
                expected: 3 * self.dim,
                got: x.len(),
            });
        }
        Ok(x.rows(0, self.dim).into_owned())
    }

    /// Applies the projection to a `3 × d` stacked mean.
    pub fn apply_stacked(&self, m: &DMatrix<f64>) -> DVector<f64> {
        m.row(0).transpose()
    }

    /// Materialized `d × 3d` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        kron(&h, &DMatrix::identity(self.dim, self.dim))
    }
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc))
                    .copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Lifts a 3×3 factor to `A ⊗ I_d`.
pub fn lift(a: &Matrix3<f64>, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_iterator(3, 3, a.iter().copied());
    kron(&a, &DMatrix::identity(d, d))
}

/// Row-major flattening of a `3 × d` stacked mean into the `3d` state vector.
pub fn flatten_stacked(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// Inverse of [`flatten_stacked`].
pub fn stack_vector(x: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if x.len() != 3 * d {
        return Err(Error::DimensionMismatch {
            expected: 3 * d,
            got: x.len(),
        });
    }
    Ok(DMatrix::from_row_slice(3, d, x.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(dt: f64) -> MotionParams {
        MotionParams {
            scan_time: dt,
            ..MotionParams::default()
        }
    }

    #[test]
    fn f_is_identity_at_zero_dt() {
        assert_eq!(build_f(&params(0.0)), Matrix3::identity());
        assert_eq!(build_q(&params(0.0)), Matrix3::zeros());
    }

    #[test]
    fn f_direct_evaluation() {
        let f = build_f(&params(10.0));
        let expected = Matrix3::new(1.0, 10.0, 50.0, 0.0, 1.0, 10.0, 0.0, 0.0, (-0.25f64).exp());
        assert_relative_eq!(f, expected, epsilon = 1e-15);
        assert_relative_eq!(f[(2, 2)], 0.778801, epsilon = 1e-6);
    }

    #[test]
    fn cv_block_semigroup() {
        let a = build_f(&params(3.0));
        let b = build_f(&params(4.5));
        let ab = a * b;
        let c = build_f(&params(7.5));
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(ab[(i, j)], c[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn q_direct_evaluation() {
        let p = MotionParams {
            accel_rms: 9.81,
            ..params(10.0)
        };
        let q = build_q(&p);
        assert_relative_eq!(
            q[(2, 2)],
            9.81f64.powi(2) * (1.0 - (-0.5f64).exp()),
            epsilon = 1e-12
        );
        assert_eq!(q.rank(1e-12), 1);
        assert!(q.symmetric_eigenvalues().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn projection_picks_position() {
        let h = MeasurementProjection::new(2).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(h.apply(&x).unwrap().as_slice(), &[1.0, 2.0]);
        let hm = h.matrix();
        assert_eq!(&hm * hm.transpose(), DMatrix::identity(2, 2));
        let stacked = stack_vector(&x, 2).unwrap();
        assert_eq!(h.apply_stacked(&stacked), h.apply(&x).unwrap());
        assert_eq!(flatten_stacked(&stacked), x);
    }

    #[test]
    fn position_prediction_row() {
        let f = build_f(&params(10.0));
        let hf = measurement_row() * f;
        assert_eq!(hf, RowVector3::new(1.0, 10.0, 50.0));
    }

    #[test]
    fn lifted_application_matches_factorized() {
        let f = build_f(&params(7.0));
        let x = DVector::from_vec(vec![1.5, -2.0, 0.3, 0.7, -0.01, 0.02]);
        let lifted = lift(&f, 2) * &x;
        let m = stack_vector(&x, 2).unwrap();
        let fm = DMatrix::from_iterator(3, 3, f.iter().copied()) * m;
        let diff = (lifted - flatten_stacked(&fm)).amax();
        assert!(diff < 1e-12);
    }

    #[test]
    fn accel_channel_contracts() {
        for dt in [0.0, 0.1, 10.0, 1e4] {
            let d = params(dt).accel_decay();
            assert!(d > 0.0 && d <= 1.0);
        }
    }

    #[test]
    fn validation() {
        assert!(MotionParams {
            maneuver_correlation: 0.0,
            ..params(1.0)
        }
        .validate()
        .is_err());
        assert!(MotionParams {
            scan_time: -1.0,
            ..params(1.0)
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            scaling: 0.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
