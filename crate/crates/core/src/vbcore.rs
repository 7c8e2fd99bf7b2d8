//! Centralized Gaussian-inverse-Wishart filter with unknown measurement noise.
//!
//! The measurement update is a coordinate-ascent variational Bayes loop over
//! three blocks: the noise-free latent points `z`, the joint kinematic and
//! extension belief `(x, X)`, and the noise covariance `R`. Each block has a
//! closed-form conjugate update; the loop alternates them until the
//! parameters stop moving.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matstat::{spd_inverse, symmetrize, SpdMatrix};
use crate::model::{build_f, build_q, flatten_stacked, ModelConfig};

/// Factorized belief `N(x; m, P ⊗ X) · IW(X; ν, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GiwState {
    /// Kinematic mean stacked as `3 × d` (rows: position, velocity, acceleration).
    pub mean: DMatrix<f64>,
    /// 3×3 kinematic covariance factor `P`.
    pub factor: Matrix3<f64>,
    /// Inverse-Wishart degrees of freedom ν.
    pub dof: f64,
    /// Inverse-Wishart scale `V`.
    pub scale: SpdMatrix,
}

impl GiwState {
    pub fn new(
        mean: DMatrix<f64>,
        factor: Matrix3<f64>,
        dof: f64,
        scale: SpdMatrix,
    ) -> Result<Self> {
        let s = GiwState {
            mean,
            factor,
            dof,
            scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.mean.nrows() != 3 || self.mean.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: 3 * d,
                got: self.mean.len(),
            });
        }
        let p = DMatrix::from_iterator(3, 3, self.factor.iter().copied());
        SpdMatrix::new(p)?;
        if !(self.dof > d as f64 + 1.0) {
            return Err(Error::InvalidParameter(format!(
                "extension dof {} must exceed d + 1",
                self.dof
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn position(&self) -> DVector<f64> {
        self.mean.row(0).transpose()
    }

    /// Kinematic mean as a flat `3d` vector ordered `[p, v, a]`.
    pub fn state_vector(&self) -> DVector<f64> {
        flatten_stacked(&self.mean)
    }

    /// `E[X] = V / (ν - d - 1)`.
    pub fn extension_mean(&self) -> Result<DMatrix<f64>> {
        let denom = self.dof - self.dim() as f64 - 1.0;
        if denom <= 0.0 {
            return Err(Error::UndefinedMoment(format!(
                "extension mean needs dof > d + 1, got {}",
                self.dof
            )));
        }
        Ok(self.scale.as_matrix() / denom)
    }

    /// `⟨X⁻¹⟩ = ν V⁻¹`.
    pub fn extension_precision(&self) -> Result<DMatrix<f64>> {
        Ok(spd_inverse(self.scale.as_matrix())? * self.dof)
    }
}

/// Inverse-Wishart belief `IW(R; υ, U)` over the measurement noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBelief {
    pub dof: f64,
    pub scale: SpdMatrix,
}

impl NoiseBelief {
    /// Requires `υ > d - 1`. The initial belief sits at `υ = d + 1`, where the
    /// precision `υ U⁻¹` is defined but the mean is not.
    pub fn new(dof: f64, scale: SpdMatrix) -> Result<Self> {
        if !(dof > scale.dim() as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "noise dof {dof} must exceed d - 1"
            )));
        }
        Ok(NoiseBelief { dof, scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    /// `E[R] = U / (υ - d - 1)`.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        let denom = self.dof - self.dim() as f64 - 1.0;
        if denom <= 0.0 {
            return Err(Error::UndefinedMoment(format!(
                "noise mean needs dof > d + 1, got {}",
                self.dof
            )));
        }
        Ok(self.scale.as_matrix() / denom)
    }

    /// `⟨R⁻¹⟩ = υ U⁻¹`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        Ok(spd_inverse(self.scale.as_matrix())? * self.dof)
    }
}

/// Gaussian posterior `N(z; μ̂, Σ̂)` of one noise-free measurement point.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: DVector<f64>,
    /// Zero in the neglected-noise limit.
    pub sigma: DMatrix<f64>,
}

/// Raw per-batch sums of the latent expectations. These are the quantities a
/// node contributes to network consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSums {
    /// Number of measurements (real-valued after averaging).
    pub count: f64,
    /// `Σ ⟨z⟩`
    pub sum_z: DVector<f64>,
    /// `Σ ⟨z zᵀ⟩`
    pub sum_zz: DMatrix<f64>,
    /// `Σ ⟨(y - z)(y - z)ᵀ⟩`
    pub sum_residual: DMatrix<f64>,
}

impl LatentSums {
    pub fn zeros(d: usize) -> Self {
        LatentSums {
            count: 0.0,
            sum_z: DVector::zeros(d),
            sum_zz: DMatrix::zeros(d, d),
            sum_residual: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.sum_z.len()
    }

    /// Converts network-averaged sums back into global statistics, given the
    /// number of nodes the averages were taken over.
    pub fn averaged_to_stats(&self, n_nodes: f64) -> SufficientStats {
        let total = LatentSums {
            count: self.count * n_nodes,
            sum_z: &self.sum_z * n_nodes,
            sum_zz: &self.sum_zz * n_nodes,
            sum_residual: &self.sum_residual * n_nodes,
        };
        total.to_stats()
    }

    pub fn to_stats(&self) -> SufficientStats {
        let d = self.dim();
        if self.count <= 0.0 {
            return SufficientStats::empty(d);
        }
        let zbar = &self.sum_z / self.count;
        let spread = symmetrize(&(&self.sum_zz / self.count - &zbar * zbar.transpose()));
        SufficientStats {
            count: self.count,
            zbar,
            spread,
            residual: symmetrize(&self.sum_residual),
        }
    }
}

/// Global statistics entering the `(x, X)` and `R` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `N_t`
    pub count: f64,
    /// `z̄ = (1/N_t) Σ ⟨z⟩`
    pub zbar: DVector<f64>,
    /// `𝐒 = (1/N_t) Σ ⟨z zᵀ⟩ - z̄ z̄ᵀ`
    pub spread: DMatrix<f64>,
    /// `Σ ⟨(y - z)(y - z)ᵀ⟩`
    pub residual: DMatrix<f64>,
}

impl SufficientStats {
    pub fn empty(d: usize) -> Self {
        SufficientStats {
            count: 0.0,
            zbar: DVector::zeros(d),
            spread: DMatrix::zeros(d, d),
            residual: DMatrix::zeros(d, d),
        }
    }
}

/// Expected noise precision `⟨R⁻¹⟩` used by the latent update.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePrecision {
    Finite(DMatrix<f64>),
    /// The `R → 0` limit: latent points coincide with the measurements.
    Infinite,
}

/// How the filter treats the measurement noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseTreatment {
    /// Infer `R` jointly with the object state.
    Estimate,
    /// Use a known `R`; the noise belief is not updated.
    Known(SpdMatrix),
    /// Neglect sensor noise (`R = 0`).
    Neglect,
}

impl NoiseTreatment {
    pub fn precision(&self, belief: &NoiseBelief) -> Result<NoisePrecision> {
        match self {
            NoiseTreatment::Estimate => Ok(NoisePrecision::Finite(belief.precision()?)),
            NoiseTreatment::Known(r) => Ok(NoisePrecision::Finite(spd_inverse(r.as_matrix())?)),
            NoiseTreatment::Neglect => Ok(NoisePrecision::Infinite),
        }
    }

    pub fn estimates_noise(&self) -> bool {
        matches!(self, NoiseTreatment::Estimate)
    }
}

/// Time update: kinematic prediction plus the heuristic inverse-Wishart
/// extension prediction that keeps `E[X]` fixed while decaying ν toward `d + 3`.
pub fn predict(prior: &GiwState, cfg: &ModelConfig) -> Result<GiwState> {
    let d = prior.dim() as f64;
    if !(prior.dof > d + 1.0) {
        return Err(Error::InvalidParameter(format!(
            "prior extension dof {} must exceed d + 1",
            prior.dof
        )));
    }
    let f = build_f(&cfg.motion);
    let q = build_q(&cfg.motion);
    let f_dyn = DMatrix::from_iterator(3, 3, f.iter().copied());
    let mean = f_dyn * &prior.mean;
    let factor = f * prior.factor * f.transpose() + q;
    let factor = (factor + factor.transpose()) * 0.5;
    let dof = d + 3.0 + cfg.motion.dof_decay() * (prior.dof - d - 3.0);
    let ratio = (dof - d - 1.0) / (prior.dof - d - 1.0);
    let scale = prior.scale.scaled(ratio)?;
    Ok(GiwState {
        mean,
        factor,
        dof,
        scale,
    })
}

fn check_batch(batch: &[DVector<f64>], d: usize) -> Result<()> {
    for y in batch {
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: y.len(),
            });
        }
    }
    Ok(())
}

/// Latent posteriors `q(z)` for every measurement of a batch.
///
/// `Σ̂ = (⟨R⁻¹⟩ + ⟨X⁻¹⟩/s)⁻¹` does not depend on the measurement and is
/// computed once.
pub fn compute_latents(
    batch: &[DVector<f64>],
    state: &GiwState,
    noise: &NoisePrecision,
    cfg: &ModelConfig,
) -> Result<Vec<LatentPosterior>> {
    let d = state.dim();
    check_batch(batch, d)?;
    let precision = match noise {
        NoisePrecision::Infinite => {
            return Ok(batch
                .iter()
                .map(|y| LatentPosterior {
                    mu: y.clone(),
                    sigma: DMatrix::zeros(d, d),
                })
                .collect())
        }
        NoisePrecision::Finite(p) => p,
    };
    if precision.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: precision.nrows(),
        });
    }
    let ext_precision = state.extension_precision()? / cfg.scaling;
    let sigma = spd_inverse(&(precision + &ext_precision))?;
    let gain = &sigma * precision;
    let offset = &sigma * (&ext_precision * state.position());
    Ok(batch
        .iter()
        .map(|y| LatentPosterior {
            mu: &gain * y + &offset,
            sigma: sigma.clone(),
        })
        .collect())
}

/// Sums of `⟨z⟩`, `⟨z zᵀ⟩ = Σ̂ + μ̂μ̂ᵀ` and `⟨(y-z)(y-z)ᵀ⟩ = (y-μ̂)(y-μ̂)ᵀ + Σ̂`.
pub fn accumulate(batch: &[DVector<f64>], latents: &[LatentPosterior], d: usize) -> LatentSums {
    let mut sums = LatentSums::zeros(d);
    for (y, q) in batch.iter().zip(latents) {
        sums.count += 1.0;
        sums.sum_z += &q.mu;
        sums.sum_zz += &q.sigma + &q.mu * q.mu.transpose();
        let r = y - &q.mu;
        sums.sum_residual += &q.sigma + &r * r.transpose();
    }
    sums
}

/// VBE step: latent posteriors and the statistics they induce.
pub fn update_latents(
    batch: &[DVector<f64>],
    state: &GiwState,
    noise: &NoisePrecision,
    cfg: &ModelConfig,
) -> Result<(Vec<LatentPosterior>, SufficientStats)> {
    let latents = compute_latents(batch, state, noise, cfg)?;
    let stats = accumulate(batch, &latents, state.dim()).to_stats();
    Ok((latents, stats))
}

/// Innovation factor `b = s/N + H P Hᵀ` and gain `w = P Hᵀ / b`.
pub fn gain(factor: &Matrix3<f64>, count: f64, scaling: f64) -> (f64, Vector3<f64>) {
    let b = scaling / count + factor[(0, 0)];
    let w = factor.column(0) / b;
    (b, w.into_owned())
}

/// VBM step for `q(x, X)`. An empty statistic (`N_t = 0`) leaves the
/// prediction untouched.
pub fn update_state(
    pred: &GiwState,
    stats: &SufficientStats,
    cfg: &ModelConfig,
) -> Result<GiwState> {
    if stats.count <= 0.0 {
        return Ok(pred.clone());
    }
    let d = pred.dim();
    if stats.zbar.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: stats.zbar.len(),
        });
    }
    let n = stats.count;
    let (b, w) = gain(&pred.factor, n, cfg.scaling);
    let innovation = &stats.zbar - pred.position();
    let w_dyn = DVector::from_iterator(3, w.iter().copied());
    let mean = &pred.mean + &w_dyn * innovation.transpose();
    let factor = pred.factor - w * w.transpose() * b;
    let factor = (factor + factor.transpose()) * 0.5;
    let dof = pred.dof + n;
    let scale = pred.scale.as_matrix()
        + &stats.spread * (n / cfg.scaling)
        + &innovation * innovation.transpose() / b;
    Ok(GiwState {
        mean,
        factor,
        dof,
        scale: SpdMatrix::new(symmetrize(&scale))?,
    })
}

/// VBM step for `q(R)`: `υ̂ = υ + N`, `Û = U + Σ⟨(y-z)(y-z)ᵀ⟩`.
pub fn update_noise(prior: &NoiseBelief, stats: &SufficientStats) -> Result<NoiseBelief> {
    if stats.count <= 0.0 {
        return Ok(prior.clone());
    }
    let scale = prior.scale.as_matrix() + &stats.residual;
    Ok(NoiseBelief {
        dof: prior.dof + stats.count,
        scale: SpdMatrix::new(symmetrize(&scale))?,
    })
}

/// Inner-loop controls for the VB measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbOptions {
    pub max_iters: usize,
    /// Stop once the largest relative parameter change drops below this.
    pub tolerance: f64,
    /// Start the iterate from the prediction instead of the per-scan reset.
    pub warm_start: bool,
    pub record_trace: bool,
    /// Per-scan reset `V⁰ = c · I` (m²).
    pub init_extension_scale: f64,
    /// Per-scan reset `ν⁰ = d + 1 + excess`.
    pub init_extension_dof_excess: f64,
}

impl Default for VbOptions {
    fn default() -> Self {
        VbOptions {
            max_iters: 20,
            tolerance: 1e-6,
            warm_start: false,
            record_trace: false,
            // 0.1 km² expressed in m²
            init_extension_scale: 1e5,
            init_extension_dof_excess: 0.1,
        }
    }
}

impl VbOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter(
                "tolerance must be nonnegative".into(),
            ));
        }
        if !(self.init_extension_scale > 0.0) || !(self.init_extension_dof_excess > 0.0) {
            return Err(Error::InvalidParameter(
                "initial extension scale and dof excess must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The per-scan starting iterate: position at the measurement mean,
    /// velocity and acceleration zero, `P⁰ = P_{t|t-1}`, `V⁰ = c·I`,
    /// `ν⁰ = d + 1 + excess`.
    pub fn initial_iterate(
        &self,
        pred: &GiwState,
        measurement_mean: &DVector<f64>,
    ) -> Result<GiwState> {
        if self.warm_start {
            return Ok(pred.clone());
        }
        let d = pred.dim();
        let mut mean = DMatrix::zeros(3, d);
        mean.row_mut(0).copy_from(&measurement_mean.transpose());
        Ok(GiwState {
            mean,
            factor: pred.factor,
            dof: d as f64 + 1.0 + self.init_extension_dof_excess,
            scale: SpdMatrix::scaled_identity(d, self.init_extension_scale)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VbDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative change at the last iteration (infinite after one).
    pub final_delta: f64,
    /// Per-iteration deltas, only filled when `record_trace` is set.
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbOutcome {
    pub state: GiwState,
    pub noise: NoiseBelief,
    pub diagnostics: VbDiagnostics,
}

fn rel_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm().max(f64::MIN_POSITIVE);
    (new - old).norm() / denom
}

/// The parameters watched for convergence: `m̂`, `E[X]` and `E[R]`.
#[derive(Debug, Clone)]
pub(crate) struct Watched {
    mean: DMatrix<f64>,
    extension: DMatrix<f64>,
    noise: Option<DMatrix<f64>>,
}

impl Watched {
    pub(crate) fn of(state: &GiwState, noise: &NoiseBelief, track_noise: bool) -> Result<Self> {
        Ok(Watched {
            mean: state.mean.clone(),
            extension: state.extension_mean()?,
            noise: if track_noise {
                Some(noise.mean()?)
            } else {
                None
            },
        })
    }

    pub(crate) fn delta(&self, previous: &Watched) -> f64 {
        let mut delta = rel_change(&self.mean, &previous.mean)
            .max(rel_change(&self.extension, &previous.extension));
        if let (Some(a), Some(b)) = (&self.noise, &previous.noise) {
            delta = delta.max(rel_change(a, b));
        }
        delta
    }
}

pub fn batch_mean(batch: &[DVector<f64>]) -> Option<DVector<f64>> {
    let first = batch.first()?;
    let mut acc = DVector::zeros(first.len());
    for y in batch {
        acc += y;
    }
    Some(acc / batch.len() as f64)
}

/// Full VB measurement update on a (pooled) batch.
///
/// An empty batch returns the prediction and the noise prior unchanged.
pub fn vb_measurement_update(
    pred: &GiwState,
    noise_prior: &NoiseBelief,
    batch: &[DVector<f64>],
    cfg: &ModelConfig,
    treatment: &NoiseTreatment,
    opts: &VbOptions,
) -> Result<VbOutcome> {
    opts.validate()?;
    let Some(ybar) = batch_mean(batch) else {
        return Ok(VbOutcome {
            state: pred.clone(),
            noise: noise_prior.clone(),
            diagnostics: VbDiagnostics::default(),
        });
    };
    check_batch(batch, pred.dim())?;
    let track_noise = treatment.estimates_noise();
    let mut state = opts.initial_iterate(pred, &ybar)?;
    let mut noise = noise_prior.clone();
    let mut previous: Option<Watched> = None;
    let mut diag = VbDiagnostics {
        final_delta: f64::INFINITY,
        ..VbDiagnostics::default()
    };

    for iter in 1..=opts.max_iters {
        let precision = treatment.precision(&noise)?;
        let (_, stats) = update_latents(batch, &state, &precision, cfg)?;
        state = update_state(pred, &stats, cfg)?;
        if track_noise {
            noise = update_noise(noise_prior, &stats)?;
        }
        let watched = Watched::of(&state, &noise, track_noise)?;
        let delta = previous
            .as_ref()
            .map_or(f64::INFINITY, |p| watched.delta(p));
        previous = Some(watched);
        diag.iterations = iter;
        diag.final_delta = delta;
        if opts.record_trace {
            diag.deltas.push(delta);
        }
        // With R neglected the latents equal the measurements, so one pass is exact.
        if matches!(treatment, NoiseTreatment::Neglect) || delta < opts.tolerance {
            diag.converged = true;
            break;
        }
    }
    Ok(VbOutcome {
        state,
        noise,
        diagnostics: diag,
    })
}
