//! Distributed tracker: local prediction at every node and the VB
//! measurement update whose global statistics are obtained by ADMM consensus.
//!
//! Each VB iteration runs three phases over the network:
//!
//! 1. VBE: every node computes its latent posteriors from its own batch and
//!    its current local beliefs, and packs the raw sums into a [`StatVector`].
//! 2. Consensus: `L` synchronous ADMM rounds average the payloads.
//! 3. VBM: every node rebuilds the global statistics from its consensus
//!    value (`N_t = N · avg count`, `z̄ = avg Σz / avg count`, ...) and applies
//!    the conjugate `(x, X)` and `R` updates against its own prediction.
//!
//! Nodes without detections still take part in consensus with zero sums.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus, SensorNetwork, StatVector};
use crate::error::{Error, Result};
use crate::matstat::SpdMatrix;
use crate::model::ModelConfig;
use crate::vbcore::{
    accumulate, batch_mean, compute_latents, predict, update_noise, update_state,
    vb_measurement_update, GiwState, LatentSums, NoiseBelief, NoiseTreatment, VbOptions,
};

/// Measurements of one node at one scan.
pub type Batch = Vec<DVector<f64>>;

/// Local belief of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBelief {
    pub state: GiwState,
    pub noise: NoiseBelief,
}

/// Algorithm variants compared in the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgorithmVariant {
    /// Distributed VB with unknown noise covariance.
    Distributed,
    /// Distributed VB with the true noise covariance plugged in.
    DistributedKnownR(SpdMatrix),
    /// Distributed VB ignoring sensor noise (a distributed random-matrix moment update).
    DistributedNoR,
    /// Every node runs the VB update on its own data only.
    NonCooperative,
    /// All measurements pooled at a fusion center.
    Centralized,
}

impl AlgorithmVariant {
    pub fn kind(&self) -> VariantKind {
        match self {
            AlgorithmVariant::Distributed => VariantKind::Dvbeot,
            AlgorithmVariant::DistributedKnownR(_) => VariantKind::DvbeotKnownR,
            AlgorithmVariant::DistributedNoR => VariantKind::DvbeotNoR,
            AlgorithmVariant::NonCooperative => VariantKind::NonCooperative,
            AlgorithmVariant::Centralized => VariantKind::Centralized,
        }
    }

    pub fn noise_treatment(&self) -> NoiseTreatment {
        match self {
            AlgorithmVariant::DistributedKnownR(r) => NoiseTreatment::Known(r.clone()),
            AlgorithmVariant::DistributedNoR => NoiseTreatment::Neglect,
            _ => NoiseTreatment::Estimate,
        }
    }
}

/// Variant names without payload, as used in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "dvbeot")]
    Dvbeot,
    #[serde(rename = "dvbeot-known-r")]
    DvbeotKnownR,
    #[serde(rename = "dvbeot-no-r")]
    DvbeotNoR,
    #[serde(rename = "non-coop")]
    NonCooperative,
    #[serde(rename = "centralized")]
    Centralized,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Dvbeot,
        VariantKind::DvbeotKnownR,
        VariantKind::DvbeotNoR,
        VariantKind::NonCooperative,
        VariantKind::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Dvbeot => "dvbeot",
            VariantKind::DvbeotKnownR => "dvbeot-known-r",
            VariantKind::DvbeotNoR => "dvbeot-no-r",
            VariantKind::NonCooperative => "non-coop",
            VariantKind::Centralized => "centralized",
        }
    }

    /// Materializes the variant; `r_true` is used by the known-noise variant.
    pub fn with_noise(self, r_true: &SpdMatrix) -> AlgorithmVariant {
        match self {
            VariantKind::Dvbeot => AlgorithmVariant::Distributed,
            VariantKind::DvbeotKnownR => AlgorithmVariant::DistributedKnownR(r_true.clone()),
            VariantKind::DvbeotNoR => AlgorithmVariant::DistributedNoR,
            VariantKind::NonCooperative => AlgorithmVariant::NonCooperative,
            VariantKind::Centralized => AlgorithmVariant::Centralized,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant `{s}`")))
    }
}

/// Controls of the distributed measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterOptions {
    /// VB iteration settings. The distributed update always runs
    /// `vb.max_iters` iterations; the centralized update may stop early on
    /// `vb.tolerance`.
    pub vb: VbOptions,
    /// ADMM rounds `L` per VB iteration.
    pub rounds: usize,
    /// ADMM penalty ρ.
    pub rho: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            vb: VbOptions::default(),
            rounds: 30,
            rho: 0.5,
        }
    }
}

impl FilterOptions {
    pub fn validate(&self) -> Result<()> {
        self.vb.validate()?;
        if !(self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// Initial beliefs before the first scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerPriors {
    /// `P_{1|0} = c · I₃`.
    pub kinematic_factor: f64,
    /// `V_{1|0} = c · I` (m²).
    pub extension_scale: f64,
    /// `ν_{1|0} = d + 1 + excess`.
    pub extension_dof_excess: f64,
    /// `U_0 = c · I` (m²).
    pub noise_scale: f64,
    /// `υ_0 = d + 1 + excess`.
    pub noise_dof_excess: f64,
}

impl Default for TrackerPriors {
    /// `P = I₃`, `V = 0.1 km²·I`, `ν = d + 1.1`, `U = 1e-4 km²·I`, `υ = d + 1`,
    /// with km² written out in m².
    fn default() -> Self {
        TrackerPriors {
            kinematic_factor: 1.0,
            extension_scale: 1e5,
            extension_dof_excess: 0.1,
            noise_scale: 1e2,
            noise_dof_excess: 0.0,
        }
    }
}

impl TrackerPriors {
    pub fn initial_belief(&self, position: &DVector<f64>) -> Result<NodeBelief> {
        let d = position.len();
        let mut mean = DMatrix::zeros(3, d);
        mean.row_mut(0).copy_from(&position.transpose());
        let state = GiwState::new(
            mean,
            Matrix3::identity() * self.kinematic_factor,
            d as f64 + 1.0 + self.extension_dof_excess,
            SpdMatrix::scaled_identity(d, self.extension_scale)?,
        )?;
        let noise = NoiseBelief::new(
            d as f64 + 1.0 + self.noise_dof_excess,
            SpdMatrix::scaled_identity(d, self.noise_scale)?,
        )?;
        Ok(NodeBelief { state, noise })
    }
}

/// Local time update; the noise belief is carried over unchanged.
pub fn local_predict(belief: &NodeBelief, cfg: &ModelConfig) -> Result<NodeBelief> {
    Ok(NodeBelief {
        state: predict(&belief.state, cfg)?,
        noise: belief.noise.clone(),
    })
}

fn check_network_inputs(n: usize, beliefs: usize, batches: usize) -> Result<()> {
    for got in [beliefs, batches] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    Ok(())
}

/// Reconstructed counts below this are treated as "no measurements".
const EMPTY_COUNT: f64 = 1e-9;

/// Distributed VB measurement update (one scan).
pub fn distributed_vb_update(
    pred: &[NodeBelief],
    batches: &[Batch],
    net: &SensorNetwork,
    cfg: &ModelConfig,
    variant: &AlgorithmVariant,
    opts: &FilterOptions,
) -> Result<Vec<NodeBelief>> {
    distributed_vb_update_observed(pred, batches, net, cfg, variant, opts, |_, _| {})
}

/// As [`distributed_vb_update`], calling `observe(iteration, beliefs)` after
/// every VBM step.
pub fn distributed_vb_update_observed<F>(
    pred: &[NodeBelief],
    batches: &[Batch],
    net: &SensorNetwork,
    cfg: &ModelConfig,
    variant: &AlgorithmVariant,
    opts: &FilterOptions,
    mut observe: F,
) -> Result<Vec<NodeBelief>>
where
    F: FnMut(usize, &[NodeBelief]),
{
    opts.validate()?;
    let n = net.n_nodes();
    check_network_inputs(n, pred.len(), batches.len())?;
    let d = cfg.dim;
    for b in pred {
        if b.state.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: b.state.dim(),
            });
        }
    }

    if matches!(variant, AlgorithmVariant::Centralized) {
        let pooled: Batch = batches.iter().flatten().cloned().collect();
        let mut vb = opts.vb;
        vb.record_trace = false;
        let out = vb_measurement_update(
            &pred[0].state,
            &pred[0].noise,
            &pooled,
            cfg,
            &NoiseTreatment::Estimate,
            &vb,
        )?;
        let belief = NodeBelief {
            state: out.state,
            noise: out.noise,
        };
        let all = vec![belief; n];
        observe(out.diagnostics.iterations, &all);
        return Ok(all);
    }

    if batches.iter().all(Vec::is_empty) {
        return Ok(pred.to_vec());
    }

    let treatment = variant.noise_treatment();
    let cooperative = !matches!(variant, AlgorithmVariant::NonCooperative);
    let node_count = if cooperative { n as f64 } else { 1.0 };

    let mut current: Vec<NodeBelief> = pred
        .iter()
        .zip(batches)
        .map(|(p, batch)| {
            let start = batch_mean(batch).unwrap_or_else(|| p.state.position());
            Ok(NodeBelief {
                state: opts.vb.initial_iterate(&p.state, &start)?,
                noise: p.noise.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let iterations = if matches!(treatment, NoiseTreatment::Neglect) {
        1
    } else {
        opts.vb.max_iters
    };

    for iter in 1..=iterations {
        // VBE
        let omega: Vec<StatVector> = current
            .iter()
            .zip(batches)
            .map(|(belief, batch)| {
                if batch.is_empty() {
                    return Ok(StatVector::pack(&LatentSums::zeros(d)));
                }
                let precision = treatment.precision(&belief.noise)?;
                let latents = compute_latents(batch, &belief.state, &precision, cfg)?;
                Ok(StatVector::pack(&accumulate(batch, &latents, d)))
            })
            .collect::<Result<_>>()?;

        // Consensus
        let phi = if cooperative {
            run_consensus(net, &omega, opts.rho, opts.rounds)?
        } else {
            omega
        };

        // VBM
        current = pred
            .iter()
            .zip(&phi)
            .map(|(p, phi_k)| {
                let stats = phi_k.unpack(d)?.averaged_to_stats(node_count);
                if stats.count <= EMPTY_COUNT {
                    return Ok(p.clone());
                }
                let state = update_state(&p.state, &stats, cfg)?;
                let noise = if treatment.estimates_noise() {
                    update_noise(&p.noise, &stats)?
                } else {
                    p.noise.clone()
                };
                Ok(NodeBelief { state, noise })
            })
            .collect::<Result<_>>()?;
        observe(iter, &current);
    }
    Ok(current)
}

/// Posterior point estimates of one node after a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEstimate {
    /// Kinematic mean `[p, v, a]` (3d).
    pub kinematic: DVector<f64>,
    /// `E[X]`.
    pub extension: DMatrix<f64>,
    /// `E[R]`; `None` when the noise is neglected or its mean is undefined.
    pub noise: Option<DMatrix<f64>>,
}

impl NodeEstimate {
    pub fn centroid(&self) -> DVector<f64> {
        let d = self.extension.nrows();
        self.kinematic.rows(0, d).into_owned()
    }

    fn of(belief: &NodeBelief, variant: &AlgorithmVariant) -> Result<Self> {
        let noise = match variant.noise_treatment() {
            NoiseTreatment::Estimate => belief.noise.mean().ok(),
            NoiseTreatment::Known(r) => Some(r.as_matrix().clone()),
            NoiseTreatment::Neglect => None,
        };
        Ok(NodeEstimate {
            kinematic: belief.state.state_vector(),
            extension: belief.state.extension_mean()?,
            noise,
        })
    }
}

/// Stateful multi-scan tracker over a fixed network.
///
/// Before the first detections arrive, each node's position prior is its
/// own first-batch mean; a node without first-scan detections takes the
/// network average of the first measurements, obtained by consensus
/// (or by pooling for the centralized variant).
#[derive(Debug, Clone)]
pub struct DistributedTracker {
    net: SensorNetwork,
    cfg: ModelConfig,
    variant: AlgorithmVariant,
    opts: FilterOptions,
    priors: TrackerPriors,
    /// Predicted beliefs for the next scan; empty until initialized.
    predicted: Vec<NodeBelief>,
    scans: usize,
}

impl DistributedTracker {
    pub fn new(
        net: SensorNetwork,
        cfg: ModelConfig,
        variant: AlgorithmVariant,
        opts: FilterOptions,
        priors: TrackerPriors,
    ) -> Result<Self> {
        cfg.validate()?;
        opts.validate()?;
        if let AlgorithmVariant::DistributedKnownR(r) = &variant {
            if r.dim() != cfg.dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.dim,
                    got: r.dim(),
                });
            }
        }
        Ok(DistributedTracker {
            net,
            cfg,
            variant,
            opts,
            priors,
            predicted: Vec::new(),
            scans: 0,
        })
    }

    pub fn network(&self) -> &SensorNetwork {
        &self.net
    }

    pub fn variant(&self) -> &AlgorithmVariant {
        &self.variant
    }

    pub fn scans_processed(&self) -> usize {
        self.scans
    }

    /// Predicted beliefs for the next scan (one per node, or a single
    /// belief for the centralized variant).
    pub fn predicted(&self) -> &[NodeBelief] {
        &self.predicted
    }

    fn is_centralized(&self) -> bool {
        matches!(self.variant, AlgorithmVariant::Centralized)
    }

    fn initialize(&mut self, batches: &[Batch]) -> Result<bool> {
        let d = self.cfg.dim;
        let pooled_sum = batches
            .iter()
            .flatten()
            .fold(DVector::zeros(d), |acc, y| acc + y);
        let pooled_n: usize = batches.iter().map(Vec::len).sum();
        if pooled_n == 0 {
            return Ok(false);
        }
        if self.is_centralized() {
            let start = pooled_sum / pooled_n as f64;
            self.predicted = vec![self.priors.initial_belief(&start)?];
            return Ok(true);
        }
        // Network average of the first measurements, for nodes that saw nothing.
        let omega: Vec<StatVector> = batches
            .iter()
            .map(|b| {
                let mut v: Vec<f64> = b
                    .iter()
                    .fold(DVector::zeros(d), |acc, y| acc + y)
                    .iter()
                    .copied()
                    .collect();
                v.push(b.len() as f64);
                StatVector(v)
            })
            .collect();
        let phi = run_consensus(&self.net, &omega, self.opts.rho, self.opts.rounds)?;
        self.predicted = batches
            .iter()
            .zip(&phi)
            .map(|(b, phi_k)| {
                let start = match batch_mean(b) {
                    Some(m) => m,
                    None => {
                        let count = phi_k.0[d];
                        if count > EMPTY_COUNT {
                            DVector::from_row_slice(&phi_k.0[..d]) / count
                        } else {
                            pooled_sum.clone() / pooled_n as f64
                        }
                    }
                };
                self.priors.initial_belief(&start)
            })
            .collect::<Result<_>>()?;
        Ok(true)
    }

    /// Processes one scan: measurement update with `batches` (one per node),
    /// then local prediction for the next scan. Returns the posterior
    /// estimates of this scan.
    pub fn step(&mut self, batches: &[Batch]) -> Result<Vec<NodeEstimate>> {
        let n = self.net.n_nodes();
        if batches.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: batches.len(),
            });
        }
        for y in batches.iter().flatten() {
            if y.len() != self.cfg.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.dim,
                    got: y.len(),
                });
            }
        }
        self.scans += 1;
        if self.predicted.is_empty() && !self.initialize(batches)? {
            // Nothing observed yet anywhere: report the uninformed prior.
            let zero = DVector::zeros(self.cfg.dim);
            let belief = self.priors.initial_belief(&zero)?;
            let est = NodeEstimate::of(&belief, &self.variant)?;
            let copies = if self.is_centralized() { 1 } else { n };
            return Ok(vec![est; copies]);
        }

        let posterior = if self.is_centralized() {
            let pooled: Batch = batches.iter().flatten().cloned().collect();
            let out = vb_measurement_update(
                &self.predicted[0].state,
                &self.predicted[0].noise,
                &pooled,
                &self.cfg,
                &NoiseTreatment::Estimate,
                &self.opts.vb,
            )?;
            vec![NodeBelief {
                state: out.state,
                noise: out.noise,
            }]
        } else {
            distributed_vb_update(
                &self.predicted,
                batches,
                &self.net,
                &self.cfg,
                &self.variant,
                &self.opts,
            )?
        };
        let estimates = posterior
            .iter()
            .map(|b| NodeEstimate::of(b, &self.variant))
            .collect::<Result<Vec<_>>>()?;
        self.predicted = posterior
            .iter()
            .map(|b| local_predict(b, &self.cfg))
            .collect::<Result<_>>()?;
        Ok(estimates)
    }
}

/// Runs the tracker over a whole measurement stream (`scans[t][k]` is the
/// batch of node `k` at scan `t`). Returns the per-scan, per-node estimates;
/// the centralized variant yields one estimate per scan.
pub fn track(
    scans: &[Vec<Batch>],
    net: &SensorNetwork,
    cfg: &ModelConfig,
    variant: &AlgorithmVariant,
    opts: &FilterOptions,
    priors: &TrackerPriors,
) -> Result<Vec<Vec<NodeEstimate>>> {
    let mut tracker = DistributedTracker::new(net.clone(), *cfg, variant.clone(), *opts, *priors)?;
    scans.iter().map(|batches| tracker.step(batches)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn belief() -> NodeBelief {
        TrackerPriors::default()
            .initial_belief(&DVector::from_vec(vec![100.0, -50.0]))
            .unwrap()
    }

    fn batch(center: (f64, f64), n: usize) -> Batch {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.7;
                DVector::from_vec(vec![center.0 + 80.0 * a.cos(), center.1 + 30.0 * a.sin()])
            })
            .collect()
    }

    #[test]
    fn variant_names_roundtrip() {
        for k in VariantKind::ALL {
            assert_eq!(k.name().parse::<VariantKind>().unwrap(), k);
        }
        assert!("kalman".parse::<VariantKind>().is_err());
    }

    #[test]
    fn local_predict_is_local_and_shared() {
        let b = belief();
        let a1 = local_predict(&b, &cfg()).unwrap();
        let a2 = local_predict(&b, &cfg()).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(a1.state, predict(&b.state, &cfg()).unwrap());
        assert_eq!(a1.noise, b.noise);
    }

    #[test]
    fn dof_fixed_point() {
        let mut b = belief();
        b.state.dof = 5.0;
        assert!((local_predict(&b, &cfg()).unwrap().state.dof - 5.0).abs() < 1e-15);
    }

    #[test]
    fn all_empty_batches_keep_predictions() {
        let net = SensorNetwork::complete(3).unwrap();
        let pred = vec![belief(); 3];
        let out = distributed_vb_update(
            &pred,
            &vec![Vec::new(); 3],
            &net,
            &cfg(),
            &AlgorithmVariant::Distributed,
            &FilterOptions::default(),
        )
        .unwrap();
        assert_eq!(out, pred);
    }

    #[test]
    fn silent_node_still_updates_through_consensus() {
        let net = SensorNetwork::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let pred = vec![belief(); 3];
        let batches = vec![
            batch((100.0, -50.0), 15),
            Vec::new(),
            batch((110.0, -40.0), 12),
        ];
        let out = distributed_vb_update(
            &pred,
            &batches,
            &net,
            &cfg(),
            &AlgorithmVariant::Distributed,
            &FilterOptions::default(),
        )
        .unwrap();
        assert!(out[1].state.dof > pred[1].state.dof + 20.0);
    }

    #[test]
    fn non_cooperative_on_single_node_matches_distributed() {
        let net = SensorNetwork::from_edges(1, &[]).unwrap();
        let pred = vec![belief()];
        let batches = vec![batch((90.0, -45.0), 25)];
        let opts = FilterOptions::default();
        let a = distributed_vb_update(
            &pred,
            &batches,
            &net,
            &cfg(),
            &AlgorithmVariant::NonCooperative,
            &opts,
        )
        .unwrap();
        let b = distributed_vb_update(
            &pred,
            &batches,
            &net,
            &cfg(),
            &AlgorithmVariant::Distributed,
            &opts,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_count_must_match_network() {
        let net = SensorNetwork::complete(2).unwrap();
        let r = distributed_vb_update(
            &[belief(), belief()],
            &[batch((0.0, 0.0), 3)],
            &net,
            &cfg(),
            &AlgorithmVariant::Distributed,
            &FilterOptions::default(),
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn tracker_waits_for_first_detections() {
        let net = SensorNetwork::complete(2).unwrap();
        let mut t = DistributedTracker::new(
            net,
            cfg(),
            AlgorithmVariant::Distributed,
            FilterOptions::default(),
            TrackerPriors::default(),
        )
        .unwrap();
        let est = t.step(&[Vec::new(), Vec::new()]).unwrap();
        assert_eq!(est.len(), 2);
        assert!(t.predicted().is_empty());
        let est = t.step(&[batch((500.0, 20.0), 10), Vec::new()]).unwrap();
        assert_eq!(t.predicted().len(), 2);
        assert!((est[1].centroid()[0] - 500.0).abs() < 100.0);
    }
}
