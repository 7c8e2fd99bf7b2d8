//! Monte-Carlo experiment driver: configuration, orchestration across
//! variants and runs, and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{generate_network, SensorNetwork};
use crate::dfilter::{track, FilterOptions, NodeEstimate, TrackerPriors, VariantKind};
use crate::error::{Error, Result};
use crate::metrics::{gwd_squared, node_averaged_rgwe, EllipseEstimate};
use crate::model::{ModelConfig, MotionParams, STANDARD_GRAVITY};
use crate::simkit::{
    gen_trajectory, sample_stream, scenario_defaults, GroundTruth, ObjectModel, PathSpec,
    ScatterModel, ScenarioConfig, ScenarioId,
};

/// Version string baked in at build time.
pub const PROVENANCE: &str = env!("EOTRACK_GIT_DESCRIBE");

/// Scenario section: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Option<ScenarioId>,
    pub scans: Option<usize>,
    pub scan_time: Option<f64>,
    pub scaling: Option<f64>,
    pub measurement_rate: Option<f64>,
    pub detection_probability: Option<f64>,
    pub noise_covariance: Option<[[f64; 2]; 2]>,
    pub scatter: Option<ScatterModel>,
    pub path: Option<PathSpec>,
    pub object: Option<ObjectModel>,
}

impl ScenarioSection {
    pub fn preset(id: ScenarioId) -> Self {
        ScenarioSection {
            preset: Some(id),
            ..Default::default()
        }
    }

    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let id = self.preset.unwrap_or(ScenarioId::S1);
        let mut cfg = match id {
            ScenarioId::Custom => {
                if self.path.is_none() || self.object.is_none() {
                    return Err(Error::config(
                        "scenario",
                        "a custom scenario needs both `path` and `object`",
                    ));
                }
                ScenarioConfig {
                    id,
                    ..scenario_defaults(ScenarioId::S1)?
                }
            }
            _ => scenario_defaults(id)?,
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                })*
            };
        }
        apply!(
            scans,
            scan_time,
            scaling,
            measurement_rate,
            detection_probability,
            noise_covariance,
            scatter,
            path,
            object
        );
        cfg.validate()
            .map_err(|e| Error::config("scenario", e.to_string()))?;
        Ok(cfg)
    }
}

/// Network section: a random geometric graph or an edge-list file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub nodes: usize,
    pub side: f64,
    pub radius: f64,
    pub edge_list: Option<PathBuf>,
}

impl Default for NetworkSection {
    /// 20 nodes in a 2.5 × 2.5 square linked within 0.8.
    fn default() -> Self {
        NetworkSection {
            nodes: 20,
            side: 2.5,
            radius: 0.8,
            edge_list: None,
        }
    }
}

impl NetworkSection {
    /// Loads the edge list, or generates the graph from `seed`.
    pub fn build(&self, seed: u64) -> Result<SensorNetwork> {
        if let Some(path) = &self.edge_list {
            return SensorNetwork::load(path);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_network(self.nodes, self.side, self.radius, &mut rng)
    }
}

/// Motion model parameters; the scan time comes from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub maneuver_correlation: f64,
    pub accel_rms: f64,
    /// `None` uses the scan time.
    pub extension_decay: Option<f64>,
    pub extension_dof: f64,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            maneuver_correlation: 40.0,
            accel_rms: STANDARD_GRAVITY,
            extension_decay: None,
            extension_dof: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub runs: usize,
    pub variants: Vec<VariantKind>,
    pub output_dir: PathBuf,
    pub scenario: ScenarioSection,
    pub network: NetworkSection,
    pub motion: MotionSection,
    pub filter: FilterOptions,
    pub priors: TrackerPriors,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            runs: 1,
            variants: vec![VariantKind::Dvbeot, VariantKind::Centralized],
            output_dir: PathBuf::from("results"),
            scenario: ScenarioSection::preset(ScenarioId::S1),
            network: NetworkSection::default(),
            motion: MotionSection::default(),
            filter: FilterOptions::default(),
            priors: TrackerPriors::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        serde_path_to_error::deserialize(toml::Deserializer::new(text)).map_err(|e| {
            let path = match e.path().to_string() {
                p if p == "." => "<document>".to_string(),
                p => p,
            };
            let inner = e.into_inner();
            let location = inner
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            Error::config(path, format!("{}{location}", inner.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must list at least one variant"));
        }
        self.scenario.resolve()?;
        if let Some(path) = &self.network.edge_list {
            if !path.exists() {
                return Err(Error::config(
                    "network.edge_list",
                    format!("file {} does not exist", path.display()),
                ));
            }
        } else {
            if self.network.nodes < 2 {
                return Err(Error::config("network.nodes", "must be at least 2"));
            }
            if !(self.network.side > 0.0) {
                return Err(Error::config("network.side", "must be positive"));
            }
            if !(self.network.radius > 0.0) {
                return Err(Error::config("network.radius", "must be positive"));
            }
        }
        self.model_config()?
            .validate()
            .map_err(|e| Error::config("motion", e.to_string()))?;
        self.filter
            .validate()
            .map_err(|e| Error::config("filter", e.to_string()))?;
        let p = &self.priors;
        for (name, v) in [
            ("priors.kinematic_factor", p.kinematic_factor),
            ("priors.extension_scale", p.extension_scale),
            ("priors.extension_dof_excess", p.extension_dof_excess),
            ("priors.noise_scale", p.noise_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(p.noise_dof_excess >= 0.0) {
            return Err(Error::config(
                "priors.noise_dof_excess",
                "must be nonnegative",
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let sc = self.scenario.resolve()?;
        Ok(ModelConfig {
            dim: 2,
            scaling: sc.scaling,
            motion: MotionParams {
                scan_time: sc.scan_time,
                maneuver_correlation: self.motion.maneuver_correlation,
                accel_rms: self.motion.accel_rms,
                extension_decay: self.motion.extension_decay.unwrap_or(sc.scan_time),
                extension_dof: self.motion.extension_dof,
            },
        })
    }

    /// Seed of run `r` (0-based).
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(run as u64 + 1))
    }
}

/// One row of `records.csv`. Node 0 is the fusion center of the centralized
/// variant; network nodes are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run: usize,
    pub scan: usize,
    pub node: usize,
    pub variant: VariantKind,
    pub cx: f64,
    pub cy: f64,
    pub x11: f64,
    pub x12: f64,
    pub x21: f64,
    pub x22: f64,
    pub r11: Option<f64>,
    pub r12: Option<f64>,
    pub r21: Option<f64>,
    pub r22: Option<f64>,
    pub gwd2: f64,
}

/// One row of `rgwe.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgweRow {
    pub variant: VariantKind,
    pub scan: usize,
    pub rgwe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: VariantKind,
    /// Mean over scans of the per-scan RGWE.
    pub mean_rgwe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub provenance: String,
    pub config: ExperimentConfig,
    pub network_edges: Vec<(usize, usize)>,
    pub variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub truth: GroundTruth,
    pub network: SensorNetwork,
    pub records: Vec<ResultRecord>,
    pub rgwe: Vec<RgweRow>,
    pub summary: Summary,
}

/// Squared GWD between the truth ellipse `(c, sX)` and an estimate `(ĉ, sX̂)`.
pub fn scan_gwd2(
    truth: &crate::simkit::TruthScan,
    est: &NodeEstimate,
    scaling: f64,
) -> Result<f64> {
    let a = EllipseEstimate::new(truth.centroid.clone(), &truth.extension * scaling);
    let b = EllipseEstimate::new(est.centroid(), &est.extension * scaling);
    gwd_squared(&a, &b)
}

fn records_for(
    run: usize,
    variant: VariantKind,
    truth: &GroundTruth,
    estimates: &[Vec<NodeEstimate>],
) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (t, (scan, nodes)) in truth.scans.iter().zip(estimates).enumerate() {
        let first_node = usize::from(variant != VariantKind::Centralized);
        for (k, est) in nodes.iter().enumerate() {
            let c = est.centroid();
            let x = &est.extension;
            let r = |i: usize, j: usize| est.noise.as_ref().map(|m| m[(i, j)]);
            out.push(ResultRecord {
                run: run + 1,
                scan: t + 1,
                node: k + first_node,
                variant,
                cx: c[0],
                cy: c[1],
                x11: x[(0, 0)],
                x12: x[(0, 1)],
                x21: x[(1, 0)],
                x22: x[(1, 1)],
                r11: r(0, 0),
                r12: r(0, 1),
                r21: r(1, 0),
                r22: r(1, 1),
                gwd2: scan_gwd2(scan, est, truth.scaling)?,
            });
        }
    }
    Ok(out)
}

/// Runs one Monte-Carlo run of every variant on a shared measurement stream.
pub fn run_single(
    cfg: &ExperimentConfig,
    run: usize,
    truth: &GroundTruth,
    scenario: &ScenarioConfig,
    net: &SensorNetwork,
) -> Result<Vec<ResultRecord>> {
    let model = cfg.model_config()?;
    let stream = sample_stream(truth, scenario, net.n_nodes(), cfg.run_seed(run))?;
    let r_true = scenario.noise_matrix()?;
    let mut out = Vec::new();
    for &kind in &cfg.variants {
        let variant = kind.with_noise(&r_true);
        let est = track(&stream, net, &model, &variant, &cfg.filter, &cfg.priors)?;
        out.extend(records_for(run, kind, truth, &est)?);
    }
    Ok(out)
}

/// Per-scan RGWE per variant, node-averaged, from raw records.
pub fn aggregate_rgwe(records: &[ResultRecord], variants: &[VariantKind]) -> Result<Vec<RgweRow>> {
    use std::collections::BTreeMap;
    // (variant, scan) -> run -> node distances
    let mut groups: BTreeMap<(VariantKind, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.variant, r.scan))
            .or_default()
            .entry(r.run)
            .or_default()
            .push(r.gwd2);
    }
    let mut rows = Vec::new();
    for &v in variants {
        for ((_, scan), runs) in groups.range((v, 0)..=(v, usize::MAX)) {
            let per_run: Vec<Vec<f64>> = runs.values().cloned().collect();
            rows.push(RgweRow {
                variant: v,
                scan: *scan,
                rgwe: node_averaged_rgwe(&per_run)?,
            });
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[RgweRow], variants: &[VariantKind]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|&v| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v)
                .map(|r| r.rgwe)
                .collect();
            VariantSummary {
                variant: v,
                mean_rgwe: vals.iter().sum::<f64>() / vals.len().max(1) as f64,
            }
        })
        .collect()
}

/// Runs the experiment in memory. Runs execute in parallel; results are
/// assembled in run order, so the output does not depend on scheduling.
///
/// If some run fails, the records of the runs that completed are still
/// returned alongside the first error.
pub fn run_experiment_in_memory(
    cfg: &ExperimentConfig,
) -> std::result::Result<ExperimentResults, (Error, Vec<ResultRecord>)> {
    let prepared = (|| {
        cfg.validate()?;
        let scenario = cfg.scenario.resolve()?;
        let truth = gen_trajectory(&scenario)?;
        let net = cfg.network.build(cfg.seed)?;
        Ok::<_, Error>((scenario, truth, net))
    })();
    let (scenario, truth, net) = prepared.map_err(|e| (e, Vec::new()))?;

    let per_run: Vec<Result<Vec<ResultRecord>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_single(cfg, run, &truth, &scenario, &net))
        .collect();
    let mut records = Vec::new();
    let mut first_error = None;
    for r in per_run {
        match r {
            Ok(recs) => records.extend(recs),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err((e, records));
    }
    let rgwe = aggregate_rgwe(&records, &cfg.variants).map_err(|e| (e, Vec::new()))?;
    let summary = Summary {
        provenance: PROVENANCE.to_string(),
        config: cfg.clone(),
        network_edges: net
            .edges()
            .into_iter()
            .map(|(a, b)| (a + 1, b + 1))
            .collect(),
        variants: summarize(&rgwe, &cfg.variants),
    };
    Ok(ExperimentResults {
        truth,
        network: net,
        records,
        rgwe,
        summary,
    })
}

pub const RECORDS_FILE: &str = "records.csv";
pub const RGWE_FILE: &str = "rgwe.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRUTH_FILE: &str = "truth.csv";
pub const NETWORK_FILE: &str = "network.txt";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::InvalidParameter(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Truth row of `truth.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub scan: usize,
    pub time: f64,
    pub cx: f64,
    pub cy: f64,
    pub vx: f64,
    pub vy: f64,
    pub x11: f64,
    pub x12: f64,
    pub x21: f64,
    pub x22: f64,
}

pub fn truth_rows(truth: &GroundTruth) -> Vec<TruthRow> {
    truth
        .scans
        .iter()
        .enumerate()
        .map(|(t, s)| TruthRow {
            scan: t + 1,
            time: s.time,
            cx: s.centroid[0],
            cy: s.centroid[1],
            vx: s.velocity[0],
            vy: s.velocity[1],
            x11: s.extension[(0, 0)],
            x12: s.extension[(0, 1)],
            x21: s.extension[(1, 0)],
            x22: s.extension[(1, 1)],
        })
        .collect()
}

/// Runs the experiment and writes `records.csv`, `rgwe.csv`, `truth.csv`,
/// `network.txt` and `summary.json` into `cfg.output_dir`. On a failed run
/// the records of completed runs are still written before the error is
/// returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    let out = &cfg.output_dir;
    match run_experiment_in_memory(cfg) {
        Ok(res) => {
            fs::create_dir_all(out)?;
            write_csv(&out.join(RECORDS_FILE), &res.records)?;
            write_csv(&out.join(RGWE_FILE), &res.rgwe)?;
            write_csv(&out.join(TRUTH_FILE), &truth_rows(&res.truth))?;
            res.network.save(&out.join(NETWORK_FILE))?;
            let mut f = fs::File::create(out.join(SUMMARY_FILE))?;
            serde_json::to_writer_pretty(&mut f, &res.summary)
                .map_err(|e| Error::InvalidParameter(format!("json: {e}")))?;
            writeln!(f)?;
            Ok(res)
        }
        Err((e, partial)) => {
            if !partial.is_empty() {
                fs::create_dir_all(out)?;
                write_csv(&out.join(RECORDS_FILE), &partial)?;
            }
            Err(e)
        }
    }
}
