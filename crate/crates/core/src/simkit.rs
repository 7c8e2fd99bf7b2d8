//! Planar scenario simulator: ground-truth trajectories for an extended
//! ship-like object (S1) and a five-aircraft formation (S2), and per-node
//! measurement synthesis.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dfilter::Batch;
use crate::error::{Error, Result};
use crate::matstat::SpdMatrix;
use crate::model::STANDARD_GRAVITY;

/// One knot in m/s.
pub const KNOT: f64 = 1852.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "s1")]
    S1,
    #[serde(rename = "s2")]
    S2,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioId::S1 => "s1",
            ScenarioId::S2 => "s2",
            ScenarioId::Custom => "custom",
        })
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioId::S1),
            "s2" => Ok(ScenarioId::S2),
            "custom" => Ok(ScenarioId::Custom),
            _ => Err(Error::InvalidParameter(format!("unknown scenario `{s}`"))),
        }
    }
}

/// Scatter of the noise-free measurement sources around the centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScatterModel {
    Gaussian,
    UniformEllipse,
}

/// A path segment flown at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Segment {
    Straight {
        duration: f64,
    },
    /// Constant-rate turn; positive angles turn left (counter-clockwise).
    Turn {
        duration: f64,
        angle_deg: f64,
    },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Straight { duration } | Segment::Turn { duration, .. } => duration,
        }
    }

    /// Turn through `angle_deg` with radial acceleration `accel` at `speed`.
    pub fn turn_with_accel(angle_deg: f64, speed: f64, accel: f64) -> Segment {
        Segment::Turn {
            duration: angle_deg.abs().to_radians() * speed / accel,
            angle_deg,
        }
    }
}

/// Constant-speed path made of straight legs and constant-rate turns. After
/// the last segment the path continues straight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub start: [f64; 2],
    pub heading_deg: f64,
    /// m/s
    pub speed: f64,
    pub segments: Vec<Segment>,
}

/// Kinematic state on a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    /// Radians.
    pub heading: f64,
}

fn unit(h: f64) -> Vector2<f64> {
    Vector2::new(h.cos(), h.sin())
}

fn advance(p: Vector2<f64>, h: f64, speed: f64, rate: f64, dt: f64) -> (Vector2<f64>, f64) {
    if rate == 0.0 {
        return (p + unit(h) * speed * dt, h);
    }
    let h2 = h + rate * dt;
    let r = speed / rate;
    (
        p + Vector2::new(h2.sin() - h.sin(), h.cos() - h2.cos()) * r,
        h2,
    )
}

impl PathSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "speed {} is invalid",
                self.speed
            )));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration() > 0.0) || !s.duration().is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "segment {i} has invalid duration {}",
                    s.duration()
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn at(&self, t: f64) -> PathPoint {
        let mut p = Vector2::new(self.start[0], self.start[1]);
        let mut h = self.heading_deg.to_radians();
        let mut elapsed = 0.0;
        for seg in &self.segments {
            let dur = seg.duration();
            let rate = match *seg {
                Segment::Straight { .. } => 0.0,
                Segment::Turn {
                    angle_deg,
                    duration,
                } => angle_deg.to_radians() / duration,
            };
            let dt = (t - elapsed).min(dur);
            if dt <= 0.0 {
                break;
            }
            (p, h) = advance(p, h, self.speed, rate, dt);
            elapsed += dur;
        }
        if t > elapsed {
            (p, h) = advance(p, h, self.speed, 0.0, t - elapsed);
        }
        PathPoint {
            position: p,
            velocity: unit(h) * self.speed,
            heading: h,
        }
    }
}

/// What moves along the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectModel {
    /// A single extended object: an ellipse with the major axis along the heading.
    Ellipse { semi_axes: [f64; 2] },
    /// Point targets line abreast, perpendicular to the heading. From
    /// `split_time` on, the two outer targets leave on straight legs turned
    /// outwards by `split_angle_deg`.
    Formation {
        count: usize,
        spacing: f64,
        split_angle_deg: f64,
        split_time: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    /// Number of scans T; scan `t` (1-based) happens at `(t-1)·Δt`.
    pub scans: usize,
    pub scan_time: f64,
    pub scaling: f64,
    /// Poisson mean of the per-node batch size (extended object only).
    pub measurement_rate: f64,
    /// Per-target detection probability (formation only).
    pub detection_probability: f64,
    /// Sensor noise covariance in m².
    pub noise_covariance: [[f64; 2]; 2],
    pub scatter: ScatterModel,
    pub path: PathSpec,
    pub object: ObjectModel,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.scans < 1 {
            return bad("scans must be at least 1".into());
        }
        if !(self.scan_time > 0.0) {
            return bad(format!("scan_time {} must be positive", self.scan_time));
        }
        if !(self.scaling > 0.0) {
            return bad(format!("scaling {} must be positive", self.scaling));
        }
        if !(self.measurement_rate > 0.0) || !self.measurement_rate.is_finite() {
            return bad(format!(
                "measurement_rate {} must be positive",
                self.measurement_rate
            ));
        }
        if !(self.detection_probability > 0.0 && self.detection_probability <= 1.0) {
            return bad(format!(
                "detection_probability {} must lie in (0, 1]",
                self.detection_probability
            ));
        }
        let r = &self.noise_covariance;
        let eig = Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]).symmetric_eigenvalues();
        if r[0][1] != r[1][0] || r.iter().flatten().any(|v| !v.is_finite()) || eig.min() < 0.0 {
            return bad("noise_covariance must be symmetric positive semidefinite".into());
        }
        self.path.validate()?;
        match &self.object {
            ObjectModel::Ellipse { semi_axes } => {
                if !semi_axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
                    return bad("semi_axes must be positive".into());
                }
            }
            ObjectModel::Formation { count, spacing, .. } => {
                if *count < 1 {
                    return bad("formation count must be at least 1".into());
                }
                if !(*spacing >= 0.0) {
                    return bad("formation spacing must be nonnegative".into());
                }
            }
        }
        Ok(())
    }

    pub fn noise_matrix(&self) -> Result<SpdMatrix> {
        let r = &self.noise_covariance;
        SpdMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[r[0][0], r[0][1], r[1][0], r[1][1]],
        ))
    }

    pub fn scan_times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.scans).map(|k| k as f64 * self.scan_time)
    }
}

/// Default parameter set of a scenario.
pub fn scenario_defaults(id: ScenarioId) -> Result<ScenarioConfig> {
    match id {
        ScenarioId::S1 => {
            let speed = 27.0 * KNOT;
            Ok(ScenarioConfig {
                id,
                scans: 147,
                scan_time: 10.0,
                scaling: 0.25,
                measurement_rate: 20.0,
                detection_probability: 1.0,
                noise_covariance: [[2500.0, 0.0], [0.0, 2500.0]],
                scatter: ScatterModel::UniformEllipse,
                path: PathSpec {
                    start: [0.0, 0.0],
                    heading_deg: 0.0,
                    speed,
                    segments: vec![
                        Segment::Straight { duration: 390.0 },
                        Segment::Turn {
                            duration: 30.0,
                            angle_deg: 45.0,
                        },
                        Segment::Straight { duration: 370.0 },
                        Segment::Turn {
                            duration: 60.0,
                            angle_deg: 90.0,
                        },
                        Segment::Straight { duration: 240.0 },
                        Segment::Turn {
                            duration: 60.0,
                            angle_deg: 90.0,
                        },
                    ],
                },
                object: ObjectModel::Ellipse {
                    semi_axes: [170.0, 40.0],
                },
            })
        }
        ScenarioId::S2 => {
            let speed = 300.0;
            let g = STANDARD_GRAVITY;
            let segments = vec![
                Segment::Straight { duration: 100.0 },
                Segment::turn_with_accel(45.0, speed, 2.0 * g),
                Segment::Straight { duration: 100.0 },
                Segment::turn_with_accel(90.0, speed, 2.0 * g),
                Segment::Straight { duration: 100.0 },
                Segment::turn_with_accel(90.0, speed, g),
            ];
            let split = segments.iter().map(Segment::duration).sum::<f64>();
            Ok(ScenarioConfig {
                id,
                scans: 60,
                scan_time: 10.0,
                scaling: 0.25,
                measurement_rate: 20.0,
                detection_probability: 0.8,
                noise_covariance: [[500.0 * 500.0, 0.0], [0.0, 100.0 * 100.0]],
                scatter: ScatterModel::Gaussian,
                path: PathSpec {
                    start: [0.0, 0.0],
                    heading_deg: 0.0,
                    speed,
                    segments,
                },
                object: ObjectModel::Formation {
                    count: 5,
                    spacing: 500.0,
                    split_angle_deg: 15.0,
                    split_time: Some(split),
                },
            })
        }
        ScenarioId::Custom => Err(Error::InvalidParameter(
            "the custom scenario has no defaults".into(),
        )),
    }
}

/// Ground truth at one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthScan {
    pub time: f64,
    pub centroid: DVector<f64>,
    pub velocity: DVector<f64>,
    /// Extension `X` in m². For a formation this is the population
    /// covariance of the targets divided by `s`, and may be singular.
    pub extension: DMatrix<f64>,
    /// Individual point targets (formation only).
    pub targets: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scaling: f64,
    pub scans: Vec<TruthScan>,
}

fn rotation(h: f64) -> Matrix2<f64> {
    Matrix2::new(h.cos(), -h.sin(), h.sin(), h.cos())
}

fn to_dvec(v: Vector2<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn to_dmat(m: Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, m.as_slice())
}

/// Extended-object truth: centroid on the path, `X = Rot(h) diag(a², b²) Rot(h)ᵀ`.
pub fn gen_trajectory_s1(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let ObjectModel::Ellipse { semi_axes } = cfg.object else {
        return Err(Error::InvalidParameter(
            "scenario object is not an ellipse".into(),
        ));
    };
    let shape = Matrix2::from_diagonal(&Vector2::new(semi_axes[0].powi(2), semi_axes[1].powi(2)));
    let scans = cfg
        .scan_times()
        .map(|t| {
            let pt = cfg.path.at(t);
            let rot = rotation(pt.heading);
            TruthScan {
                time: t,
                centroid: to_dvec(pt.position),
                velocity: to_dvec(pt.velocity),
                extension: to_dmat(rot * shape * rot.transpose()),
                targets: Vec::new(),
            }
        })
        .collect();
    Ok(GroundTruth {
        scaling: cfg.scaling,
        scans,
    })
}

/// Formation truth. Before the split the formation moves rigidly; after it,
/// the inner targets keep following the path while the outer two fly
/// straight legs turned outwards.
pub fn gen_trajectory_s2(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let ObjectModel::Formation {
        count,
        spacing,
        split_angle_deg,
        split_time,
    } = cfg.object
    else {
        return Err(Error::InvalidParameter(
            "scenario object is not a formation".into(),
        ));
    };
    let offsets: Vec<f64> = (0..count)
        .map(|j| (j as f64 - (count as f64 - 1.0) / 2.0) * spacing)
        .collect();
    let rigid = |pt: &PathPoint, off: f64| {
        let normal = Vector2::new(-pt.heading.sin(), pt.heading.cos());
        pt.position + normal * off
    };
    let split_at = split_time.unwrap_or(f64::INFINITY);
    let split_point = cfg.path.at(split_at.min(cfg.path.total_duration()));
    let is_outer = |j: usize| count >= 3 && (j == 0 || j == count - 1);

    let scans = cfg
        .scan_times()
        .map(|t| {
            let pt = cfg.path.at(t);
            let mut targets = Vec::with_capacity(count);
            let mut velocities = Vec::with_capacity(count);
            for (j, &off) in offsets.iter().enumerate() {
                if t > split_at && is_outer(j) {
                    let h = split_point.heading + off.signum() * split_angle_deg.to_radians();
                    let p0 = rigid(&split_point, off);
                    targets.push(p0 + unit(h) * cfg.path.speed * (t - split_at));
                    velocities.push(unit(h) * cfg.path.speed);
                } else {
                    targets.push(rigid(&pt, off));
                    velocities.push(pt.velocity);
                }
            }
            let n = count as f64;
            let centroid = targets.iter().sum::<Vector2<f64>>() / n;
            let velocity = velocities.iter().sum::<Vector2<f64>>() / n;
            let cov = targets
                .iter()
                .map(|p| (p - centroid) * (p - centroid).transpose())
                .sum::<Matrix2<f64>>()
                / n;
            TruthScan {
                time: t,
                centroid: to_dvec(centroid),
                velocity: to_dvec(velocity),
                extension: to_dmat(cov / cfg.scaling),
                targets: targets.into_iter().map(to_dvec).collect(),
            }
        })
        .collect();
    Ok(GroundTruth {
        scaling: cfg.scaling,
        scans,
    })
}

/// Dispatches on the object model.
pub fn gen_trajectory(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    match cfg.object {
        ObjectModel::Ellipse { .. } => gen_trajectory_s1(cfg),
        ObjectModel::Formation { .. } => gen_trajectory_s2(cfg),
    }
}

/// Independent per-node generators: node `k` uses stream `k + 1` of the
/// master seed, so adding nodes leaves existing streams untouched.
pub fn node_rngs(master_seed: u64, n_nodes: usize) -> Vec<ChaCha8Rng> {
    (0..n_nodes)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(k as u64 + 1);
            rng
        })
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// Uniform draw from the unit `d`-ball: Gaussian direction, radius `U^{1/d}`.
pub fn sample_unit_ball<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let g = standard_normal(rng, d);
        let norm = g.norm();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / d as f64);
            return g * (r / norm);
        }
    }
}

/// Draws a noise-free source point with covariance `s·X` around `center`.
///
/// The uniform-ellipse mode draws uniformly from
/// `{u : (u-c)ᵀ(s(d+2)X)⁻¹(u-c) ≤ 1}`, which has covariance `s·X`; for
/// `s = 1/(d+2)` that is the ellipse of `X` itself.
pub fn sample_source<R: Rng + ?Sized>(
    rng: &mut R,
    center: &DVector<f64>,
    chol_x: &DMatrix<f64>,
    scaling: f64,
    scatter: ScatterModel,
) -> DVector<f64> {
    let d = center.len();
    let u = match scatter {
        ScatterModel::Gaussian => standard_normal(rng, d) * scaling.sqrt(),
        ScatterModel::UniformEllipse => {
            sample_unit_ball(rng, d) * (scaling * (d as f64 + 2.0)).sqrt()
        }
    };
    center + chol_x * u
}

/// Lower Cholesky factor of a PSD matrix; zero rows/columns are allowed.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// One scan of measurements for every node (`rngs[k]` drives node `k`).
pub fn sample_scan(
    truth: &TruthScan,
    cfg: &ScenarioConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Batch>> {
    let noise = psd_factor(&DMatrix::from_row_slice(
        2,
        2,
        &[
            cfg.noise_covariance[0][0],
            cfg.noise_covariance[0][1],
            cfg.noise_covariance[1][0],
            cfg.noise_covariance[1][1],
        ],
    ));
    match cfg.object {
        ObjectModel::Ellipse { .. } => {
            let poisson = Poisson::new(cfg.measurement_rate)
                .map_err(|e| Error::InvalidParameter(format!("measurement rate: {e}")))?;
            let chol_x = psd_factor(&truth.extension);
            Ok(rngs
                .iter_mut()
                .map(|rng| {
                    let n = poisson.sample(rng) as usize;
                    (0..n)
                        .map(|_| {
                            let z = sample_source(
                                rng,
                                &truth.centroid,
                                &chol_x,
                                cfg.scaling,
                                cfg.scatter,
                            );
                            z + &noise * standard_normal(rng, 2)
                        })
                        .collect()
                })
                .collect())
        }
        ObjectModel::Formation { .. } => {
            let detect = Bernoulli::new(cfg.detection_probability)
                .map_err(|e| Error::InvalidParameter(format!("detection probability: {e}")))?;
            Ok(rngs
                .iter_mut()
                .map(|rng| {
                    let mut batch = Vec::new();
                    for target in &truth.targets {
                        if detect.sample(rng) {
                            batch.push(target + &noise * standard_normal(rng, 2));
                        }
                    }
                    batch
                })
                .collect())
        }
    }
}

/// Full measurement stream `[scan][node]`.
pub fn sample_stream(
    truth: &GroundTruth,
    cfg: &ScenarioConfig,
    n_nodes: usize,
    seed: u64,
) -> Result<Vec<Vec<Batch>>> {
    let mut rngs = node_rngs(seed, n_nodes);
    truth
        .scans
        .iter()
        .map(|scan| sample_scan(scan, cfg, &mut rngs))
        .collect()
}

/// Writes measurements as `scan node x y` lines (1-based scan and node).
pub fn write_measurements<W: Write>(stream: &[Vec<Batch>], mut w: W) -> Result<()> {
    writeln!(w, "# scan node x y")?;
    for (t, nodes) in stream.iter().enumerate() {
        for (k, batch) in nodes.iter().enumerate() {
            for y in batch {
                write!(w, "{} {}", t + 1, k + 1)?;
                for v in y.iter() {
                    write!(w, " {v:?}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

/// Parses the output of [`write_measurements`] for a network of `n_nodes`.
pub fn read_measurements(text: &str, n_nodes: usize) -> Result<Vec<Vec<Batch>>> {
    let mut stream: Vec<Vec<Batch>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::parse(i + 1, "expected `scan node coord...`"));
        }
        let index = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| Error::parse(i + 1, format!("bad index `{s}`")))
        };
        let t = index(fields[0])?;
        let k = index(fields[1])?;
        if k > n_nodes {
            return Err(Error::parse(
                i + 1,
                format!("node {k} exceeds network size {n_nodes}"),
            ));
        }
        let coords = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(i + 1, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        while stream.len() < t {
            stream.push(vec![Vec::new(); n_nodes]);
        }
        stream[t - 1][k - 1].push(DVector::from_vec(coords));
    }
    Ok(stream)
}

/// Writes ground truth as `scan time cx cy vx vy x11 x12 x22` lines.
pub fn write_truth<W: Write>(truth: &GroundTruth, mut w: W) -> Result<()> {
    writeln!(w, "# scan time cx cy vx vy x11 x12 x22")?;
    for (t, s) in truth.scans.iter().enumerate() {
        writeln!(
            w,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            t + 1,
            s.time,
            s.centroid[0],
            s.centroid[1],
            s.velocity[0],
            s.velocity[1],
            s.extension[(0, 0)],
            s.extension[(0, 1)],
            s.extension[(1, 1)]
        )?;
    }
    Ok(())
}

/// Radius of a `v²/a` turn.
pub fn turn_radius(speed: f64, accel: f64) -> f64 {
    speed * speed / accel
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn s1_speed_is_constant() {
        let cfg = scenario_defaults(ScenarioId::S1).unwrap();
        let gt = gen_trajectory_s1(&cfg).unwrap();
        assert_eq!(gt.scans.len(), 147);
        for s in &gt.scans {
            assert_relative_eq!(s.velocity.norm(), 27.0 * KNOT, epsilon = 1e-9);
        }
        assert_relative_eq!(27.0 * KNOT, 13.89, epsilon = 5e-3);
    }

    #[test]
    fn s1_first_turn_is_45_degrees() {
        let cfg = scenario_defaults(ScenarioId::S1).unwrap();
        let before = cfg.path.at(390.0).heading;
        let after = cfg.path.at(420.0).heading;
        assert_relative_eq!((after - before).to_degrees(), 45.0, epsilon = 1e-9);
    }

    #[test]
    fn s1_extension_eigenvalues() {
        let cfg = scenario_defaults(ScenarioId::S1).unwrap();
        for s in gen_trajectory_s1(&cfg).unwrap().scans {
            let mut ev: Vec<f64> = s
                .extension
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            ev.sort_by(f64::total_cmp);
            assert_relative_eq!(ev[0], 1600.0, epsilon = 1e-8);
            assert_relative_eq!(ev[1], 28900.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn path_is_continuous_through_turns() {
        let cfg = scenario_defaults(ScenarioId::S1).unwrap();
        for t in [390.0, 420.0, 790.0, 850.0, 1090.0, 1150.0] {
            let a = cfg.path.at(t - 1e-6).position;
            let b = cfg.path.at(t + 1e-6).position;
            assert!((a - b).norm() < 1e-3);
        }
    }

    #[test]
    fn s2_geometry() {
        let cfg = scenario_defaults(ScenarioId::S2).unwrap();
        let gt = gen_trajectory_s2(&cfg).unwrap();
        let ObjectModel::Formation { split_time, .. } = cfg.object else {
            unreachable!()
        };
        for s in gt.scans.iter().filter(|s| s.time <= split_time.unwrap()) {
            for w in s.targets.windows(2) {
                assert_relative_eq!((&w[1] - &w[0]).norm(), 500.0, epsilon = 1e-6);
            }
            assert_relative_eq!(s.velocity.norm(), 300.0, epsilon = 1e-9);
        }
        let last = gt.scans.last().unwrap();
        assert!((&last.targets[4] - &last.targets[0]).norm() > 2000.0 + 1.0);
        assert_relative_eq!(
            turn_radius(300.0, 2.0 * STANDARD_GRAVITY),
            4588.7,
            epsilon = 0.05
        );
    }

    #[test]
    fn defaults_match_scenarios() {
        let s1 = scenario_defaults(ScenarioId::S1).unwrap();
        assert_eq!(s1.noise_covariance, [[2500.0, 0.0], [0.0, 2500.0]]);
        assert_eq!(s1.measurement_rate, 20.0);
        let s2 = scenario_defaults(ScenarioId::S2).unwrap();
        assert_eq!(s2.detection_probability, 0.8);
        assert_eq!(s2.noise_covariance, [[250000.0, 0.0], [0.0, 10000.0]]);
        assert!(scenario_defaults(ScenarioId::Custom).is_err());
    }

    #[test]
    fn noiseless_uniform_samples_stay_inside() {
        let mut cfg = scenario_defaults(ScenarioId::S1).unwrap();
        cfg.noise_covariance = [[0.0, 0.0], [0.0, 0.0]];
        let gt = gen_trajectory_s1(&cfg).unwrap();
        let mut rngs = node_rngs(7, 3);
        let scan = &gt.scans[45];
        let inv = scan.extension.clone().try_inverse().unwrap();
        for batch in sample_scan(scan, &cfg, &mut rngs).unwrap() {
            for y in batch {
                let e = &y - &scan.centroid;
                assert!((e.transpose() * &inv * &e)[(0, 0)] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn node_streams_are_stable_under_growth() {
        let cfg = scenario_defaults(ScenarioId::S1).unwrap();
        let gt = gen_trajectory_s1(&cfg).unwrap();
        let a = sample_scan(&gt.scans[0], &cfg, &mut node_rngs(3, 2)).unwrap();
        let b = sample_scan(&gt.scans[0], &cfg, &mut node_rngs(3, 5)).unwrap();
        assert_eq!(a[..], b[..2]);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn measurement_lines_roundtrip() {
        let cfg = scenario_defaults(ScenarioId::S2).unwrap();
        let gt = gen_trajectory_s2(&cfg).unwrap();
        let stream = sample_stream(&gt, &cfg, 4, 11).unwrap();
        let mut buf = Vec::new();
        write_measurements(&stream, &mut buf).unwrap();
        let back = read_measurements(std::str::from_utf8(&buf).unwrap(), 4).unwrap();
        // Trailing scans without any detection are not represented in the file.
        assert_eq!(back[..], stream[..back.len()]);
        assert!(stream[back.len()..].iter().flatten().all(Vec::is_empty));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = scenario_defaults(ScenarioId::S2).unwrap();
        cfg.detection_probability = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = scenario_defaults(ScenarioId::S1).unwrap();
        cfg.noise_covariance = [[1.0, 2.0], [2.0, 1.0]];
        assert!(cfg.validate().is_err());
        assert!("s3".parse::<ScenarioId>().is_err());
    }
}
