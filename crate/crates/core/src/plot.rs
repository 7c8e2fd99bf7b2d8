//! Plot-data emission: delimited tables ready for an external plotting tool.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dfilter::VariantKind;
use crate::error::{Error, Result};
use crate::experiment::{
    aggregate_rgwe, read_csv, run_experiment_in_memory, summarize, write_csv, ExperimentConfig,
    ResultRecord, TruthRow, RECORDS_FILE, TRUTH_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    RgweVsScan,
    RgweVsVbIteration,
    RgweVsL,
    Ellipses,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::RgweVsScan,
        PlotKind::RgweVsVbIteration,
        PlotKind::RgweVsL,
        PlotKind::Ellipses,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::RgweVsScan => "rgwe-vs-scan",
            PlotKind::RgweVsVbIteration => "rgwe-vs-vb-iteration",
            PlotKind::RgweVsL => "rgwe-vs-L",
            PlotKind::Ellipses => "ellipses",
        }
    }

    /// Kinds computed from stored results; the others re-run the experiment.
    pub fn from_results(self) -> bool {
        matches!(self, PlotKind::RgweVsScan | PlotKind::Ellipses)
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown plot kind `{s}`")))
    }
}

/// Mahalanobis radius of the `coverage` confidence region of a `d`-variate
/// Gaussian: `√χ²_d(coverage)`.
pub fn confidence_radius(coverage: f64, d: usize) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "coverage {coverage} must lie in (0, 1)"
        )));
    }
    let chi = ChiSquared::new(d as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(chi.inverse_cdf(coverage).sqrt())
}

/// Boundary of the `coverage` confidence ellipse of `N(center, shape)`,
/// sampled at `points` angles.
pub fn ellipse_polyline(
    center: &DVector<f64>,
    shape: &DMatrix<f64>,
    coverage: f64,
    points: usize,
) -> Result<Vec<[f64; 2]>> {
    if center.len() != 2 || shape.shape() != (2, 2) {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: center.len(),
        });
    }
    let k = confidence_radius(coverage, 2)?;
    let eig = shape.clone().symmetric_eigen();
    let axes =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt() * k));
    Ok((0..points)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
            let p = center + &axes * DVector::from_vec(vec![a.cos(), a.sin()]);
            [p[0], p[1]]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: VariantKind,
    pub value: usize,
    pub mean_rgwe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseRow {
    /// Variant name, or `truth`.
    pub source: String,
    pub run: usize,
    pub scan: usize,
    pub node: usize,
    pub point: usize,
    pub x: f64,
    pub y: f64,
}

const ELLIPSE_POINTS: usize = 64;
const ELLIPSE_COVERAGE: f64 = 0.9;

/// 90% ellipses of `(c, sX̂)` for one run, plus the truth.
pub fn ellipse_rows(
    records: &[ResultRecord],
    truth: &[TruthRow],
    scaling: f64,
    run: usize,
) -> Result<Vec<EllipseRow>> {
    let mut rows = Vec::new();
    let mut push = |source: String,
                    run: usize,
                    scan: usize,
                    node: usize,
                    c: [f64; 2],
                    x: [f64; 4]|
     -> Result<()> {
        let shape = DMatrix::from_row_slice(2, 2, &x) * scaling;
        let pts = ellipse_polyline(
            &DVector::from_row_slice(&c),
            &shape,
            ELLIPSE_COVERAGE,
            ELLIPSE_POINTS,
        )?;
        for (i, p) in pts.into_iter().enumerate() {
            rows.push(EllipseRow {
                source: source.clone(),
                run,
                scan,
                node,
                point: i,
                x: p[0],
                y: p[1],
            });
        }
        Ok(())
    };
    for t in truth {
        push(
            "truth".into(),
            0,
            t.scan,
            0,
            [t.cx, t.cy],
            [t.x11, t.x12, t.x21, t.x22],
        )?;
    }
    for r in records.iter().filter(|r| r.run == run) {
        push(
            r.variant.name().into(),
            r.run,
            r.scan,
            r.node,
            [r.cx, r.cy],
            [r.x11, r.x12, r.x21, r.x22],
        )?;
    }
    Ok(rows)
}

/// Runs `cfg` once per sweep value, setting the swept parameter with `set`.
pub fn sweep<F>(cfg: &ExperimentConfig, values: &[usize], set: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&mut ExperimentConfig, usize),
{
    let mut rows = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        set(&mut c, v);
        let res = run_experiment_in_memory(&c).map_err(|(e, _)| e)?;
        for s in summarize(&res.rgwe, &c.variants) {
            rows.push(SweepRow {
                variant: s.variant,
                value: v,
                mean_rgwe: s.mean_rgwe,
            });
        }
    }
    Ok(rows)
}

/// Emits a plot-data table into `out`. Result-based kinds read
/// `results_dir`; sweep kinds run `cfg` for each of `values`.
pub fn emit_plot_data(
    kind: PlotKind,
    results_dir: Option<&Path>,
    cfg: Option<&ExperimentConfig>,
    values: &[usize],
    run: usize,
    out: &Path,
) -> Result<()> {
    let need_results = || {
        results_dir
            .ok_or_else(|| Error::InvalidParameter(format!("`{kind}` needs a results directory")))
    };
    let need_cfg = || {
        cfg.ok_or_else(|| Error::InvalidParameter(format!("`{kind}` needs an experiment config")))
    };
    match kind {
        PlotKind::RgweVsScan => {
            let records: Vec<ResultRecord> = read_csv(&need_results()?.join(RECORDS_FILE))?;
            let mut variants: Vec<VariantKind> = records.iter().map(|r| r.variant).collect();
            variants.sort();
            variants.dedup();
            write_csv(out, &aggregate_rgwe(&records, &variants)?)
        }
        PlotKind::Ellipses => {
            let dir = need_results()?;
            let records: Vec<ResultRecord> = read_csv(&dir.join(RECORDS_FILE))?;
            let truth: Vec<TruthRow> = read_csv(&dir.join(TRUTH_FILE))?;
            let scaling = match cfg {
                Some(c) => c.scenario.resolve()?.scaling,
                None => 0.25,
            };
            write_csv(out, &ellipse_rows(&records, &truth, scaling, run)?)
        }
        PlotKind::RgweVsVbIteration => {
            if values.is_empty() {
                return Err(Error::InvalidParameter(
                    "sweep needs at least one value".into(),
                ));
            }
            let rows = sweep(need_cfg()?, values, |c, v| {
                c.filter.vb.max_iters = v;
                c.filter.vb.tolerance = 0.0;
            })?;
            write_csv(out, &rows)
        }
        PlotKind::RgweVsL => {
            if values.is_empty() {
                return Err(Error::InvalidParameter(
                    "sweep needs at least one value".into(),
                ));
            }
            let rows = sweep(need_cfg()?, values, |c, v| c.filter.rounds = v)?;
            write_csv(out, &rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ninety_percent_radius() {
        let r = confidence_radius(0.9, 2).unwrap();
        assert_relative_eq!(r, (-2.0 * 0.1f64.ln()).sqrt(), epsilon = 1e-9);
        assert_relative_eq!(r, 2.1460, epsilon = 1e-4);
    }

    #[test]
    fn unit_circle_polyline() {
        let pts = ellipse_polyline(&DVector::zeros(2), &DMatrix::identity(2, 2), 0.9, 36).unwrap();
        let r = confidence_radius(0.9, 2).unwrap();
        for p in pts {
            assert_relative_eq!((p[0] * p[0] + p[1] * p[1]).sqrt(), r, epsilon = 1e-9);
        }
    }

    #[test]
    fn kinds_parse() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }
}
