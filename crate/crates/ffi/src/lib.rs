//! C ABI for the planar (`d = 2`) tracker.
//!
//! Objects are opaque handles created by `*_new`/`*_generate` functions and
//! released with the matching `*_free`. Every fallible function returns an
//! [`EotStatus`]; on failure a message is available from
//! [`eot_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as [`EotStatus::Panic`].
//!
//! Pointer arguments must be null or valid for the lengths stated on each
//! function; null is reported as [`EotStatus::NullPointer`]. Handles must
//! not be used after they are freed.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eotrack::consensus::{generate_network, SensorNetwork};
use eotrack::dfilter::{
    AlgorithmVariant, DistributedTracker, FilterOptions, NodeEstimate, TrackerPriors,
};
use eotrack::matstat::SpdMatrix;
use eotrack::metrics::{gwd, EllipseEstimate};
use eotrack::model::{ModelConfig, MotionParams};
use eotrack::Error;

const DIM: usize = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Disconnected = 4,
    Panic = 5,
    /// The requested quantity is not available (yet).
    Unavailable = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EotVariant {
    Dvbeot = 0,
    DvbeotKnownR = 1,
    DvbeotNoR = 2,
    NonCooperative = 3,
    Centralized = 4,
}

/// Tracker parameters. Obtain defaults from [`eot_tracker_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EotTrackerConfig {
    pub scan_time: f64,
    pub maneuver_correlation: f64,
    pub accel_rms: f64,
    pub extension_decay: f64,
    pub scaling: f64,
    pub vb_iterations: u32,
    pub consensus_rounds: u32,
    pub rho: f64,
    pub tolerance: f64,
    /// Row-major noise covariance, used by the known-noise variant.
    pub known_noise: [f64; 4],
}

/// Opaque sensor network.
pub struct EotNetwork(SensorNetwork);

/// Opaque tracker.
pub struct EotTracker {
    inner: DistributedTracker,
    last: Vec<NodeEstimate>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> EotStatus {
    match err {
        Error::NotSpd(_) | Error::UndefinedMoment(_) => EotStatus::Numerical,
        Error::Disconnected { .. } | Error::NetworkGeneration { .. } => EotStatus::Disconnected,
        _ => EotStatus::InvalidArgument,
    }
}

struct Fail(EotStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EotStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EotStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> EotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EotStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            EotStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eot_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(s) => s,
            Err(_) => panic!("version contains NUL"),
        };
    VERSION.as_ptr()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `cap > 0`). Returns the full message length
/// without the terminator.
#[no_mangle]
pub unsafe extern "C" fn eot_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Random connected geometric graph of `n` nodes in `[0, side]²`.
#[no_mangle]
pub unsafe extern "C" fn eot_network_generate(
    n: usize,
    side: f64,
    radius: f64,
    seed: u64,
    out: *mut *mut EotNetwork,
) -> EotStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = generate_network(n, side, radius, &mut rng)?;
        *out = Box::into_raw(Box::new(EotNetwork(net)));
        Ok(())
    })
}

/// Network from `n_edges` zero-based node pairs stored flat in `edges`.
#[no_mangle]
pub unsafe extern "C" fn eot_network_from_edges(
    n: usize,
    edges: *const usize,
    n_edges: usize,
    out: *mut *mut EotNetwork,
) -> EotStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let flat = in_slice(edges, 2 * n_edges, "edges")?;
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let net = SensorNetwork::from_edges(n, &pairs)?;
        *out = Box::into_raw(Box::new(EotNetwork(net)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eot_network_node_count(
    net: *const EotNetwork,
    out: *mut usize,
) -> EotStatus {
    guard(|| {
        *out_ref(out, "out")? = in_ref(net, "net")?.0.n_nodes();
        Ok(())
    })
}

fn check_node(net: &SensorNetwork, node: usize) -> Result<(), Fail> {
    if node >= net.n_nodes() {
        return Err(invalid(format!(
            "node {node} out of range 0..{}",
            net.n_nodes()
        )));
    }
    Ok(())
}

#[no_mangle]
pub unsafe extern "C" fn eot_network_degree(
    net: *const EotNetwork,
    node: usize,
    out: *mut usize,
) -> EotStatus {
    guard(|| {
        let net = &in_ref(net, "net")?.0;
        check_node(net, node)?;
        *out_ref(out, "out")? = net.degree(node);
        Ok(())
    })
}

/// Writes up to `cap` neighbor indices of `node` into `buf` and the total
/// neighbor count into `written`.
#[no_mangle]
pub unsafe extern "C" fn eot_network_neighbors(
    net: *const EotNetwork,
    node: usize,
    buf: *mut usize,
    cap: usize,
    written: *mut usize,
) -> EotStatus {
    guard(|| {
        let net = &in_ref(net, "net")?.0;
        check_node(net, node)?;
        let nb = net.neighbors(node);
        if cap > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = nb.len().min(cap);
            std::ptr::copy_nonoverlapping(nb.as_ptr(), buf, n);
        }
        *out_ref(written, "written")? = nb.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn eot_network_free(net: *mut EotNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Fills `out` with the default parameters.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_config_default(out: *mut EotTrackerConfig) -> EotStatus {
    guard(|| {
        let m = ModelConfig::default();
        let f = FilterOptions::default();
        *out_ref(out, "out")? = EotTrackerConfig {
            scan_time: m.motion.scan_time,
            maneuver_correlation: m.motion.maneuver_correlation,
            accel_rms: m.motion.accel_rms,
            extension_decay: m.motion.extension_decay,
            scaling: m.scaling,
            vb_iterations: f.vb.max_iters as u32,
            consensus_rounds: f.rounds as u32,
            rho: f.rho,
            tolerance: f.vb.tolerance,
            known_noise: [2500.0, 0.0, 0.0, 2500.0],
        };
        Ok(())
    })
}

fn build_tracker(
    net: &SensorNetwork,
    cfg: &EotTrackerConfig,
    variant: EotVariant,
) -> Result<DistributedTracker, Fail> {
    let model = ModelConfig {
        dim: DIM,
        scaling: cfg.scaling,
        motion: MotionParams {
            scan_time: cfg.scan_time,
            maneuver_correlation: cfg.maneuver_correlation,
            accel_rms: cfg.accel_rms,
            extension_decay: cfg.extension_decay,
            ..MotionParams::default()
        },
    };
    let mut opts = FilterOptions::default();
    opts.vb.max_iters = cfg.vb_iterations as usize;
    opts.vb.tolerance = cfg.tolerance;
    opts.rounds = cfg.consensus_rounds as usize;
    opts.rho = cfg.rho;
    let variant = match variant {
        EotVariant::Dvbeot => AlgorithmVariant::Distributed,
        EotVariant::DvbeotKnownR => AlgorithmVariant::DistributedKnownR(SpdMatrix::new(
            DMatrix::from_row_slice(2, 2, &cfg.known_noise),
        )?),
        EotVariant::DvbeotNoR => AlgorithmVariant::DistributedNoR,
        EotVariant::NonCooperative => AlgorithmVariant::NonCooperative,
        EotVariant::Centralized => AlgorithmVariant::Centralized,
    };
    Ok(DistributedTracker::new(
        net.clone(),
        model,
        variant,
        opts,
        TrackerPriors::default(),
    )?)
}

impl TryFrom<u32> for EotVariant {
    type Error = u32;

    fn try_from(v: u32) -> Result<Self, u32> {
        Ok(match v {
            0 => EotVariant::Dvbeot,
            1 => EotVariant::DvbeotKnownR,
            2 => EotVariant::DvbeotNoR,
            3 => EotVariant::NonCooperative,
            4 => EotVariant::Centralized,
            other => return Err(other),
        })
    }
}

/// Creates a tracker over a copy of `net`. `variant` is an [`EotVariant`] value.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_new(
    net: *const EotNetwork,
    cfg: *const EotTrackerConfig,
    variant: u32,
    out: *mut *mut EotTracker,
) -> EotStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let variant =
            EotVariant::try_from(variant).map_err(|v| invalid(format!("unknown variant {v}")))?;
        let inner = build_tracker(&in_ref(net, "net")?.0, in_ref(cfg, "cfg")?, variant)?;
        *out = Box::into_raw(Box::new(EotTracker {
            inner,
            last: Vec::new(),
        }));
        Ok(())
    })
}

/// Processes one scan. `counts[k]` is the number of measurements of node
/// `k`; `points` holds all measurements as consecutive `(x, y)` pairs,
/// node by node.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_step(
    tracker: *mut EotTracker,
    counts: *const usize,
    n_nodes: usize,
    points: *const f64,
) -> EotStatus {
    guard(|| {
        let t = out_ref(tracker, "tracker")?;
        let expected = t.inner.network().n_nodes();
        if n_nodes != expected {
            return Err(invalid(format!(
                "expected {expected} node counts, got {n_nodes}"
            )));
        }
        let counts = in_slice(counts, n_nodes, "counts")?;
        let total: usize = counts.iter().sum();
        let flat = in_slice(points, DIM * total, "points")?;
        let mut offset = 0;
        let batches: Vec<Vec<DVector<f64>>> = counts
            .iter()
            .map(|&c| {
                let b = flat[offset..offset + DIM * c]
                    .chunks_exact(DIM)
                    .map(DVector::from_row_slice)
                    .collect();
                offset += DIM * c;
                b
            })
            .collect();
        t.last = t.inner.step(&batches)?;
        Ok(())
    })
}

/// Number of estimates per scan: the node count, or 1 for the centralized variant.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_estimate_count(
    tracker: *const EotTracker,
    out: *mut usize,
) -> EotStatus {
    guard(|| {
        let t = in_ref(tracker, "tracker")?;
        *out_ref(out, "out")? = if matches!(t.inner.variant(), AlgorithmVariant::Centralized) {
            1
        } else {
            t.inner.network().n_nodes()
        };
        Ok(())
    })
}

unsafe fn with_estimate<F>(tracker: *const EotTracker, node: usize, f: F) -> EotStatus
where
    F: FnOnce(&NodeEstimate) -> Result<(), Fail>,
{
    guard(|| {
        let t = in_ref(tracker, "tracker")?;
        if t.last.is_empty() {
            return Err(Fail(EotStatus::Unavailable, "no scan processed yet".into()));
        }
        let est = t
            .last
            .get(node)
            .ok_or_else(|| invalid(format!("node {node} out of range 0..{}", t.last.len())))?;
        f(est)
    })
}

/// Latest posterior centroid of `node` into `out[2]`.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_centroid(
    tracker: *const EotTracker,
    node: usize,
    out: *mut f64,
) -> EotStatus {
    with_estimate(tracker, node, |e| {
        let out = out_ref(out, "out")?;
        std::ptr::copy_nonoverlapping(e.centroid().as_ptr(), out, DIM);
        Ok(())
    })
}

fn write_row_major(m: &DMatrix<f64>, out: *mut f64) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let values = m.transpose();
    // SAFETY: the caller guarantees room for DIM * DIM values.
    unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, DIM * DIM) };
    Ok(())
}

/// Latest `E[X]` of `node`, row-major into `out[4]`.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_extension(
    tracker: *const EotTracker,
    node: usize,
    out: *mut f64,
) -> EotStatus {
    with_estimate(tracker, node, |e| write_row_major(&e.extension, out))
}

/// Latest `E[R]` of `node`, row-major into `out[4]`; `EOT_STATUS_UNAVAILABLE`
/// when the variant neglects noise.
#[no_mangle]
pub unsafe extern "C" fn eot_tracker_noise(
    tracker: *const EotTracker,
    node: usize,
    out: *mut f64,
) -> EotStatus {
    with_estimate(tracker, node, |e| match &e.noise {
        Some(r) => write_row_major(r, out),
        None => Err(Fail(
            EotStatus::Unavailable,
            "noise estimate unavailable".into(),
        )),
    })
}

#[no_mangle]
pub unsafe extern "C" fn eot_tracker_free(tracker: *mut EotTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Gaussian Wasserstein distance between `(c1, s1)` and `(c2, s2)`; centers
/// have 2 values, shapes 4 (row-major).
#[no_mangle]
pub unsafe extern "C" fn eot_gwd(
    c1: *const f64,
    s1: *const f64,
    c2: *const f64,
    s2: *const f64,
    out: *mut f64,
) -> EotStatus {
    guard(|| {
        let ell = |c: *const f64, s: *const f64, name: &str| -> Result<EllipseEstimate, Fail> {
            let c = in_slice(c, DIM, name)?;
            let s = in_slice(s, DIM * DIM, name)?;
            Ok(EllipseEstimate::new(
                DVector::from_row_slice(c),
                DMatrix::from_row_slice(DIM, DIM, s),
            ))
        };
        let a = ell(c1, s1, "first ellipse")?;
        let b = ell(c2, s2, "second ellipse")?;
        *out_ref(out, "out")? = gwd(&a, &b)?;
        Ok(())
    })
}
