//! Sensor network graphs and ADMM distributed averaging.
//!
//! Every node holds a local vector `ω_k`; the ADMM iterations drive the
//! per-node copies `φ_k` to the network average `(1/N) Σ ω_j` using only
//! one-hop exchanges. Rounds are synchronous (Jacobi): each round reads the
//! previous iterate of every node.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matstat::symmetrize;
use crate::vbcore::LatentSums;

/// Undirected, connected graph of sensor nodes without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    neighbors: Vec<Vec<usize>>,
    positions: Option<Vec<[f64; 2]>>,
}

fn build_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut neighbors = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidParameter(format!(
                "edge ({a}, {b}) references a node outside 0..{n}"
            )));
        }
        if a == b {
            return Err(Error::InvalidParameter(format!("self-loop at node {a}")));
        }
        if !neighbors[a].contains(&b) {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    Ok(neighbors)
}

fn count_components(neighbors: &[Vec<usize>]) -> usize {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            for &j in &neighbors[k] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    components
}

impl SensorNetwork {
    /// Builds a network from 0-indexed undirected edges. Duplicate edges are
    /// merged; self-loops and disconnected graphs are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("network has no nodes"));
        }
        let neighbors = build_adjacency(n, edges)?;
        let components = count_components(&neighbors);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(SensorNetwork {
            neighbors,
            positions: None,
        })
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .collect();
        SensorNetwork::from_edges(n, &edges)
    }

    pub fn with_positions(mut self, positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_nodes(),
                got: positions.len(),
            });
        }
        self.positions = Some(positions);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    /// Edges as `(k, l)` with `k < l`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, list) in self.neighbors.iter().enumerate() {
            for &l in list {
                if k < l {
                    out.push((k, l));
                }
            }
        }
        out
    }

    pub fn component_count(&self) -> usize {
        count_components(&self.neighbors)
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut a = DMatrix::zeros(n, n);
        for (k, list) in self.neighbors.iter().enumerate() {
            for &l in list {
                a[(k, l)] = 1.0;
            }
        }
        a
    }

    /// Writes the edge-list text format: a header line with the node count,
    /// `k l` lines for edges and `k x y` lines for positions, all 1-indexed.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# eotrack sensor network");
        let _ = writeln!(s, "{}", self.n_nodes());
        for (k, l) in self.edges() {
            let _ = writeln!(s, "{} {}", k + 1, l + 1);
        }
        if let Some(pos) = &self.positions {
            for (k, p) in pos.iter().enumerate() {
                let _ = writeln!(s, "{} {} {}", k + 1, p[0], p[1]);
            }
        }
        s
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_edge_list().as_bytes())?;
        Ok(())
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        let mut positions: Vec<Option<[f64; 2]>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let node = |tok: &str, n: usize| -> Result<usize> {
                let k: usize = tok
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("bad node index `{tok}`")))?;
                if k == 0 || k > n {
                    return Err(Error::parse(line_no, format!("node {k} outside 1..={n}")));
                }
                Ok(k - 1)
            };
            match (n, tokens.len()) {
                (None, 1) => {
                    let count: usize = tokens[0]
                        .parse()
                        .map_err(|_| Error::parse(line_no, "bad node count"))?;
                    n = Some(count);
                    positions = vec![None; count];
                }
                (None, _) => return Err(Error::parse(line_no, "expected node count header")),
                (Some(n), 2) => edges.push((node(tokens[0], n)?, node(tokens[1], n)?)),
                (Some(n), 3) => {
                    let k = node(tokens[0], n)?;
                    let coord = |t: &str| -> Result<f64> {
                        t.parse()
                            .map_err(|_| Error::parse(line_no, format!("bad coordinate `{t}`")))
                    };
                    positions[k] = Some([coord(tokens[1])?, coord(tokens[2])?]);
                }
                (Some(_), m) => {
                    return Err(Error::parse(line_no, format!("unexpected {m} fields")))
                }
            }
        }
        let n = n.ok_or_else(|| Error::parse(0, "missing node count header"))?;
        let net = SensorNetwork::from_edges(n, &edges)?;
        if positions.iter().any(Option::is_some) {
            let pos: Option<Vec<_>> = positions.into_iter().collect();
            let pos = pos.ok_or_else(|| Error::parse(0, "positions given for only some nodes"))?;
            return net.with_positions(pos);
        }
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SensorNetwork::parse_edge_list(
            &std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::file(path, e))
    }
}

const MAX_GENERATION_ATTEMPTS: usize = 1000;

/// Random geometric graph: `n` nodes uniform in `[0, side]²`, linked when
/// within `radius`. Redrawn until connected, up to 1000 attempts.
pub fn generate_network<R: Rng + ?Sized>(
    n: usize,
    side: f64,
    radius: f64,
    rng: &mut R,
) -> Result<SensorNetwork> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    if !(radius > 0.0) || !(side > 0.0) {
        return Err(Error::InvalidParameter(
            "side and radius must be positive".into(),
        ));
    }
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let pos: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
            .collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let dx = pos[a][0] - pos[b][0];
                let dy = pos[a][1] - pos[b][1];
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((a, b));
                }
            }
        }
        let neighbors = build_adjacency(n, &edges)?;
        if count_components(&neighbors) == 1 {
            return Ok(SensorNetwork {
                neighbors,
                positions: Some(pos),
            });
        }
    }
    Err(Error::NetworkGeneration {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

/// Length of the consensus payload for dimension `d`: `d + 2d² + 1`.
pub fn stat_len(d: usize) -> usize {
    d + 2 * d * d + 1
}

/// Flattened consensus payload `[Σ⟨z⟩ (d), Σ⟨zzᵀ⟩ (d², row-major),
/// Σ⟨(y-z)(y-z)ᵀ⟩ (d², row-major), count]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector(pub Vec<f64>);

impl StatVector {
    pub fn zeros(len: usize) -> Self {
        StatVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn pack(sums: &LatentSums) -> Self {
        let d = sums.dim();
        let mut v = Vec::with_capacity(stat_len(d));
        v.extend(sums.sum_z.iter());
        for m in [&sums.sum_zz, &sums.sum_residual] {
            for i in 0..d {
                for j in 0..d {
                    v.push(m[(i, j)]);
                }
            }
        }
        v.push(sums.count);
        StatVector(v)
    }

    /// Inverse of [`StatVector::pack`]; the matrix blocks are symmetrized.
    pub fn unpack(&self, d: usize) -> Result<LatentSums> {
        if self.len() != stat_len(d) {
            return Err(Error::DimensionMismatch {
                expected: stat_len(d),
                got: self.len(),
            });
        }
        let v = &self.0;
        let block =
            |offset: usize| symmetrize(&DMatrix::from_row_slice(d, d, &v[offset..offset + d * d]));
        Ok(LatentSums {
            count: v[d + 2 * d * d],
            sum_z: DVector::from_row_slice(&v[..d]),
            sum_zz: block(d),
            sum_residual: block(d + d * d),
        })
    }
}

/// Per-node ADMM iterates and aggregate multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub phi: Vec<StatVector>,
    pub lambda: Vec<StatVector>,
    pub rho: f64,
}

impl AdmmState {
    /// `φ⁰ = ω`, `λ⁰ = 0`.
    pub fn start(omega: &[StatVector], rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be positive, got {rho}"
            )));
        }
        let len = omega.first().map_or(0, StatVector::len);
        check_lengths(omega, len)?;
        Ok(AdmmState {
            phi: omega.to_vec(),
            lambda: vec![StatVector::zeros(len); omega.len()],
            rho,
        })
    }
}

fn check_lengths(vs: &[StatVector], len: usize) -> Result<()> {
    for v in vs {
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// One synchronous ADMM round:
///
/// `φ_k ← (ω_k - 2λ_k + ρ Σ_{j∈N_k}(φ_k + φ_j)) / (1 + 2ρ|N_k|)`, then
/// `λ_k ← λ_k + (ρ/2) Σ_{j∈N_k}(φ_k - φ_j)` with the new `φ`.
pub fn admm_round(
    state: &AdmmState,
    net: &SensorNetwork,
    omega: &[StatVector],
) -> Result<AdmmState> {
    let n = net.n_nodes();
    for count in [omega.len(), state.phi.len(), state.lambda.len()] {
        if count != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: count,
            });
        }
    }
    let len = omega.first().map_or(0, StatVector::len);
    check_lengths(omega, len)?;
    check_lengths(&state.phi, len)?;
    check_lengths(&state.lambda, len)?;
    let rho = state.rho;

    let phi: Vec<StatVector> = (0..n)
        .map(|k| {
            let nbrs = net.neighbors(k);
            let denom = 1.0 + 2.0 * rho * nbrs.len() as f64;
            let own = &state.phi[k].0;
            let v = (0..len)
                .map(|i| {
                    let coupling: f64 = nbrs.iter().map(|&j| own[i] + state.phi[j].0[i]).sum();
                    (omega[k].0[i] - 2.0 * state.lambda[k].0[i] + rho * coupling) / denom
                })
                .collect();
            StatVector(v)
        })
        .collect();

    let lambda = (0..n)
        .map(|k| {
            let nbrs = net.neighbors(k);
            let v = (0..len)
                .map(|i| {
                    let diff: f64 = nbrs.iter().map(|&j| phi[k].0[i] - phi[j].0[i]).sum();
                    state.lambda[k].0[i] + 0.5 * rho * diff
                })
                .collect();
            StatVector(v)
        })
        .collect();

    Ok(AdmmState { phi, lambda, rho })
}

/// Runs `rounds` ADMM rounds from `φ⁰ = ω`, `λ⁰ = 0` and returns `φ^{(L)}`.
pub fn run_consensus(
    net: &SensorNetwork,
    omega: &[StatVector],
    rho: f64,
    rounds: usize,
) -> Result<Vec<StatVector>> {
    let mut state = AdmmState::start(omega, rho)?;
    if omega.len() != net.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: net.n_nodes(),
            got: omega.len(),
        });
    }
    for _ in 0..rounds {
        state = admm_round(&state, net, omega)?;
    }
    Ok(state.phi)
}
