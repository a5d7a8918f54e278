//! Discrete quadratic-cost optimal transport: the reconstruction procedure
//! that recovers a Lagrangian map from its two mass marginals by solving an
//! assignment problem.
//!
//! Costs are integerized at 2^32 relative resolution before the auction so
//! the epsilon-scaling termination guarantee is exact; the Hungarian solver
//! runs on the same integer costs and serves as the optimality oracle.

use crate::flow::FlowPotential;
use crate::symmat::eigenframe;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cost integerization resolution (relative to the largest cost).
const COST_RESOLUTION: f64 = 4294967296.0; // 2^32

#[derive(Debug, Error)]
pub enum MakError {
    #[error("point sets differ in size: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("point dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite cost between lagrangian {0} and eulerian {1}")]
    NonFinite(usize, usize),
    #[error("instance too large for {method}: N = {n} exceeds {max}")]
    TooLarge { method: &'static str, n: usize, max: usize },
    #[error("shell-crossing on the grid at q = {q:?} (min Hessian eigenvalue {min_eig:.3e})")]
    ShellCrossing { q: Vec<f64>, min_eig: f64 },
    #[error("lagrangian points do not form a regular grid")]
    NotAGrid,
    #[error("empty instance")]
    Empty,
}

/// Regular-grid layout of the Lagrangian points: axis 0 varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GridInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.dims[axis] - 1) as f64
    }
}

/// Equal-count source and target point sets with unit masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointCloudPair {
    pub lagrangian: Vec<Vec<f64>>,
    pub eulerian: Vec<Vec<f64>>,
    pub true_permutation: Option<Vec<usize>>,
    pub grid: Option<GridInfo>,
}

impl PointCloudPair {
    pub fn new(
        lagrangian: Vec<Vec<f64>>,
        eulerian: Vec<Vec<f64>>,
        true_permutation: Option<Vec<usize>>,
    ) -> Result<Self, MakError> {
        if lagrangian.is_empty() {
            return Err(MakError::Empty);
        }
        if lagrangian.len() != eulerian.len() {
            return Err(MakError::CountMismatch(lagrangian.len(), eulerian.len()));
        }
        let d = lagrangian[0].len();
        for p in lagrangian.iter().chain(&eulerian) {
            if p.len() != d {
                return Err(MakError::DimensionMismatch(p.len(), d));
            }
        }
        Ok(PointCloudPair { lagrangian, eulerian, true_permutation, grid: None })
    }

    pub fn len(&self) -> usize {
        self.lagrangian.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lagrangian.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lagrangian[0].len()
    }
}

/// Evolve a regular Lagrangian grid with a flow: eulerian[i] is the image of
/// lagrangian[i] at time t, so the ground-truth pairing is the identity.
/// Refuses when the map Hessian degenerates anywhere on the grid.
pub fn generate_pair(
    flow: &FlowPotential,
    n_per_axis: usize,
    lo: &[f64],
    hi: &[f64],
    t: f64,
) -> Result<PointCloudPair, MakError> {
    let d = flow.dim();
    assert!(n_per_axis >= 2, "need at least two nodes per axis");
    let n_total = n_per_axis.pow(d as u32);
    let mut lagrangian = Vec::with_capacity(n_total);
    for flat in 0..n_total {
        let mut idx = flat;
        let mut q = Vec::with_capacity(d);
        for a in 0..d {
            let i = idx % n_per_axis;
            idx /= n_per_axis;
            q.push(lo[a] + (hi[a] - lo[a]) * i as f64 / (n_per_axis - 1) as f64);
        }
        lagrangian.push(q);
    }
    let mut eulerian = Vec::with_capacity(n_total);
    for q in &lagrangian {
        let h = flow.hessian(q, t);
        let min_eig = eigenframe(&h).eigenvalues[0];
        if min_eig < crate::flow::SHELL_CROSSING_EIG {
            return Err(MakError::ShellCrossing { q: q.clone(), min_eig });
        }
        eulerian.push(flow.lagrangian_map(q, t));
    }
    Ok(PointCloudPair {
        lagrangian,
        eulerian,
        true_permutation: Some((0..n_total).collect()),
        grid: Some(GridInfo { dims: vec![n_per_axis; d], lo: lo.to_vec(), hi: hi.to_vec() }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Auction,
    Hungarian,
}

/// Minimum-cost bijection between the two point sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportAssignment {
    /// permutation[i] = index of the eulerian point assigned to
    /// lagrangian point i
    pub permutation: Vec<usize>,
    /// sum of squared displacements under the assignment
    pub total_cost: f64,
    /// the same total on the integerized costs (exact comparison currency)
    pub total_cost_int: i64,
    pub method: SolverMethod,
    pub epsilon_final: f64,
    pub iterations: usize,
    pub runtime_ms: u128,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct IntCosts {
    n: usize,
    /// c[i*n + j], scaled so the maximum is close to 2^32
    c: Vec<i64>,
    scale: f64,
}

fn integerize_costs(pair: &PointCloudPair) -> Result<IntCosts, MakError> {
    let n = pair.len();
    let mut raw = vec![0.0; n * n];
    let mut cmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = squared_distance(&pair.lagrangian[i], &pair.eulerian[j]);
            if !c.is_finite() {
                return Err(MakError::NonFinite(i, j));
            }
            raw[i * n + j] = c;
            cmax = cmax.max(c);
        }
    }
    let scale = if cmax > 0.0 { COST_RESOLUTION / cmax } else { 1.0 };
    let c = raw.iter().map(|&v| (v * scale).round() as i64).collect();
    Ok(IntCosts { n, c, scale })
}

/// Forward auction with epsilon scaling. Costs are pre-multiplied by
/// (N + 1) so the final phase at eps = 1 lands within N/(N+1) < 1 of the
/// integer optimum, i.e. exactly on it.
fn auction_solve(costs: &IntCosts) -> (Vec<usize>, usize) {
    let n = costs.n;
    let m = (n + 1) as i64;
    let big: Vec<i64> = costs.c.iter().map(|&c| c * m).collect();
    let cmax_big = big.iter().copied().max().unwrap_or(0);

    let mut prices = vec![0i64; n];
    let mut eps = (cmax_big / 2).max(1);
    let mut owner: Vec<Option<usize>> = vec![None; n]; // object -> person
    let mut assigned: Vec<Option<usize>> = vec![None; n]; // person -> object
    let mut iterations = 0usize;

    loop {
        owner.iter_mut().for_each(|o| *o = None);
        assigned.iter_mut().for_each(|a| *a = None);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            iterations += 1;
            // Best and second-best values of -cost - price.
            let mut best_j = 0;
            let mut best = i64::MIN;
            let mut second = i64::MIN;
            for j in 0..n {
                let v = -big[i * n + j] - prices[j];
                if v > best {
                    second = best;
                    best = v;
                    best_j = j;
                } else if v > second {
                    second = v;
                }
            }
            let bump = if second == i64::MIN { eps } else { best - second + eps };
            prices[best_j] += bump;
            if let Some(prev) = owner[best_j].replace(i) {
                assigned[prev] = None;
                queue.push_back(prev);
            }
            assigned[i] = Some(best_j);
        }
        if eps == 1 {
            break;
        }
        eps = (eps / 4).max(1);
    }
    (assigned.into_iter().map(|a| a.expect("complete assignment")).collect(), iterations)
}

/// Exact O(N^3) Hungarian solver (shortest augmenting paths with
/// potentials) on the integer costs.
fn hungarian_solve(costs: &IntCosts) -> Vec<usize> {
    let n = costs.n;
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays in the classical formulation.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> assigned row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs.c[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Solve the assignment problem for the pair with the selected method.
pub fn solve_assignment(
    pair: &PointCloudPair,
    method: SolverMethod,
) -> Result<TransportAssignment, MakError> {
    let n = pair.len();
    match method {
        SolverMethod::Auction if n > 100_000 => {
            return Err(MakError::TooLarge { method: "auction", n, max: 100_000 })
        }
        SolverMethod::Hungarian if n > 2_000 => {
            return Err(MakError::TooLarge { method: "hungarian", n, max: 2_000 })
        }
        _ => {}
    }
    let start = std::time::Instant::now();
    let costs = integerize_costs(pair)?;
    let (permutation, iterations, epsilon_final) = match method {
        SolverMethod::Auction => {
            let (perm, iters) = auction_solve(&costs);
            let eps = 1.0 / ((n as f64 + 1.0) * costs.scale);
            (perm, iters, eps)
        }
        SolverMethod::Hungarian => (hungarian_solve(&costs), n, 0.0),
    };
    let total_cost: f64 = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| squared_distance(&pair.lagrangian[i], &pair.eulerian[j]))
        .sum();
    let total_cost_int: i64 =
        permutation.iter().enumerate().map(|(i, &j)| costs.c[i * costs.n + j]).sum();
    Ok(TransportAssignment {
        permutation,
        total_cost,
        total_cost_int,
        method,
        epsilon_final,
        iterations,
        runtime_ms: start.elapsed().as_millis(),
    })
}

/// Reconstruction outcome: the recovered pairing scored against the known
/// ground truth, when there is one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub n: usize,
    /// fraction of points whose assigned partner matches the ground truth
    pub match_fraction: Option<f64>,
    pub total_cost: f64,
    pub solver: SolverMethod,
    pub epsilon_final: f64,
    pub runtime_ms: u128,
    pub permutation: Vec<usize>,
}

impl ReconstructionReport {
    /// Per-point displacement vectors x_{perm(i)} - q_i.
    pub fn displacements(&self, pair: &PointCloudPair) -> Vec<Vec<f64>> {
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                pair.eulerian[j]
                    .iter()
                    .zip(&pair.lagrangian[i])
                    .map(|(x, q)| x - q)
                    .collect()
            })
            .collect()
    }
}

/// Solve the assignment with the uniform Lagrangian grid as prior and the
/// Eulerian cloud as data, then score against the true pairing.
pub fn mak_reconstruct(
    pair: &PointCloudPair,
    method: SolverMethod,
) -> Result<ReconstructionReport, MakError> {
    let assignment = solve_assignment(pair, method)?;
    let match_fraction = pair.true_permutation.as_ref().map(|truth| {
        let hits = assignment.permutation.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / pair.len() as f64
    });
    Ok(ReconstructionReport {
        n: pair.len(),
        match_fraction,
        total_cost: assignment.total_cost,
        solver: assignment.method,
        epsilon_final: assignment.epsilon_final,
        runtime_ms: assignment.runtime_ms,
        permutation: assignment.permutation,
    })
}

/// Negative Lagrangian divergence of the assigned displacement field,
/// estimated by central differences on the regular grid (2nd-order
/// one-sided at the boundary).
pub fn displacement_divergence(
    pair: &PointCloudPair,
    assignment: &[usize],
) -> Result<Vec<f64>, MakError> {
    let grid = pair.grid.as_ref().ok_or(MakError::NotAGrid)?;
    let d = pair.dim();
    let n_total = grid.len();
    if n_total != pair.len() {
        return Err(MakError::NotAGrid);
    }
    // Displacement component a at flat index k.
    let disp =
        |k: usize, a: usize| pair.eulerian[assignment[k]][a] - pair.lagrangian[k][a];
    let strides: Vec<usize> = {
        let mut s = vec![1usize; d];
        for a in 1..d {
            s[a] = s[a - 1] * grid.dims[a - 1];
        }
        s
    };
    let mut out = vec![0.0; n_total];
    for k in 0..n_total {
        let mut div = 0.0;
        for a in 0..d {
            let i = k / strides[a] % grid.dims[a];
            let h = grid.spacing(a);
            let n_a = grid.dims[a];
            let f = |ii: usize| {
                let kk = k + ii * strides[a] - i * strides[a];
                disp(kk, a)
            };
            div += if i > 0 && i + 1 < n_a {
                (f(i + 1) - f(i - 1)) / (2.0 * h)
            } else if i == 0 {
                (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h)
            } else {
                (3.0 * f(n_a - 1) - 4.0 * f(n_a - 2) + f(n_a - 3)) / (2.0 * h)
            };
        }
        out[k] = -div;
    }
    Ok(out)
}

// --- CSV interchange --------------------------------------------------------

/// One point per line, coordinates comma-separated.
pub fn points_to_csv(points: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn points_from_csv(text: &str) -> Result<Vec<Vec<f64>>, MakError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        out.push(p.map_err(|_| MakError::NotAGrid)?);
    }
    if out.is_empty() {
        return Err(MakError::Empty);
    }
    Ok(out)
}

/// One integer per line.
pub fn permutation_to_text(perm: &[usize]) -> String {
    perm.iter().map(|i| format!("{i}\n")).collect()
}

pub fn permutation_from_text(text: &str) -> Option<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<usize>().ok())
        .collect()
}
