//! Short-wavelength construction of 2-D omni-potential flows for arbitrary
//! smooth initial potentials.
//!
//! The eikonal S must have its gradient parallel to an eigendirection of the
//! Hessian of the initial potential. Level lines of S are the integral
//! curves of the orthogonal eigendirection field; amplitude transport runs
//! along those curves, so they play the role of rays. S is prescribed on a
//! seed curve transversal to the rays and held constant along each ray.
//!
//! The patch builder traces the ray through every grid node back to the seed
//! curve, so nodal values of S and the amplitudes carry integrator accuracy
//! rather than scattered-interpolation error; all grid derivatives then come
//! from finite differences of those nodal values.

use crate::flow::{BlockField, FlowBlock, FlowError, FlowKind, FlowPotential, TimePolynomial};
use crate::grid::{self, Box2, Grid2, GridScalarField2};
use crate::polynomials::{HomogeneousPolynomial, PolySum};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue-gap threshold below which the branch fields are
/// considered degenerate (a codimension-two event for generic potentials).
pub const GAP_TOL_REL: f64 = 1e-8;
/// Minimum angle (radians) between the seed curve and the ray field.
pub const TRANSVERSALITY_MIN_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error)]
pub enum WkbError {
    #[error("degenerate Hessian of phi0 at q = ({0}, {1}): eigenvalue gap below tolerance")]
    DegenerateHessian(f64, f64),
    #[error("seed curve not transversal to the ray field at sigma = {sigma} (angle {angle_deg:.2} deg < 10 deg)")]
    Transversality { sigma: f64, angle_deg: f64 },
    #[error("{count} grid nodes have no ray connection to the seed curve (first at ({0}, {1}))", .first[0], .first[1])]
    RayMissedSeed { count: usize, first: [f64; 2] },
    #[error("rays cross inside the patch near ({0}, {1})", .near[0], .near[1])]
    RayCrossing { near: [f64; 2] },
    #[error("eikonal gradient vanishes near ({0}, {1}); amplitude transport undefined", .at[0], .at[1])]
    VanishingGradient { at: [f64; 2] },
    #[error("patch has no amplitudes; run transport_amplitudes first")]
    AmplitudesMissing,
    #[error("assembled potential cannot be kept convex on the patch for any t >= 1e-4")]
    ConvexityUnattainable,
    #[error("time factor must vanish together with its derivative at t = 0, got f(0) = {0}, f'(0) = {1}")]
    BadTimeFunction(f64, f64),
    #[error("phi0 must be 2-D, got dim {0}")]
    WrongDimension(usize),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Which eigenvalue branch of the Hessian of phi0, ordered ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Lower,
    Upper,
}

impl Branch {
    pub fn other(self) -> Branch {
        match self {
            Branch::Lower => Branch::Upper,
            Branch::Upper => Branch::Lower,
        }
    }
}

/// phi0 with its Hessian-entry polynomials flattened to f64 monomials for
/// fast pointwise evaluation inside the integrators.
#[derive(Debug, Clone)]
pub struct Phi0Field {
    pub poly: PolySum,
    h11: FastPoly,
    h12: FastPoly,
    h22: FastPoly,
}

#[derive(Debug, Clone)]
struct FastPoly {
    terms: Vec<([u32; 2], f64)>,
}

impl FastPoly {
    fn from_parts(parts: &[HomogeneousPolynomial], i: usize, j: usize) -> Self {
        use num_traits::ToPrimitive;
        let mut terms = Vec::new();
        for p in parts {
            for (mi, c) in p.partial2(i, j).terms() {
                terms.push(([mi.0[0], mi.0[1]], c.to_f64().expect("coefficient fits f64")));
            }
        }
        FastPoly { terms }
    }

    #[inline]
    fn eval(&self, q: &[f64; 2]) -> f64 {
        let mut s = 0.0;
        for ([e1, e2], c) in &self.terms {
            s += c * q[0].powi(*e1 as i32) * q[1].powi(*e2 as i32);
        }
        s
    }
}

/// 2x2 symmetric eigen-decomposition in closed form.
#[derive(Debug, Clone, Copy)]
pub struct EigenBasis2 {
    pub eigenvalues: [f64; 2],
    /// unit eigenvectors for the lower and upper eigenvalue
    pub directions: [[f64; 2]; 2],
    pub gap: f64,
    pub norm: f64,
}

fn eigen2x2(h11: f64, h12: f64, h22: f64) -> EigenBasis2 {
    let mean = 0.5 * (h11 + h22);
    let half_diff = 0.5 * (h11 - h22);
    let r = (half_diff * half_diff + h12 * h12).sqrt();
    let (lo, hi) = (mean - r, mean + r);
    let norm = (h11 * h11 + 2.0 * h12 * h12 + h22 * h22).sqrt();
    let vec_for = |lambda: f64| -> [f64; 2] {
        // Pick the better-conditioned eigenvector formula.
        let a = [h12, lambda - h11];
        let b = [lambda - h22, h12];
        let na = a[0] * a[0] + a[1] * a[1];
        let nb = b[0] * b[0] + b[1] * b[1];
        let v = if na >= nb { a } else { b };
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            [v[0] / n, v[1] / n]
        }
    };
    EigenBasis2 { eigenvalues: [lo, hi], directions: [vec_for(lo), vec_for(hi)], gap: 2.0 * r, norm }
}

fn canonical_sign(mut v: [f64; 2]) -> [f64; 2] {
    let flip = if v[0].abs() >= v[1].abs() { v[0] < 0.0 } else { v[1] < 0.0 };
    if flip {
        v = [-v[0], -v[1]];
    }
    v
}

impl Phi0Field {
    pub fn new(phi0: &PolySum) -> Result<Self, WkbError> {
        if phi0.dim != 2 {
            return Err(WkbError::WrongDimension(phi0.dim));
        }
        Ok(Phi0Field {
            poly: phi0.clone(),
            h11: FastPoly::from_parts(&phi0.parts, 0, 0),
            h12: FastPoly::from_parts(&phi0.parts, 0, 1),
            h22: FastPoly::from_parts(&phi0.parts, 1, 1),
        })
    }

    #[inline]
    pub fn hessian_entries(&self, q: &[f64; 2]) -> [f64; 3] {
        [self.h11.eval(q), self.h12.eval(q), self.h22.eval(q)]
    }

    pub fn basis(&self, q: &[f64; 2]) -> EigenBasis2 {
        let [h11, h12, h22] = self.hessian_entries(q);
        eigen2x2(h11, h12, h22)
    }

    /// The invariant g = (H11 - H22)/H12; infinite where H12 vanishes.
    pub fn g_ratio(&self, q: &[f64; 2]) -> f64 {
        let [h11, h12, h22] = self.hessian_entries(q);
        (h11 - h22) / h12
    }

    fn gap_ok(&self, b: &EigenBasis2) -> bool {
        b.gap > GAP_TOL_REL * b.norm.max(f64::MIN_POSITIVE)
    }
}

/// Smooth unit eigendirection field of one branch, with sign continuity
/// along queried paths via the caller-held previous direction.
#[derive(Debug, Clone)]
pub struct EigenField2D {
    pub field: Phi0Field,
    pub branch: Branch,
}

impl EigenField2D {
    pub fn new(phi0: &PolySum, branch: Branch) -> Result<Self, WkbError> {
        Ok(EigenField2D { field: Phi0Field::new(phi0)?, branch })
    }

    /// Unit eigenvector at q. With no reference the sign convention makes
    /// the largest-magnitude component positive; with a reference the sign
    /// keeps the angle to the reference below pi/2.
    pub fn at(&self, q: &[f64; 2], reference: Option<[f64; 2]>) -> Result<[f64; 2], WkbError> {
        let b = self.field.basis(q);
        if !self.field.gap_ok(&b) {
            return Err(WkbError::DegenerateHessian(q[0], q[1]));
        }
        let idx = match self.branch {
            Branch::Lower => 0,
            Branch::Upper => 1,
        };
        let v = b.directions[idx];
        Ok(match reference {
            Some(r) => {
                if v[0] * r[0] + v[1] * r[1] < 0.0 {
                    [-v[0], -v[1]]
                } else {
                    v
                }
            }
            None => canonical_sign(v),
        })
    }
}

/// Arclength-parameterized integral curve samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub arclength: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RayOptions {
    pub step: f64,
    pub max_len: f64,
}

impl RayOptions {
    pub fn default_for(omega: &Box2) -> Self {
        let diag = omega.diagonal();
        RayOptions { step: diag / 2000.0, max_len: 3.0 * diag }
    }
}

/// Classical 4th-order fixed-step integration of q' = n(q), with the branch
/// sign kept continuous step to step. Stops at the patch boundary, at
/// max_len, or when the eigenvalue gap collapses.
pub fn trace_ray(
    phi0: &PolySum,
    q0: [f64; 2],
    branch: Branch,
    opts: &RayOptions,
    omega: &Box2,
) -> Result<Polyline, WkbError> {
    let field = EigenField2D::new(phi0, branch)?;
    let mut dir = field.at(&q0, None)?;
    let mut points = vec![q0];
    let mut arclength = vec![0.0];
    let mut q = q0;
    let mut s = 0.0;
    while s < opts.max_len {
        match rk4_step(&field, q, dir, opts.step) {
            Some((qn, dn)) => {
                if !omega.contains(&qn) {
                    // Land the endpoint on the boundary by shrinking the step.
                    let mut lo = 0.0;
                    let mut hi = opts.step;
                    for _ in 0..50 {
                        let mid = 0.5 * (lo + hi);
                        match rk4_step(&field, q, dir, mid) {
                            Some((qm, _)) if omega.contains(&qm) => lo = mid,
                            _ => hi = mid,
                        }
                    }
                    if let Some((qb, _)) = rk4_step(&field, q, dir, lo) {
                        if lo > 0.0 {
                            points.push(qb);
                            arclength.push(s + lo);
                        }
                    }
                    break;
                }
                q = qn;
                dir = dn;
                s += opts.step;
                points.push(q);
                arclength.push(s);
            }
            None => break, // gap collapse mid-flight: stop cleanly
        }
    }
    Ok(Polyline { points, arclength })
}

/// One RK4 step along the sign-continuous unit field; None on degeneracy.
fn rk4_step(
    field: &EigenField2D,
    q: [f64; 2],
    dir: [f64; 2],
    h: f64,
) -> Option<([f64; 2], [f64; 2])> {
    let f = |p: [f64; 2], r: [f64; 2]| field.at(&p, Some(r)).ok();
    let k1 = f(q, dir)?;
    let k2 = f([q[0] + 0.5 * h * k1[0], q[1] + 0.5 * h * k1[1]], k1)?;
    let k3 = f([q[0] + 0.5 * h * k2[0], q[1] + 0.5 * h * k2[1]], k2)?;
    let k4 = f([q[0] + h * k3[0], q[1] + h * k3[1]], k3)?;
    let qn = [
        q[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        q[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    let dn = f(qn, k4)?;
    Some((qn, dn))
}

/// Value profile along the seed curve, as a function of the signed
/// transversal coordinate sigma (arclength from the segment midpoint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// value = sigma
    Arclength,
    Constant(f64),
    /// value = offset + slope * sigma
    Affine { offset: f64, slope: f64 },
}

impl Profile {
    pub fn value(&self, sigma: f64) -> f64 {
        match self {
            Profile::Arclength => sigma,
            Profile::Constant(c) => *c,
            Profile::Affine { offset, slope } => offset + slope * sigma,
        }
    }
}

/// Straight seed segment with prescribed S and A0 profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedCurve {
    pub center: [f64; 2],
    /// unit direction of the segment
    pub direction: [f64; 2],
    pub half_length: f64,
    pub s_profile: Profile,
    pub a0_profile: Profile,
}

impl SeedCurve {
    pub fn new(center: [f64; 2], direction: [f64; 2], half_length: f64) -> Self {
        let n = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
        SeedCurve {
            center,
            direction: [direction[0] / n, direction[1] / n],
            half_length,
            s_profile: Profile::Arclength,
            a0_profile: Profile::Constant(1.0),
        }
    }

    /// Default for a patch: through the patch center, perpendicular to the
    /// ray field there (i.e. along the eikonal branch direction), spanning
    /// beyond the box so every ray can reach it.
    pub fn default_for(
        phi0: &PolySum,
        eikonal_branch: Branch,
        omega: &Box2,
    ) -> Result<Self, WkbError> {
        let c = omega.center();
        let field = EigenField2D::new(phi0, eikonal_branch)?;
        let dir = field.at(&c, None)?;
        Ok(SeedCurve::new(c, dir, 1.5 * omega.diagonal()))
    }

    pub fn point_at(&self, sigma: f64) -> [f64; 2] {
        [self.center[0] + sigma * self.direction[0], self.center[1] + sigma * self.direction[1]]
    }

    /// Signed transversal coordinate of the projection of p onto the
    /// segment's line.
    fn sigma_of(&self, p: &[f64; 2]) -> f64 {
        (p[0] - self.center[0]) * self.direction[0] + (p[1] - self.center[1]) * self.direction[1]
    }

    /// Signed distance of p from the segment's line.
    fn offset_of(&self, p: &[f64; 2]) -> f64 {
        -(p[0] - self.center[0]) * self.direction[1] + (p[1] - self.center[1]) * self.direction[0]
    }
}

/// The WKB patch: eikonal and amplitudes on a rectangular grid over Omega,
/// with a display bundle of traced rays.
#[derive(Debug, Clone)]
pub struct RayPatch {
    pub phi0: PolySum,
    /// Branch the eikonal gradient is parallel to. Rays are integral curves
    /// of the other branch.
    pub branch: Branch,
    pub omega: Box2,
    pub grid: Grid2,
    pub seed: SeedCurve,
    pub ray_options: RayOptions,
    /// Nodal eikonal values.
    pub s: Vec<f64>,
    /// Arclength from each node to its seed-curve foot.
    pub ray_len: Vec<f64>,
    /// Transversal coordinate of each node's foot on the seed curve.
    pub sigma_foot: Vec<f64>,
    /// Initial trace direction per node (for reproducible re-traces).
    start_dir: Vec<[f64; 2]>,
    /// Nodal amplitudes, after transport.
    pub a0: Option<Vec<Complex64>>,
    pub a1: Option<Vec<Complex64>>,
    /// Representative rays traced from the seed curve (export/diagnostics).
    pub rays: Vec<Polyline>,
    /// max over interior nodes of |p^2 - q^2 - g p q| / (p^2 + q^2)
    pub eikonal_residual: f64,
}

struct NodeTrace {
    s_value: f64,
    sigma: f64,
    len: f64,
    start_dir: [f64; 2],
}

/// Trace the ray through `q0` to the seed curve. Tries the canonical
/// direction first, then its opposite. Returns the foot data.
fn trace_node_to_seed(
    ray_field: &EigenField2D,
    seed: &SeedCurve,
    q0: [f64; 2],
    opts: &RayOptions,
    omega: &Box2,
) -> Option<NodeTrace> {
    let base = ray_field.at(&q0, None).ok()?;
    for flip in [1.0, -1.0] {
        let start = [flip * base[0], flip * base[1]];
        if let Some(hit) = march_to_seed(ray_field, seed, q0, start, opts, omega) {
            return Some(NodeTrace {
                s_value: seed.s_profile.value(hit.0),
                sigma: hit.0,
                len: hit.1,
                start_dir: start,
            });
        }
    }
    None
}

/// March from q0 along the ray field until crossing the seed segment;
/// returns (sigma at crossing, arclength). The crossing is refined by
/// bisection with RK4 sub-steps.
fn march_to_seed(
    field: &EigenField2D,
    seed: &SeedCurve,
    q0: [f64; 2],
    start: [f64; 2],
    opts: &RayOptions,
    omega: &Box2,
) -> Option<(f64, f64)> {
    let mut q = q0;
    let mut dir = start;
    let mut s = 0.0;
    let mut off_prev = seed.offset_of(&q0);
    if off_prev.abs() < 1e-14 {
        let sig = seed.sigma_of(&q0);
        if sig.abs() <= seed.half_length {
            return Some((sig, 0.0));
        }
    }
    while s < opts.max_len {
        let (qn, dn) = rk4_step(field, q, dir, opts.step)?;
        let off_next = seed.offset_of(&qn);
        if off_prev != 0.0 && off_prev.signum() != off_next.signum() {
            // Bracketed a crossing of the seed line inside this step.
            let mut lo = 0.0;
            let mut hi = opts.step;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (qm, _) = rk4_step(field, q, dir, mid)?;
                if seed.offset_of(&qm).signum() == off_prev.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (qc, _) = rk4_step(field, q, dir, 0.5 * (lo + hi))?;
            let sigma = seed.sigma_of(&qc);
            if sigma.abs() <= seed.half_length {
                return Some((sigma, s + 0.5 * (lo + hi)));
            }
            // Crossed the infinite line beyond the segment end: keep going.
        }
        if !omega.contains(&qn) {
            return None;
        }
        q = qn;
        dir = dn;
        s += opts.step;
        off_prev = off_next;
    }
    None
}

fn interior_margin(grid: &Grid2) -> usize {
    3.min(grid.nx / 4).min(grid.ny / 4).max(2)
}

/// Build the eikonal patch: S on the grid, ray connectivity, and the
/// discretized eikonal residual. Amplitudes come later via
/// `transport_amplitudes`.
pub fn build_eikonal(
    phi0: &PolySum,
    seed: SeedCurve,
    branch: Branch,
    omega: Box2,
    resolution: (usize, usize),
    ray_options: Option<RayOptions>,
) -> Result<RayPatch, WkbError> {
    let opts = ray_options.unwrap_or_else(|| RayOptions::default_for(&omega));
    let field = Phi0Field::new(phi0)?;
    let ray_branch = branch.other();
    let ray_field = EigenField2D { field: field.clone(), branch: ray_branch };
    let grid = Grid2::new(resolution.0, resolution.1, omega);

    // Eigenvalue gap sweep: the patch must be free of degeneracies.
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let q = grid.node(i, j);
            let b = field.basis(&q);
            if !field.gap_ok(&b) {
                return Err(WkbError::DegenerateHessian(q[0], q[1]));
            }
        }
    }

    // Transversality of the seed curve against the ray field, sampled over
    // the portion of the curve inside Omega.
    let transversality_samples = 64;
    for k in 0..=transversality_samples {
        let sigma =
            -seed.half_length + 2.0 * seed.half_length * k as f64 / transversality_samples as f64;
        let p = seed.point_at(sigma);
        if !omega.contains(&p) {
            continue;
        }
        let rdir = ray_field.at(&p, None)?;
        let cosang = (rdir[0] * seed.direction[0] + rdir[1] * seed.direction[1]).abs();
        let angle = cosang.clamp(0.0, 1.0).acos();
        if angle < TRANSVERSALITY_MIN_ANGLE {
            return Err(WkbError::Transversality {
                sigma,
                angle_deg: angle * 180.0 / std::f64::consts::PI,
            });
        }
    }

    // Per-node ray tracing to the seed curve. Rays from nodes near the
    // boundary may meet the seed curve just outside Omega, so the march
    // box is inflated; degeneracies out there stop the march cleanly.
    let march_box = omega.inflate(0.25 * omega.diagonal());
    let nodes: Vec<[f64; 2]> = (0..grid.len())
        .map(|k| grid.node(k % grid.nx, k / grid.nx))
        .collect();
    let traces: Vec<Option<NodeTrace>> = nodes
        .par_iter()
        .map(|&q| trace_node_to_seed(&ray_field, &seed, q, &opts, &march_box))
        .collect();
    let missed: Vec<usize> =
        traces.iter().enumerate().filter(|(_, t)| t.is_none()).map(|(k, _)| k).collect();
    if !missed.is_empty() {
        let k = missed[0];
        return Err(WkbError::RayMissedSeed {
            count: missed.len(),
            first: grid.node(k % grid.nx, k / grid.nx),
        });
    }

    let mut s = vec![0.0; grid.len()];
    let mut ray_len = vec![0.0; grid.len()];
    let mut sigma_foot = vec![0.0; grid.len()];
    let mut start_dir = vec![[0.0, 0.0]; grid.len()];
    for (k, t) in traces.into_iter().enumerate() {
        let t = t.expect("missed nodes handled above");
        s[k] = t.s_value;
        ray_len[k] = t.len;
        sigma_foot[k] = t.sigma;
        start_dir[k] = t.start_dir;
    }

    // Display bundle of rays from seed points, marched to both sides.
    let mut rays = Vec::new();
    let n_display = 33;
    for k in 0..n_display {
        let sigma =
            -seed.half_length + 2.0 * seed.half_length * k as f64 / (n_display - 1) as f64;
        let p = seed.point_at(sigma);
        if !omega.contains(&p) {
            continue;
        }
        if let Ok(r) = trace_ray(phi0, p, ray_branch, &opts, &omega) {
            if r.points.len() > 1 {
                rays.push(r);
            }
        }
    }
    check_ray_crossings(&rays, &grid)?;

    let mut patch = RayPatch {
        phi0: phi0.clone(),
        branch,
        omega,
        grid,
        seed,
        ray_options: opts,
        s,
        ray_len,
        sigma_foot,
        start_dir,
        a0: None,
        a1: None,
        rays,
        eikonal_residual: 0.0,
    };
    patch.eikonal_residual = patch.compute_eikonal_residual();
    Ok(patch)
}

/// Pairwise segment-intersection test over the display bundle, binned by
/// grid cell so only nearby segments are compared.
fn check_ray_crossings(rays: &[Polyline], grid: &Grid2) -> Result<(), WkbError> {
    use std::collections::HashMap;
    let cell = grid.hx().max(grid.hy());
    let mut bins: HashMap<(i64, i64), Vec<(usize, usize)>> = HashMap::new();
    for (ri, ray) in rays.iter().enumerate() {
        for si in 0..ray.points.len().saturating_sub(1) {
            let m = [
                0.5 * (ray.points[si][0] + ray.points[si + 1][0]),
                0.5 * (ray.points[si][1] + ray.points[si + 1][1]),
            ];
            let key = ((m[0] / cell).floor() as i64, (m[1] / cell).floor() as i64);
            bins.entry(key).or_default().push((ri, si));
        }
    }
    let seg = |ri: usize, si: usize| (rays[ri].points[si], rays[ri].points[si + 1]);
    for (&(bx, by), items) in &bins {
        let mut candidates = items.clone();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                if let Some(v) = bins.get(&(bx + dx, by + dy)) {
                    candidates.extend_from_slice(v);
                }
            }
        }
        for (idx, &(ra, sa)) in items.iter().enumerate() {
            for &(rb, sb) in candidates.iter().skip(idx + 1) {
                if ra == rb {
                    continue;
                }
                let (p1, p2) = seg(ra, sa);
                let (p3, p4) = seg(rb, sb);
                if segments_intersect(p1, p2, p3, p4) {
                    return Err(WkbError::RayCrossing {
                        near: [0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])],
                    });
                }
            }
        }
    }
    Ok(())
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], p4: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Nodal field bundle: value plus first and second FD derivatives.
struct FieldDerivs {
    v: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dxx: Vec<f64>,
    dxy: Vec<f64>,
    dyy: Vec<f64>,
}

fn derive_all(grid: &Grid2, v: &[f64]) -> FieldDerivs {
    let dx = grid::ddx(grid, v);
    let dy = grid::ddy(grid, v);
    FieldDerivs {
        v: v.to_vec(),
        dxx: grid::d2dx2(grid, v),
        dxy: grid::ddy(grid, &dx),
        dyy: grid::d2dy2(grid, v),
        dx,
        dy,
    }
}

impl RayPatch {
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        self.grid.flat(i, j)
    }

    fn s_derivs(&self) -> FieldDerivs {
        derive_all(&self.grid, &self.s)
    }

    /// Discretized eikonal residual |p^2 - q^2 - g p q| / (p^2 + q^2),
    /// max over interior nodes. Where H12 of phi0 is too small for the
    /// ratio form of g, the pole-free eigenvector form
    /// |(p^2 - q^2) n1 n2 - (n1^2 - n2^2) p q| / (p^2 + q^2) is used.
    pub fn compute_eikonal_residual(&self) -> f64 {
        let field = Phi0Field::new(&self.phi0).expect("validated at build");
        let sd = self.s_derivs();
        let m = interior_margin(&self.grid);
        let mut worst: f64 = 0.0;
        for j in m..self.grid.ny - m {
            for i in m..self.grid.nx - m {
                let k = self.grid.flat(i, j);
                let q = self.grid.node(i, j);
                let (p, qq) = (sd.dx[k], sd.dy[k]);
                let denom = p * p + qq * qq;
                if denom < 1e-18 {
                    continue;
                }
                let [h11, h12, h22] = field.hessian_entries(&q);
                let hn = (h11 * h11 + 2.0 * h12 * h12 + h22 * h22).sqrt();
                let res = if h12.abs() > 1e-9 * hn.max(f64::MIN_POSITIVE) {
                    let g = (h11 - h22) / h12;
                    (p * p - qq * qq - g * p * qq).abs() / denom
                } else {
                    let b = field.basis(&q);
                    let idx = match self.branch {
                        Branch::Lower => 0,
                        Branch::Upper => 1,
                    };
                    let n = b.directions[idx];
                    ((p * p - qq * qq) * n[0] * n[1] - (n[0] * n[0] - n[1] * n[1]) * p * qq).abs()
                        / denom
                };
                worst = worst.max(res);
            }
        }
        worst
    }

    /// Angle defect between grad S and the chosen eigen branch:
    /// max |sin(angle)| over interior nodes.
    pub fn gradient_alignment_defect(&self) -> f64 {
        let field = Phi0Field::new(&self.phi0).expect("validated at build");
        let sd = self.s_derivs();
        let m = interior_margin(&self.grid);
        let idx = match self.branch {
            Branch::Lower => 0,
            Branch::Upper => 1,
        };
        let mut worst: f64 = 0.0;
        for j in m..self.grid.ny - m {
            for i in m..self.grid.nx - m {
                let k = self.grid.flat(i, j);
                let q = self.grid.node(i, j);
                let (p, qq) = (sd.dx[k], sd.dy[k]);
                let norm = (p * p + qq * qq).sqrt();
                if norm < 1e-12 {
                    continue;
                }
                let n = self.field_basis_dir(&field, &q, idx);
                let sin = (p * n[1] - qq * n[0]).abs() / norm;
                worst = worst.max(sin);
            }
        }
        worst
    }

    fn field_basis_dir(&self, field: &Phi0Field, q: &[f64; 2], idx: usize) -> [f64; 2] {
        field.basis(q).directions[idx]
    }

    pub fn has_amplitudes(&self) -> bool {
        self.a0.is_some() && self.a1.is_some()
    }

    /// Export: header line with the grid descriptor, then one CSV row per
    /// node in flat index order.
    pub fn export_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# {}\n",
            serde_json::json!({
                "nx": self.grid.nx, "ny": self.grid.ny,
                "box": { "min": self.omega.min, "max": self.omega.max }
            })
        ));
        out.push_str("S,A0re,A0im,A1re,A1im\n");
        let zero = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        let a0 = self.a0.as_ref().unwrap_or(&zero);
        let a1 = self.a1.as_ref().unwrap_or(&zero);
        for k in 0..self.grid.len() {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e}\n",
                self.s[k], a0[k].re, a0[k].im, a1[k].re, a1[k].im
            ));
        }
        out
    }
}

/// Linear transport along the ray through one node, solved backwards from
/// the node to its seed foot. For dA/ds = (beta - c A)/omega with terminal
/// data at the foot, the node value is A(0) = e^{M} A(foot) - K with
/// M = int c/omega ds and K = int e^{M(s)} beta/omega ds accumulated from
/// the node side.
struct TransportCoeffs<'a> {
    grid: &'a Grid2,
    sx: &'a [f64],
    sy: &'a [f64],
    c_field: &'a [f64],
    /// optional complex source field (for the first-order amplitude)
    source: Option<(&'a [f64], &'a [f64])>,
}

impl TransportCoeffs<'_> {
    /// (c/omega, beta/omega) at position q moving along unit tangent u.
    fn rates(&self, q: &[f64; 2], u: [f64; 2]) -> Option<(f64, Complex64)> {
        let p = grid::bicubic(self.grid, self.sx, q);
        let qq = grid::bicubic(self.grid, self.sy, q);
        // w = (dS/dq2, -dS/dq1) is tangent to the rays; omega = w . u.
        let omega = qq * u[0] - p * u[1];
        let scale = (p * p + qq * qq).sqrt();
        if omega.abs() < 1e-9 * scale.max(1e-9) {
            return None;
        }
        let c = grid::bicubic(self.grid, self.c_field, q);
        let beta = match self.source {
            Some((re, im)) => Complex64::new(
                grid::bicubic(self.grid, re, q),
                grid::bicubic(self.grid, im, q),
            ),
            None => Complex64::new(0.0, 0.0),
        };
        Some((c / omega, beta / omega))
    }
}

/// Integrate (position, M, K) from the node to the foot along the stored
/// ray; returns (M_total, K_total).
fn integrate_transport(
    ray_field: &EigenField2D,
    coeffs: &TransportCoeffs<'_>,
    q0: [f64; 2],
    start: [f64; 2],
    len: f64,
    step: f64,
) -> Option<(f64, Complex64)> {
    #[derive(Clone, Copy)]
    struct State {
        q: [f64; 2],
        m: f64,
        k: Complex64,
    }
    let deriv = |st: &State, dir: [f64; 2]| -> Option<(State, [f64; 2])> {
        let u = ray_field.at(&st.q, Some(dir)).ok()?;
        let (alpha, beta_hat) = coeffs.rates(&st.q, u)?;
        Some((State { q: u, m: alpha, k: st.m.exp() * beta_hat }, u))
    };
    let mut st = State { q: q0, m: 0.0, k: Complex64::new(0.0, 0.0) };
    let mut dir = start;
    let steps = (len / step).ceil() as usize;
    let h_last = len - step * (steps.saturating_sub(1)) as f64;
    for i in 0..steps {
        let h = if i + 1 == steps { h_last } else { step };
        if h <= 0.0 {
            continue;
        }
        // RK4 on the augmented state.
        let (d1, u1) = deriv(&st, dir)?;
        let mid1 = State {
            q: [st.q[0] + 0.5 * h * d1.q[0], st.q[1] + 0.5 * h * d1.q[1]],
            m: st.m + 0.5 * h * d1.m,
            k: st.k + 0.5 * h * d1.k,
        };
        let (d2, u2) = deriv(&mid1, u1)?;
        let mid2 = State {
            q: [st.q[0] + 0.5 * h * d2.q[0], st.q[1] + 0.5 * h * d2.q[1]],
            m: st.m + 0.5 * h * d2.m,
            k: st.k + 0.5 * h * d2.k,
        };
        let (d3, u3) = deriv(&mid2, u2)?;
        let end = State {
            q: [st.q[0] + h * d3.q[0], st.q[1] + h * d3.q[1]],
            m: st.m + h * d3.m,
            k: st.k + h * d3.k,
        };
        let (d4, u4) = deriv(&end, u3)?;
        st = State {
            q: [
                st.q[0] + h / 6.0 * (d1.q[0] + 2.0 * d2.q[0] + 2.0 * d3.q[0] + d4.q[0]),
                st.q[1] + h / 6.0 * (d1.q[1] + 2.0 * d2.q[1] + 2.0 * d3.q[1] + d4.q[1]),
            ],
            m: st.m + h / 6.0 * (d1.m + 2.0 * d2.m + 2.0 * d3.m + d4.m),
            k: st.k + h / 6.0 * (d1.k + 2.0 * d2.k + 2.0 * d3.k + d4.k),
        };
        dir = u4;
    }
    Some((st.m, st.k))
}

/// Integrate the amplitude transport equations along the rays: the
/// homogeneous equation for A0 from its seed profile, then the
/// inhomogeneous equation for A1 (zero seed) whose source is built from
/// grid finite differences of A0.
pub fn transport_amplitudes(patch: &mut RayPatch) -> Result<(), WkbError> {
    if let Profile::Constant(c) = patch.seed.a0_profile {
        if c == 0.0 {
            return Err(WkbError::VanishingGradient { at: patch.seed.center });
        }
    }
    let field = Phi0Field::new(&patch.phi0)?;
    let ray_field = EigenField2D { field, branch: patch.branch.other() };
    let sd = patch.s_derivs();

    // Gradient magnitude must stay healthy for the transport division.
    for j in 0..patch.grid.ny {
        for i in 0..patch.grid.nx {
            let k = patch.grid.flat(i, j);
            if (sd.dx[k] * sd.dx[k] + sd.dy[k] * sd.dy[k]).sqrt() < 1e-6 {
                return Err(WkbError::VanishingGradient { at: patch.grid.node(i, j) });
            }
        }
    }

    // c = [pq (r - t) - s (p^2 - q^2)] / (p^2 + q^2) on the grid.
    let mut c_field = vec![0.0; patch.grid.len()];
    for k in 0..patch.grid.len() {
        let (p, q) = (sd.dx[k], sd.dy[k]);
        let denom = p * p + q * q;
        c_field[k] =
            (p * q * (sd.dxx[k] - sd.dyy[k]) - sd.dxy[k] * (p * p - q * q)) / denom;
    }

    let step = patch.ray_options.step;
    let n = patch.grid.len();

    // Pass 1: A0 by the homogeneous transport equation.
    let coeffs =
        TransportCoeffs { grid: &patch.grid, sx: &sd.dx, sy: &sd.dy, c_field: &c_field, source: None };
    let a0: Vec<Option<Complex64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let q0 = patch.grid.node(k % patch.grid.nx, k / patch.grid.nx);
            let seed_val = Complex64::new(patch.seed.a0_profile.value(patch.sigma_foot[k]), 0.0);
            if patch.ray_len[k] == 0.0 {
                return Some(seed_val);
            }
            let (m, _k) = integrate_transport(
                &ray_field,
                &coeffs,
                q0,
                patch.start_dir[k],
                patch.ray_len[k],
                step,
            )?;
            Some(m.exp() * seed_val)
        })
        .collect();
    let a0: Option<Vec<Complex64>> = a0.into_iter().collect();
    let a0 = a0.ok_or(WkbError::VanishingGradient { at: patch.omega.center() })?;

    // Source for A1: i * [pq (A0_11 - A0_22) - (p^2 - q^2) A0_12]/(p^2+q^2),
    // from grid finite differences of A0.
    let a0_re: Vec<f64> = a0.iter().map(|z| z.re).collect();
    let a0_im: Vec<f64> = a0.iter().map(|z| z.im).collect();
    let dre = derive_all(&patch.grid, &a0_re);
    let dim_ = derive_all(&patch.grid, &a0_im);
    let mut src_re = vec![0.0; n];
    let mut src_im = vec![0.0; n];
    for k in 0..n {
        let (p, q) = (sd.dx[k], sd.dy[k]);
        let denom = p * p + q * q;
        let w_re = (p * q * (dre.dxx[k] - dre.dyy[k]) - (p * p - q * q) * dre.dxy[k]) / denom;
        let w_im = (p * q * (dim_.dxx[k] - dim_.dyy[k]) - (p * p - q * q) * dim_.dxy[k]) / denom;
        // beta = i * (w_re + i w_im)
        src_re[k] = -w_im;
        src_im[k] = w_re;
    }

    // Pass 2: A1 with zero seed and the inhomogeneous source.
    let coeffs_a1 = TransportCoeffs {
        grid: &patch.grid,
        sx: &sd.dx,
        sy: &sd.dy,
        c_field: &c_field,
        source: Some((&src_re, &src_im)),
    };
    let a1: Vec<Option<Complex64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let q0 = patch.grid.node(k % patch.grid.nx, k / patch.grid.nx);
            if patch.ray_len[k] == 0.0 {
                return Some(Complex64::new(0.0, 0.0));
            }
            let (_m, kk) = integrate_transport(
                &ray_field,
                &coeffs_a1,
                q0,
                patch.start_dir[k],
                patch.ray_len[k],
                step,
            )?;
            Some(-kk)
        })
        .collect();
    let a1: Option<Vec<Complex64>> = a1.into_iter().collect();
    let a1 = a1.ok_or(WkbError::VanishingGradient { at: patch.omega.center() })?;

    patch.a0 = Some(a0);
    patch.a1 = Some(a1);
    Ok(())
}

/// How many amplitude orders the assembled field keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruncationOrder {
    /// A0 only
    P0,
    /// A0 + A1/kappa
    P1,
}

/// Pointwise residual of the planar eigendirection PDE applied to the
/// truncated WKB field, evaluated in phase/amplitude form so the kappa
/// scaling of each order is measured rather than assumed:
///   E = -kappa^2 Qt (A) + i kappa (T A + c A) + W(A),
/// with Qt built from the exact eigendirections (zero up to rounding),
/// T, c, W from grid finite differences, and A the truncated amplitude.
pub struct ResidualStudy {
    pub kappas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// least-squares slope of log2(residual) against log2(kappa)
    pub slope_log2: f64,
}

pub fn gen2d_residual_study(
    patch: &RayPatch,
    kappas: &[f64],
    order: TruncationOrder,
) -> Result<ResidualStudy, WkbError> {
    let a0 = patch.a0.as_ref().ok_or(WkbError::AmplitudesMissing)?;
    let a1 = patch.a1.as_ref().ok_or(WkbError::AmplitudesMissing)?;
    let field = Phi0Field::new(&patch.phi0)?;
    let sd = patch.s_derivs();
    let a0_re = derive_all(&patch.grid, &a0.iter().map(|z| z.re).collect::<Vec<_>>());
    let a0_im = derive_all(&patch.grid, &a0.iter().map(|z| z.im).collect::<Vec<_>>());
    let a1_re = derive_all(&patch.grid, &a1.iter().map(|z| z.re).collect::<Vec<_>>());
    let a1_im = derive_all(&patch.grid, &a1.iter().map(|z| z.im).collect::<Vec<_>>());
    let m = interior_margin(&patch.grid);
    let idx = match patch.branch {
        Branch::Lower => 0,
        Branch::Upper => 1,
    };

    let mut residuals = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let mut worst: f64 = 0.0;
        for j in m..patch.grid.ny - m {
            for i in m..patch.grid.nx - m {
                let k = patch.grid.flat(i, j);
                let q = patch.grid.node(i, j);
                let (p, qq) = (sd.dx[k], sd.dy[k]);
                let denom = p * p + qq * qq;
                if denom < 1e-18 {
                    continue;
                }
                // Exact-direction eikonal factor: zero up to rounding.
                let n = field.basis(&q).directions[idx];
                let g_num = {
                    let [h11, h12, h22] = field.hessian_entries(&q);
                    // n1^2 - n2^2 - g n1 n2, with g from the entries.
                    n[0] * n[0] - n[1] * n[1] - (h11 - h22) / h12 * n[0] * n[1]
                };
                let q_tilde = p * qq * g_num;

                let amp = |d: &FieldDerivs, b: &FieldDerivs, kk: usize| {
                    Complex64::new(d.v[kk], b.v[kk])
                };
                let transport = |d: &FieldDerivs, b: &FieldDerivs, kk: usize| {
                    // T A + c A with T = q d1 - p d2 and
                    // c = [pq(r - t) - s(p^2 - q^2)]/denom
                    let c =
                        (p * qq * (sd.dxx[kk] - sd.dyy[kk]) - sd.dxy[kk] * (p * p - qq * qq))
                            / denom;
                    Complex64::new(
                        qq * d.dx[kk] - p * d.dy[kk] + c * d.v[kk],
                        qq * b.dx[kk] - p * b.dy[kk] + c * b.v[kk],
                    )
                };
                let w_op = |d: &FieldDerivs, b: &FieldDerivs, kk: usize| {
                    Complex64::new(
                        (p * qq * (d.dxx[kk] - d.dyy[kk]) - (p * p - qq * qq) * d.dxy[kk]) / denom,
                        (p * qq * (b.dxx[kk] - b.dyy[kk]) - (p * p - qq * qq) * b.dxy[kk]) / denom,
                    )
                };

                let i_unit = Complex64::new(0.0, 1.0);
                let e = match order {
                    TruncationOrder::P0 => {
                        let a = amp(&a0_re, &a0_im, k);
                        -kappa * kappa * q_tilde * a
                            + i_unit * kappa * transport(&a0_re, &a0_im, k)
                            + w_op(&a0_re, &a0_im, k)
                    }
                    TruncationOrder::P1 => {
                        let a = amp(&a0_re, &a0_im, k) + amp(&a1_re, &a1_im, k) / kappa;
                        -kappa * kappa * q_tilde * a
                            + i_unit * kappa * transport(&a0_re, &a0_im, k)
                            + i_unit * transport(&a1_re, &a1_im, k)
                            + w_op(&a0_re, &a0_im, k)
                            + w_op(&a1_re, &a1_im, k) / kappa
                    }
                };
                worst = worst.max(e.norm());
            }
        }
        residuals.push(worst);
    }

    // Least-squares slope in log2-log2.
    let xs: Vec<f64> = kappas.iter().map(|k| k.log2()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.max(1e-300).log2()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(ResidualStudy { kappas: kappas.to_vec(), residuals, slope_log2: slope })
}

/// The assembled oscillatory field, kept in phase/amplitude form:
/// value = 2 Re[e^{i kappa S} B], B = A0 (+ A1/kappa). Derivatives use the
/// chain rule on interpolated S, grad S, and amplitude grids, so the
/// oscillation itself is never finite-differenced.
#[derive(Debug, Clone)]
pub struct WkbField {
    grid: Grid2,
    kappa: f64,
    s: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxx: Vec<f64>,
    sxy: Vec<f64>,
    syy: Vec<f64>,
    b_re: FieldData,
    b_im: FieldData,
}

#[derive(Debug, Clone)]
struct FieldData {
    v: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dxx: Vec<f64>,
    dxy: Vec<f64>,
    dyy: Vec<f64>,
}

impl From<FieldDerivs> for FieldData {
    fn from(d: FieldDerivs) -> Self {
        FieldData { v: d.v, dx: d.dx, dy: d.dy, dxx: d.dxx, dxy: d.dxy, dyy: d.dyy }
    }
}

impl WkbField {
    pub fn from_patch(patch: &RayPatch, kappa: f64, order: TruncationOrder) -> Result<Self, WkbError> {
        let a0 = patch.a0.as_ref().ok_or(WkbError::AmplitudesMissing)?;
        let a1 = patch.a1.as_ref().ok_or(WkbError::AmplitudesMissing)?;
        let b: Vec<Complex64> = match order {
            TruncationOrder::P0 => a0.clone(),
            TruncationOrder::P1 => a0.iter().zip(a1).map(|(x, y)| x + y / kappa).collect(),
        };
        let sd = patch.s_derivs();
        let b_re = derive_all(&patch.grid, &b.iter().map(|z| z.re).collect::<Vec<_>>());
        let b_im = derive_all(&patch.grid, &b.iter().map(|z| z.im).collect::<Vec<_>>());
        Ok(WkbField {
            grid: patch.grid,
            kappa,
            s: sd.v,
            sx: sd.dx,
            sy: sd.dy,
            sxx: sd.dxx,
            sxy: sd.dxy,
            syy: sd.dyy,
            b_re: b_re.into(),
            b_im: b_im.into(),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    fn phase_and_amp(&self, q: &[f64]) -> (Complex64, Complex64) {
        let s = grid::bicubic(&self.grid, &self.s, q);
        let phase = Complex64::new(0.0, self.kappa * s).exp();
        let b = Complex64::new(
            grid::bicubic(&self.grid, &self.b_re.v, q),
            grid::bicubic(&self.grid, &self.b_im.v, q),
        );
        (phase, b)
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let (phase, b) = self.phase_and_amp(q);
        2.0 * (phase * b).re
    }

    pub fn gradient(&self, q: &[f64]) -> [f64; 2] {
        let (phase, b) = self.phase_and_amp(q);
        let grad_s = [grid::bicubic(&self.grid, &self.sx, q), grid::bicubic(&self.grid, &self.sy, q)];
        let db = [
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dx, q),
                grid::bicubic(&self.grid, &self.b_im.dx, q),
            ),
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dy, q),
                grid::bicubic(&self.grid, &self.b_im.dy, q),
            ),
        ];
        let ik = Complex64::new(0.0, self.kappa);
        [
            2.0 * (phase * (ik * grad_s[0] * b + db[0])).re,
            2.0 * (phase * (ik * grad_s[1] * b + db[1])).re,
        ]
    }

    /// (dxx, dxy, dyy)
    pub fn hessian_entries(&self, q: &[f64]) -> [f64; 3] {
        let (phase, b) = self.phase_and_amp(q);
        let gs = [grid::bicubic(&self.grid, &self.sx, q), grid::bicubic(&self.grid, &self.sy, q)];
        let hs = [
            grid::bicubic(&self.grid, &self.sxx, q),
            grid::bicubic(&self.grid, &self.sxy, q),
            grid::bicubic(&self.grid, &self.syy, q),
        ];
        let db = [
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dx, q),
                grid::bicubic(&self.grid, &self.b_im.dx, q),
            ),
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dy, q),
                grid::bicubic(&self.grid, &self.b_im.dy, q),
            ),
        ];
        let hb = [
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dxx, q),
                grid::bicubic(&self.grid, &self.b_im.dxx, q),
            ),
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dxy, q),
                grid::bicubic(&self.grid, &self.b_im.dxy, q),
            ),
            Complex64::new(
                grid::bicubic(&self.grid, &self.b_re.dyy, q),
                grid::bicubic(&self.grid, &self.b_im.dyy, q),
            ),
        ];
        let ik = Complex64::new(0.0, self.kappa);
        let k2 = self.kappa * self.kappa;
        let entry = |a: usize, c: usize, hs_ac: f64, hb_ac: Complex64| {
            let t = -k2 * gs[a] * gs[c] * b
                + ik * (hs_ac * b + gs[a] * db[c] + gs[c] * db[a])
                + hb_ac;
            2.0 * (phase * t).re
        };
        [entry(0, 0, hs[0], hb[0]), entry(0, 1, hs[1], hb[1]), entry(1, 1, hs[2], hb[2])]
    }

    /// Tabulate nodal values as a plain gridded field (the export form).
    pub fn tabulate(&self) -> GridScalarField2 {
        let mut values = vec![0.0; self.grid.len()];
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let q = self.grid.node(i, j);
                values[self.grid.flat(i, j)] = self.value(&q);
            }
        }
        GridScalarField2::new(self.grid, values)
    }
}

/// Assembly parameters for the omni-potential flow built from a patch:
/// Phi(q, t) = |q|^2/2 + t phi0(q) + f(t) (eps/kappa^2) Phi_wkb(q).
#[derive(Debug, Clone)]
pub struct WkbPotential {
    pub patch: RayPatch,
    pub kappa: f64,
    pub epsilon: f64,
    pub order: TruncationOrder,
    /// time factor, required to vanish together with its derivative at 0
    pub f: TimePolynomial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub kappa: f64,
    pub epsilon: f64,
    /// gen2d residual of the truncated WKB term at this kappa
    pub gen2d_residual: f64,
    /// time horizon that kept the sampled Hessian positive-definite
    pub t_admissible: f64,
    /// number of halvings applied to the requested horizon
    pub horizon_halvings: u32,
}

impl WkbPotential {
    /// Build the flow and check convexity on the patch, shrinking the time
    /// horizon until the sampled map Hessian stays positive-definite.
    pub fn assemble(&self, t_request: f64) -> Result<(FlowPotential, AssemblyReport), WkbError> {
        if self.f.value(0.0).abs() > 1e-12 || self.f.derivative_value(0.0).abs() > 1e-12 {
            return Err(WkbError::BadTimeFunction(
                self.f.value(0.0),
                self.f.derivative_value(0.0),
            ));
        }
        let order = self.order;
        let wkb = WkbField::from_patch(&self.patch, self.kappa, order)?;
        let residual = gen2d_residual_study(&self.patch, &[self.kappa], order)?.residuals[0];

        let mut blocks: Vec<FlowBlock> = self
            .patch
            .phi0
            .parts
            .iter()
            .map(|p| FlowBlock {
                field: BlockField::Poly(p.clone()),
                mu: TimePolynomial::monomial(1.0, 1),
            })
            .collect();
        blocks.push(FlowBlock {
            field: BlockField::Wkb(wkb),
            mu: self.f.scale(self.epsilon / (self.kappa * self.kappa)),
        });

        // Convexity sweep over the interior of the patch; halve the horizon
        // until the minimum eigenvalue stays clearly positive.
        let mut t = t_request;
        let mut halvings = 0;
        let margin = interior_margin(&self.patch.grid) as f64
            * self.patch.grid.hx().max(self.patch.grid.hy());
        let inner = self.patch.omega.shrink(margin);
        let probe = FlowPotential::new(
            2,
            TimePolynomial::constant(1.0),
            blocks.clone(),
            FlowKind::WkbAugmented,
            t_request.max(1e-3),
        )?;
        loop {
            let pts = crate::sampling::box_points(&inner.min, &inner.max, 128, 1);
            let mut ok = true;
            for q in &pts {
                for tt in [0.5 * t, t] {
                    let h = probe.hessian(q, tt);
                    let f = crate::symmat::eigenframe(&h);
                    if f.eigenvalues[0] < 1e-6 {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    break;
                }
            }
            if ok {
                break;
            }
            t *= 0.5;
            halvings += 1;
            if t < 1e-4 {
                return Err(WkbError::ConvexityUnattainable);
            }
        }

        let flow = FlowPotential::new(
            2,
            TimePolynomial::constant(1.0),
            blocks,
            FlowKind::WkbAugmented,
            t,
        )?;
        Ok((
            flow,
            AssemblyReport {
                kappa: self.kappa,
                epsilon: self.epsilon,
                gen2d_residual: residual,
                t_admissible: t,
                horizon_halvings: halvings,
            },
        ))
    }
}
