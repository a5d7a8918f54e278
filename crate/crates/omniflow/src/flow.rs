//! Time-dependent flow potentials, Lagrangian maps, and the verification
//! battery for omni-potentiality: Hessian commutation along trajectories,
//! bi-potentiality of the velocity, intermediate-map symmetry, eigenframe
//! constancy, and the planar/spatial eigendirection invariants.

use crate::grid::GridScalarField2;
use crate::polynomials::{HomogeneousPolynomial, PolyError, PolySum, Rat};
use crate::sampling;
use crate::symmat::{self, eigenframe, gamma_from_frame, Gamma, SymmetricMatrix};
use num_traits::One;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Proximity threshold for shell-crossing: the map Hessian is treated as
/// degenerate when its smallest eigenvalue drops below this.
pub const SHELL_CROSSING_EIG: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid time coefficients: {0}")]
    BadTimeCoefficients(String),
    #[error("newton inversion did not converge after {0} iterations (outside image or past shell-crossing)")]
    NoPreimage(usize),
    #[error("shell-crossing: map Hessian degenerate at q = {q:?}, t = {t}")]
    ShellCrossing { q: Vec<f64>, t: f64 },
    #[error("invalid flow spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Polynomial in time: value(t) = sum c_k t^k. Restricting the coefficient
/// functions to polynomials keeps the time derivative exact, which the
/// verification battery needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePolynomial {
    pub coeffs: Vec<f64>,
}

impl TimePolynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        TimePolynomial { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        TimePolynomial { coeffs: vec![c] }
    }

    /// c * t^k
    pub fn monomial(c: f64, k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = c;
        TimePolynomial { coeffs }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative_value(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c)
    }

    pub fn scale(&self, s: f64) -> Self {
        TimePolynomial { coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }
}

/// What a flow block evaluates: an exact polynomial or a tabulated field.
#[derive(Debug, Clone)]
pub enum BlockField {
    Poly(HomogeneousPolynomial),
    /// Imported gridded scalar (2-D only); derivatives are order-2 finite
    /// differences of the tabulated values.
    Gridded(GridScalarField2),
    /// Structured short-wavelength field kept in phase/amplitude form so the
    /// oscillation is evaluated analytically rather than re-differenced.
    Wkb(crate::wkb2d::WkbField),
}

impl BlockField {
    pub fn dim(&self) -> usize {
        match self {
            BlockField::Poly(p) => p.dim(),
            BlockField::Gridded(_) | BlockField::Wkb(_) => 2,
        }
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        match self {
            BlockField::Poly(p) => p.eval_f64(q),
            BlockField::Gridded(g) => g.value(q),
            BlockField::Wkb(w) => w.value(q),
        }
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        match self {
            BlockField::Poly(p) => p.gradient_f64(q),
            BlockField::Gridded(g) => g.gradient(q).to_vec(),
            BlockField::Wkb(w) => w.gradient(q).to_vec(),
        }
    }

    /// Accumulate `scale * Hessian(block)(q)` into `h`.
    fn add_hessian_scaled(&self, q: &[f64], scale: f64, h: &mut SymmetricMatrix) {
        if scale == 0.0 {
            return;
        }
        match self {
            BlockField::Poly(p) => {
                let hp = p.hessian_at(q);
                for i in 0..p.dim() {
                    for j in i..p.dim() {
                        h.set(i, j, h.get(i, j) + scale * hp.get(i, j));
                    }
                }
            }
            BlockField::Gridded(g) => {
                let [dxx, dxy, dyy] = g.hessian_entries(q);
                h.set(0, 0, h.get(0, 0) + scale * dxx);
                h.set(0, 1, h.get(0, 1) + scale * dxy);
                h.set(1, 1, h.get(1, 1) + scale * dyy);
            }
            BlockField::Wkb(w) => {
                let [dxx, dxy, dyy] = w.hessian_entries(q);
                h.set(0, 0, h.get(0, 0) + scale * dxx);
                h.set(0, 1, h.get(0, 1) + scale * dxy);
                h.set(1, 1, h.get(1, 1) + scale * dyy);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowBlock {
    pub field: BlockField,
    pub mu: TimePolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    ZeldovichType,
    PolynomialFamily,
    WkbAugmented,
    Radial,
    Custom,
}

/// Potential of a Lagrangian map:
/// Phi(q, t) = mu2(t) |q|^2 / 2 + sum_k mu_k(t) block_k(q),
/// normalized to the identity map at t = 0 (mu2(0) = 1, mu_k(0) = 0).
#[derive(Debug, Clone)]
pub struct FlowPotential {
    dim: usize,
    pub quad_mu: TimePolynomial,
    pub blocks: Vec<FlowBlock>,
    pub kind: FlowKind,
    pub t_max: f64,
}

impl FlowPotential {
    pub fn new(
        dim: usize,
        quad_mu: TimePolynomial,
        blocks: Vec<FlowBlock>,
        kind: FlowKind,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        if (quad_mu.value(0.0) - 1.0).abs() > 1e-12 {
            return Err(FlowError::BadTimeCoefficients(format!(
                "mu2(0) = {} but the map must be the identity at t = 0",
                quad_mu.value(0.0)
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.field.dim() != dim {
                return Err(FlowError::DimensionMismatch(b.field.dim(), dim));
            }
            if b.mu.value(0.0).abs() > 1e-12 {
                return Err(FlowError::BadTimeCoefficients(format!(
                    "block {i} has mu(0) = {} != 0",
                    b.mu.value(0.0)
                )));
            }
        }
        if t_max <= 0.0 || t_max.is_nan() {
            return Err(FlowError::InvalidSpec(format!("t_max must be positive, got {t_max}")));
        }
        Ok(FlowPotential { dim, quad_mu, blocks, kind, t_max })
    }

    /// Plain Zeldovich flow: Phi = |q|^2/2 + t phi0(q).
    pub fn zeldovich(phi0: &PolySum, t_max: f64) -> Result<Self, FlowError> {
        let blocks = phi0
            .parts
            .iter()
            .map(|p| FlowBlock { field: BlockField::Poly(p.clone()), mu: TimePolynomial::monomial(1.0, 1) })
            .collect();
        Self::new(phi0.dim, TimePolynomial::constant(1.0), blocks, FlowKind::ZeldovichType, t_max)
    }

    /// Zeldovich-type flow: Phi = mu(t) |q|^2/2 + eta(t) phi0(q), with
    /// mu(0) = 1 and eta(0) = 0.
    pub fn zeldovich_type(
        phi0: &PolySum,
        mu: TimePolynomial,
        eta: TimePolynomial,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        let blocks = phi0
            .parts
            .iter()
            .map(|p| FlowBlock { field: BlockField::Poly(p.clone()), mu: eta.clone() })
            .collect();
        Self::new(phi0.dim, mu, blocks, FlowKind::ZeldovichType, t_max)
    }

    /// Spherically symmetric flow: mu2(t)|q|^2/2 plus radial blocks
    /// (|q|^2)^k with their own coefficient functions.
    pub fn radial(
        dim: usize,
        quad_mu: TimePolynomial,
        powers: Vec<(u32, TimePolynomial)>,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        let r2 = HomogeneousPolynomial::norm_squared(dim);
        let blocks = powers
            .into_iter()
            .map(|(k, mu)| {
                let mut p = HomogeneousPolynomial::monomial(dim, &vec![0; dim], Rat::one());
                for _ in 0..k {
                    p = p.mul(&r2);
                }
                FlowBlock { field: BlockField::Poly(p), mu }
            })
            .collect();
        Self::new(dim, quad_mu, blocks, FlowKind::Radial, t_max)
    }

    /// Planar even-family flow: |q|^2/2 + sum_k mu_2k(t) p2_even(k; a, b).
    pub fn exa2d(
        a: Rat,
        b: Rat,
        members: Vec<(u32, TimePolynomial)>,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        let mut blocks = Vec::new();
        for (k, mu) in members {
            let fam = crate::polynomials::family_p2_even(k, a.clone(), b.clone())?;
            if fam.degenerate {
                return Err(FlowError::InvalidSpec(format!(
                    "p2-even(k={k}) degenerates at the chosen (a, b); use the derivative pair instead"
                )));
            }
            blocks.push(FlowBlock { field: BlockField::Poly(fam.poly), mu });
        }
        Self::new(2, TimePolynomial::constant(1.0), blocks, FlowKind::PolynomialFamily, t_max)
    }

    /// The d >= 3 quartic/sextic family flow:
    /// |q|^2/2 + mu4(t) p4(q) + mu6(t) p6(q).
    pub fn polydd(
        dim: usize,
        ctilde: &Rat,
        mu4: TimePolynomial,
        mu6: TimePolynomial,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        let p4 = crate::polynomials::family_pd4(dim, ctilde)?;
        let p6 = crate::polynomials::family_pd6(dim, ctilde)?;
        let blocks = vec![
            FlowBlock { field: BlockField::Poly(p4), mu: mu4 },
            FlowBlock { field: BlockField::Poly(p6), mu: mu6 },
        ];
        Self::new(dim, TimePolynomial::constant(1.0), blocks, FlowKind::PolynomialFamily, t_max)
    }

    /// The R^3 tower flow: |q|^2/2 + sum_n mu_2n(t) p3_2n(q).
    pub fn xpoly(
        ctilde: &Rat,
        members: Vec<(u32, TimePolynomial)>,
        t_max: f64,
    ) -> Result<Self, FlowError> {
        let mut blocks = Vec::new();
        for (n, mu) in members {
            let p = crate::polynomials::family_p3_2n(n, ctilde)?;
            blocks.push(FlowBlock { field: BlockField::Poly(p), mu });
        }
        Self::new(3, TimePolynomial::constant(1.0), blocks, FlowKind::PolynomialFamily, t_max)
    }

    /// Deliberately non-commuting control flow:
    /// |q|^2/2 + t q1^2 q2^2 + t^2 q1^4.
    pub fn control_noncommuting(t_max: f64) -> Self {
        let b1 = FlowBlock {
            field: BlockField::Poly(HomogeneousPolynomial::monomial(2, &[2, 2], Rat::one())),
            mu: TimePolynomial::monomial(1.0, 1),
        };
        let b2 = FlowBlock {
            field: BlockField::Poly(HomogeneousPolynomial::monomial(2, &[4, 0], Rat::one())),
            mu: TimePolynomial::monomial(1.0, 2),
        };
        Self::new(2, TimePolynomial::constant(1.0), vec![b1, b2], FlowKind::Custom, t_max)
            .expect("static construction")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Phi(q, t)
    pub fn value(&self, q: &[f64], t: f64) -> f64 {
        let q2: f64 = q.iter().map(|x| x * x).sum();
        let mut v = 0.5 * self.quad_mu.value(t) * q2;
        for b in &self.blocks {
            let mu = b.mu.value(t);
            if mu != 0.0 {
                v += mu * b.field.value(q);
            }
        }
        v
    }

    /// x = grad_q Phi(q, t)
    pub fn lagrangian_map(&self, q: &[f64], t: f64) -> Vec<f64> {
        let mu2 = self.quad_mu.value(t);
        let mut x: Vec<f64> = q.iter().map(|&qi| mu2 * qi).collect();
        for b in &self.blocks {
            let mu = b.mu.value(t);
            if mu != 0.0 {
                for (xi, gi) in x.iter_mut().zip(b.field.gradient(q)) {
                    *xi += mu * gi;
                }
            }
        }
        x
    }

    /// Lagrangian velocity grad_q dPhi/dt (q, t).
    pub fn velocity(&self, q: &[f64], t: f64) -> Vec<f64> {
        let dmu2 = self.quad_mu.derivative_value(t);
        let mut v: Vec<f64> = q.iter().map(|&qi| dmu2 * qi).collect();
        for b in &self.blocks {
            let dmu = b.mu.derivative_value(t);
            if dmu != 0.0 {
                for (vi, gi) in v.iter_mut().zip(b.field.gradient(q)) {
                    *vi += dmu * gi;
                }
            }
        }
        v
    }

    /// Hessian of the time-t potential at Lagrangian point q: the Jacobian
    /// of the Lagrangian map.
    pub fn hessian(&self, q: &[f64], t: f64) -> SymmetricMatrix {
        let mut h = SymmetricMatrix::zeros(self.dim).expect("dim >= 2");
        let mu2 = self.quad_mu.value(t);
        for i in 0..self.dim {
            h.set(i, i, mu2);
        }
        for b in &self.blocks {
            b.field.add_hessian_scaled(q, b.mu.value(t), &mut h);
        }
        h
    }

    /// Exact time derivative of the map Hessian.
    pub fn hessian_dt(&self, q: &[f64], t: f64) -> SymmetricMatrix {
        let mut h = SymmetricMatrix::zeros(self.dim).expect("dim >= 2");
        let dmu2 = self.quad_mu.derivative_value(t);
        for i in 0..self.dim {
            h.set(i, i, dmu2);
        }
        for b in &self.blocks {
            b.field.add_hessian_scaled(q, b.mu.derivative_value(t), &mut h);
        }
        h
    }
}

/// Sampling plan for the verification battery. The seed is recorded in the
/// report; identical specs reproduce identical reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub num_points: usize,
    pub num_time_pairs: usize,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub t_max: f64,
    pub seed: u64,
}

impl SamplingSpec {
    /// Defaults: 256 low-discrepancy points x 16 time pairs.
    pub fn default_for(flow: &FlowPotential, half_width: f64) -> Self {
        SamplingSpec {
            num_points: 256,
            num_time_pairs: 16,
            box_lo: vec![-half_width; flow.dim()],
            box_hi: vec![half_width; flow.dim()],
            t_max: flow.t_max,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShellCrossingEvent {
    pub q: Vec<f64>,
    pub t: f64,
    pub min_eigenvalue: f64,
}

/// Outcome of the verification battery; all defects are max-reductions over
/// the sample set and are zero for an exactly omni-potential flow up to
/// rounding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub dim: usize,
    pub kind: FlowKind,
    pub num_points: usize,
    pub num_time_pairs: usize,
    pub seed: u64,
    pub t_max: f64,
    /// max ||[H(t1), H(t2)]||_F / (||H(t1)||_F ||H(t2)||_F)
    pub commutation_defect: f64,
    /// max relative asymmetry of H^{-1} Hdot
    pub bipotential_defect: f64,
    /// max relative asymmetry of H(tau) H(t)^{-1}
    pub intermediate_defect: f64,
    /// max angular drift of the eigenframe along a trajectory, radians
    pub eigenframe_drift_rad: f64,
    /// max relative drift of g (d=2) or (g1, g2, g3) (d=3) along
    /// trajectories; None when every sample hit a pole or d > 3
    pub invariant_drift: Option<f64>,
    pub convexity_ok: bool,
    pub min_hessian_eigenvalue: f64,
    pub shell_crossings: Vec<ShellCrossingEvent>,
    /// samples skipped because the frame was degenerate or an invariant
    /// hit a pole
    pub samples_skipped: usize,
}

impl VerificationReport {
    pub fn max_defect(&self) -> f64 {
        self.commutation_defect
            .max(self.bipotential_defect)
            .max(self.intermediate_defect)
            .max(self.eigenframe_drift_rad)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_defect() < tol && self.shell_crossings.is_empty()
    }
}

#[derive(Default)]
struct SampleAccum {
    commutation: f64,
    bipotential: f64,
    intermediate: f64,
    frame_drift: f64,
    invariant_drift: Option<f64>,
    min_eig: f64,
    crossings: Vec<ShellCrossingEvent>,
    skipped: usize,
}

impl SampleAccum {
    fn new() -> Self {
        SampleAccum { min_eig: f64::INFINITY, ..Default::default() }
    }

    fn merge(mut self, other: SampleAccum) -> SampleAccum {
        self.commutation = self.commutation.max(other.commutation);
        self.bipotential = self.bipotential.max(other.bipotential);
        self.intermediate = self.intermediate.max(other.intermediate);
        self.frame_drift = self.frame_drift.max(other.frame_drift);
        self.invariant_drift = match (self.invariant_drift, other.invariant_drift) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.min_eig = self.min_eig.min(other.min_eig);
        self.crossings.extend(other.crossings);
        self.skipped += other.skipped;
        self
    }
}

/// Sample times for the battery: `n` pairs (t1, t2), 0 < t1 < t2 <= T,
/// drawn reproducibly from the seed.
fn sample_time_pairs(n: usize, t_max: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7a17));
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let a = t_max * rng.gen_range(0.05..1.0);
        let b = t_max * rng.gen_range(0.05..1.0);
        if (a - b).abs() < 0.02 * t_max {
            continue;
        }
        pairs.push((a.min(b), a.max(b)));
    }
    pairs
}

fn relative_drift(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let scale = mean.abs().max(1e-12);
    values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / scale
}

fn verify_at_point(flow: &FlowPotential, q: &[f64], pairs: &[(f64, f64)], times: &[f64]) -> SampleAccum {
    let d = flow.dim();
    let mut acc = SampleAccum::new();

    // Hessians and frames at the distinct times.
    let hs: Vec<SymmetricMatrix> = times.iter().map(|&t| flow.hessian(q, t)).collect();
    let frames: Vec<_> = hs.iter().map(eigenframe).collect();
    for (h, &t) in hs.iter().zip(times) {
        let f = eigenframe(h);
        let min_eig = f.eigenvalues[0];
        acc.min_eig = acc.min_eig.min(min_eig);
        if min_eig < SHELL_CROSSING_EIG {
            acc.crossings.push(ShellCrossingEvent { q: q.to_vec(), t, min_eigenvalue: min_eig });
        }
    }
    if !acc.crossings.is_empty() {
        // Never extrapolate past shell-crossing; defects stop here.
        return acc;
    }

    let time_index = |t: f64| times.iter().position(|&u| u == t).expect("time from list");

    for &(t1, t2) in pairs {
        let h1 = &hs[time_index(t1)];
        let h2 = &hs[time_index(t2)];
        let comm = symmat::commutator(h1, h2).expect("dims match");
        acc.commutation = acc.commutation.max(comm.defect);

        // Intermediate (t1, t2)-map potentiality: J = H(t2) H(t1)^{-1}.
        if let Some(inv1) = h1.to_dense().inverse() {
            let j = h2.to_dense().mul(&inv1);
            let nj = j.frobenius();
            if nj > 0.0 {
                acc.intermediate = acc.intermediate.max(j.asymmetry() / nj);
            }
        }
    }

    // Bi-potentiality: asymmetry of H^{-1} Hdot at each sample time.
    for &t in times {
        let h = &hs[time_index(t)];
        let hdot = flow.hessian_dt(q, t);
        if let Some(hinv) = h.to_dense().inverse() {
            let m = hinv.mul(&hdot.to_dense());
            let nm = m.frobenius();
            if nm > 1e-14 {
                acc.bipotential = acc.bipotential.max(m.asymmetry() / nm);
            }
        }
    }

    // Eigenframe drift between consecutive sample times (sorted), matched
    // by eigenvalue order. The angle comes from the rejection norm (its
    // sine), which stays well-conditioned for tiny angles where acos of
    // the dot product saturates. Frames with a small relative gap carry
    // eigenvectors too noisy to measure drift at the 1e-9 level; those
    // samples are skipped and counted.
    let mut all_measurable = true;
    for w in frames.windows(2) {
        let (fa, fb) = (&w[0], &w[1]);
        let gap_ok = |f: &symmat::EigenFrame| {
            let norm: f64 = f.eigenvalues.iter().map(|l| l * l).sum::<f64>().sqrt();
            f.distinct && f.min_gap() > 1e-4 * norm.max(f64::MIN_POSITIVE)
        };
        if !gap_ok(fa) || !gap_ok(fb) {
            all_measurable = false;
            continue;
        }
        for i in 0..d {
            let va = &fa.eigenvectors[i];
            let vb = &fb.eigenvectors[i];
            let dot: f64 = va.iter().zip(vb).map(|(a, b)| a * b).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            let rej: f64 = va
                .iter()
                .zip(vb)
                .map(|(a, b)| sign * b - dot.abs() * a)
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            acc.frame_drift = acc.frame_drift.max(rej.clamp(0.0, 1.0).asin());
        }
    }
    if !all_measurable {
        acc.skipped += 1;
    }

    // Invariant drift along the trajectory.
    match d {
        2 => {
            let gs: Option<Vec<f64>> = hs
                .iter()
                .map(|h| {
                    let h12 = h.get(0, 1);
                    if h12.abs() < 1e-12 * h.frobenius().max(1e-300) {
                        None
                    } else {
                        Some((h.get(0, 0) - h.get(1, 1)) / h12)
                    }
                })
                .collect();
            match gs {
                Some(v) => acc.invariant_drift = Some(relative_drift(&v)),
                None => acc.skipped += 1,
            }
        }
        3 => {
            let mut series = [Vec::new(), Vec::new(), Vec::new()];
            let mut poled = false;
            for f in &frames {
                if !f.distinct {
                    poled = true;
                    break;
                }
                let g1 = gamma_from_frame(f, 1, 2, 1).expect("valid indices");
                let g2 = gamma_from_frame(f, 2, 2, 1).expect("valid indices");
                let g3 = gamma_from_frame(f, 3, 2, 1).expect("valid indices");
                match (g1, g2, g3) {
                    (Gamma::Value(a), Gamma::Value(b), Gamma::Value(c)) => {
                        // g1 = gamma1 + gamma3, g2 = gamma2 + 1, g3 = gamma3
                        series[0].push(a + c);
                        series[1].push(b + 1.0);
                        series[2].push(c);
                    }
                    _ => {
                        poled = true;
                        break;
                    }
                }
            }
            if poled {
                acc.skipped += 1;
            } else {
                let drift = series.iter().map(|s| relative_drift(s)).fold(0.0, f64::max);
                acc.invariant_drift = Some(drift);
            }
        }
        _ => {}
    }

    acc
}

/// Run the full battery: Hessian commutation over time pairs, velocity
/// bi-potentiality, intermediate-map symmetry, eigenframe drift, invariant
/// drift, and a convexity sweep. Deterministic for a given spec.
pub fn verify_omnipotential(flow: &FlowPotential, spec: &SamplingSpec) -> VerificationReport {
    let points = sampling::box_points(&spec.box_lo, &spec.box_hi, spec.num_points, spec.seed);
    let pairs = sample_time_pairs(spec.num_time_pairs, spec.t_max, spec.seed);
    let mut times: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let acc = points
        .par_iter()
        .map(|q| verify_at_point(flow, q, &pairs, &times))
        .reduce(SampleAccum::new, SampleAccum::merge);

    let mut crossings = acc.crossings;
    crossings.sort_by(|a, b| {
        a.t.partial_cmp(&b.t).unwrap().then(a.q.partial_cmp(&b.q).unwrap_or(std::cmp::Ordering::Equal))
    });

    VerificationReport {
        dim: flow.dim(),
        kind: flow.kind,
        num_points: spec.num_points,
        num_time_pairs: spec.num_time_pairs,
        seed: spec.seed,
        t_max: spec.t_max,
        commutation_defect: acc.commutation,
        bipotential_defect: acc.bipotential,
        intermediate_defect: acc.intermediate,
        eigenframe_drift_rad: acc.frame_drift,
        invariant_drift: acc.invariant_drift,
        convexity_ok: acc.min_eig > 0.0 && crossings.is_empty(),
        min_hessian_eigenvalue: acc.min_eig,
        shell_crossings: crossings,
        samples_skipped: acc.skipped,
    }
}

/// Eulerian velocity at (x, t) with inversion diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EulerianVelocity {
    pub preimage: Vec<f64>,
    pub velocity: Vec<f64>,
    /// the Eulerian velocity gradient H^{-1} Hdot at the preimage,
    /// row-major
    pub velocity_gradient: Vec<Vec<f64>>,
    /// relative asymmetry of that product
    pub gradient_asymmetry: f64,
    pub newton_iterations: usize,
    pub residual: f64,
}

/// Invert the time-t map by damped Newton iteration (initial guess q0 = x,
/// step halving) and return the Lagrangian velocity at the preimage.
pub fn eulerian_velocity(flow: &FlowPotential, x: &[f64], t: f64) -> Result<EulerianVelocity, FlowError> {
    const MAX_ITER: usize = 50;
    let xnorm = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * xnorm;
    let mut q = x.to_vec();
    let residual_vec = |q: &[f64]| -> Vec<f64> {
        flow.lagrangian_map(q, t).iter().zip(x).map(|(m, xi)| m - xi).collect()
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut r = residual_vec(&q);
    let mut rn = norm(&r);
    let mut iters = 0;
    while rn > tol {
        if iters >= MAX_ITER {
            return Err(FlowError::NoPreimage(MAX_ITER));
        }
        iters += 1;
        let h = flow.hessian(&q, t).to_dense();
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = h.solve(&neg_r).ok_or(FlowError::ShellCrossing { q: q.clone(), t })?;
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = q.iter().zip(&delta).map(|(qi, di)| qi + alpha * di).collect();
            let tr = residual_vec(&trial);
            let trn = norm(&tr);
            if trn < rn {
                q = trial;
                r = tr;
                rn = trn;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            return Err(FlowError::NoPreimage(iters));
        }
    }
    let h = flow.hessian(&q, t);
    let hdot = flow.hessian_dt(&q, t);
    let d = flow.dim();
    let (grad, asym) = match h.to_dense().inverse() {
        Some(hinv) => {
            let m = hinv.mul(&hdot.to_dense());
            let nm = m.frobenius();
            let asym = if nm > 1e-14 { m.asymmetry() / nm } else { 0.0 };
            let rows = (0..d).map(|i| (0..d).map(|j| m.get(i, j)).collect()).collect();
            (rows, asym)
        }
        None => (vec![vec![f64::NAN; d]; d], f64::NAN),
    };
    Ok(EulerianVelocity {
        velocity: flow.velocity(&q, t),
        preimage: q,
        velocity_gradient: grad,
        gradient_asymmetry: asym,
        newton_iterations: iters,
        residual: rn,
    })
}

/// Potentiality defect of the (t, tau)-mapping at Lagrangian point q:
/// ||J - J^T||_F / ||J||_F with J = H(tau) H(t)^{-1}.
pub fn intermediate_map_symmetry(
    flow: &FlowPotential,
    q: &[f64],
    t: f64,
    tau: f64,
) -> Result<f64, FlowError> {
    assert!(t <= tau, "requires t <= tau");
    let ht = flow.hessian(q, t);
    let inv = ht.to_dense().inverse().ok_or(FlowError::ShellCrossing { q: q.to_vec(), t })?;
    let j = flow.hessian(q, tau).to_dense().mul(&inv);
    let nj = j.frobenius();
    Ok(if nj > 0.0 { j.asymmetry() / nj } else { 0.0 })
}

/// Per-trajectory drift report for the eigendirection invariants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantDriftReport {
    pub q: Vec<f64>,
    pub times: Vec<f64>,
    /// One series per invariant component (1 for d=2; 3 for d=3),
    /// None entries mark poles.
    pub series: Vec<Vec<Option<f64>>>,
    /// max relative deviation from the time-average, over components;
    /// None when a pole prevented evaluation
    pub drift: Option<f64>,
}

/// Evaluate the invariant(s) at fixed Lagrangian label q across `times`.
/// For d=2 this is g = (H11 - H22)/H12; for d=3 the triple
/// (g1, g2, g3) built from gamma(3,k)_{21}.
pub fn g_invariant_along_trajectory(
    flow: &FlowPotential,
    q: &[f64],
    times: &[f64],
) -> InvariantDriftReport {
    let d = flow.dim();
    let ncomp = match d {
        2 => 1,
        3 => 3,
        _ => 0,
    };
    let mut series: Vec<Vec<Option<f64>>> = vec![Vec::new(); ncomp];
    for &t in times {
        let h = flow.hessian(q, t);
        match d {
            2 => {
                let h12 = h.get(0, 1);
                series[0].push(if h12.abs() < 1e-12 * h.frobenius().max(1e-300) {
                    None
                } else {
                    Some((h.get(0, 0) - h.get(1, 1)) / h12)
                });
            }
            3 => {
                let f = eigenframe(&h);
                let vals = if f.distinct {
                    let g1 = gamma_from_frame(&f, 1, 2, 1).unwrap().value();
                    let g2 = gamma_from_frame(&f, 2, 2, 1).unwrap().value();
                    let g3 = gamma_from_frame(&f, 3, 2, 1).unwrap().value();
                    match (g1, g2, g3) {
                        (Some(a), Some(b), Some(c)) => [Some(a + c), Some(b + 1.0), Some(c)],
                        _ => [None, None, None],
                    }
                } else {
                    [None, None, None]
                };
                for (s, v) in series.iter_mut().zip(vals) {
                    s.push(v);
                }
            }
            _ => {}
        }
    }
    let drift = series
        .iter()
        .map(|s| {
            let vals: Option<Vec<f64>> = s.iter().copied().collect();
            vals.map(|v| relative_drift(&v))
        })
        .try_fold(0.0_f64, |acc, d| d.map(|x| acc.max(x)));
    InvariantDriftReport { q: q.to_vec(), times: times.to_vec(), series, drift }
}

// --- flow-spec JSON ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BlockJson {
    #[serde(skip_serializing_if = "Option::is_none")]
    poly: Option<HomogeneousPolynomial>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    gridded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridScalarField2>,
    mu: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlowJson {
    dim: usize,
    kind: FlowKind,
    quad_mu: Vec<f64>,
    blocks: Vec<BlockJson>,
    time_range: [f64; 2],
}

impl Serialize for FlowPotential {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match &b.field {
                BlockField::Poly(p) => BlockJson {
                    poly: Some(p.clone()),
                    gridded: false,
                    grid: None,
                    mu: b.mu.coeffs.clone(),
                },
                BlockField::Gridded(g) => BlockJson {
                    poly: None,
                    gridded: true,
                    grid: Some(g.clone()),
                    mu: b.mu.coeffs.clone(),
                },
                // WKB blocks export as tabulated gridded blocks; the
                // structured form is an in-memory representation only.
                BlockField::Wkb(w) => BlockJson {
                    poly: None,
                    gridded: true,
                    grid: Some(w.tabulate()),
                    mu: b.mu.coeffs.clone(),
                },
            })
            .collect();
        FlowJson {
            dim: self.dim,
            kind: self.kind,
            quad_mu: self.quad_mu.coeffs.clone(),
            blocks,
            time_range: [0.0, self.t_max],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FlowPotential {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = FlowJson::deserialize(deserializer)?;
        let mut blocks = Vec::new();
        for (i, b) in raw.blocks.into_iter().enumerate() {
            let field = match (b.poly, b.grid) {
                (Some(p), None) => BlockField::Poly(p),
                (None, Some(mut g)) => {
                    crate::grid::rehydrate(&mut g);
                    BlockField::Gridded(g)
                }
                _ => return Err(D::Error::custom(format!("block {i}: need exactly one of poly/grid"))),
            };
            blocks.push(FlowBlock { field, mu: TimePolynomial::new(b.mu) });
        }
        FlowPotential::new(raw.dim, TimePolynomial::new(raw.quad_mu), blocks, raw.kind, raw.time_range[1])
            .map_err(D::Error::custom)
    }
}
