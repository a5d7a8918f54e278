//! Symmetric-matrix core: commutators, eigendecomposition, and the
//! eigenvalue-variation invariants with their algebraic relations.
//!
//! A symmetric matrix whose eigenvalues vary while its eigendirections stay
//! fixed keeps certain rational combinations of its entries constant. Those
//! combinations are the invariants `gamma(d,k,m,n)` computed here: elementary
//! symmetric polynomials of the eigenvector component ratios
//! `beta_{mn,i} = h_m(lambda_i) / h_n(lambda_i)`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Relative eigenvalue gap below which a frame is treated as degenerate.
pub const DISTINCT_GAP_REL: f64 = 1e-8;
/// Absolute eigenvector-component magnitude below which a ratio is a pole.
pub const POLE_COMPONENT_TOL: f64 = 1e-12;
/// Pairwise orthonormality tolerance for eigenframes.
pub const ORTHONORMAL_TOL: f64 = 1e-12;
/// Eigen-residual tolerance, relative to the Frobenius norm.
pub const EIGEN_RESIDUAL_REL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SymmatError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix dimension must be >= 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("upper-triangle length {got} does not match dim {dim} (expected {expected})")]
    BadUpperLength { dim: usize, got: usize, expected: usize },
    #[error("jacobi eigendecomposition did not converge")]
    NoConvergence,
    #[error("operation requires dim == {expected}, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("invalid invariant index: k={k}, m={m}, n={n} for dim {dim}")]
    BadInvariantIndex { k: usize, m: usize, n: usize, dim: usize },
}

/// Dense square matrix, row-major. Workhorse for products and small solves.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    pub n: usize,
    pub a: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(n: usize) -> Self {
        SquareMat { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn mul(&self, other: &SquareMat) -> SquareMat {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += aik * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &SquareMat) -> SquareMat {
        assert_eq!(self.n, other.n);
        let a = self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect();
        SquareMat { n: self.n, a }
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// ||M - M^T||_F
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.get(i, j) - self.get(j, i);
                s += 2.0 * d * d;
            }
        }
        s.sqrt()
    }

    /// Solve M x = b by Gaussian elimination with partial pivoting.
    /// Returns None for a numerically singular matrix.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut a = self.a.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut v = x[col];
            for j in (col + 1)..n {
                v -= a[col * n + j] * x[j];
            }
            x[col] = v / a[col * n + col];
        }
        Some(x)
    }

    /// Matrix inverse via column-wise solves. None if singular.
    pub fn inverse(&self) -> Option<SquareMat> {
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        Some(out)
    }
}

impl fmt::Display for SquareMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            for j in 0..self.n {
                write!(f, "{:>14.6e} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Symmetric d x d matrix. Only the upper triangle is stored, so symmetry
/// is exact by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    /// Row-major upper triangle: (0,0), (0,1), ..., (0,d-1), (1,1), ...
    upper: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Result<Self, SymmatError> {
        if dim < 2 {
            return Err(SymmatError::DimensionTooSmall(dim));
        }
        Ok(SymmetricMatrix { dim, upper: vec![0.0; dim * (dim + 1) / 2] })
    }

    pub fn identity(dim: usize) -> Result<Self, SymmatError> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        Ok(m)
    }

    pub fn from_upper(dim: usize, upper: Vec<f64>) -> Result<Self, SymmatError> {
        if dim < 2 {
            return Err(SymmatError::DimensionTooSmall(dim));
        }
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected {
            return Err(SymmatError::BadUpperLength { dim, got: upper.len(), expected });
        }
        Ok(SymmetricMatrix { dim, upper })
    }

    /// Build from full rows; the strictly lower triangle is ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SymmatError> {
        let dim = rows.len();
        let mut m = Self::zeros(dim)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(SymmatError::DimensionMismatch(row.len(), dim));
            }
            for j in i..dim {
                m.set(i, j, row[j]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn to_dense(&self) -> SquareMat {
        let n = self.dim;
        let mut m = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.get(i, j));
            }
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.to_dense().frobenius()
    }

    pub fn scale(&self, s: f64) -> SymmetricMatrix {
        SymmetricMatrix { dim: self.dim, upper: self.upper.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix, SymmatError> {
        if self.dim != other.dim {
            return Err(SymmatError::DimensionMismatch(self.dim, other.dim));
        }
        let upper = self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect();
        Ok(SymmetricMatrix { dim: self.dim, upper })
    }

    pub fn add_scaled_identity(&self, c: f64) -> SymmetricMatrix {
        let mut m = self.clone();
        for i in 0..self.dim {
            let v = m.get(i, i);
            m.set(i, i, v + c);
        }
        m
    }
}

/// Result of `commutator`: the (antisymmetric) matrix a*b - b*a and the
/// normalized defect ||a*b - b*a||_F / (||a||_F * ||b||_F).
#[derive(Debug, Clone)]
pub struct Commutator {
    pub matrix: SquareMat,
    pub defect: f64,
}

pub fn commutator(a: &SymmetricMatrix, b: &SymmetricMatrix) -> Result<Commutator, SymmatError> {
    if a.dim() != b.dim() {
        return Err(SymmatError::DimensionMismatch(a.dim(), b.dim()));
    }
    let da = a.to_dense();
    let db = b.to_dense();
    let ab = da.mul(&db);
    let ba = db.mul(&da);
    let mut c = ab.sub(&ba);
    // Enforce exact antisymmetry; the float products only miss it by rounding.
    let n = c.n;
    for i in 0..n {
        c.set(i, i, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (c.get(i, j) - c.get(j, i));
            c.set(i, j, v);
            c.set(j, i, -v);
        }
    }
    let na = da.frobenius();
    let nb = db.frobenius();
    let defect = if na == 0.0 || nb == 0.0 { 0.0 } else { c.frobenius() / (na * nb) };
    Ok(Commutator { matrix: c, defect })
}

/// Orthonormal eigendecomposition of a symmetric matrix.
///
/// Eigenvalues sorted ascending; each eigenvector sign-normalized so its
/// largest-magnitude component is positive. `distinct` is set when the
/// minimal eigenvalue gap exceeds `DISTINCT_GAP_REL * ||H||_F`.
#[derive(Debug, Clone)]
pub struct EigenFrame {
    pub eigenvalues: Vec<f64>,
    /// eigenvectors[i] is the unit eigenvector for eigenvalues[i].
    pub eigenvectors: Vec<Vec<f64>>,
    pub distinct: bool,
}

impl EigenFrame {
    /// Component `m` (0-based) of the eigenvector for eigenvalue index `i`.
    #[inline]
    pub fn component(&self, i: usize, m: usize) -> f64 {
        self.eigenvectors[i][m]
    }

    pub fn min_gap(&self) -> f64 {
        self.eigenvalues.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Cyclic Jacobi rotations (Numerical Recipes scheme). Foolproof for real
/// symmetric input at the sizes used here.
pub fn eigenframe(h: &SymmetricMatrix) -> EigenFrame {
    let n = h.dim();
    let mut a = h.to_dense();
    let mut v = SquareMat::identity(n);
    let mut d: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    for sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).abs();
            }
        }
        if off == 0.0 {
            break;
        }
        let thresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                let g = 100.0 * apq.abs();
                if sweep > 3
                    && d[p].abs() + g == d[p].abs()
                    && d[q].abs() + g == d[q].abs()
                {
                    a.set(p, q, 0.0);
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }
                let mut hh = d[q] - d[p];
                let t = if hh.abs() + g == hh.abs() {
                    apq / hh
                } else {
                    let theta = 0.5 * hh / apq;
                    let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        t = -t;
                    }
                    t
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                hh = t * apq;
                z[p] -= hh;
                z[q] += hh;
                d[p] -= hh;
                d[q] += hh;
                a.set(p, q, 0.0);
                let rot = |a: &mut SquareMat, i: usize, j: usize, k: usize, l: usize| {
                    let g = a.get(i, j);
                    let h = a.get(k, l);
                    a.set(i, j, g - s * (h + g * tau));
                    a.set(k, l, h + s * (g - h * tau));
                };
                for j in 0..p {
                    rot(&mut a, j, p, j, q);
                }
                for j in (p + 1)..q {
                    rot(&mut a, p, j, j, q);
                }
                for j in (q + 1)..n {
                    rot(&mut a, p, j, q, j);
                }
                for j in 0..n {
                    rot(&mut v, j, p, j, q);
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }

    // Sort ascending and extract column eigenvectors.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut eigenvectors = Vec::with_capacity(n);
    for &col in &order {
        let mut vec_i: Vec<f64> = (0..n).map(|r| v.get(r, col)).collect();
        let norm = vec_i.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            vec_i.iter_mut().for_each(|x| *x /= norm);
        }
        // Sign convention: largest-magnitude component positive.
        let mut imax = 0;
        for (i, x) in vec_i.iter().enumerate() {
            if x.abs() > vec_i[imax].abs() {
                imax = i;
            }
        }
        if vec_i[imax] < 0.0 {
            vec_i.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvectors.push(vec_i);
    }
    let norm = h.frobenius();
    let min_gap = eigenvalues.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let distinct = norm > 0.0 && min_gap > DISTINCT_GAP_REL * norm;
    EigenFrame { eigenvalues, eigenvectors, distinct }
}

/// An invariant value or an explicit pole marker. Poles are returned, never
/// large floats, so relation checks stay honest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gamma {
    Value(f64),
    Pole,
}

impl Gamma {
    pub fn value(self) -> Option<f64> {
        match self {
            Gamma::Value(v) => Some(v),
            Gamma::Pole => None,
        }
    }

    pub fn is_pole(self) -> bool {
        matches!(self, Gamma::Pole)
    }
}

/// Elementary symmetric polynomial e_k(y_1..y_d).
fn elementary_symmetric(y: &[f64], k: usize) -> f64 {
    // e_j built incrementally: e <- e + y_i * e_{j-1}
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &yi in y {
        for j in (1..=k).rev() {
            e[j] += yi * e[j - 1];
        }
    }
    e[k]
}

/// gamma(d,k)_{mn} from a precomputed eigenframe. `m`, `n` are 1-based.
///
/// The ratios are sorted before the symmetric polynomial is accumulated,
/// so the value is bitwise independent of the order in which eigenpairs
/// are enumerated.
pub fn gamma_from_frame(frame: &EigenFrame, k: usize, m: usize, n: usize) -> Result<Gamma, SymmatError> {
    let d = frame.eigenvalues.len();
    if k < 1 || k > d || m < 1 || m > d || n < 1 || n > d || m == n {
        return Err(SymmatError::BadInvariantIndex { k, m, n, dim: d });
    }
    let (mi, ni) = (m - 1, n - 1);
    let mut beta = Vec::with_capacity(d);
    for i in 0..d {
        let hn = frame.component(i, ni);
        if hn.abs() < POLE_COMPONENT_TOL {
            return Ok(Gamma::Pole);
        }
        beta.push(frame.component(i, mi) / hn);
    }
    beta.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Gamma::Value(elementary_symmetric(&beta, k)))
}

/// gamma(d,k)_{mn} of a symmetric matrix via its eigenframe. 1-based m, n.
pub fn gamma_invariant(h: &SymmetricMatrix, k: usize, m: usize, n: usize) -> Result<Gamma, SymmatError> {
    let frame = eigenframe(h);
    gamma_from_frame(&frame, k, m, n)
}

/// Full invariant table keyed by (k, m, n), 1 <= k <= d, m != n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantSet {
    pub dim: usize,
    pub values: BTreeMap<(usize, usize, usize), Gamma>,
}

impl InvariantSet {
    pub fn compute(h: &SymmetricMatrix) -> Self {
        let d = h.dim();
        let frame = eigenframe(h);
        let mut values = BTreeMap::new();
        for k in 1..=d {
            for m in 1..=d {
                for n in 1..=d {
                    if m == n {
                        continue;
                    }
                    let g = gamma_from_frame(&frame, k, m, n).expect("indices validated");
                    values.insert((k, m, n), g);
                }
            }
        }
        InvariantSet { dim: d, values }
    }

    pub fn get(&self, k: usize, m: usize, n: usize) -> Gamma {
        self.values[&(k, m, n)]
    }
}

/// Which of the three d=3 closed forms to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma3Kind {
    /// gamma(3,1)_{21}
    K1,
    /// gamma(3,2)_{21}
    K2,
    /// gamma(3,3)_{21}
    K3,
}

/// Closed-form d=3 invariants straight from the matrix entries, as rational
/// functions. Independent of the eigen-decomposition route.
///
/// Index layout: `perm = [m-1, n-1, l-1]` relabels which axes play the roles
/// of (1,2,3) in the base formulas for gamma(3,k)_{21}.
fn gamma3_entries(h: &SymmetricMatrix, perm: [usize; 3], kind: Gamma3Kind) -> Result<Gamma, SymmatError> {
    if h.dim() != 3 {
        return Err(SymmatError::WrongDimension { expected: 3, got: h.dim() });
    }
    let e = |i: usize, j: usize| h.get(perm[i - 1], perm[j - 1]);
    let norm = h.frobenius();
    let denom_tol = POLE_COMPONENT_TOL * norm.powi(3).max(f64::MIN_POSITIVE);
    // Shared denominator of the k=1 and k=3 forms.
    let den = (e(2, 2) - e(3, 3)) * e(1, 2) * e(1, 3) + (e(1, 3).powi(2) - e(1, 2).powi(2)) * e(2, 3);
    // Numerator of the k=3 form (also the third-term numerator of k=1).
    let num3 = (e(1, 1) - e(3, 3)) * e(1, 2) * e(2, 3) + (e(2, 3).powi(2) - e(1, 2).powi(2)) * e(1, 3);
    match kind {
        Gamma3Kind::K3 => {
            if den.abs() < denom_tol {
                return Ok(Gamma::Pole);
            }
            Ok(Gamma::Value(-num3 / den))
        }
        Gamma3Kind::K1 => {
            let h12 = e(1, 2);
            if h12.abs() < POLE_COMPONENT_TOL * norm.max(f64::MIN_POSITIVE) || den.abs() < denom_tol {
                return Ok(Gamma::Pole);
            }
            let t1 = (e(2, 2) - e(1, 1)) / h12;
            let num2 = (e(1, 1) - e(2, 2)) * e(1, 3) * e(2, 3) + (e(2, 3).powi(2) - e(1, 3).powi(2)) * h12;
            let t2 = e(1, 3) / h12 * num2 / den;
            let t3 = num3 / den;
            Ok(Gamma::Value(t1 + t2 + t3))
        }
        Gamma3Kind::K2 => {
            // gamma(3,2)_{21} = gamma(3,3)_{21} * gamma(3,1)_{12}
            let g3 = gamma3_entries(h, perm, Gamma3Kind::K3)?;
            let swapped = [perm[1], perm[0], perm[2]];
            let g1_swapped = gamma3_entries(h, swapped, Gamma3Kind::K1)?;
            match (g3, g1_swapped) {
                (Gamma::Value(a), Gamma::Value(b)) => Ok(Gamma::Value(a * b)),
                _ => Ok(Gamma::Pole),
            }
        }
    }
}

/// Closed-form gamma(3,k)_{21} for k in {1,2,3}.
pub fn gamma3_closed_form(h: &SymmetricMatrix, kind: Gamma3Kind) -> Result<Gamma, SymmatError> {
    gamma3_entries(h, [0, 1, 2], kind)
}

/// Solve the depressed-free cubic x^3 + a x^2 + b x + c = 0 for its real
/// roots (Cardano / trigonometric form).
fn cubic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    if disc > 1e-14 * (q * q + p * p * p.abs()).max(1.0) {
        let s = (-q / 2.0 + disc.sqrt()).cbrt();
        let t = (-q / 2.0 - disc.sqrt()).cbrt();
        vec![shift + s + t]
    } else {
        // Three real roots.
        let r = (-p / 3.0).max(0.0).sqrt();
        if r == 0.0 {
            return vec![shift];
        }
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| shift + 2.0 * r * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos())
            .collect()
    }
}

/// The two candidate eigendirection sets a d=3 invariant triple
/// gamma(3,k)_{21} determines. The component ratios beta_{21,i} are the
/// roots of the cubic the invariants build; completing each direction
/// (1, beta_i, c_i) through orthogonality leaves a global sign choice on
/// the third components, so two distinct frames remain.
#[derive(Debug, Clone)]
pub struct CandidateFrames {
    pub beta: [f64; 3],
    /// Unit directions, one set per sign choice.
    pub frames: [[[f64; 3]; 3]; 2],
}

/// Reconstruct the eigendirection candidates of a 3x3 symmetric matrix from
/// its three gamma(3,k)_{21} invariants alone. Returns None at poles, at
/// repeated roots, or when the orthogonality completion has no real
/// solution.
pub fn candidate_frames_from_invariants(h: &SymmetricMatrix) -> Option<CandidateFrames> {
    if h.dim() != 3 {
        return None;
    }
    let g1 = gamma_invariant(h, 1, 2, 1).ok()?.value()?;
    let g2 = gamma_invariant(h, 2, 2, 1).ok()?.value()?;
    let g3 = gamma_invariant(h, 3, 2, 1).ok()?.value()?;
    // beta^3 - g1 beta^2 + g2 beta - g3 = 0
    let roots = cubic_real_roots(-g1, g2, -g3);
    if roots.len() != 3 {
        return None;
    }
    let beta = [roots[0], roots[1], roots[2]];
    // Directions (1, beta_i, c_i): pairwise orthogonality gives
    // 1 + beta_i beta_j + c_i c_j = 0. Writing r_ij = -(1 + beta_i beta_j),
    // c_1^2 = r_12 r_13 / r_23 and the rest follow; the overall sign of
    // (c_1, c_2, c_3) is the unresolved choice.
    let r = |i: usize, j: usize| -(1.0 + beta[i] * beta[j]);
    let c1_sq = r(0, 1) * r(0, 2) / r(1, 2);
    if c1_sq <= 0.0 || c1_sq.is_nan() || r(1, 2) == 0.0 {
        return None;
    }
    let c1 = c1_sq.sqrt();
    let c2 = r(0, 1) / c1;
    let c3 = r(0, 2) / c1;
    let mut frames = [[[0.0; 3]; 3]; 2];
    for (s, frame) in frames.iter_mut().enumerate() {
        let sign = if s == 0 { 1.0 } else { -1.0 };
        for i in 0..3 {
            let c = sign * [c1, c2, c3][i];
            let norm = (1.0 + beta[i] * beta[i] + c * c).sqrt();
            frame[i] = [1.0 / norm, beta[i] / norm, c / norm];
        }
    }
    Some(CandidateFrames { beta, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationCheck {
    pub relation: String,
    pub residual: f64,
    pub status: RelationStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationReport {
    pub dim: usize,
    pub checks: Vec<RelationCheck>,
}

impl RelationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status == RelationStatus::Pass)
    }

    pub fn any_inconclusive(&self) -> bool {
        self.checks.iter().any(|c| c.status == RelationStatus::Inconclusive)
    }
}

fn push_check(report: &mut RelationReport, name: String, residual: Option<(f64, f64)>, tol: f64) {
    match residual {
        Some((res, scale)) => {
            let status = if res <= tol * scale.max(1e-300) {
                RelationStatus::Pass
            } else {
                RelationStatus::Fail
            };
            report.checks.push(RelationCheck { relation: name, residual: res, status });
        }
        None => {
            report.checks.push(RelationCheck {
                relation: name,
                residual: f64::NAN,
                status: RelationStatus::Inconclusive,
            });
        }
    }
}

/// Check every relation between the invariants of `h` at relative
/// tolerance `tol`: the product relations, the k-duality relation, the
/// eigendirection-orthogonality sum, the power-trace family for
/// p = 1..d-1, and (d=3) the cross-consistency relation with its
/// subscript permutations.
pub fn check_relations(h: &SymmetricMatrix, tol: f64) -> RelationReport {
    let d = h.dim();
    let mut report = RelationReport { dim: d, checks: Vec::new() };
    let frame = eigenframe(h);
    let inv = InvariantSet::compute(h);
    if !frame.distinct {
        report.checks.push(RelationCheck {
            relation: "distinct-eigenvalues".into(),
            residual: f64::NAN,
            status: RelationStatus::Inconclusive,
        });
        return report;
    }

    let g = |k: usize, m: usize, n: usize| inv.get(k, m, n).value();

    // gamma(d,d)_{mn} * gamma(d,d)_{nm} = 1
    for m in 1..=d {
        for n in (m + 1)..=d {
            let res = match (g(d, m, n), g(d, n, m)) {
                (Some(a), Some(b)) => Some(((a * b - 1.0).abs(), (a * b).abs().max(1.0))),
                _ => None,
            };
            push_check(&mut report, format!("product[{m},{n}]"), res, tol);
        }
    }

    // gamma(d,d)_{ml} * gamma(d,d)_{ln} = gamma(d,d)_{mn}
    for m in 1..=d {
        for n in 1..=d {
            for l in 1..=d {
                if m == n || n == l || m == l {
                    continue;
                }
                let res = match (g(d, m, l), g(d, l, n), g(d, m, n)) {
                    (Some(a), Some(b), Some(c)) => {
                        Some(((a * b - c).abs(), (a * b).abs().max(c.abs()).max(1.0)))
                    }
                    _ => None,
                };
                push_check(&mut report, format!("chain[{m},{l},{n}]"), res, tol);
            }
        }
    }

    // gamma(d,k)_{mn} = gamma(d,d)_{mn} * gamma(d,d-k)_{nm} for 0 < k < d
    for k in 1..d {
        for m in 1..=d {
            for n in 1..=d {
                if m == n {
                    continue;
                }
                let res = match (g(k, m, n), g(d, m, n), g(d - k, n, m)) {
                    (Some(a), Some(b), Some(c)) => {
                        Some(((a - b * c).abs(), a.abs().max((b * c).abs()).max(1.0)))
                    }
                    _ => None,
                };
                push_check(&mut report, format!("duality[k={k};{m},{n}]"), res, tol);
            }
        }
    }

    // sum_{m != n} gamma(d,2)_{mn} = -d(d-1)/2 for each n
    if d >= 2 {
        let target = -(d as f64) * (d as f64 - 1.0) / 2.0;
        for n in 1..=d {
            let mut sum = 0.0;
            let mut scale = target.abs();
            let mut ok = true;
            for m in 1..=d {
                if m == n {
                    continue;
                }
                match g(2, m, n) {
                    Some(v) => {
                        sum += v;
                        scale = scale.max(v.abs());
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            let res = if ok { Some(((sum - target).abs(), scale)) } else { None };
            push_check(&mut report, format!("orthogonality[n={n}]"), res, tol);
        }
    }

    // sum_{n} sum_{m != n} (H^p)_{mn} gamma(d,1)_{mn} = 0 for p = 1..d-1
    let dense = h.to_dense();
    let mut hp = dense.clone();
    for p in 1..d {
        if p > 1 {
            hp = hp.mul(&dense);
        }
        let mut sum = 0.0;
        let mut scale: f64 = 0.0;
        let mut ok = true;
        'outer: for n in 1..=d {
            for m in 1..=d {
                if m == n {
                    continue;
                }
                match g(1, m, n) {
                    Some(v) => {
                        let term = hp.get(m - 1, n - 1) * v;
                        sum += term;
                        scale = scale.max(term.abs());
                    }
                    None => {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        let res = if ok { Some((sum.abs(), scale)) } else { None };
        push_check(&mut report, format!("power-trace[p={p}]"), res, tol);
    }

    // d=3 cross-consistency relation and its subscript permutations:
    // gamma(3,1)_{nm} + gamma(3,3)_{nm} + gamma(3,1)_{mn} + gamma(3,3)_{mn}
    //   + gamma(3,3)_{lm} gamma(3,3)_{ln} = 0
    if d == 3 {
        for (m, n, l) in [(1usize, 2usize, 3usize), (1, 3, 2), (2, 3, 1)] {
            let parts = [g(1, n, m), g(3, n, m), g(1, m, n), g(3, m, n), g(3, l, m), g(3, l, n)];
            let res = if parts.iter().all(|p| p.is_some()) {
                let v: Vec<f64> = parts.iter().map(|p| p.unwrap()).collect();
                let sum = v[0] + v[1] + v[2] + v[3] + v[4] * v[5];
                let scale = v[0]
                    .abs()
                    .max(v[1].abs())
                    .max(v[2].abs())
                    .max(v[3].abs())
                    .max((v[4] * v[5]).abs());
                Some((sum.abs(), scale.max(1.0)))
            } else {
                None
            };
            push_check(&mut report, format!("cross[{m},{n}|{l}]"), res, tol);
        }
    }

    report
}

/// Commutation test with codiagonalization confirmation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodiagReport {
    pub codiagonalizable: bool,
    pub defect: f64,
    /// Off-diagonal mass of U^T b U relative to ||b||_F, when a's frame
    /// is distinct and the commutator test passed.
    pub offdiagonal_defect: Option<f64>,
}

pub fn codiagonalizable(
    a: &SymmetricMatrix,
    b: &SymmetricMatrix,
    tol: f64,
) -> Result<CodiagReport, SymmatError> {
    let comm = commutator(a, b)?;
    let ok = comm.defect < tol;
    let mut offdiag = None;
    if ok {
        let frame = eigenframe(a);
        if frame.distinct {
            let d = a.dim();
            let db = b.to_dense();
            // M = U^T B U with U columns = eigenvectors of a.
            let mut u = SquareMat::zeros(d);
            for (col, v) in frame.eigenvectors.iter().enumerate() {
                for r in 0..d {
                    u.set(r, col, v[r]);
                }
            }
            let mut ut = SquareMat::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    ut.set(i, j, u.get(j, i));
                }
            }
            let m = ut.mul(&db).mul(&u);
            let mut off = 0.0;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        off += m.get(i, j) * m.get(i, j);
                    }
                }
            }
            let nb = db.frobenius();
            offdiag = Some(if nb == 0.0 { 0.0 } else { off.sqrt() / nb });
        }
    }
    Ok(CodiagReport { codiagonalizable: ok, defect: comm.defect, offdiagonal_defect: offdiag })
}
