//! Exact-rational sparse homogeneous polynomials and the flow-family
//! constructors, including symbolic Hessian commutators.
//!
//! Coefficients are `BigRational` end-to-end, so zero-polynomial detection
//! and commutator vanishing are decidable, not tolerance-based.

use crate::sampling;
use crate::symmat::{eigenframe, SymmetricMatrix};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

pub type Rat = BigRational;

/// Rational from an integer.
pub fn rat(n: i64) -> Rat {
    BigRational::from_integer(BigInt::from(n))
}

/// Rational from a numerator/denominator pair.
pub fn ratio(num: i64, den: i64) -> Rat {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Serialize a rational as a decimal-free "num/den" string.
pub fn rat_to_string(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parse "num/den" (or a bare integer) back into a rational.
pub fn rat_from_string(s: &str) -> Result<Rat, PolyError> {
    let parse_int =
        |t: &str| t.trim().parse::<BigInt>().map_err(|_| PolyError::BadRational(s.to_string()));
    match s.split_once('/') {
        Some((n, d)) => {
            let den = parse_int(d)?;
            if den.is_zero() {
                return Err(PolyError::BadRational(s.to_string()));
            }
            Ok(BigRational::new(parse_int(n)?, den))
        }
        None => Ok(BigRational::from_integer(parse_int(s)?)),
    }
}

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(u32, u32),
    #[error("multi-index degree {got} does not match polynomial degree {expected}")]
    WrongTermDegree { expected: u32, got: u32 },
    #[error("family parameter out of range: {0}")]
    BadParameter(String),
    #[error("cannot parse rational: {0}")]
    BadRational(String),
    #[error("invalid polynomial JSON: {0}")]
    BadJson(String),
}

/// Exponent vector of one monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, &e)| if e == 1 { format!("q{}", i + 1) } else { format!("q{}^{}", i + 1, e) })
            .collect();
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join(" "))
        }
    }
}

/// Sparse homogeneous polynomial of a fixed degree over R^dim with exact
/// rational coefficients. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomogeneousPolynomial {
    dim: usize,
    degree: u32,
    terms: BTreeMap<MultiIndex, Rat>,
}

impl HomogeneousPolynomial {
    pub fn zero(dim: usize, degree: u32) -> Self {
        HomogeneousPolynomial { dim, degree, terms: BTreeMap::new() }
    }

    /// Single monomial c * q^exp.
    pub fn monomial(dim: usize, exp: &[u32], coef: Rat) -> Self {
        let mi = MultiIndex(exp.to_vec());
        assert_eq!(mi.dim(), dim);
        let mut p = Self::zero(dim, mi.degree());
        p.add_term(mi, coef);
        p
    }

    /// |q|^2 = sum q_i^2 as a degree-2 polynomial.
    pub fn norm_squared(dim: usize) -> Self {
        let mut p = Self::zero(dim, 2);
        for i in 0..dim {
            let mut e = vec![0u32; dim];
            e[i] = 2;
            p.add_term(MultiIndex(e), Rat::one());
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &Rat)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, exp: &[u32]) -> Rat {
        self.terms.get(&MultiIndex(exp.to_vec())).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn add_term(&mut self, mi: MultiIndex, coef: Rat) {
        assert_eq!(mi.dim(), self.dim, "multi-index dimension mismatch");
        assert_eq!(mi.degree(), self.degree, "multi-index degree mismatch");
        if coef.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(mi) {
            Entry::Vacant(e) => {
                e.insert(coef);
            }
            Entry::Occupied(mut e) => {
                let v = e.get() + coef;
                if v.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        assert_eq!(self.degree, other.degree, "sum of different degrees is not homogeneous");
        let mut out = self.clone();
        for (mi, c) in &other.terms {
            out.add_term(mi.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-Rat::one()))
    }

    pub fn scale(&self, s: &Rat) -> Self {
        if s.is_zero() {
            return Self::zero(self.dim, self.degree);
        }
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect();
        HomogeneousPolynomial { dim: self.dim, degree: self.degree, terms }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zero(self.dim, self.degree + other.degree);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let exp: Vec<u32> = m1.0.iter().zip(&m2.0).map(|(a, b)| a + b).collect();
                out.add_term(MultiIndex(exp), c1 * c2);
            }
        }
        out
    }

    /// Partial derivative with respect to variable `var` (0-based).
    pub fn partial(&self, var: usize) -> Self {
        assert!(var < self.dim);
        let deg = self.degree.saturating_sub(1);
        let mut out = Self::zero(self.dim, deg);
        for (mi, c) in &self.terms {
            let e = mi.0[var];
            if e == 0 {
                continue;
            }
            let mut exp = mi.0.clone();
            exp[var] -= 1;
            out.add_term(MultiIndex(exp), c * rat(e as i64));
        }
        out
    }

    /// Second partial derivative.
    pub fn partial2(&self, i: usize, j: usize) -> Self {
        self.partial(i).partial(j)
    }

    pub fn eval_rat(&self, q: &[Rat]) -> Rat {
        assert_eq!(q.len(), self.dim);
        let mut sum = Rat::zero();
        for (mi, c) in &self.terms {
            let mut term = c.clone();
            for (v, &e) in mi.0.iter().enumerate() {
                for _ in 0..e {
                    term *= &q[v];
                }
            }
            sum += term;
        }
        sum
    }

    pub fn eval_f64(&self, q: &[f64]) -> f64 {
        assert_eq!(q.len(), self.dim);
        let mut sum = 0.0;
        for (mi, c) in &self.terms {
            let mut term = c.to_f64().expect("rational fits f64");
            for (v, &e) in mi.0.iter().enumerate() {
                term *= q[v].powi(e as i32);
            }
            sum += term;
        }
        sum
    }

    pub fn gradient_f64(&self, q: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|v| self.partial(v).eval_f64(q)).collect()
    }

    pub fn gradient_rat(&self, q: &[Rat]) -> Vec<Rat> {
        (0..self.dim).map(|v| self.partial(v).eval_rat(q)).collect()
    }

    /// Hessian evaluated at a point; symmetric by construction.
    pub fn hessian_at(&self, q: &[f64]) -> SymmetricMatrix {
        let d = self.dim;
        let mut h = SymmetricMatrix::zeros(d).expect("dim >= 2");
        for i in 0..d {
            for j in i..d {
                h.set(i, j, self.partial2(i, j).eval_f64(q));
            }
        }
        h
    }

    pub fn hessian_rat(&self, q: &[Rat]) -> Vec<Vec<Rat>> {
        let d = self.dim;
        let mut h = vec![vec![Rat::zero(); d]; d];
        for i in 0..d {
            for j in i..d {
                let v = self.partial2(i, j).eval_rat(q);
                h[i][j] = v.clone();
                h[j][i] = v;
            }
        }
        h
    }

    /// Restriction to the first `keep` coordinates (sets the rest to zero).
    pub fn restrict(&self, keep: usize) -> Self {
        assert!(keep >= 2 && keep <= self.dim);
        let mut out = Self::zero(keep, self.degree);
        for (mi, c) in &self.terms {
            if mi.0[keep..].iter().all(|&e| e == 0) {
                out.add_term(MultiIndex(mi.0[..keep].to_vec()), c.clone());
            }
        }
        out
    }

    /// Apply a coordinate permutation: q_i -> q_{perm[i]}.
    pub fn permute_vars(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.dim);
        let mut out = Self::zero(self.dim, self.degree);
        for (mi, c) in &self.terms {
            let mut exp = vec![0u32; self.dim];
            for (i, &e) in mi.0.iter().enumerate() {
                exp[perm[i]] = e;
            }
            out.add_term(MultiIndex(exp), c.clone());
        }
        out
    }

    /// Exact proportionality factor lambda with self = lambda * other,
    /// if one exists.
    pub fn proportionality(&self, other: &Self) -> Option<Rat> {
        if other.is_zero() {
            return if self.is_zero() { Some(Rat::zero()) } else { None };
        }
        if self.is_zero() {
            return Some(Rat::zero());
        }
        if self.terms.len() != other.terms.len() {
            return None;
        }
        let mut lambda: Option<Rat> = None;
        for ((m1, c1), (m2, c2)) in self.terms.iter().zip(other.terms.iter()) {
            if m1 != m2 {
                return None;
            }
            let r = c1 / c2;
            match &lambda {
                None => lambda = Some(r),
                Some(l) if *l == r => {}
                _ => return None,
            }
        }
        lambda
    }
}

impl fmt::Display for HomogeneousPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let parts: Vec<String> =
            self.terms.iter().map(|(m, c)| format!("({}) {}", c, m)).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

// JSON schema: {"dim": d, "degree": n, "terms": [{"exp": [..], "coef": "num/den"}]}
#[derive(Serialize, Deserialize)]
struct TermJson {
    exp: Vec<u32>,
    coef: String,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    dim: usize,
    degree: u32,
    terms: Vec<TermJson>,
}

impl Serialize for HomogeneousPolynomial {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| TermJson { exp: m.0.clone(), coef: rat_to_string(c) })
            .collect();
        PolyJson { dim: self.dim, degree: self.degree, terms }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for HomogeneousPolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = PolyJson::deserialize(deserializer)?;
        let mut p = HomogeneousPolynomial::zero(raw.dim, raw.degree);
        for t in raw.terms {
            let mi = MultiIndex(t.exp);
            if mi.dim() != raw.dim {
                return Err(D::Error::custom("term dimension mismatch"));
            }
            if mi.degree() != raw.degree {
                return Err(D::Error::custom("term degree mismatch"));
            }
            let c = rat_from_string(&t.coef).map_err(D::Error::custom)?;
            p.add_term(mi, c);
        }
        Ok(p)
    }
}

/// A finite sum of homogeneous pieces of distinct degrees; the general smooth
/// polynomial potential used as WKB input and CLI currency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySum {
    pub dim: usize,
    pub parts: Vec<HomogeneousPolynomial>,
}

impl PolySum {
    pub fn new(dim: usize, parts: Vec<HomogeneousPolynomial>) -> Result<Self, PolyError> {
        for p in &parts {
            if p.dim() != dim {
                return Err(PolyError::DimensionMismatch(p.dim(), dim));
            }
        }
        Ok(PolySum { dim, parts })
    }

    pub fn single(p: HomogeneousPolynomial) -> Self {
        PolySum { dim: p.dim(), parts: vec![p] }
    }

    pub fn eval_f64(&self, q: &[f64]) -> f64 {
        self.parts.iter().map(|p| p.eval_f64(q)).sum()
    }

    pub fn gradient_f64(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for p in &self.parts {
            for (gi, v) in g.iter_mut().zip(p.gradient_f64(q)) {
                *gi += v;
            }
        }
        g
    }

    pub fn hessian_at(&self, q: &[f64]) -> SymmetricMatrix {
        let mut h = SymmetricMatrix::zeros(self.dim).expect("dim >= 2");
        for p in &self.parts {
            h = h.add(&p.hessian_at(q)).expect("same dim");
        }
        h
    }

    pub fn max_degree(&self) -> u32 {
        self.parts.iter().map(|p| p.degree()).max().unwrap_or(0)
    }
}

/// d x d matrix of homogeneous polynomials (commutator entries).
#[derive(Debug, Clone)]
pub struct PolyMatrix {
    pub dim: usize,
    pub entries: Vec<Vec<HomogeneousPolynomial>>,
}

impl PolyMatrix {
    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|row| row.iter().all(|p| p.is_zero()))
    }

    pub fn get(&self, i: usize, j: usize) -> &HomogeneousPolynomial {
        &self.entries[i][j]
    }
}

/// Exact symbolic commutator C(p, r) = H(p) H(r) - H(r) H(p) as a matrix of
/// homogeneous polynomials of degree deg(p) + deg(r) - 4.
pub fn commutator_poly(p: &HomogeneousPolynomial, r: &HomogeneousPolynomial) -> PolyMatrix {
    assert_eq!(p.dim(), r.dim(), "commutator needs equal dimensions");
    let d = p.dim();
    let hp: Vec<Vec<HomogeneousPolynomial>> =
        (0..d).map(|i| (0..d).map(|j| p.partial2(i, j)).collect()).collect();
    let hr: Vec<Vec<HomogeneousPolynomial>> =
        (0..d).map(|i| (0..d).map(|j| r.partial2(i, j)).collect()).collect();
    let deg = (p.degree() + r.degree()).saturating_sub(4);
    let mut entries = vec![vec![HomogeneousPolynomial::zero(d, deg); d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = HomogeneousPolynomial::zero(d, deg);
            for k in 0..d {
                acc = acc.add(&hp[i][k].mul(&hr[k][j]));
                acc = acc.sub(&hr[i][k].mul(&hp[k][j]));
            }
            entries[i][j] = acc;
        }
    }
    PolyMatrix { dim: d, entries }
}

/// The two-dimensional even family of degree 2k, with its product-formula
/// coefficients in the parameters (a, b).
#[derive(Debug, Clone)]
pub struct P2EvenFamily {
    pub k: u32,
    pub a: Rat,
    pub b: Rat,
    pub poly: HomogeneousPolynomial,
    /// Set when the product formula vanishes identically at (a, b).
    pub degenerate: bool,
    /// The two independent parameter-derivative solutions, offered at
    /// degenerate parameters.
    pub derivative_pair: Option<(HomogeneousPolynomial, HomogeneousPolynomial)>,
}

fn p2_even_coefficient_factors(k: u32, i: u32, a: &Rat, b: &Rat) -> (Vec<Rat>, Vec<Rat>, Rat) {
    // First product over j = 0..i-1 of (2k-1 + 2j(a-1)); second over
    // j = 0..k-1-i of (2k-1 + 2j(b-1)); combinatorial factor
    // k! / (i! (k-i)! (2k-1)).
    let two_k_minus_1 = rat(2 * k as i64 - 1);
    let fa: Vec<Rat> =
        (0..i).map(|j| &two_k_minus_1 + rat(2 * j as i64) * (a - Rat::one())).collect();
    let fb: Vec<Rat> =
        (0..(k - i)).map(|j| &two_k_minus_1 + rat(2 * j as i64) * (b - Rat::one())).collect();
    let mut comb = Rat::one();
    // k! / (i! (k-i)!) = C(k, i)
    for t in 0..i.min(k - i) {
        comb = comb * rat((k - t) as i64) / rat((t + 1) as i64);
    }
    let comb = comb / two_k_minus_1;
    (fa, fb, comb)
}

fn product(v: &[Rat]) -> Rat {
    v.iter().fold(Rat::one(), |acc, x| acc * x)
}

/// Derivative of a product with respect to the parameter, given the factors
/// and the parameter-derivative of each factor.
fn product_derivative(factors: &[Rat], dfactors: &[Rat]) -> Rat {
    let mut sum = Rat::zero();
    for skip in 0..factors.len() {
        if dfactors[skip].is_zero() {
            continue;
        }
        let mut term = dfactors[skip].clone();
        for (j, f) in factors.iter().enumerate() {
            if j != skip {
                term *= f;
            }
        }
        sum += term;
    }
    sum
}

/// Even-degree 2-D family member of degree 2k. At the isolated degenerate
/// parameter pairs the polynomial vanishes identically; the two
/// parameter-derivative solutions are returned alongside in that case.
pub fn family_p2_even(k: u32, a: Rat, b: Rat) -> Result<P2EvenFamily, PolyError> {
    if k < 2 {
        return Err(PolyError::BadParameter(format!("p2-even requires k >= 2, got {k}")));
    }
    let mut poly = HomogeneousPolynomial::zero(2, 2 * k);
    let mut da = HomogeneousPolynomial::zero(2, 2 * k);
    let mut db = HomogeneousPolynomial::zero(2, 2 * k);
    for i in 0..=k {
        let (fa, fb, comb) = p2_even_coefficient_factors(k, i, &a, &b);
        let pa = product(&fa);
        let pb = product(&fb);
        let exp = MultiIndex(vec![2 * i, 2 * (k - i)]);
        poly.add_term(exp.clone(), &pa * &pb * &comb);
        // d/da of factor j is 2j; same for b.
        let dfa: Vec<Rat> = (0..fa.len()).map(|j| rat(2 * j as i64)).collect();
        let dfb: Vec<Rat> = (0..fb.len()).map(|j| rat(2 * j as i64)).collect();
        da.add_term(exp.clone(), product_derivative(&fa, &dfa) * &pb * &comb);
        db.add_term(exp, &pa * product_derivative(&fb, &dfb) * &comb);
    }
    let degenerate = poly.is_zero();
    let derivative_pair = if degenerate { Some((da, db)) } else { None };
    Ok(P2EvenFamily { k, a, b, poly, degenerate, derivative_pair })
}

/// Odd 2-D family of degree 2k+1 with its locked parameters
/// a = b = -1/(k-1).
#[derive(Debug, Clone)]
pub struct P2OddFamily {
    pub k: u32,
    pub poly: HomogeneousPolynomial,
    /// The (a, b) values for which the odd solution exists.
    pub locked_ab: (Rat, Rat),
}

fn p2_odd_block(k: u32) -> HomogeneousPolynomial {
    // u(q1, q2) = sum_{i=0}^{k-1} w_i q1^{2(k-i)+1} q2^{2i},
    // w_i = prod_{j=0}^{i-1} (2(k-j)+1)(k-1-j) / ((j+1)(2j-1)).
    let mut p = HomogeneousPolynomial::zero(2, 2 * k + 1);
    let mut w = Rat::one();
    for i in 0..k {
        p.add_term(MultiIndex(vec![2 * (k - i) + 1, 2 * i]), w.clone());
        // Advance to w_{i+1} with the factor at j = i.
        let j = i as i64;
        let num = rat(2 * (k as i64 - j) + 1) * rat(k as i64 - 1 - j);
        let den = rat(j + 1) * rat(2 * j - 1);
        w = w * num / den;
    }
    p
}

pub fn family_p2_odd(k: u32, c1: Rat, c2: Rat) -> Result<P2OddFamily, PolyError> {
    if k < 2 {
        return Err(PolyError::BadParameter(format!("p2-odd requires k >= 2, got {k}")));
    }
    let u = p2_odd_block(k);
    let mirrored = u.permute_vars(&[1, 0]);
    let poly = u.scale(&c1).add(&mirrored.scale(&c2));
    let locked = -Rat::one() / rat(k as i64 - 1);
    Ok(P2OddFamily { k, poly, locked_ab: (locked.clone(), locked) })
}

/// p4 in d >= 3 dimensions: sum q_i^4 + ctilde * sum_{i<j} q_i^2 q_j^2.
pub fn family_pd4(d: usize, ctilde: &Rat) -> Result<HomogeneousPolynomial, PolyError> {
    if d < 3 {
        return Err(PolyError::BadParameter(format!("pd4 requires d >= 3, got {d}")));
    }
    let mut p = HomogeneousPolynomial::zero(d, 4);
    for i in 0..d {
        let mut e = vec![0u32; d];
        e[i] = 4;
        p.add_term(MultiIndex(e), Rat::one());
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut e = vec![0u32; d];
            e[i] = 2;
            e[j] = 2;
            p.add_term(MultiIndex(e), ctilde.clone());
        }
    }
    Ok(p)
}

/// p6 in d >= 3 dimensions with the commutation-locked coefficients
/// atilde = 15c/(12-c) and btilde = 75c^2/((12-c)(3+c)). The quartic-quadratic
/// double sum runs over i != j.
pub fn family_pd6(d: usize, ctilde: &Rat) -> Result<HomogeneousPolynomial, PolyError> {
    if d < 3 {
        return Err(PolyError::BadParameter(format!("pd6 requires d >= 3, got {d}")));
    }
    if *ctilde == rat(12) || *ctilde == rat(-3) {
        return Err(PolyError::BadParameter(format!(
            "pd6 is undefined at ctilde = {} (coefficient denominator vanishes)",
            ctilde
        )));
    }
    let atilde = rat(15) * ctilde / (rat(12) - ctilde);
    let btilde = rat(75) * ctilde * ctilde / ((rat(12) - ctilde) * (rat(3) + ctilde));
    let mut p = HomogeneousPolynomial::zero(d, 6);
    for i in 0..d {
        let mut e = vec![0u32; d];
        e[i] = 6;
        p.add_term(MultiIndex(e), Rat::one());
    }
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let mut e = vec![0u32; d];
            e[i] = 4;
            e[j] = 2;
            p.add_term(MultiIndex(e), atilde.clone());
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            for k in (j + 1)..d {
                let mut e = vec![0u32; d];
                e[i] = 2;
                e[j] = 2;
                e[k] = 2;
                p.add_term(MultiIndex(e), btilde.clone());
            }
        }
    }
    Ok(p)
}

/// chi_m = (ctilde (2n+2-3m) + 6(m-1)) / m for the degree-2n recurrence.
pub fn chi(n: u32, m: u32, ctilde: &Rat) -> Rat {
    (ctilde * rat(2 * n as i64 + 2 - 3 * m as i64) + rat(6 * (m as i64 - 1))) / rat(m as i64)
}

/// Symmetric degree-2n polynomial in R^3 whose Hessian commutes with that of
/// `family_pd4(3, ctilde)`: coefficients from the chi-product recurrence,
/// normalized so the pure q1^{2n} coefficient is 1.
pub fn family_p3_2n(n: u32, ctilde: &Rat) -> Result<HomogeneousPolynomial, PolyError> {
    if n < 2 {
        return Err(PolyError::BadParameter(format!("p3-2n requires n >= 2, got {n}")));
    }
    let chis: Vec<Rat> = (1..=n).map(|m| chi(n, m, ctilde)).collect();
    if let Some(m) = chis.iter().position(|c| c.is_zero()) {
        return Err(PolyError::BadParameter(format!(
            "chi_{} vanishes for ctilde = {}; coefficient formula degenerates",
            m + 1,
            ctilde
        )));
    }
    // prefix[i] = chi_1 * ... * chi_i, prefix[0] = 1
    let mut prefix = vec![Rat::one()];
    for c in &chis {
        let last = prefix.last().unwrap().clone();
        prefix.push(last * c);
    }
    let total = prefix[n as usize].clone();
    let mut p = HomogeneousPolynomial::zero(3, 2 * n);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let k = n - i - j;
            let coef = &prefix[i as usize] * &prefix[j as usize] * &prefix[k as usize] / &total;
            p.add_term(MultiIndex(vec![2 * i, 2 * j, 2 * k]), coef);
        }
    }
    Ok(p)
}

/// Cleared residual of the planar eigendirection PDE for
/// g = (a q1^2 - b q2^2)/(q1 q2):
/// q1 q2 (d11 - d22) p - (a q1^2 - b q2^2) d12 p, exact.
pub fn gen2d_cleared_residual(
    p: &HomogeneousPolynomial,
    a: &Rat,
    b: &Rat,
) -> HomogeneousPolynomial {
    assert_eq!(p.dim(), 2);
    let q1q2 = HomogeneousPolynomial::monomial(2, &[1, 1], Rat::one());
    let mut g_num = HomogeneousPolynomial::zero(2, 2);
    g_num.add_term(MultiIndex(vec![2, 0]), a.clone());
    g_num.add_term(MultiIndex(vec![0, 2]), -b.clone());
    let lhs = q1q2.mul(&p.partial2(0, 0).sub(&p.partial2(1, 1)));
    let rhs = g_num.mul(&p.partial2(0, 1));
    lhs.sub(&rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexityVerdict {
    Convex,
    NotConvex,
    Undetermined,
}

/// Family information that unlocks the exact sufficient convexity ranges.
#[derive(Debug, Clone)]
pub enum ConvexityHint {
    P2Even { k: u32, a: Rat, b: Rat },
    P2Odd,
    Pd46 { ctilde: Rat },
    P32n { n: u32, ctilde: Rat },
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub verdict: ConvexityVerdict,
    /// Sphere point with a negative Hessian eigenvalue, for not-convex.
    pub witness: Option<Vec<f64>>,
    pub witness_eigenvalue: Option<f64>,
    pub min_eigenvalue_seen: f64,
    pub samples: usize,
}

fn hint_range_sufficient(hint: &ConvexityHint) -> bool {
    match hint {
        ConvexityHint::P2Even { k, a, b } => {
            let bound = -Rat::one() / rat(2 * (*k as i64) - 2);
            a >= &bound && b >= &bound
        }
        ConvexityHint::Pd46 { ctilde } => ctilde >= &Rat::zero() && ctilde < &rat(12),
        ConvexityHint::P32n { n, ctilde } => {
            let upper = rat(6 * (*n as i64 - 1)) / rat(*n as i64 - 2);
            ctilde >= &Rat::zero() && ctilde < &upper
        }
        ConvexityHint::P2Odd | ConvexityHint::None => false,
    }
}

/// Global convexity verdict: a quasi-random sphere sweep looking for a
/// negative Hessian eigenvalue (homogeneity makes the sphere sufficient),
/// combined with the exact sufficient parameter ranges of the families.
pub fn convexity_range_check(
    p: &HomogeneousPolynomial,
    hint: &ConvexityHint,
    samples: usize,
) -> ConvexityReport {
    let d = p.dim();
    let pts = sampling::sphere_points(d, samples, 0);
    let mut min_seen = f64::INFINITY;
    let mut witness = None;
    let mut witness_eig = None;
    for q in &pts {
        let h = p.hessian_at(q);
        let frame = eigenframe(&h);
        let min_eig = frame.eigenvalues[0];
        let scale = h.frobenius().max(1.0);
        if min_eig < min_seen {
            min_seen = min_eig;
        }
        if min_eig < -1e-9 * scale && witness.is_none() {
            witness = Some(q.clone());
            witness_eig = Some(min_eig);
        }
    }
    let verdict = if witness.is_some() {
        ConvexityVerdict::NotConvex
    } else if hint_range_sufficient(hint) {
        ConvexityVerdict::Convex
    } else {
        ConvexityVerdict::Undetermined
    };
    ConvexityReport {
        verdict,
        witness,
        witness_eigenvalue: witness_eig,
        min_eigenvalue_seen: min_seen,
        samples: pts.len(),
    }
}

/// Text form of the convexity range for a family, for CLI reporting.
pub fn convexity_range_text(hint: &ConvexityHint) -> String {
    match hint {
        ConvexityHint::P2Even { k, .. } => {
            format!("convex for min(a, b) >= -1/{}", 2 * k - 2)
        }
        ConvexityHint::P2Odd => "odd degree: not convex on all of R^2".to_string(),
        ConvexityHint::Pd46 { .. } => "convex for 0 <= ctilde < 12".to_string(),
        ConvexityHint::P32n { n, .. } => {
            format!("convex for 0 <= ctilde < 6({})/{} = {}", n - 1, n - 2, rat_to_string(&(rat(6 * (*n as i64 - 1)) / rat(*n as i64 - 2))))
        }
        ConvexityHint::None => "no sufficient range known".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(vals: &[f64]) -> Vec<f64> {
        vals.to_vec()
    }

    #[test]
    fn norm_squared_hessian_is_identity_scaled() {
        let p = HomogeneousPolynomial::norm_squared(3);
        let h = p.hessian_at(&q(&[0.3, -1.2, 2.0]));
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert_eq!(h.get(i, j), expect);
            }
        }
    }

    #[test]
    fn eval_and_second_partial_hand_case() {
        // p = p2_even(k=2, a=1, b=0) = 3q1^4 + 6q1^2q2^2 + q2^4
        let fam = family_p2_even(2, rat(1), rat(0)).unwrap();
        assert_eq!(fam.poly.coefficient(&[4, 0]), rat(3));
        assert_eq!(fam.poly.coefficient(&[2, 2]), rat(6));
        assert_eq!(fam.poly.coefficient(&[0, 4]), rat(1));
        // 3*1 + 6*1*4 + 16 = 43
        assert_eq!(fam.poly.eval_f64(&q(&[1.0, 2.0])), 43.0);
        // d11 = 36 q1^2 + 12 q2^2 -> 36 + 48 = 84 at (1,2)
        assert_eq!(fam.poly.partial2(0, 0).eval_f64(&q(&[1.0, 2.0])), 84.0);
    }

    #[test]
    fn quartic_monomial_hessian() {
        let p = HomogeneousPolynomial::monomial(2, &[4, 0], Rat::one());
        let h = p.hessian_at(&q(&[1.0, 1.0]));
        assert_eq!(h.get(0, 0), 12.0);
        assert_eq!(h.get(0, 1), 0.0);
        assert_eq!(h.get(1, 1), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Independent oracle: central differences of eval.
        let fam = family_p2_even(3, ratio(1, 3), ratio(-1, 7)).unwrap();
        let p = &fam.poly;
        let pts = sampling::box_points(&[0.5, 0.5], &[2.0, 2.0], 25, 3);
        for pt in pts {
            let g = p.gradient_f64(&pt);
            for v in 0..2 {
                let h = 1e-5 * pt[v].abs().max(1.0);
                let mut qp = pt.clone();
                let mut qm = pt.clone();
                qp[v] += h;
                qm[v] -= h;
                let fd = (p.eval_f64(&qp) - p.eval_f64(&qm)) / (2.0 * h);
                assert!(
                    (g[v] - fd).abs() <= 1e-6 * g[v].abs().max(1.0),
                    "grad {} vs fd {}",
                    g[v],
                    fd
                );
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let p = family_pd4(3, &ratio(5, 2)).unwrap();
        let pts = sampling::box_points(&[0.5; 3], &[2.0; 3], 10, 1);
        for pt in pts {
            let h = p.hessian_at(&pt);
            for i in 0..3 {
                for j in 0..3 {
                    let step = 1e-5;
                    let mut qp = pt.clone();
                    let mut qm = pt.clone();
                    qp[j] += step;
                    qm[j] -= step;
                    let fd = (p.gradient_f64(&qp)[i] - p.gradient_f64(&qm)[i]) / (2.0 * step);
                    assert!(
                        (h.get(i, j) - fd).abs() <= 1e-5 * h.get(i, j).abs().max(1.0),
                        "hessian {} vs fd {}",
                        h.get(i, j),
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn euler_identity_exact() {
        // q . grad p = n p in exact rational arithmetic.
        let members: Vec<HomogeneousPolynomial> = vec![
            family_p2_even(2, rat(1), rat(1)).unwrap().poly,
            family_p2_odd(3, rat(2), ratio(-1, 2)).unwrap().poly,
            family_pd4(4, &ratio(7, 3)).unwrap(),
            family_pd6(3, &rat(5)).unwrap(),
            family_p3_2n(4, &ratio(3, 2)).unwrap(),
        ];
        let pt: Vec<Rat> = vec![ratio(3, 2), ratio(-5, 7), ratio(11, 4), ratio(2, 9)];
        for p in members {
            let qs = &pt[..p.dim()];
            let grad = p.gradient_rat(qs);
            let dot: Rat =
                qs.iter().zip(&grad).map(|(qi, gi)| qi * gi).fold(Rat::zero(), |a, x| a + x);
            let expect = rat(p.degree() as i64) * p.eval_rat(qs);
            assert_eq!(dot, expect, "euler identity failed for degree {}", p.degree());
        }
    }

    #[test]
    fn p6_display_coefficients() {
        let fam = family_p2_even(3, rat(2), rat(-1)).unwrap();
        let a = 2i64;
        let b = -1i64;
        assert_eq!(fam.poly.coefficient(&[6, 0]), rat((4 * a + 1) * (2 * a + 3)));
        assert_eq!(fam.poly.coefficient(&[4, 2]), rat(15 * (2 * a + 3)));
        assert_eq!(fam.poly.coefficient(&[2, 4]), rat(15 * (2 * b + 3)));
        assert_eq!(fam.poly.coefficient(&[0, 6]), rat((4 * b + 1) * (2 * b + 3)));
    }

    #[test]
    fn degenerate_parameters_vanish_with_derivative_pair() {
        // k=3, a=b=-3/2 corresponds to j = jhat = 1.
        let fam = family_p2_even(3, ratio(-3, 2), ratio(-3, 2)).unwrap();
        assert!(fam.degenerate);
        assert!(fam.poly.is_zero());
        let (da, db) = fam.derivative_pair.unwrap();
        assert!(!da.is_zero() && !db.is_zero());
        // Derivative solutions satisfy the cleared PDE at the degenerate parameters.
        let a = ratio(-3, 2);
        let b = ratio(-3, 2);
        assert!(gen2d_cleared_residual(&da, &a, &b).is_zero());
        assert!(gen2d_cleared_residual(&db, &a, &b).is_zero());
        // Hand expansion: da = -10 q1^6 + 30 q1^4 q2^2.
        assert_eq!(da.coefficient(&[6, 0]), rat(-10));
        assert_eq!(da.coefficient(&[4, 2]), rat(30));
        assert_eq!(da.coefficient(&[2, 4]), rat(0));
    }

    #[test]
    fn nondegenerate_p2_even_solves_cleared_pde() {
        for k in 2..=6u32 {
            for (a, b) in [(rat(0), rat(0)), (rat(1), rat(0)), (ratio(-1, 4), ratio(-1, 4))] {
                let fam = family_p2_even(k, a.clone(), b.clone()).unwrap();
                assert!(!fam.degenerate, "unexpected degeneracy at k={k}");
                assert!(gen2d_cleared_residual(&fam.poly, &a, &b).is_zero());
            }
        }
    }

    #[test]
    fn odd_family_fifth_degree_display() {
        let f10 = family_p2_odd(2, rat(1), rat(0)).unwrap();
        assert_eq!(f10.poly.coefficient(&[5, 0]), rat(1));
        assert_eq!(f10.poly.coefficient(&[3, 2]), rat(-5));
        assert_eq!(f10.poly.num_terms(), 2);
        let f01 = family_p2_odd(2, rat(0), rat(1)).unwrap();
        assert_eq!(f01.poly.coefficient(&[2, 3]), rat(-5));
        assert_eq!(f01.poly.coefficient(&[0, 5]), rat(1));
        let f11 = family_p2_odd(2, rat(1), rat(1)).unwrap();
        assert_eq!(f11.poly.eval_f64(&[1.0, 1.0]), -8.0);
        assert_eq!(f11.locked_ab, (rat(-1), rat(-1)));
    }

    #[test]
    fn odd_family_solves_cleared_pde_at_locked_parameters() {
        for k in 2..=5u32 {
            let fam = family_p2_odd(k, rat(1), ratio(2, 3)).unwrap();
            let (a, b) = fam.locked_ab.clone();
            assert!(gen2d_cleared_residual(&fam.poly, &a, &b).is_zero());
        }
    }

    #[test]
    fn pd4_pd6_spherical_at_ctilde_two() {
        let r2 = HomogeneousPolynomial::norm_squared(3);
        let pd4 = family_pd4(3, &rat(2)).unwrap();
        assert_eq!(pd4, r2.mul(&r2));
        let pd6 = family_pd6(3, &rat(2)).unwrap();
        assert_eq!(pd6, r2.mul(&r2).mul(&r2));
    }

    #[test]
    fn pd6_locked_coefficients() {
        let pd6 = family_pd6(3, &rat(1)).unwrap();
        assert_eq!(pd6.coefficient(&[4, 2, 0]), ratio(15, 11));
        assert_eq!(pd6.coefficient(&[2, 2, 2]), ratio(75, 44));
        assert!(family_pd6(3, &rat(12)).is_err());
        assert!(family_pd6(3, &rat(-3)).is_err());
    }

    #[test]
    fn p3_2n_reduces_to_pd4_and_pd6() {
        for c in [ratio(1, 2), rat(1), rat(2), rat(3), rat(5)] {
            assert_eq!(family_p3_2n(2, &c).unwrap(), family_pd4(3, &c).unwrap());
            assert_eq!(family_p3_2n(3, &c).unwrap(), family_pd6(3, &c).unwrap());
        }
    }

    #[test]
    fn p3_2n_chi_values() {
        // n=2: chi_1 = 3c, chi_2 = 3; n=3: chi_1 = 5c, chi_2 = c+3,
        // chi_3 = (12-c)/3.
        let c = ratio(7, 5);
        assert_eq!(chi(2, 1, &c), rat(3) * &c);
        assert_eq!(chi(2, 2, &c), rat(3));
        assert_eq!(chi(3, 1, &c), rat(5) * &c);
        assert_eq!(chi(3, 2, &c), &c + rat(3));
        assert_eq!(chi(3, 3, &c), (rat(12) - &c) / rat(3));
    }

    #[test]
    fn p3_2n_symmetric_and_normalized() {
        let p = family_p3_2n(5, &ratio(5, 3)).unwrap();
        assert_eq!(p.coefficient(&[10, 0, 0]), rat(1));
        for perm in [[0usize, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            assert_eq!(p.permute_vars(&perm), p);
        }
    }

    #[test]
    fn p3_2n_rejects_vanishing_chi() {
        // chi_2(n=4) = (c(10-6) + 6)/2 = 2c + 3 vanishes at c = -3/2.
        assert!(family_p3_2n(4, &ratio(-3, 2)).is_err());
    }

    #[test]
    fn commutator_poly_self_is_zero() {
        let p = family_pd6(3, &rat(3)).unwrap();
        assert!(commutator_poly(&p, &p).is_zero());
    }

    #[test]
    fn commutator_poly_hand_case() {
        // C(q1^2 q2^2, q1^4) entry (1,2) = -48 q1^3 q2.
        let p = HomogeneousPolynomial::monomial(2, &[2, 2], Rat::one());
        let r = HomogeneousPolynomial::monomial(2, &[4, 0], Rat::one());
        let c = commutator_poly(&p, &r);
        assert!(!c.is_zero());
        let c12 = c.get(0, 1);
        assert_eq!(c12.coefficient(&[3, 1]), rat(-48));
        assert_eq!(c12.num_terms(), 1);
        // Antisymmetry as a matrix of polynomials.
        assert_eq!(c.get(1, 0).clone(), c12.scale(&rat(-1)));
        assert!(c.get(0, 0).is_zero() && c.get(1, 1).is_zero());
    }

    #[test]
    fn pd6_pd4_commute_exactly() {
        for c in [ratio(1, 2), rat(0), rat(1), rat(2), rat(5), rat(11)] {
            let p4 = family_pd4(3, &c).unwrap();
            let p6 = family_pd6(3, &c).unwrap();
            assert!(commutator_poly(&p6, &p4).is_zero(), "ctilde = {c}");
        }
    }

    #[test]
    fn family_hessians_codiagonalizable_at_a_point() {
        // ctilde = 3 locks atilde = 45/9 = 5 and btilde = 675/54 = 25/2.
        let c = rat(3);
        let p6 = family_pd6(3, &c).unwrap();
        assert_eq!(p6.coefficient(&[4, 2, 0]), rat(5));
        assert_eq!(p6.coefficient(&[2, 2, 2]), ratio(25, 2));
        let p4 = family_pd4(3, &c).unwrap();
        let q = [1.0, 1.0, 2.0];
        let rep =
            crate::symmat::codiagonalizable(&p4.hessian_at(&q), &p6.hessian_at(&q), 1e-10).unwrap();
        assert!(rep.codiagonalizable, "defect {}", rep.defect);

        // Contrast: the hand-expanded non-commuting pair.
        let a = HomogeneousPolynomial::monomial(2, &[2, 2], Rat::one());
        let b = HomogeneousPolynomial::monomial(2, &[4, 0], Rat::one());
        let qq = [1.0, 1.0];
        let rep = crate::symmat::codiagonalizable(&a.hessian_at(&qq), &b.hessian_at(&qq), 1e-10)
            .unwrap();
        assert!(!rep.codiagonalizable);
        assert!(rep.defect > 0.1);
    }

    #[test]
    fn restriction_to_plane_matches_2d_family() {
        for c in [rat(1), rat(3), ratio(7, 2)] {
            // a = b = (6 - c)/(2c)
            let ab = (rat(6) - &c) / (rat(2) * &c);
            let p4r = family_pd4(4, &c).unwrap().restrict(2);
            let p4_2d = family_p2_even(2, ab.clone(), ab.clone()).unwrap().poly;
            assert!(p4r.proportionality(&p4_2d).is_some(), "pd4 restriction, c={c}");
            let p6r = family_pd6(4, &c).unwrap().restrict(2);
            let p6_2d = family_p2_even(3, ab.clone(), ab).unwrap().poly;
            assert!(p6r.proportionality(&p6_2d).is_some(), "pd6 restriction, c={c}");
        }
    }

    #[test]
    fn convexity_verdicts() {
        let fam = family_p2_even(2, rat(0), rat(0)).unwrap();
        let hint = ConvexityHint::P2Even { k: 2, a: rat(0), b: rat(0) };
        let rep = convexity_range_check(&fam.poly, &hint, 512);
        assert_eq!(rep.verdict, ConvexityVerdict::Convex);

        let p = family_pd4(3, &rat(13)).unwrap();
        let rep = convexity_range_check(&p, &ConvexityHint::Pd46 { ctilde: rat(13) }, 4096);
        assert_eq!(rep.verdict, ConvexityVerdict::NotConvex);
        assert!(rep.witness.is_some());
        let w = rep.witness.unwrap();
        let frame = eigenframe(&p.hessian_at(&w));
        assert!(frame.eigenvalues[0] < 0.0);

        let odd = family_p2_odd(2, rat(1), rat(0)).unwrap();
        let rep = convexity_range_check(&odd.poly, &ConvexityHint::P2Odd, 512);
        assert_eq!(rep.verdict, ConvexityVerdict::NotConvex);
    }

    #[test]
    fn poly_json_round_trip_bit_exact() {
        let p = family_pd6(3, &ratio(22, 7)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: HomogeneousPolynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(s.contains("\"coef\""));
    }

    #[test]
    fn rational_string_round_trip() {
        for r in [ratio(-22, 7), rat(0), rat(5), ratio(1, 3)] {
            assert_eq!(rat_from_string(&rat_to_string(&r)).unwrap(), r);
        }
        assert_eq!(rat_from_string("7").unwrap(), rat(7));
        assert!(rat_from_string("1/0").is_err());
        assert!(rat_from_string("x/2").is_err());
    }
}
