//! Property tests for the algebraic invariants the library relies on.

use num_traits::Zero;
use omniflow::polynomials::{commutator_poly, ratio, HomogeneousPolynomial, MultiIndex, Rat};
use omniflow::symmat::{eigenframe, gamma_invariant, Gamma, SymmetricMatrix};
use proptest::prelude::*;

fn arb_symmetric(dim: usize) -> impl Strategy<Value = SymmetricMatrix> {
    let len = dim * (dim + 1) / 2;
    proptest::collection::vec(-1.0f64..1.0, len)
        .prop_map(move |upper| SymmetricMatrix::from_upper(dim, upper).unwrap())
}

/// Random homogeneous polynomial with exact rational coefficients.
fn arb_poly(dim: usize, degree: u32) -> impl Strategy<Value = HomogeneousPolynomial> {
    let exps = enumerate_exponents(dim, degree);
    let n = exps.len();
    proptest::collection::vec((-40i64..=40, 1i64..=8), n).prop_map(move |coefs| {
        let mut p = HomogeneousPolynomial::zero(dim, degree);
        for (e, (num, den)) in exps.iter().zip(coefs) {
            if num != 0 {
                p.add_term(MultiIndex(e.clone()), ratio(num, den));
            }
        }
        p
    })
}

fn enumerate_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn go(dim: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if dim == 1 {
            prefix.push(degree);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in 0..=degree {
            prefix.push(e);
            go(dim - 1, degree - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(dim, degree, &mut Vec::new(), &mut out);
    out
}

fn gamma_val(h: &SymmetricMatrix, k: usize, m: usize, n: usize) -> Option<f64> {
    gamma_invariant(h, k, m, n).ok()?.value()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The invariants depend only on the eigendirections, so spectral
    /// shifts and positive rescalings leave them unchanged.
    #[test]
    fn gamma_invariant_under_shift_and_scale(
        h in arb_symmetric(3),
        shift in -2.0f64..2.0,
        scale in 0.1f64..5.0,
    ) {
        let frame = eigenframe(&h);
        prop_assume!(frame.distinct);
        for (k, m, n) in [(1, 2, 1), (2, 2, 1), (3, 1, 3)] {
            let Some(base) = gamma_val(&h, k, m, n) else { continue };
            let shifted = h.add_scaled_identity(shift);
            let scaled = h.scale(scale);
            for other in [shifted, scaled] {
                if let Some(v) = gamma_val(&other, k, m, n) {
                    prop_assert!(
                        (v - base).abs() <= 1e-9 * base.abs().max(1.0),
                        "gamma({k},{m},{n}) moved: {base} -> {v}"
                    );
                }
            }
        }
    }

    /// gamma(d,d)_{mn} gamma(d,d)_{nm} = 1 and the k-duality
    /// gamma(d,k)_{mn} = gamma(d,d)_{mn} gamma(d,d-k)_{nm}.
    #[test]
    fn gamma_product_and_duality(h in arb_symmetric(3)) {
        let frame = eigenframe(&h);
        prop_assume!(frame.distinct);
        for m in 1..=3usize {
            for n in 1..=3usize {
                if m == n { continue }
                let (Some(gd_mn), Some(gd_nm)) =
                    (gamma_val(&h, 3, m, n), gamma_val(&h, 3, n, m)) else { continue };
                prop_assert!((gd_mn * gd_nm - 1.0).abs() <= 1e-9 * (gd_mn * gd_nm).abs().max(1.0));
                for k in 1..3usize {
                    let (Some(gk), Some(gdk)) =
                        (gamma_val(&h, k, m, n), gamma_val(&h, 3 - k, n, m)) else { continue };
                    let rhs = gd_mn * gdk;
                    prop_assert!((gk - rhs).abs() <= 1e-9 * gk.abs().max(rhs.abs()).max(1.0));
                }
            }
        }
    }

    /// Planar degenerate invariant: gamma(2,2)_{mn} = -1 whenever defined.
    #[test]
    fn planar_top_invariant_is_minus_one(h in arb_symmetric(2)) {
        prop_assume!(eigenframe(&h).distinct);
        if let Some(v) = gamma_val(&h, 2, 2, 1) {
            prop_assert!((v + 1.0).abs() < 1e-12);
        }
    }

    /// Euler identity q . grad p = deg(p) p, exact in rational arithmetic.
    #[test]
    fn euler_identity_exact(
        p in arb_poly(3, 4),
        nums in proptest::collection::vec((-9i64..=9, 1i64..=7), 3),
    ) {
        let q: Vec<Rat> = nums.into_iter().map(|(a, b)| ratio(a, b)).collect();
        let grad = p.gradient_rat(&q);
        let dot = q.iter().zip(&grad).map(|(qi, gi)| qi * gi).fold(Rat::zero(), |a, x| a + x);
        prop_assert_eq!(dot, omniflow::polynomials::rat(p.degree() as i64) * p.eval_rat(&q));
    }

    /// The symbolic commutator is antisymmetric and vanishes on the
    /// diagonal, exactly.
    #[test]
    fn commutator_poly_antisymmetric(p in arb_poly(2, 4), r in arb_poly(2, 3)) {
        let c = commutator_poly(&p, &r);
        let c_rev = commutator_poly(&r, &p);
        for i in 0..2 {
            prop_assert!(c.get(i, i).is_zero());
            for j in 0..2 {
                prop_assert_eq!(c.get(i, j).clone(), c_rev.get(j, i).clone());
                prop_assert_eq!(
                    c.get(i, j).clone(),
                    c.get(j, i).scale(&omniflow::polynomials::rat(-1))
                );
            }
        }
        prop_assert!(commutator_poly(&p, &p).is_zero());
    }

    /// Polynomial JSON round trip is bit exact.
    #[test]
    fn poly_json_round_trip(p in arb_poly(3, 5)) {
        let text = serde_json::to_string(&p).unwrap();
        let back: HomogeneousPolynomial = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, p);
    }

    /// Gradients of every family member match central finite differences.
    #[test]
    fn gradient_matches_central_differences(
        p in arb_poly(2, 4),
        qx in 0.5f64..2.0,
        qy in 0.5f64..2.0,
    ) {
        let q = [qx, qy];
        let g = p.gradient_f64(&q);
        for v in 0..2 {
            let h = 1e-6 * q[v].abs().max(1.0);
            let mut qp = q; qp[v] += h;
            let mut qm = q; qm[v] -= h;
            let fd = (p.eval_f64(&qp) - p.eval_f64(&qm)) / (2.0 * h);
            let scale = g[v].abs().max(1.0);
            prop_assert!((g[v] - fd).abs() <= 1e-6 * scale, "grad {} vs fd {}", g[v], fd);
        }
    }
}
