//! Deterministic low-discrepancy point sets for verification sweeps.
//!
//! Halton sequences with the first primes as bases; the seed acts as a start
//! offset so distinct runs are reproducible from their recorded seed.

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical-inverse of `index` in the given base, in (0, 1).
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut result = 0.0;
    let mut fraction = inv;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction *= inv;
    }
    result
}

/// `n` Halton points in the unit cube [0,1)^dim, starting at offset
/// `seed + 1` (index 0 is degenerate and skipped).
pub fn unit_cube_points(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "halton bases exhausted at dim {dim}");
    (0..n)
        .map(|i| {
            let idx = seed + 1 + i as u64;
            (0..dim).map(|d| radical_inverse(idx, PRIMES[d])).collect()
        })
        .collect()
}

/// `n` Halton points in the axis-aligned box [lo, hi]^dim (per-axis bounds).
pub fn box_points(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = lo.len();
    assert_eq!(dim, hi.len());
    unit_cube_points(dim, n, seed)
        .into_iter()
        .map(|u| u.iter().enumerate().map(|(d, ud)| lo[d] + ud * (hi[d] - lo[d])).collect())
        .collect()
}

/// `n` quasi-uniform directions on the unit sphere in R^dim.
///
/// d=2 and d=3 use the exact area-preserving maps from the Halton square;
/// higher dimensions fall back to normalized Gaussian draws from a seeded
/// generator (still deterministic, just not low-discrepancy).
pub fn sphere_points(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    match dim {
        2 => unit_cube_points(1, n, seed)
            .into_iter()
            .map(|u| {
                let t = 2.0 * std::f64::consts::PI * u[0];
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => unit_cube_points(2, n, seed)
            .into_iter()
            .map(|u| {
                let z = 2.0 * u[0] - 1.0;
                let phi = 2.0 * std::f64::consts::PI * u[1];
                let r = (1.0 - z * z).max(0.0).sqrt();
                vec![r * phi.cos(), r * phi.sin(), z]
            })
            .collect(),
        _ => {
            use rand::prelude::*;
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
            (0..n)
                .map(|_| {
                    loop {
                        let v: Vec<f64> = (0..dim)
                            .map(|_| {
                                // Box-Muller from two uniforms.
                                let u1: f64 = rng.gen_range(1e-12..1.0);
                                let u2: f64 = rng.gen_range(0.0..1.0);
                                (-2.0 * u1.ln()).sqrt()
                                    * (2.0 * std::f64::consts::PI * u2).cos()
                            })
                            .collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 1e-6 {
                            return v.into_iter().map(|x| x / norm).collect();
                        }
                    }
                })
                .collect()
        }
    }
}
