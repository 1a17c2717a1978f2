mod common;

use orbilab::linalg::{self, c64};
use orbilab::rng::RngStream;
use orbilab::sampling::*;
use orbilab::stats;

#[test]
fn mean_squared_trace_is_one() {
    // E|Tr U|² = 1 on U(N) for N ≥ 1
    let n = 6;
    let draws = 4000;
    let lib: Vec<f64> = (0..draws)
        .map(|k| linalg::trace(haar_unitary(n, Group::U, &RngStream::new(7, k)).unwrap().as_mat()).norm_sqr())
        .collect();
    let mut rng = RngStream::new(8, 0).rng();
    let gs: Vec<f64> = (0..draws)
        .map(|_| common::trace(&common::gram_schmidt_haar(n, &mut rng)).norm_sqr())
        .collect();
    for xs in [&lib, &gs] {
        let (m, se) = stats::mean_se(xs);
        assert!((m - 1.0).abs() < 4.0 * se, "{m} ± {se}");
    }
    // same law as the independent sampler
    let (_, p) = stats::ks_two_sample(&lib, &gs).unwrap();
    assert!(p > 0.001);
}

#[test]
fn su_has_unit_determinant() {
    for k in 0..20 {
        let u = haar_unitary(5, Group::SU, &RngStream::new(9, k)).unwrap();
        let det: c64 = u.as_mat().determinant();
        assert!((det - c64::new(1.0, 0.0)).norm() < 1e-10);
    }
}

#[test]
fn torus_draws_are_diagonal() {
    let u = haar_unitary(4, Group::T, &RngStream::new(10, 0)).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert_eq!(u.as_mat()[(i, j)], c64::new(0.0, 0.0));
            }
        }
    }
}

#[test]
fn gue_second_moment() {
    // E tr_N(H²) = 1 under the sampling normalization
    let xs: Vec<f64> = (0..2000)
        .map(|k| {
            let h = gue(8, &RngStream::new(11, k)).unwrap();
            linalg::tr_n(&linalg::mul(h.as_mat(), h.as_mat())).re
        })
        .collect();
    let (m, se) = stats::mean_se(&xs);
    assert!((m - 1.0).abs() < 4.0 * se);
}

#[test]
fn permutations_are_uniform() {
    let n = 3;
    let draws = 6000;
    let mut counts = std::collections::HashMap::new();
    for k in 0..draws {
        *counts.entry(uniform_permutation(n, &RngStream::new(12, k)).unwrap()).or_insert(0u64) += 1;
    }
    assert_eq!(counts.len(), 6);
    let e = draws as f64 / 6.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(stats::chi_square_sf(chi2, 5.0).unwrap() > 0.001);
}

#[test]
fn factorization_requires_samples() {
    assert!(check_factorization(2, 999, &RngStream::new(1, 0)).is_err());
}

#[test]
fn factorization_small_run() {
    let r = check_factorization(2, 5000, &RngStream::new(13, 0)).unwrap();
    assert!(r.vandermonde_gof_pvalue.unwrap() > 0.001);
    assert!(r.eigenvector_invariance_pvalue > 0.001);
    let r = check_factorization(3, 2000, &RngStream::new(13, 1)).unwrap();
    assert!(r.vandermonde_gof_pvalue.is_none());
}
