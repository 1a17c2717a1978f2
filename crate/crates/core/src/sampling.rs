//! Seeded samplers for Haar unitaries, GUE matrices and permutations, and
//! the statistical check of the eigenvalue/eigenvector factorization of
//! Hermitian matrices.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, HermitianMatrix, UnitaryMatrix};
use crate::rng::{par_indexed, RngStream};
use crate::stats;

/// Compact group to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    U,
    SU,
    /// Maximal torus of diagonal unitaries.
    T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    /// Chi-square p-value of 2x2 eigenvalue pairs against the analytic
    /// density. Only available for `N = 2`.
    pub vandermonde_gof_pvalue: Option<f64>,
    pub eigenvector_invariance_pvalue: f64,
    pub sample_count: usize,
}

fn check_dim(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("N", "dimension must be at least 1"));
    }
    Ok(())
}

/// GUE draw normalized so that `E tr_N(A^2) = 1`.
pub fn gue(n: usize, stream: &RngStream) -> Result<HermitianMatrix> {
    check_dim(n)?;
    let mut rng = stream.rng();
    Ok(gue_from(n, &mut rng))
}

pub(crate) fn gue_from<R: Rng>(n: usize, rng: &mut R) -> HermitianMatrix {
    let sd_diag = (1.0 / n as f64).sqrt();
    let sd_off = (0.5 / n as f64).sqrt();
    let mut m = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        m[(j, j)] = c64::new(d * sd_diag, 0.0);
        for k in (j + 1)..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = c64::new(re * sd_off, im * sd_off);
            m[(j, k)] = z;
            m[(k, j)] = z.conj();
        }
    }
    HermitianMatrix::from_raw_symmetrize(m)
}

/// Haar-distributed element of the requested group.
pub fn haar_unitary(n: usize, group: Group, stream: &RngStream) -> Result<UnitaryMatrix> {
    check_dim(n)?;
    let mut rng = stream.rng();
    haar_from(n, group, &mut rng)
}

pub(crate) fn haar_from<R: Rng>(n: usize, group: Group, rng: &mut R) -> Result<UnitaryMatrix> {
    linalg::ensure_sequential_kernels();
    if group == Group::T {
        let theta: Vec<f64> = (0..n)
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();
        return Ok(UnitaryMatrix::from_phases(&theta));
    }
    let g = Mat::<c64>::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64::new(re, im)
    });
    let qr = g.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    let phases: Vec<c64> = (0..n)
        .map(|j| {
            let d = r[(j, j)];
            let a = d.norm();
            if a == 0.0 {
                c64::new(1.0, 0.0)
            } else {
                d / a
            }
        })
        .collect();
    let mut u = Mat::from_fn(n, n, |j, k| q[(j, k)] * phases[k]);
    if group == Group::SU {
        let det = u.determinant();
        let root = c64::from_polar(1.0, -det.arg() / n as f64);
        u = Mat::from_fn(n, n, |j, k| u[(j, k)] * root);
    }
    let res = linalg::unitarity_residual(&u);
    if res > crate::config::TOLERANCES.unitary {
        return Err(Error::Numerical(format!(
            "Haar sample lost unitarity: residual {res:.3e}"
        )));
    }
    Ok(UnitaryMatrix::new_unchecked(u))
}

/// Uniform permutation of `0..n` (Fisher-Yates).
pub fn uniform_permutation(n: usize, stream: &RngStream) -> Result<Vec<usize>> {
    check_dim(n)?;
    let mut rng = stream.rng();
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    Ok(p)
}

/// Torus-invariant statistic of an eigenvector frame: `Σ_j |U_jj|^2`.
fn frame_statistic(u: &UnitaryMatrix) -> f64 {
    let m = u.as_mat();
    (0..u.dim()).map(|j| m[(j, j)].norm_sqr()).sum()
}

/// Statistical check that GUE factors into Haar eigenvectors and
/// Vandermonde-weighted ordered eigenvalues.
///
/// Stream layout: sample `k` of the GUE arm uses `substream(2k)`, the Haar
/// comparison arm uses `substream(2k + 1)`.
pub fn check_factorization(n: usize, samples: usize, stream: &RngStream) -> Result<FactorizationReport> {
    check_dim(n)?;
    if samples < 1000 {
        return Err(Error::InsufficientSamples {
            got: samples,
            need: 1000,
        });
    }
    let draws: Vec<Result<(Vec<f64>, f64, f64)>> = par_indexed(samples, |k| {
        let a = gue(n, &stream.substream(2 * k as u64))?;
        let (d, u) = linalg::eigh(&a)?;
        let v = haar_unitary(n, Group::U, &stream.substream(2 * k as u64 + 1))?;
        Ok((d.values().to_vec(), frame_statistic(&u), frame_statistic(&v)))
    });
    let mut spectra = Vec::with_capacity(samples);
    let mut eig_stat = Vec::with_capacity(samples);
    let mut haar_stat = Vec::with_capacity(samples);
    for d in draws {
        let (s, a, b) = d?;
        spectra.push(s);
        eig_stat.push(a);
        haar_stat.push(b);
    }
    let gof = if n == 2 {
        Some(two_by_two_gof(&spectra)?)
    } else {
        None
    };
    let (_, p_inv) = stats::ks_two_sample(&eig_stat, &haar_stat)?;
    Ok(FactorizationReport {
        vandermonde_gof_pvalue: gof,
        eigenvector_invariance_pvalue: p_inv,
        sample_count: samples,
    })
}

const GOF_BINS: usize = 5;

/// Chi-square test of ordered 2x2 GUE eigenvalue pairs.
///
/// With `N = 2` the density is proportional to `(x1-x2)^2 exp(-(x1^2+x2^2))`.
/// In the rotated coordinates `s = (x1+x2)/√2`, `d = (x1-x2)/√2` it factors
/// into `s ~ N(0, 1/2)` and `2d^2 ~ χ²(3)`, so equiprobable cells are
/// products of marginal quantile bins.
fn two_by_two_gof(spectra: &[Vec<f64>]) -> Result<f64> {
    let normal = Normal::new(0.0, 0.5_f64.sqrt()).map_err(|e| Error::Internal(e.to_string()))?;
    let chi3 = ChiSquared::new(3.0).map_err(|e| Error::Internal(e.to_string()))?;
    let mut counts = [[0u64; GOF_BINS]; GOF_BINS];
    for x in spectra {
        let s = (x[0] + x[1]) / std::f64::consts::SQRT_2;
        let d = (x[0] - x[1]) / std::f64::consts::SQRT_2;
        let us = normal.cdf(s);
        let ud = chi3.cdf(2.0 * d * d);
        let bs = ((us * GOF_BINS as f64) as usize).min(GOF_BINS - 1);
        let bd = ((ud * GOF_BINS as f64) as usize).min(GOF_BINS - 1);
        counts[bs][bd] += 1;
    }
    let expected = spectra.len() as f64 / (GOF_BINS * GOF_BINS) as f64;
    let stat: f64 = counts
        .iter()
        .flatten()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    stats::chi_square_sf(stat, (GOF_BINS * GOF_BINS - 1) as f64)
}
