//! Permutation microstates for classical random variables.
//!
//! With the first permutation fixed to the identity, the second permutation
//! of the sorted type vectors determines a contingency table. Counting the
//! permutations behind each table gives exact values of the symmetric-group
//! microstate entropy, which converges to minus the mutual information.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::microstates::largest_remainder;
use crate::rng::{par_indexed, RngStream};
use crate::sampling::uniform_permutation;
use crate::stats::{self, Interval, Z95};

pub const JOINT_SCHEMA: &str = "joint/1";

/// Finitely supported joint law of two real variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointDocument", into = "JointDocument")]
pub struct JointDistribution {
    support_x: Vec<f64>,
    support_y: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JointDocument {
    schema: String,
    support_x: Vec<f64>,
    support_y: Vec<f64>,
    probs: Vec<Vec<f64>>,
}

impl TryFrom<JointDocument> for JointDistribution {
    type Error = Error;

    fn try_from(d: JointDocument) -> Result<Self> {
        if d.schema != JOINT_SCHEMA {
            return Err(invalid("schema", format!("expected {JOINT_SCHEMA}, got {}", d.schema)));
        }
        JointDistribution::new(d.support_x, d.support_y, d.probs)
    }
}

impl From<JointDistribution> for JointDocument {
    fn from(j: JointDistribution) -> Self {
        JointDocument {
            schema: JOINT_SCHEMA.into(),
            support_x: j.support_x,
            support_y: j.support_y,
            probs: j.probs,
        }
    }
}

impl JointDistribution {
    pub fn new(support_x: Vec<f64>, support_y: Vec<f64>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if support_x.is_empty() || support_y.is_empty() {
            return Err(invalid("support", "supports must be non-empty"));
        }
        if probs.len() != support_x.len() || probs.iter().any(|r| r.len() != support_y.len()) {
            return Err(invalid("probs", "probability matrix shape must match the supports"));
        }
        if probs.iter().flatten().any(|p| !(*p >= 0.0)) {
            return Err(invalid("probs", "probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("probs", format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self {
            support_x,
            support_y,
            probs,
        })
    }

    /// Product of two marginals.
    pub fn independent(support_x: Vec<f64>, px: &[f64], support_y: Vec<f64>, py: &[f64]) -> Result<Self> {
        let probs = px.iter().map(|a| py.iter().map(|b| a * b).collect()).collect();
        Self::new(support_x, support_y, probs)
    }

    /// `X = Y` with the given law.
    pub fn diagonal(support: Vec<f64>, p: &[f64]) -> Result<Self> {
        let k = p.len();
        let probs = (0..k)
            .map(|a| (0..k).map(|b| if a == b { p[a] } else { 0.0 }).collect())
            .collect();
        Self::new(support.clone(), support, probs)
    }

    pub fn support_x(&self) -> &[f64] {
        &self.support_x
    }

    pub fn support_y(&self) -> &[f64] {
        &self.support_y
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.support_y.len())
            .map(|b| self.probs.iter().map(|r| r[b]).sum())
            .collect()
    }

    /// `E[X^p Y^q]`.
    pub fn mixed_moment(&self, p: u32, q: u32) -> f64 {
        let mut s = 0.0;
        for (a, row) in self.probs.iter().enumerate() {
            for (b, pr) in row.iter().enumerate() {
                s += pr * self.support_x[a].powi(p as i32) * self.support_y[b].powi(q as i32);
            }
        }
        s
    }

    /// Joint type at size `N` by largest-remainder rounding of `N p_ab`.
    pub fn target_type(&self, n: usize) -> ContingencyTable {
        let cols = self.support_y.len();
        let flat: Vec<f64> = self.probs.iter().flatten().copied().collect();
        let counts = largest_remainder(&flat, n);
        ContingencyTable {
            counts: counts
                .chunks(cols)
                .map(|c| c.iter().map(|&x| x as u64).collect())
                .collect(),
        }
    }
}

/// Table of joint counts `n_ab`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() || counts[0].is_empty() || counts.iter().any(|r| r.len() != counts[0].len()) {
            return Err(invalid("counts", "table must be a non-empty rectangle"));
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.counts[0].len())
            .map(|b| self.counts.iter().map(|r| r[b]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeCount {
    pub count: BigUint,
    /// Set when the table's margins disagree with the declared types.
    pub marginal_mismatch: bool,
}

fn factorial(n: u64) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

/// Number of second permutations `σ` for which the sorted type vectors
/// `(x_i, y_σ(i))` realize table `t`:
/// `Π_a multinomial(n_a·; n_a1, …) · Π_b n_·b!`.
pub fn exact_joint_type_count(t: &ContingencyTable, x_type: &[u64], y_type: &[u64]) -> TypeCount {
    if t.row_sums() != x_type || t.col_sums() != y_type {
        return TypeCount {
            count: BigUint::zero(),
            marginal_mismatch: true,
        };
    }
    let mut count = BigUint::one();
    for row in &t.counts {
        let n: u64 = row.iter().sum();
        let mut m = factorial(n);
        for &c in row {
            m /= factorial(c);
        }
        count *= m;
    }
    for &c in y_type {
        count *= factorial(c);
    }
    TypeCount {
        count,
        marginal_mismatch: false,
    }
}

/// All non-negative integer tables with the given margins.
pub fn feasible_tables(x_type: &[u64], y_type: &[u64]) -> Vec<ContingencyTable> {
    fn fill(
        a: usize,
        b: usize,
        rows: &mut Vec<u64>,
        cols: &mut Vec<u64>,
        cur: &mut Vec<Vec<u64>>,
        out: &mut Vec<ContingencyTable>,
    ) {
        let (r, c) = (rows.len(), cols.len());
        if a == r {
            if cols.iter().all(|&x| x == 0) {
                out.push(ContingencyTable { counts: cur.clone() });
            }
            return;
        }
        if b == c - 1 {
            // last column takes the rest of the row
            let v = rows[a];
            if v <= cols[b] {
                cur[a][b] = v;
                cols[b] -= v;
                rows[a] = 0;
                fill(a + 1, 0, rows, cols, cur, out);
                rows[a] = v;
                cols[b] += v;
                cur[a][b] = 0;
            }
            return;
        }
        let hi = rows[a].min(cols[b]);
        for v in 0..=hi {
            cur[a][b] = v;
            rows[a] -= v;
            cols[b] -= v;
            fill(a, b + 1, rows, cols, cur, out);
            rows[a] += v;
            cols[b] += v;
        }
        cur[a][b] = 0;
    }
    let mut out = Vec::new();
    if x_type.iter().sum::<u64>() != y_type.iter().sum::<u64>() || x_type.is_empty() || y_type.is_empty() {
        return out;
    }
    let mut rows = x_type.to_vec();
    let mut cols = y_type.to_vec();
    let mut cur = vec![vec![0u64; y_type.len()]; x_type.len()];
    fill(0, 0, &mut rows, &mut cols, &mut cur, &mut out);
    out
}

/// Natural log of a positive big integer.
fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::INFINITY);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsymExact {
    /// `(1/N) log probability`; `-inf` when no table is within tolerance.
    pub value: f64,
    /// Exact probability `Σ count / N!`.
    pub probability: BigRational,
    pub tables_within: usize,
    pub no_feasible_table: bool,
}

/// Exact symmetric-group microstate entropy of a two-variable joint law.
///
/// Tables are admitted when their empirical joint type lies within total
/// variation `delta` of the rounded target type. `delta = 0` admits only
/// the target type.
pub fn h_sym_exact(joint: &JointDistribution, n: usize, delta: f64) -> Result<HsymExact> {
    if n == 0 {
        return Err(invalid("N", "size must be at least 1"));
    }
    if !(delta >= 0.0) {
        return Err(invalid("delta", "tolerance must be non-negative"));
    }
    let target = joint.target_type(n);
    let x_type = target.row_sums();
    let y_type = target.col_sums();
    let nf = n as f64;
    let mut total = BigUint::zero();
    let mut within = 0usize;
    for t in feasible_tables(&x_type, &y_type) {
        let tv: f64 = t
            .counts
            .iter()
            .flatten()
            .zip(target.counts.iter().flatten())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / (2.0 * nf);
        if tv <= delta + 1e-12 {
            total += exact_joint_type_count(&t, &x_type, &y_type).count;
            within += 1;
        }
    }
    let nfact = factorial(n as u64);
    let value = if total.is_zero() {
        f64::NEG_INFINITY
    } else {
        (ln_biguint(&total) - ln_biguint(&nfact)) / nf
    };
    Ok(HsymExact {
        value,
        probability: BigRational::new(total.into(), nfact.into()),
        tables_within: within,
        no_feasible_table: within == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsymEstimate {
    pub samples: u64,
    pub hits: u64,
    pub hit_fraction: f64,
    /// `(1/N) log(hit_fraction)`; `-inf` after zero hits.
    pub value: f64,
    /// Delta-method standard error of `value`.
    pub std_error: f64,
    /// Wilson interval mapped through `(1/N) log`.
    pub interval: Interval,
    pub zero_hits: bool,
    /// `(1/N) log` of the one-sided upper bound (rule of three after zero
    /// hits).
    pub upper_bound: f64,
}

/// Sorted (non-increasing) type vector of a support with counts.
fn type_vector(support: &[f64], counts: &[u64]) -> Vec<f64> {
    let mut v: Vec<f64> = support
        .iter()
        .zip(counts)
        .flat_map(|(&s, &c)| std::iter::repeat_n(s, c as usize))
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Monte Carlo estimate of the microstate entropy with moment windows
/// `|(1/N) Σ x_i^p y_σ(i)^q − E[X^p Y^q]| < δ` for `1 ≤ p + q ≤ m`.
///
/// Sample `k` uses `stream.substream(k)` for its permutation.
pub fn h_sym_mc(
    joint: &JointDistribution,
    n: usize,
    m: u32,
    delta: f64,
    samples: usize,
    stream: &RngStream,
) -> Result<HsymEstimate> {
    if samples < 1000 {
        return Err(Error::InsufficientSamples {
            got: samples,
            need: 1000,
        });
    }
    if n == 0 || m == 0 {
        return Err(invalid("N", "size and degree must be at least 1"));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta", "tolerance must be positive"));
    }
    let target = joint.target_type(n);
    let xs = type_vector(joint.support_x(), &target.row_sums());
    let ys = type_vector(joint.support_y(), &target.col_sums());
    let exps: Vec<(u32, u32)> = (0..=m)
        .flat_map(|p| (0..=(m - p)).map(move |q| (p, q)))
        .filter(|&(p, q)| p + q >= 1)
        .collect();
    let targets: Vec<f64> = exps.iter().map(|&(p, q)| joint.mixed_moment(p, q)).collect();
    let nf = n as f64;
    let outcomes: Vec<Result<bool>> = par_indexed(samples, |k| {
        let sigma = uniform_permutation(n, &stream.substream(k as u64))?;
        for (&(p, q), t) in exps.iter().zip(&targets) {
            let s: f64 = (0..n)
                .map(|i| xs[i].powi(p as i32) * ys[sigma[i]].powi(q as i32))
                .sum::<f64>()
                / nf;
            if !((s - t).abs() < delta) {
                return Ok(false);
            }
        }
        Ok(true)
    });
    let mut hits = 0u64;
    for o in outcomes {
        if o? {
            hits += 1;
        }
    }
    let total = samples as u64;
    let frac = hits as f64 / total as f64;
    let wil = stats::wilson(hits, total, Z95);
    let zero = hits == 0;
    let to_log = |x: f64| if x > 0.0 { x.ln() / nf } else { f64::NEG_INFINITY };
    Ok(HsymEstimate {
        samples: total,
        hits,
        hit_fraction: frac,
        value: to_log(frac),
        std_error: if zero {
            f64::INFINITY
        } else {
            ((1.0 - frac) / (total as f64 * frac)).sqrt() / nf
        },
        interval: Interval {
            lo: to_log(wil.lo),
            hi: to_log(wil.hi),
        },
        zero_hits: zero,
        upper_bound: if zero {
            to_log(stats::rule_of_three(total))
        } else {
            to_log(wil.hi)
        },
    })
}

/// `I(X;Y) = Σ p_ab log(p_ab / (p_a q_b))` with `0 log 0 = 0`.
pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut s = 0.0;
    for (a, row) in joint.probs().iter().enumerate() {
        for (b, &p) in row.iter().enumerate() {
            if p > 0.0 {
                s += p * (p / (px[a] * py[b])).ln();
            }
        }
    }
    s.max(0.0)
}
