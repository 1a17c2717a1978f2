//! Orbital microstate membership, Monte Carlo estimation of orbital
//! microstate measure, and unitary conjugation alignment.

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, CMat, DiagonalVector, Norm, UnitaryMatrix};
use crate::ncalg::{
    enumerate_words, Layout, LetterKind, MomentOracle, SpecKind, TracialSpec, Word, WordEvaluator,
    DEFAULT_WORD_BUDGET,
};
use crate::rng::{par_indexed, RngStream};
use crate::sampling::{haar_from, Group};
use crate::stats::{self, Interval, Z95};

/// Matrices grouped by family, then variable.
pub type MatrixTuple = Vec<Vec<CMat>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicrostateParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    /// Operator-norm cutoff. `None` means no cutoff.
    #[serde(rename = "R", default)]
    pub r: Option<f64>,
}

impl MicrostateParams {
    pub fn new(n: usize, m: usize, delta: f64, r: Option<f64>) -> Result<Self> {
        let p = Self { n, m, delta, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("N", "dimension must be at least 1"));
        }
        if self.m == 0 {
            return Err(invalid("m", "degree must be at least 1"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(invalid("delta", format!("tolerance must be positive, got {}", self.delta)));
        }
        if let Some(r) = self.r {
            if !(r > 0.0) {
                return Err(invalid("R", format!("cutoff must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitalEstimate {
    pub n_samples: u64,
    pub hits: u64,
    pub hit_fraction: f64,
    /// `log(hit_fraction) / N^2`; `-inf` when there were no hits.
    pub log_measure_per_n2: f64,
    pub zero_hits: bool,
    pub wilson_interval: Interval,
    /// One-sided 95% upper bound on the measure: the rule of three after
    /// zero hits, otherwise the Wilson upper end.
    pub upper_bound: f64,
}

impl OrbitalEstimate {
    fn from_counts(hits: u64, n_samples: u64, n: usize) -> Self {
        let frac = hits as f64 / n_samples as f64;
        let wilson_interval = stats::wilson(hits, n_samples, Z95);
        let zero = hits == 0;
        Self {
            n_samples,
            hits,
            hit_fraction: frac,
            log_measure_per_n2: if zero {
                f64::NEG_INFINITY
            } else {
                frac.ln() / (n * n) as f64
            },
            zero_hits: zero,
            wilson_interval,
            upper_bound: if zero {
                stats::rule_of_three(n_samples)
            } else {
                wilson_interval.hi
            },
        }
    }

    /// `log(upper_bound) / N^2`.
    pub fn log_upper_per_n2(&self, n: usize) -> f64 {
        self.upper_bound.ln() / (n * n) as f64
    }
}

/// Membership of a diagonal microstate in the single-variable set `Δ_R`.
pub fn delta_set_contains(d: &DiagonalVector, target: &dyn MomentOracle, p: &MicrostateParams) -> Result<bool> {
    p.validate()?;
    if d.len() != p.n {
        return Err(Error::DimensionMismatch(format!(
            "diagonal has length {}, expected N = {}",
            d.len(),
            p.n
        )));
    }
    if let Some(r) = p.r {
        if d.sup_norm() > r {
            return Ok(false);
        }
    }
    for k in 1..=p.m {
        let tau = target.moment(&Word::power(0, 0, k))?;
        let got = d.power_trace(k as u32);
        if !((c64::new(got, 0.0) - tau).norm() < p.delta) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Inverse CDF of the standard semicircle law on `[-2, 2]`.
fn semicircle_quantile(u: f64) -> f64 {
    let cdf = |x: f64| 0.5 + x * (4.0 - x * x).max(0.0).sqrt() / (4.0 * std::f64::consts::PI) + (x / 2.0).asin() / std::f64::consts::PI;
    let (mut lo, mut hi) = (-2.0_f64, 2.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest-remainder allocation of `n` slots proportionally to `weights`.
pub(crate) fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // larger remainder first, ties by index
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn diag_mat(values: &[f64]) -> CMat {
    linalg::HermitianMatrix::from_diagonal(values).into_mat()
}

/// Deterministic reference microstate `Ξ(N)` for one family of a target.
///
/// Projections use `⌈αN⌉` ones, other catalog laws use quantile diagonals,
/// finitely supported laws use commuting diagonals with largest-remainder
/// atom counts, and matrix models are inflated by `⊗ I`.
pub fn reference_family(spec: &TracialSpec, n: usize) -> Result<Vec<CMat>> {
    if n == 0 {
        return Err(invalid("N", "dimension must be at least 1"));
    }
    match spec.kind() {
        SpecKind::Projection { alpha } => {
            let ones = ((alpha * n as f64) - 1e-12).ceil().max(0.0) as usize;
            let v: Vec<f64> = (0..n).map(|j| if j < ones { 1.0 } else { 0.0 }).collect();
            Ok(vec![diag_mat(&v)])
        }
        SpecKind::Semicircular => {
            let v: Vec<f64> = (0..n)
                .map(|j| semicircle_quantile(1.0 - (j as f64 + 0.5) / n as f64))
                .collect();
            Ok(vec![diag_mat(&v)])
        }
        SpecKind::FiniteAtoms { atoms, weights, .. } => {
            let mut order: Vec<usize> = (0..atoms.len()).collect();
            order.sort_by(|&a, &b| {
                atoms[b]
                    .iter()
                    .zip(&atoms[a])
                    .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let sorted_w: Vec<f64> = order.iter().map(|&a| weights[a]).collect();
            let counts = largest_remainder(&sorted_w, n);
            let nv = atoms[0].len();
            Ok((0..nv)
                .map(|v| {
                    let vals: Vec<f64> = order
                        .iter()
                        .zip(&counts)
                        .flat_map(|(&a, &c)| std::iter::repeat_n(atoms[a][v], c))
                        .collect();
                    diag_mat(&vals)
                })
                .collect())
        }
        SpecKind::MatrixModel { families } => {
            let d = families[0][0].matrix.nrows();
            if n % d != 0 {
                return Err(invalid(
                    "N",
                    format!("matrix model of size {d} cannot be inflated to N = {n}"),
                ));
            }
            let rep = n / d;
            Ok(families
                .iter()
                .flatten()
                .map(|m| {
                    Mat::from_fn(n, n, |j, k| {
                        if j % rep == k % rep {
                            m.matrix[(j / rep, k / rep)]
                        } else {
                            c64::new(0.0, 0.0)
                        }
                    })
                })
                .collect())
        }
        SpecKind::FreeProduct { marginals } => {
            let mut out = Vec::new();
            for m in marginals {
                out.extend(reference_family(m, n)?);
            }
            Ok(out)
        }
    }
}

/// Reference microstates for every family of a joint target, built from
/// each family's marginal.
pub fn reference_microstates(target: &TracialSpec, n: usize) -> Result<MatrixTuple> {
    (0..target.layout().family_count())
        .map(|f| reference_family(&target.marginal(f)?, n))
        .collect()
}

fn is_diagonal(m: &CMat) -> Option<Vec<f64>> {
    let n = m.nrows();
    for j in 0..n {
        if m[(j, j)].im != 0.0 {
            return None;
        }
        for k in 0..n {
            if j != k && m[(j, k)] != c64::new(0.0, 0.0) {
                return None;
            }
        }
    }
    Some((0..n).map(|j| m[(j, j)].re).collect())
}

/// Precomputed membership test for `Γ_orb` (optionally in the presence of
/// extra unitaries).
///
/// The word list covers every word of length `≤ m` over the rotated
/// reference letters (and the presence unitaries with adjoints), including
/// words with adjacent letters from the same family. Target moments are
/// tabulated once.
pub struct OrbitalChecker {
    layout: Layout,
    words: Vec<Word>,
    targets: Vec<c64>,
    xi: Vec<Vec<(CMat, Option<Vec<f64>>)>>,
    params: MicrostateParams,
    presence_count: usize,
    cutoff_ok: bool,
}

impl OrbitalChecker {
    /// `target` is the joint law of the families. With `presence_target`
    /// set, it must be the joint law of the families followed by one extra
    /// family of unitaries, and `target` is ignored for word values.
    pub fn new(
        target: &dyn MomentOracle,
        xi: &MatrixTuple,
        params: &MicrostateParams,
        presence_target: Option<&dyn MomentOracle>,
    ) -> Result<Self> {
        params.validate()?;
        let base = target.layout();
        if xi.len() != base.family_count() {
            return Err(Error::DimensionMismatch(format!(
                "reference tuple has {} families, target has {}",
                xi.len(),
                base.family_count()
            )));
        }
        for (f, fam) in xi.iter().enumerate() {
            if fam.len() != base.families[f].len() {
                return Err(Error::DimensionMismatch(format!(
                    "family {f}: reference has {} variables, target has {}",
                    fam.len(),
                    base.families[f].len()
                )));
            }
            for (v, m) in fam.iter().enumerate() {
                if m.nrows() != params.n || m.ncols() != params.n {
                    return Err(Error::DimensionMismatch(format!(
                        "family {f} variable {v}: reference is {}x{}, expected N = {}",
                        m.nrows(),
                        m.ncols(),
                        params.n
                    )));
                }
            }
        }
        let (oracle, presence_count): (&dyn MomentOracle, usize) = match presence_target {
            Some(pt) => {
                let l = pt.layout();
                if l.family_count() != base.family_count() + 1
                    || l.families[..base.family_count()] != base.families[..]
                    || l.families[base.family_count()].iter().any(|k| *k != LetterKind::Unitary)
                {
                    return Err(invalid(
                        "presence_target",
                        "presence law must extend the target by one family of unitaries",
                    ));
                }
                (pt, l.families[base.family_count()].len())
            }
            None => (target, 0),
        };
        let layout = oracle.layout();
        let words = enumerate_words(&layout.alphabet(), params.m, DEFAULT_WORD_BUDGET)?;
        let targets = oracle.moments(&words)?;
        let cutoff_ok = match params.r {
            None => true,
            Some(r) => {
                let mut ok = true;
                for m in xi.iter().flatten() {
                    if linalg::norm(m, Norm::Operator)? > r {
                        ok = false;
                    }
                }
                ok
            }
        };
        Ok(Self {
            layout,
            words,
            targets,
            xi: xi
                .iter()
                .map(|f| f.iter().map(|m| (m.clone(), is_diagonal(m))).collect())
                .collect(),
            params: *params,
            presence_count,
            cutoff_ok,
        })
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Rotated tuple `(U_i Ξ_i U_i*)`.
    pub fn rotate(&self, us: &[UnitaryMatrix]) -> Result<MatrixTuple> {
        if us.len() != self.xi.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} unitaries for {} families",
                us.len(),
                self.xi.len()
            )));
        }
        us.iter()
            .zip(&self.xi)
            .enumerate()
            .map(|(f, (u, fam))| {
                if u.dim() != self.params.n {
                    return Err(Error::DimensionMismatch(format!(
                        "unitary {f} has dimension {}, expected {}",
                        u.dim(),
                        self.params.n
                    )));
                }
                Ok(fam
                    .iter()
                    .map(|(m, d)| match d {
                        Some(d) => linalg::conjugate_diagonal(u.as_mat(), d),
                        None => linalg::conjugate(u.as_mat(), m),
                    })
                    .collect())
            })
            .collect()
    }

    /// Largest word deviation `|tr_N(w) − τ(w)|` of an already-rotated tuple.
    pub fn max_deviation(&self, rotated: &MatrixTuple, presence: Option<&[UnitaryMatrix]>) -> Result<f64> {
        let mut ev = self.evaluator(rotated, presence)?;
        let mut worst = 0.0_f64;
        for (w, t) in self.words.iter().zip(&self.targets) {
            worst = worst.max((ev.eval(w)? - t).norm());
        }
        Ok(worst)
    }

    fn evaluator(&self, rotated: &MatrixTuple, presence: Option<&[UnitaryMatrix]>) -> Result<WordEvaluator> {
        let mut assignment = rotated.clone();
        match (presence, self.presence_count) {
            (None, 0) => {}
            (Some(vs), k) if vs.len() == k && k > 0 => {
                assignment.push(vs.iter().map(|v| v.as_mat().clone()).collect());
            }
            _ => {
                return Err(invalid(
                    "presence",
                    format!("expected {} presence unitaries", self.presence_count),
                ))
            }
        }
        WordEvaluator::new(&self.layout, &assignment, self.params.m)
    }

    /// Membership of `(U_i Ξ_i U_i*)` (with presence unitaries when
    /// configured). Stops at the first violated word.
    pub fn contains(&self, us: &[UnitaryMatrix], presence: Option<&[UnitaryMatrix]>) -> Result<bool> {
        let rotated = self.rotate(us)?;
        if !self.cutoff_ok {
            return Ok(false);
        }
        let mut ev = self.evaluator(&rotated, presence)?;
        for (w, t) in self.words.iter().zip(&self.targets) {
            if !((ev.eval(w)? - t).norm() < self.params.delta) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Membership of a unitary tuple in `Γ_orb`; see [`OrbitalChecker`].
pub fn gamma_orb_contains(
    us: &[UnitaryMatrix],
    xi: &MatrixTuple,
    target: &dyn MomentOracle,
    params: &MicrostateParams,
    presence: Option<(&[UnitaryMatrix], &dyn MomentOracle)>,
) -> Result<bool> {
    let checker = OrbitalChecker::new(target, xi, params, presence.map(|p| p.1))?;
    checker.contains(us, presence.map(|p| p.0))
}

/// Monte Carlo estimate of the Haar measure of `Γ_orb`.
///
/// Sample `k` draws its unitary tuple from `stream.substream(k)`.
pub fn estimate_orbital_measure(
    target: &dyn MomentOracle,
    xi: &MatrixTuple,
    params: &MicrostateParams,
    n_samples: usize,
    stream: &RngStream,
    presence: Option<(&[UnitaryMatrix], &dyn MomentOracle)>,
) -> Result<OrbitalEstimate> {
    if n_samples < 100 {
        return Err(Error::InsufficientSamples {
            got: n_samples,
            need: 100,
        });
    }
    let checker = OrbitalChecker::new(target, xi, params, presence.map(|p| p.1))?;
    let families = xi.len();
    let outcomes: Vec<Result<bool>> = par_indexed(n_samples, |k| {
        let mut rng = stream.substream(k as u64).rng();
        let us: Vec<UnitaryMatrix> = (0..families)
            .map(|_| haar_from(params.n, Group::U, &mut rng))
            .collect::<Result<_>>()?;
        checker.contains(&us, presence.map(|p| p.0))
    });
    let mut hits = 0u64;
    for o in outcomes {
        if o? {
            hits += 1;
        }
    }
    Ok(OrbitalEstimate::from_counts(hits, n_samples as u64, params.n))
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub unitary: UnitaryMatrix,
    /// `max_i ‖U A_i U* − B_i‖_{p,tr_N}`.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn align_objective(u: &CMat, a: &[CMat], b: &[CMat]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (&linalg::conjugate(u, x) - y).norm_l2().powi(2))
        .sum()
}

fn align_residual(u: &CMat, a: &[CMat], b: &[CMat], p: f64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        worst = worst.max(linalg::norm(&(&linalg::conjugate(u, x) - y), Norm::Tracial(p))?);
    }
    Ok(worst)
}

fn hermitian_part_of_sum(ms: &[CMat]) -> CMat {
    let n = ms[0].nrows();
    Mat::from_fn(n, n, |j, k| {
        ms.iter()
            .map(|m| (m[(j, k)] + m[(k, j)].conj()) * 0.5)
            .sum::<c64>()
    })
}

/// Cayley retraction `(I − tΩ/2)^{-1}(I + tΩ/2)` for skew-Hermitian `Ω`.
fn cayley(omega: &CMat, t: f64) -> CMat {
    let n = omega.nrows();
    let lhs = Mat::from_fn(n, n, |j, k| {
        let id = if j == k { 1.0 } else { 0.0 };
        c64::new(id, 0.0) - omega[(j, k)] * (0.5 * t)
    });
    let rhs = Mat::from_fn(n, n, |j, k| {
        let id = if j == k { 1.0 } else { 0.0 };
        c64::new(id, 0.0) + omega[(j, k)] * (0.5 * t)
    });
    lhs.partial_piv_lu().solve(&rhs)
}

/// Searches for `U` with `U A_i U* ≈ B_i` for all `i`.
///
/// Starts from the frame that matches the sorted spectra of `Σ A_i` and
/// `Σ B_i`, synchronizes eigenvector phases, then runs Riemannian gradient
/// descent with a Cayley retraction on `Σ_i ‖U A_i U* − B_i‖²_HS`. The
/// best candidate by residual is returned.
pub fn align_conjugation(a: &[CMat], b: &[CMat], p_norm: f64, budget: usize) -> Result<Alignment> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "tuples have {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let n = a[0].nrows();
    for (i, m) in a.iter().chain(b).enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "entry {} is {}x{}, expected {n}x{n}",
                i % a.len(),
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if !(p_norm >= 1.0) {
        return Err(invalid("p_norm", format!("need p >= 1, got {p_norm}")));
    }
    let (_, va) = linalg::eigh_raw(&hermitian_part_of_sum(a))?;
    let (_, vb) = linalg::eigh_raw(&hermitian_part_of_sum(b))?;
    let u0 = linalg::mul_adj(&vb, &va);

    // phase synchronization in the matched eigenbases
    let at: Vec<CMat> = a.iter().map(|x| linalg::adj_mul(&va, &linalg::mul(x, &va))).collect();
    let bt: Vec<CMat> = b.iter().map(|y| linalg::adj_mul(&vb, &linalg::mul(y, &vb))).collect();
    let h_raw = Mat::from_fn(n, n, |j, k| {
        at.iter()
            .zip(&bt)
            .map(|(x, y)| y[(j, k)] * x[(j, k)].conj())
            .sum::<c64>()
    });
    let h = Mat::from_fn(n, n, |j, k| (h_raw[(j, k)] + h_raw[(k, j)].conj()) * 0.5);
    let (_, hv) = linalg::eigh_raw(&h)?;
    let phases: Vec<c64> = (0..n)
        .map(|j| {
            let z = hv[(j, 0)];
            if z.norm() > 1e-300 {
                z / z.norm()
            } else {
                c64::new(1.0, 0.0)
            }
        })
        .collect();
    let vb_phased = Mat::from_fn(n, n, |j, k| vb[(j, k)] * phases[k]);
    let u1 = linalg::mul_adj(&vb_phased, &va);

    let mut candidates = vec![u0.clone(), u1.clone()];
    let mut u = if align_objective(&u1, a, b) <= align_objective(&u0, a, b) {
        u1
    } else {
        u0
    };
    let mut f = align_objective(&u, a, b);
    let scale: f64 = a.iter().chain(b).map(|m| m.norm_l2().powi(2)).sum::<f64>().max(1e-300);
    let mut t = 1.0 / scale.sqrt();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        if f <= 1e-26 * scale {
            converged = true;
            break;
        }
        let mut m = Mat::<c64>::zeros(n, n);
        for (x, y) in a.iter().zip(b) {
            let yb = linalg::adj_mul(&u, &linalg::mul(y, &u));
            let xs = x.adjoint().to_owned();
            m += &linalg::mul(&xs, &yb) - &linalg::mul(&yb, &xs);
        }
        let omega = Mat::from_fn(n, n, |j, k| (m[(k, j)].conj() - m[(j, k)]) * 0.5);
        let gnorm2 = omega.norm_l2().powi(2);
        if gnorm2.sqrt() <= 1e-13 * scale {
            converged = true;
            break;
        }
        // Armijo backtracking; directional derivative is −4 Re tr(ΩM) = −4‖Ω‖²
        let mut accepted = false;
        for _ in 0..60 {
            let cand = linalg::mul(&u, &cayley(&omega, t));
            let fc = align_objective(&cand, a, b);
            if fc <= f - 1e-4 * t * 4.0 * gnorm2 {
                u = cand;
                f = fc;
                t *= 2.0;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    candidates.push(u);
    let mut best: Option<(f64, CMat)> = None;
    for c in candidates {
        let r = align_residual(&c, a, b, p_norm)?;
        if best.as_ref().is_none_or(|(br, _)| r < *br) {
            best = Some((r, c));
        }
    }
    let (residual, u) = best.ok_or_else(|| Error::Internal("no alignment candidate".into()))?;
    Ok(Alignment {
        unitary: UnitaryMatrix::new_unchecked(u),
        residual,
        converged,
        iterations,
    })
}

/// Normal quantile used by callers that want a two-sided z for a given
/// confidence level.
pub fn z_for_confidence(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level", "confidence level must lie in (0,1)"));
    }
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::HermitianMatrix;
    use crate::ncalg::Letter;
    use crate::sampling::{gue, haar_unitary};

    fn half_projection(n: usize) -> CMat {
        reference_family(&TracialSpec::projection(0.5).unwrap(), n).unwrap().remove(0)
    }

    fn identical_pair() -> TracialSpec {
        TracialSpec::joint_atoms(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0.5, 0.5], vec![1, 1]).unwrap()
    }

    #[test]
    fn own_spectrum_is_a_microstate() {
        let d = DiagonalVector::new(vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let t = TracialSpec::finite_atoms(&[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let p = MicrostateParams::new(4, 6, 1e-9, None).unwrap();
        assert!(delta_set_contains(&d, &t, &p).unwrap());
    }

    #[test]
    fn cutoff_excludes() {
        let d = DiagonalVector::new(vec![3.0, -3.0]).unwrap();
        let t = TracialSpec::finite_atoms(&[3.0, -3.0], &[0.5, 0.5]).unwrap();
        let p = MicrostateParams::new(2, 2, 0.5, Some(2.0)).unwrap();
        assert!(!delta_set_contains(&d, &t, &p).unwrap());
    }

    #[test]
    fn mean_shift_violates_first_moment() {
        let delta = 0.1;
        let d = DiagonalVector::new(vec![1.0 + 2.0 * delta, -1.0 + 2.0 * delta]).unwrap();
        let t = TracialSpec::finite_atoms(&[1.0, -1.0], &[0.5, 0.5]).unwrap();
        let p = MicrostateParams::new(2, 1, delta, None).unwrap();
        assert!(!delta_set_contains(&d, &t, &p).unwrap());
    }

    #[test]
    fn single_family_is_everything() {
        let t = TracialSpec::projection(0.5).unwrap();
        let p = MicrostateParams::new(8, 4, 0.01, None).unwrap();
        let xi = vec![half_projection(8)];
        for k in 0..5 {
            let u = haar_unitary(8, Group::U, &RngStream::new(4, k)).unwrap();
            assert!(gamma_orb_contains(&[u], &vec![xi.clone()], &t, &p, None).unwrap());
        }
    }

    #[test]
    fn coinciding_rotations_match_identical_target() {
        let t = identical_pair();
        let xi = vec![vec![diag(&[1.0, 0.0])], vec![diag(&[1.0, 0.0])]];
        let p = MicrostateParams::new(2, 4, 1e-9, None).unwrap();
        let u = haar_unitary(2, Group::U, &RngStream::new(8, 0)).unwrap();
        assert!(gamma_orb_contains(&[u.clone(), u], &xi, &t, &p, None).unwrap());
    }

    #[test]
    fn flip_breaks_identical_target() {
        let t = identical_pair();
        let xi = vec![vec![diag(&[1.0, 0.0])], vec![diag(&[1.0, 0.0])]];
        let p = MicrostateParams::new(2, 2, 0.49, None).unwrap();
        let flip = UnitaryMatrix::from_permutation(&[1, 0]).unwrap();
        assert!(!gamma_orb_contains(&[UnitaryMatrix::identity(2), flip], &xi, &t, &p, None).unwrap());
    }

    fn diag(v: &[f64]) -> CMat {
        HermitianMatrix::from_diagonal(v).into_mat()
    }

    #[test]
    fn torus_invariance_of_membership() {
        let t = TracialSpec::free_product(vec![
            TracialSpec::projection(0.5).unwrap(),
            TracialSpec::projection(0.5).unwrap(),
        ])
        .unwrap();
        let n = 6;
        let xi = reference_microstates(&t, n).unwrap();
        let p = MicrostateParams::new(n, 3, 0.2, None).unwrap();
        let checker = OrbitalChecker::new(&t, &xi, &p, None).unwrap();
        for k in 0..20 {
            let us: Vec<UnitaryMatrix> = (0..2)
                .map(|i| haar_unitary(n, Group::U, &RngStream::new(k, i)).unwrap())
                .collect();
            let ts: Vec<UnitaryMatrix> = (0..2)
                .map(|i| haar_unitary(n, Group::T, &RngStream::new(k, 10 + i)).unwrap())
                .collect();
            let moved: Vec<UnitaryMatrix> = us.iter().zip(&ts).map(|(u, t)| u.compose(t)).collect();
            let r1 = checker.rotate(&us).unwrap();
            let r2 = checker.rotate(&moved).unwrap();
            let d1 = checker.max_deviation(&r1, None).unwrap();
            let d2 = checker.max_deviation(&r2, None).unwrap();
            assert!((d1 - d2).abs() < 1e-10);
            assert_eq!(checker.contains(&us, None).unwrap(), checker.contains(&moved, None).unwrap());
        }
    }

    #[test]
    fn estimator_needs_samples() {
        let t = TracialSpec::projection(0.5).unwrap();
        let xi = vec![half_projection(4)];
        let p = MicrostateParams::new(4, 2, 0.1, None).unwrap();
        assert!(matches!(
            estimate_orbital_measure(&t, &vec![xi], &p, 10, &RngStream::new(0, 0), None),
            Err(Error::InsufficientSamples { got: 10, need: 100 })
        ));
    }

    #[test]
    fn single_family_estimate_is_one() {
        let t = TracialSpec::projection(0.5).unwrap();
        let xi = vec![half_projection(10)];
        let p = MicrostateParams::new(10, 4, 0.05, None).unwrap();
        let e = estimate_orbital_measure(&t, &vec![xi], &p, 100, &RngStream::new(1, 0), None).unwrap();
        assert_eq!(e.hit_fraction, 1.0);
        assert_eq!(e.log_measure_per_n2, 0.0);
        assert!(e.wilson_interval.contains(1.0));
    }

    #[test]
    fn presence_target_accepts_own_model() {
        // target law (X, v) realized exactly by a matrix model
        let n = 4;
        let x = diag(&[1.0, 1.0, 0.0, 0.0]);
        let v = haar_unitary(n, Group::U, &RngStream::new(2, 2)).unwrap();
        let joint = TracialSpec::matrix_model(vec![vec![x.clone()], vec![v.as_mat().clone()]]).unwrap();
        let base = TracialSpec::matrix_model(vec![vec![x.clone()]]).unwrap();
        let p = MicrostateParams::new(n, 3, 1e-9, None).unwrap();
        let xi = vec![vec![x]];
        let vs = [v];
        let id = UnitaryMatrix::identity(n);
        assert!(gamma_orb_contains(&[id], &xi, &base, &p, Some((&vs, &joint))).unwrap());
        let w = haar_unitary(n, Group::U, &RngStream::new(2, 3)).unwrap();
        assert!(!gamma_orb_contains(&[w], &xi, &base, &p, Some((&vs, &joint))).unwrap());
        let _ = Letter::new(0, 0);
    }

    #[test]
    fn exact_conjugation_is_found() {
        let n = 6;
        let a = vec![
            gue(n, &RngStream::new(3, 0)).unwrap().into_mat(),
            gue(n, &RngStream::new(3, 1)).unwrap().into_mat(),
        ];
        let v = haar_unitary(n, Group::U, &RngStream::new(3, 2)).unwrap();
        let b: Vec<CMat> = a.iter().map(|x| linalg::conjugate(v.as_mat(), x)).collect();
        let al = align_conjugation(&a, &b, 2.0, 500).unwrap();
        assert!(al.residual < 1e-6, "residual {}", al.residual);
    }

    #[test]
    fn single_pair_attains_spectral_distance() {
        let n = 5;
        let a = gue(n, &RngStream::new(6, 0)).unwrap();
        let b = gue(n, &RngStream::new(6, 1)).unwrap();
        let al = align_conjugation(&[a.as_mat().clone()], &[b.as_mat().clone()], 2.0, 200).unwrap();
        let da = linalg::eigvalsh(&a).unwrap();
        let db = linalg::eigvalsh(&b).unwrap();
        let dist = (da
            .values()
            .iter()
            .zip(db.values())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!((al.residual - dist).abs() < 1e-8);
    }

    #[test]
    fn trace_gap_bounds_residual() {
        let n = 4;
        let a = gue(n, &RngStream::new(7, 0)).unwrap().into_mat();
        let b = &gue(n, &RngStream::new(7, 1)).unwrap().into_mat() + &ncalg_scalar(n, 0.8);
        let gap = (linalg::tr_n(&a) - linalg::tr_n(&b)).norm();
        let al = align_conjugation(&[a], &[b], 2.0, 100).unwrap();
        assert!(al.residual >= gap - 1e-12);
    }

    fn ncalg_scalar(n: usize, c: f64) -> CMat {
        crate::ncalg::scalar_matrix(n, c)
    }

    #[test]
    fn largest_remainder_preserves_total() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 7).iter().sum::<usize>(), 7);
    }

    #[test]
    fn semicircle_quantiles_match_moments() {
        let xi = reference_family(&TracialSpec::semicircular(), 400).unwrap().remove(0);
        let d: Vec<f64> = (0..400).map(|j| xi[(j, j)].re).collect();
        let m2 = d.iter().map(|x| x * x).sum::<f64>() / 400.0;
        let m4 = d.iter().map(|x| x.powi(4)).sum::<f64>() / 400.0;
        assert!((m2 - 1.0).abs() < 1e-3 && (m4 - 2.0).abs() < 5e-3);
    }
}
