//! Discrete 2-Wasserstein distances and the finite-N transport checks on
//! unitary groups.

use serde::{Deserialize, Serialize};

use crate::config::TOLERANCES;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, HermitianMatrix, Norm, UnitaryMatrix};
use crate::rng::{par_indexed, RngStream};
use crate::sampling::{haar_unitary, Group};
use crate::stats::{self, Interval};

/// Largest side handled by the exact solver.
pub const EXACT_ATOM_LIMIT: usize = 500;

/// Probability measure on finitely many atoms; atoms index into a point
/// registry owned by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(invalid("weights", "need one weight per atom and at least one atom"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<usize>) -> Result<Self> {
        let w = 1.0 / atoms.len().max(1) as f64;
        let n = atoms.len();
        let mut weights = vec![w; n];
        // absorb rounding so the sum is 1 to the last bit we can manage
        if n > 0 {
            weights[n - 1] = 1.0 - w * (n - 1) as f64;
        }
        Self::new(atoms, weights)
    }

    pub fn dirac(atom: usize) -> Self {
        Self {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Cost matrix `cost(mu.atoms[j], nu.atoms[k])`.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    mu.atoms
        .iter()
        .map(|&a| nu.atoms.iter().map(|&b| cost(a, b)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub coupling: Vec<Vec<f64>>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the row and column sums from the given weights.
    pub fn marginal_error(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
        let rows = self
            .coupling
            .iter()
            .zip(&mu.weights)
            .map(|(r, w)| (r.iter().sum::<f64>() - w).abs());
        let cols = (0..nu.len()).map(|k| (self.coupling.iter().map(|r| r[k]).sum::<f64>() - nu.weights[k]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum OtMethod {
    Exact,
    /// Log-domain Sinkhorn; `reg = None` uses 1e-2 of the median cost.
    Entropic { reg: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wasserstein {
    /// `sqrt` of the plan cost.
    pub distance: f64,
    pub plan: TransportPlan,
    /// Plan cost minus a feasible dual value; the optimum lies in
    /// `[cost − gap, cost]`.
    pub duality_gap: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn check_problem(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &[Vec<f64>]) -> Result<()> {
    if cost.len() != mu.len() || cost.iter().any(|r| r.len() != nu.len()) {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix must be {}x{}",
            mu.len(),
            nu.len()
        )));
    }
    if cost.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(invalid("cost", "costs must be finite and non-negative"));
    }
    for m in [mu, nu] {
        let total: f64 = m.weights.iter().sum();
        if m.weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", "infeasible weights"));
        }
    }
    Ok(())
}

/// 2-Wasserstein distance for a squared-distance cost matrix.
pub fn wasserstein2(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &[Vec<f64>],
    method: OtMethod,
) -> Result<Wasserstein> {
    check_problem(mu, nu, cost)?;
    let mut out = match method {
        OtMethod::Exact => {
            if mu.len() > EXACT_ATOM_LIMIT || nu.len() > EXACT_ATOM_LIMIT {
                return Err(invalid(
                    "method",
                    format!("exact transport supports at most {EXACT_ATOM_LIMIT} atoms per side"),
                ));
            }
            network_simplex(&mu.weights, &nu.weights, cost)?
        }
        OtMethod::Entropic { reg } => {
            let reg = match reg {
                Some(r) if r > 0.0 && r.is_finite() => r,
                Some(_) => return Err(invalid("reg", "regularization must be positive")),
                None => {
                    let mut c: Vec<f64> = cost.iter().flatten().copied().collect();
                    c.sort_by(f64::total_cmp);
                    let med = c[c.len() / 2];
                    1e-2 * if med > 0.0 { med } else { 1.0 }
                }
            };
            sinkhorn(&mu.weights, &nu.weights, cost, reg)
        }
    };
    out.distance = out.plan.cost.max(0.0).sqrt();
    Ok(out)
}

fn plan_cost(x: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(cost)
        .map(|(r, c)| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Transportation simplex: a spanning-tree basis of the complete bipartite
/// graph, potentials `u_i + v_j = c_ij` on tree cells, Dantzig pricing.
fn network_simplex(a: &[f64], b: &[f64], cost: &[Vec<f64>]) -> Result<Wasserstein> {
    let (m, n) = (a.len(), b.len());
    let nodes = m + n;
    let mut x = vec![vec![0.0; n]; m];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let link = |adj: &mut Vec<Vec<usize>>, i: usize, j: usize| {
        adj[i].push(m + j);
        adj[m + j].push(i);
    };

    // north-west corner staircase: m + n − 1 cells forming a tree
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let f = ra[i].min(rb[j]).max(0.0);
        x[i][j] = f;
        ra[i] -= f;
        rb[j] -= f;
        link(&mut adj, i, j);
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().flatten().fold(0.0_f64, |s, c| s.max(*c)).max(1.0);
    let tol = 1e-12 * scale;
    let max_iter = 50 * (m + n) * (m + n) + 1000;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut parent = vec![usize::MAX; nodes];
    let mut stack = Vec::with_capacity(nodes);
    for iter in 0..max_iter {
        // potentials by traversal from row 0
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        parent[0] = 0;
        stack.clear();
        stack.push(0);
        while let Some(p) = stack.pop() {
            for &q in &adj[p] {
                if parent[q] == usize::MAX {
                    parent[q] = p;
                    if q >= m {
                        v[q - m] = cost[p][q - m] - u[p];
                    } else {
                        u[q] = cost[q][p - m] - v[p - m];
                    }
                    stack.push(q);
                }
            }
        }
        if parent.iter().any(|p| *p == usize::MAX) {
            return Err(Error::Internal("transport basis is not a spanning tree".into()));
        }

        let mut best = (-tol, usize::MAX, usize::MAX);
        for (i, row) in cost.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let r = c - u[i] - v[j];
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        let (_, ei, ej) = best;
        if ei == usize::MAX {
            let dual: f64 = a.iter().zip(&u).map(|(w, p)| w * p).sum::<f64>()
                + b.iter().zip(&v).map(|(w, p)| w * p).sum::<f64>();
            let c = plan_cost(&x, cost);
            return Ok(Wasserstein {
                distance: 0.0,
                plan: TransportPlan { coupling: x, cost: c },
                duality_gap: (c - dual).max(0.0),
                converged: true,
                iterations: iter,
            });
        }

        // tree path from column node ej back to row node ei (parents point
        // towards row 0, so walk both ends to their common ancestor)
        let path = tree_path(&parent, ei, m + ej);
        // path[0] = ei, path[last] = m + ej; edge t gets sign − for even t
        let cell = |p: usize, q: usize| if p < m { (p, q - m) } else { (q, p - m) };
        let mut theta = f64::INFINITY;
        let mut leave = (usize::MAX, usize::MAX);
        for t in (0..path.len() - 1).step_by(2) {
            let (ci, cj) = cell(path[t], path[t + 1]);
            if x[ci][cj] < theta {
                theta = x[ci][cj];
                leave = (ci, cj);
            }
        }
        for t in 0..path.len() - 1 {
            let (ci, cj) = cell(path[t], path[t + 1]);
            if t % 2 == 0 {
                x[ci][cj] = (x[ci][cj] - theta).max(0.0);
            } else {
                x[ci][cj] += theta;
            }
        }
        x[ei][ej] = theta;
        x[leave.0][leave.1] = 0.0;
        let (li, lj) = leave;
        adj[li].retain(|&q| q != m + lj);
        adj[m + lj].retain(|&q| q != li);
        link(&mut adj, ei, ej);
    }
    Err(Error::Numerical(format!(
        "network simplex did not converge in {max_iter} pivots"
    )))
}

fn tree_path(parent: &[usize], from: usize, to: usize) -> Vec<usize> {
    let ancestors = |mut p: usize| {
        let mut v = vec![p];
        while parent[p] != p {
            p = parent[p];
            v.push(p);
        }
        v
    };
    let up_from = ancestors(from);
    let up_to = ancestors(to);
    // strip the shared tail
    let (mut i, mut j) = (up_from.len(), up_to.len());
    while i > 0 && j > 0 && up_from[i - 1] == up_to[j - 1] {
        i -= 1;
        j -= 1;
    }
    // up_from[i] is the lowest common ancestor
    let mut path: Vec<usize> = up_from[..=i].to_vec();
    path.extend(up_to[..j].iter().rev());
    path
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + it.map(|z| (z - mx).exp()).sum::<f64>().ln()
}

const SINKHORN_MAX_ITER: usize = 100_000;
const SINKHORN_TOL: f64 = 1e-9;

/// Log-domain Sinkhorn. The returned plan is rounded onto the feasible set,
/// so its cost bounds the optimum from above; the c-transformed potentials
/// give the lower bound behind `duality_gap`.
fn sinkhorn(a: &[f64], b: &[f64], cost: &[Vec<f64>], reg: f64) -> Wasserstein {
    let (m, n) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let plan = |f: &[f64], g: &[f64]| -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if a[i] == 0.0 || b[j] == 0.0 {
                            0.0
                        } else {
                            ((f[i] + g[j] - cost[i][j]) / reg).exp()
                        }
                    })
                    .collect()
            })
            .collect()
    };
    while iterations < SINKHORN_MAX_ITER {
        iterations += 1;
        for i in 0..m {
            f[i] = if a[i] == 0.0 {
                0.0
            } else {
                reg * la[i] - reg * log_sum_exp((0..n).filter(|&j| b[j] > 0.0).map(|j| (g[j] - cost[i][j]) / reg))
            };
        }
        for j in 0..n {
            g[j] = if b[j] == 0.0 {
                0.0
            } else {
                reg * lb[j] - reg * log_sum_exp((0..m).filter(|&i| a[i] > 0.0).map(|i| (f[i] - cost[i][j]) / reg))
            };
        }
        // columns are exact after the g update; check rows
        if iterations % 10 == 0 || iterations == 1 {
            let p = plan(&f, &g);
            let err: f64 = p.iter().zip(a).map(|(r, w)| (r.iter().sum::<f64>() - w).abs()).sum();
            if err < SINKHORN_TOL {
                converged = true;
                break;
            }
        }
    }
    let rounded = round_to_feasible(plan(&f, &g), a, b);
    let c = plan_cost(&rounded, cost);
    // c-transform of f gives a feasible dual pair
    let gt: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| cost[i][j] - f[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let dual: f64 = a.iter().zip(&f).map(|(w, p)| w * p).sum::<f64>() + b.iter().zip(&gt).map(|(w, p)| w * p).sum::<f64>();
    Wasserstein {
        distance: 0.0,
        plan: TransportPlan {
            coupling: rounded,
            cost: c,
        },
        duality_gap: (c - dual).max(0.0),
        converged,
        iterations,
    }
}

/// Projects a near-feasible plan onto the transport polytope by row and
/// column down-scaling followed by a rank-one correction.
fn round_to_feasible(mut p: Vec<Vec<f64>>, a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    for (row, w) in p.iter_mut().zip(a) {
        let s: f64 = row.iter().sum();
        if s > *w && s > 0.0 {
            let k = w / s;
            row.iter_mut().for_each(|x| *x *= k);
        }
    }
    for j in 0..n {
        let s: f64 = p.iter().map(|r| r[j]).sum();
        if s > b[j] && s > 0.0 {
            let k = b[j] / s;
            p.iter_mut().for_each(|r| r[j] *= k);
        }
    }
    let er: Vec<f64> = (0..m).map(|i| (a[i] - p[i].iter().sum::<f64>()).max(0.0)).collect();
    let ec: Vec<f64> = (0..n).map(|j| (b[j] - p.iter().map(|r| r[j]).sum::<f64>()).max(0.0)).collect();
    let total: f64 = er.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            for j in 0..n {
                p[i][j] += er[i] * ec[j] / total;
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖UξU* − VξV*‖_HS ≤ 2 ‖ξ‖ ‖U − V‖_HS`.
pub fn conjugation_lipschitz_check(xi: &HermitianMatrix, u: &UnitaryMatrix, v: &UnitaryMatrix) -> Result<LipschitzReport> {
    let n = xi.dim();
    if u.dim() != n || v.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "xi is {n}x{n}, unitaries are {}x{} and {}x{}",
            u.dim(),
            u.dim(),
            v.dim(),
            v.dim()
        )));
    }
    let a = linalg::conjugate(u.as_mat(), xi.as_mat());
    let b = linalg::conjugate(v.as_mat(), xi.as_mat());
    let lhs = (&a - &b).norm_l2();
    let rhs = 2.0 * linalg::norm(xi.as_mat(), Norm::Operator)? * (u.as_mat() - v.as_mat()).norm_l2();
    Ok(LipschitzReport {
        lhs,
        rhs,
        holds: lhs <= rhs + TOLERANCES.inequality_slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub d_hs: f64,
    pub d_geod_upper: f64,
    pub ordered: bool,
    /// Some rotation angle sits at `±π`, where the principal logarithm is
    /// not unique. The length is still that of a geodesic.
    pub branch_ambiguous: bool,
}

/// Hilbert–Schmidt distance against the length of the product-geodesic
/// `U_i exp(t log(U_i* V_i))` on `U(N)^n`.
pub fn metric_comparison(u: &[UnitaryMatrix], v: &[UnitaryMatrix]) -> Result<MetricComparison> {
    if u.len() != v.len() || u.iter().zip(v).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::DimensionMismatch("tuples must have equal shapes".into()));
    }
    let mut hs2 = 0.0;
    let mut geo2 = 0.0;
    let mut ambiguous = false;
    for (a, b) in u.iter().zip(v) {
        hs2 += (a.as_mat() - b.as_mat()).norm_l2().powi(2);
        let w = linalg::adj_mul(a.as_mat(), b.as_mat());
        let eig = w.as_ref().eigenvalues().map_err(|_| Error::EigenConvergence {
            dim: w.nrows(),
            residual: f64::NAN,
        })?;
        for z in eig {
            let theta = z.arg();
            if std::f64::consts::PI - theta.abs() < 1e-9 {
                ambiguous = true;
            }
            geo2 += theta * theta;
        }
    }
    let (d_hs, d_geod_upper) = (hs2.sqrt(), geo2.sqrt());
    Ok(MetricComparison {
        d_hs,
        d_geod_upper,
        ordered: d_hs <= d_geod_upper + TOLERANCES.inequality_slack,
        branch_ambiguous: ambiguous,
    })
}

/// `S(λ, γ) = −log γ(Γ)` for `λ` the normalized restriction of `γ` to `Γ`.
pub fn relative_entropy_restricted(gamma_mass: f64) -> Result<f64> {
    if !(gamma_mass > 0.0 && gamma_mass <= 1.0) {
        return Err(invalid("gamma_mass", "mass must lie in (0, 1]"));
    }
    Ok(-gamma_mass.ln())
}

/// Squared Frobenius distance `‖U − V‖²_HS = 2N − 2 Re Tr(U* V)`.
pub fn hs_cost(u: &UnitaryMatrix, v: &UnitaryMatrix) -> f64 {
    let t: c64 = linalg::trace_of_product(&u.adjoint().into_mat(), v.as_mat());
    (2.0 * u.dim() as f64 - 2.0 * t.re).max(0.0)
}

pub const MASS_FLOOR: f64 = 0.05;
pub const MIN_TALAGRAND_SAMPLES: usize = 200;
/// Haar draws used to estimate the restriction's mass, per requested sample.
const MASS_DRAWS_PER_SAMPLE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalagrandReport {
    pub n: usize,
    pub samples: usize,
    pub gamma_mass_est: f64,
    pub gamma_mass_interval: Interval,
    /// `−log` of the estimated mass.
    pub s: f64,
    /// Empirical W2 (HS cost) between the restricted and Haar clouds.
    pub w2_est: f64,
    /// `sqrt(4 S / N)`.
    pub bound: f64,
    /// Empirical W2 between the two halves of the Haar cloud.
    pub allowance: f64,
    pub holds_within_ci: bool,
}

fn empirical_w2(x: &[UnitaryMatrix], y: &[UnitaryMatrix]) -> Result<f64> {
    let mu = DiscreteMeasure::uniform((0..x.len()).collect())?;
    let nu = DiscreteMeasure::uniform((0..y.len()).collect())?;
    let cost: Vec<Vec<f64>> = par_indexed(x.len(), |i| y.iter().map(|b| hs_cost(&x[i], b)).collect());
    Ok(wasserstein2(&mu, &nu, &cost, OtMethod::Exact)?.distance)
}

/// Finite-sample check of `W₂(λ, γ) ≤ sqrt((4/N) S(λ, γ))` on `SU(N)`,
/// where `λ` is Haar measure restricted to `{restriction}` and normalized.
///
/// Streams: `substream(0)` for the mass estimate, `substream(1)` for the
/// restricted cloud (by rejection), `substream(2)` for the Haar cloud.
pub fn talagrand_check(
    n: usize,
    restriction: &(dyn Fn(&UnitaryMatrix) -> bool + Sync),
    samples: usize,
    stream: &RngStream,
) -> Result<TalagrandReport> {
    if samples < MIN_TALAGRAND_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: samples,
            need: MIN_TALAGRAND_SAMPLES,
        });
    }
    if samples > EXACT_ATOM_LIMIT {
        return Err(invalid("samples", format!("at most {EXACT_ATOM_LIMIT} samples per side")));
    }
    let draws = MASS_DRAWS_PER_SAMPLE * samples;
    let mass_stream = stream.substream(0);
    let inside: Vec<Result<bool>> =
        par_indexed(draws, |k| Ok(restriction(&haar_unitary(n, Group::SU, &mass_stream.substream(k as u64))?)));
    let hits = inside.into_iter().collect::<Result<Vec<bool>>>()?.into_iter().filter(|b| *b).count();
    let mass = hits as f64 / draws as f64;
    if mass < MASS_FLOOR {
        return Err(invalid(
            "restriction",
            format!("estimated mass {mass:.4} is below the floor {MASS_FLOOR}"),
        ));
    }
    let s = relative_entropy_restricted(mass)?;

    let rej = stream.substream(1);
    let mut restricted = Vec::with_capacity(samples);
    let max_attempts = (samples as f64 / MASS_FLOOR) as usize * 10;
    let mut k = 0;
    while restricted.len() < samples {
        if k >= max_attempts {
            return Err(Error::Numerical("rejection sampler exhausted its attempts".into()));
        }
        let u = haar_unitary(n, Group::SU, &rej.substream(k as u64))?;
        if restriction(&u) {
            restricted.push(u);
        }
        k += 1;
    }
    let haar_stream = stream.substream(2);
    let haar: Vec<UnitaryMatrix> = par_indexed(samples, |k| haar_unitary(n, Group::SU, &haar_stream.substream(k as u64)))
        .into_iter()
        .collect::<Result<_>>()?;

    let w2_est = empirical_w2(&restricted, &haar)?;
    let half = samples / 2;
    let allowance = empirical_w2(&haar[..half], &haar[half..2 * half])?;
    let bound = (4.0 * s / n as f64).sqrt();
    Ok(TalagrandReport {
        n,
        samples,
        gamma_mass_est: mass,
        gamma_mass_interval: stats::wilson(hits as u64, draws as u64, stats::Z95),
        s,
        w2_est,
        bound,
        allowance,
        holds_within_ci: w2_est <= bound + allowance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cost(x: &[f64], y: &[f64]) -> Vec<Vec<f64>> {
        x.iter().map(|a| y.iter().map(|b| (a - b).powi(2)).collect()).collect()
    }

    #[test]
    fn identical_measures() {
        let mu = DiscreteMeasure::new(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        let pts = [0.0, 1.0, 3.0];
        let c = line_cost(&pts, &pts);
        let w = wasserstein2(&mu, &mu, &c, OtMethod::Exact).unwrap();
        assert!(w.distance < 1e-12);
        for i in 0..3 {
            assert!((w.plan.coupling[i][i] - mu.weights[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn diracs() {
        let w = wasserstein2(
            &DiscreteMeasure::dirac(0),
            &DiscreteMeasure::dirac(1),
            &[vec![9.0]],
            OtMethod::Exact,
        )
        .unwrap();
        assert!((w.distance - 3.0).abs() < 1e-12);
    }

    #[test]
    fn split_mass() {
        let mu = DiscreteMeasure::dirac(0);
        let nu = DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.5]).unwrap();
        let w = wasserstein2(&mu, &nu, &line_cost(&[0.0], &[0.0, 2.0]), OtMethod::Exact).unwrap();
        assert!((w.distance - 2f64.sqrt()).abs() < 1e-12);
        let e = wasserstein2(&mu, &nu, &line_cost(&[0.0], &[0.0, 2.0]), OtMethod::Entropic { reg: None }).unwrap();
        assert!(e.plan.cost + 1e-12 >= w.plan.cost - e.duality_gap);
    }

    #[test]
    fn sorted_matching_on_line() {
        // on the real line the monotone coupling is optimal
        let x = [0.3, -1.0, 2.5, 0.9];
        let y = [1.1, 0.0, -0.4, 3.0];
        let mu = DiscreteMeasure::uniform(vec![0, 1, 2, 3]).unwrap();
        let w = wasserstein2(&mu, &mu, &line_cost(&x, &y), OtMethod::Exact).unwrap();
        let (mut xs, mut ys) = (x.to_vec(), y.to_vec());
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let want: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 4.0;
        assert!((w.plan.cost - want).abs() < 1e-12);
        assert!(w.plan.marginal_error(&mu, &mu) < 1e-12);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(vec![0, 1], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn relative_entropy_values() {
        assert_eq!(relative_entropy_restricted(1.0).unwrap(), 0.0);
        assert!((relative_entropy_restricted(0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((relative_entropy_restricted(0.1).unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!(relative_entropy_restricted(0.0).is_err());
    }

    #[test]
    fn scalar_metric_comparison() {
        let u = UnitaryMatrix::identity(1);
        let v = UnitaryMatrix::from_phases(&[1.0]);
        let r = metric_comparison(&[u.clone()], &[v]).unwrap();
        assert!((r.d_hs - (c64::from_polar(1.0, 1.0) - 1.0).norm()).abs() < 1e-12);
        assert!((r.d_geod_upper - 1.0).abs() < 1e-12);
        assert!(r.ordered);
        let r = metric_comparison(&[u.clone()], &[u]).unwrap();
        assert_eq!((r.d_hs, r.d_geod_upper), (0.0, 0.0));
    }

    #[test]
    fn branch_flag_at_pi() {
        let r = metric_comparison(&[UnitaryMatrix::identity(1)], &[UnitaryMatrix::from_phases(&[std::f64::consts::PI])]).unwrap();
        assert!(r.branch_ambiguous);
        assert!(r.ordered);
    }

    #[test]
    fn lipschitz_trivial_cases() {
        let u = haar_unitary(4, Group::U, &RngStream::new(1, 0)).unwrap();
        let v = haar_unitary(4, Group::U, &RngStream::new(1, 1)).unwrap();
        let xi = HermitianMatrix::from_diagonal(&[1.0, -2.0, 0.5, 0.0]);
        let r = conjugation_lipschitz_check(&xi, &u, &u).unwrap();
        assert!(r.lhs < 1e-12 && r.holds);
        let r = conjugation_lipschitz_check(&HermitianMatrix::identity(4), &u, &v).unwrap();
        assert!(r.lhs < 1e-12 && r.holds);
    }

    #[test]
    fn talagrand_full_restriction() {
        let r = talagrand_check(2, &|_| true, 200, &RngStream::new(3, 0)).unwrap();
        assert_eq!(r.s, 0.0);
        assert_eq!(r.bound, 0.0);
        assert!(r.holds_within_ci);
    }

    #[test]
    fn talagrand_mass_floor() {
        let tiny = |u: &UnitaryMatrix| linalg::tr_n(u.as_mat()).re > 0.95;
        assert!(talagrand_check(2, &tiny, 200, &RngStream::new(3, 0)).is_err());
    }
}
