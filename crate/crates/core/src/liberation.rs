//! Finite-N unitary Brownian motion, the liberation process, and finite-scale
//! orbital dimension curves.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::config::TOLERANCES;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, CMat, UnitaryMatrix};
use crate::microstates::{estimate_orbital_measure, MatrixTuple, MicrostateParams, OrbitalEstimate};
use crate::ncalg::{FreeProductEvaluator, Layout, Letter, LetterKind, MomentOracle, TracialSpec, Word};
use crate::rng::{par_indexed, RngStream};
use crate::sampling::gue_from;
use crate::stats::{self, Interval};

/// Default integration step count per unit time.
pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;

/// Number of argument bins in spectral histograms.
pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Retraction {
    /// Unitary factor of the polar decomposition of the Euler predictor.
    #[default]
    Polar,
    /// `exp(i dH)`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Simulated unitary Brownian motion at time `ε`.
    Fubm,
    /// `exp(i √ε h)` with `h` a GUE draw.
    ExpSqrtT,
}

#[derive(Debug, Clone)]
pub struct FubmPath {
    pub n: usize,
    pub times: Vec<f64>,
    /// `unitaries[copy][time]`.
    pub unitaries: Vec<Vec<UnitaryMatrix>>,
    pub step_size: f64,
    pub retraction: Retraction,
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() || times[0] != 0.0 {
        return Err(invalid("t_grid", "time grid must start at 0"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("t_grid", "time grid must be strictly increasing and finite"));
    }
    Ok(())
}

fn validate_steps(steps_per_unit: usize) -> Result<()> {
    if steps_per_unit < 100 {
        return Err(invalid(
            "steps_per_unit",
            format!("need at least 100 steps per unit time, got {steps_per_unit}"),
        ));
    }
    Ok(())
}

/// Unitary polar factor of a near-unitary matrix by Newton–Schulz iteration
/// `X ← X (3I − X*X) / 2`, which converges when `‖X*X − I‖_op < 1`.
fn polar_newton_schulz(mut x: CMat, time: f64) -> Result<CMat> {
    let n = x.nrows();
    for _ in 0..30 {
        let g = linalg::adj_mul(&x, &x);
        let mut err = 0.0;
        let m = Mat::from_fn(n, n, |j, k| {
            let id = if j == k { 1.0 } else { 0.0 };
            let e = g[(j, k)] - c64::new(id, 0.0);
            err += e.norm_sqr();
            c64::new(1.5 * id, 0.0) - 0.5 * g[(j, k)]
        });
        let err = err.sqrt();
        if !(err < 1.0) {
            return Err(Error::StepSize { residual: err, time });
        }
        x = linalg::mul(&x, &m);
        // convergence is quadratic, so this sweep leaves a residual of order err²
        if err < 1e-7 {
            return Ok(x);
        }
    }
    Err(Error::StepSize {
        residual: linalg::unitarity_residual(&x),
        time,
    })
}

/// One retracted increment `W ≈ I + i dH − (dt/2) I` with
/// `E tr_N(dH^2) = dt`.
fn increment<R: rand::Rng>(n: usize, dt: f64, time: f64, retraction: Retraction, rng: &mut R) -> Result<CMat> {
    let h = gue_from(n, rng);
    let s = dt.sqrt();
    match retraction {
        Retraction::Polar => {
            // rescaling by the mean of |1 − dt/2 + i s λ|² centres the spectrum of X*X at 1
            let d = 1.0 - 0.5 * dt;
            let c = 1.0 / (d * d + dt).sqrt();
            let hm = h.as_mat();
            let a = Mat::from_fn(n, n, |j, k| {
                let diag = if j == k { d } else { 0.0 };
                c * (c64::new(diag, 0.0) + c64::new(0.0, s) * hm[(j, k)])
            });
            polar_newton_schulz(a, time)
        }
        Retraction::Exponential => {
            let (lam, v) = linalg::eigh_raw(h.as_mat())?;
            let phases: Vec<c64> = lam.iter().map(|&l| c64::from_polar(1.0, s * l)).collect();
            let scaled = Mat::from_fn(n, n, |j, k| v[(j, k)] * phases[k]);
            Ok(linalg::mul_adj(&scaled, &v))
        }
    }
}

/// Integrates one path and calls `visit(time_index, U)` at every grid time.
///
/// Between consecutive grid times the interval is split into
/// `⌈Δt · steps_per_unit⌉` equal steps, so grid times are hit exactly.
pub fn simulate_fubm_copy(
    n: usize,
    t_grid: &[f64],
    steps_per_unit: usize,
    retraction: Retraction,
    stream: &RngStream,
    mut visit: impl FnMut(usize, &CMat) -> Result<()>,
) -> Result<()> {
    if n == 0 {
        return Err(invalid("N", "dimension must be at least 1"));
    }
    validate_grid(t_grid)?;
    validate_steps(steps_per_unit)?;
    let mut rng = stream.rng();
    let mut u: CMat = Mat::identity(n, n);
    visit(0, &u)?;
    for k in 1..t_grid.len() {
        let span = t_grid[k] - t_grid[k - 1];
        let steps = ((span * steps_per_unit as f64) - 1e-9).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        if !(1.0 - 0.5 * dt > 0.0) {
            return Err(Error::StepSize {
                residual: f64::NAN,
                time: t_grid[k - 1],
            });
        }
        for step in 0..steps {
            let w = increment(n, dt, t_grid[k - 1] + step as f64 * dt, retraction, &mut rng)?;
            u = linalg::mul(&u, &w);
        }
        let residual = linalg::unitarity_residual(&u);
        if residual > TOLERANCES.path_unitarity {
            return Err(Error::StepSize {
                residual,
                time: t_grid[k],
            });
        }
        visit(k, &u)?;
    }
    Ok(())
}

/// Simulates `n_copies` independent paths; copy `c` uses
/// `stream.substream(c)`. Keeps every grid matrix in memory.
pub fn simulate_fubm(
    n: usize,
    t_grid: &[f64],
    steps_per_unit: usize,
    n_copies: usize,
    stream: &RngStream,
    retraction: Retraction,
) -> Result<FubmPath> {
    if n_copies == 0 {
        return Err(invalid("n_copies", "need at least one copy"));
    }
    let copies: Vec<Result<Vec<UnitaryMatrix>>> = par_indexed(n_copies, |c| {
        let mut out = Vec::with_capacity(t_grid.len());
        simulate_fubm_copy(n, t_grid, steps_per_unit, retraction, &stream.substream(c as u64), |_, u| {
            out.push(UnitaryMatrix::new_unchecked(u.clone()));
            Ok(())
        })?;
        Ok(out)
    });
    Ok(FubmPath {
        n,
        times: t_grid.to_vec(),
        unitaries: copies.into_iter().collect::<Result<_>>()?,
        step_size: 1.0 / steps_per_unit as f64,
        retraction,
    })
}

/// Per-matrix diagnostics used by the statistics report.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Snapshot {
    trace: c64,
    op_dist: f64,
    two_dist: f64,
    residual: f64,
}

fn snapshot(u: &CMat, hist: &mut [u64]) -> Result<Snapshot> {
    let n = u.nrows();
    let trace = linalg::tr_n(u);
    let eig = u.as_ref().eigenvalues().map_err(|_| Error::EigenConvergence {
        dim: n,
        residual: f64::NAN,
    })?;
    let mut op: f64 = 0.0;
    for z in eig {
        op = op.max((z - c64::new(1.0, 0.0)).norm());
        let arg = z.arg();
        let bin = (((arg + std::f64::consts::PI) / std::f64::consts::TAU) * hist.len() as f64) as usize;
        hist[bin.min(hist.len() - 1)] += 1;
    }
    Ok(Snapshot {
        trace,
        op_dist: op,
        two_dist: (2.0 - 2.0 * trace.re).max(0.0).sqrt(),
        residual: linalg::unitarity_residual(u),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FubmReport {
    pub times: Vec<f64>,
    pub copies: usize,
    /// Mean of `tr_N U(t)` (real and imaginary parts).
    pub mean_trace_re: Vec<f64>,
    pub mean_trace_im: Vec<f64>,
    /// Standard error of the real part.
    pub mean_trace_se: Vec<f64>,
    /// Mean `‖v(t) − 1‖_op` and its standard error.
    pub norm_op_mean: Vec<f64>,
    pub norm_op_se: Vec<f64>,
    /// Mean `‖v(t) − 1‖_{2,tr_N}`.
    pub norm_2_mean: Vec<f64>,
    /// Eigenvalue-argument histogram per time over `(−π, π]`.
    pub histograms: Vec<Vec<u64>>,
    pub max_abs_argument: Vec<f64>,
    pub max_unitarity_residual: f64,
}

fn reduce_report(times: &[f64], per_copy: Vec<Vec<(Snapshot, Vec<u64>, f64)>>) -> FubmReport {
    let copies = per_copy.len();
    let nt = times.len();
    let mut report = FubmReport {
        times: times.to_vec(),
        copies,
        mean_trace_re: vec![0.0; nt],
        mean_trace_im: vec![0.0; nt],
        mean_trace_se: vec![0.0; nt],
        norm_op_mean: vec![0.0; nt],
        norm_op_se: vec![0.0; nt],
        norm_2_mean: vec![0.0; nt],
        histograms: vec![vec![0; HISTOGRAM_BINS]; nt],
        max_abs_argument: vec![0.0; nt],
        max_unitarity_residual: 0.0,
    };
    for k in 0..nt {
        let re: Vec<f64> = per_copy.iter().map(|c| c[k].0.trace.re).collect();
        let im: Vec<f64> = per_copy.iter().map(|c| c[k].0.trace.im).collect();
        let op: Vec<f64> = per_copy.iter().map(|c| c[k].0.op_dist).collect();
        let two: Vec<f64> = per_copy.iter().map(|c| c[k].0.two_dist).collect();
        let (mr, sr) = stats::mean_se(&re);
        let (mo, so) = stats::mean_se(&op);
        report.mean_trace_re[k] = mr;
        report.mean_trace_se[k] = if copies > 1 { sr } else { 0.0 };
        report.mean_trace_im[k] = stats::mean_se(&im).0;
        report.norm_op_mean[k] = mo;
        report.norm_op_se[k] = if copies > 1 { so } else { 0.0 };
        report.norm_2_mean[k] = stats::mean_se(&two).0;
        for c in &per_copy {
            for (h, x) in report.histograms[k].iter_mut().zip(&c[k].1) {
                *h += x;
            }
            report.max_abs_argument[k] = report.max_abs_argument[k].max(c[k].2);
            report.max_unitarity_residual = report.max_unitarity_residual.max(c[k].0.residual);
        }
    }
    report
}

fn max_abs_arg(u: &CMat) -> Result<f64> {
    let eig = u.as_ref().eigenvalues().map_err(|_| Error::EigenConvergence {
        dim: u.nrows(),
        residual: f64::NAN,
    })?;
    Ok(eig.iter().fold(0.0_f64, |m, z| m.max(z.arg().abs())))
}

fn copy_snapshot(u: &CMat) -> Result<(Snapshot, Vec<u64>, f64)> {
    let mut hist = vec![0u64; HISTOGRAM_BINS];
    let s = snapshot(u, &mut hist)?;
    Ok((s, hist, max_abs_arg(u)?))
}

/// Per-time aggregates over the copies of a stored path.
pub fn fubm_stats(path: &FubmPath) -> Result<FubmReport> {
    if path.unitaries.is_empty() || path.times.is_empty() {
        return Err(invalid("path", "path must contain at least one copy and one time"));
    }
    let per_copy: Vec<Vec<(Snapshot, Vec<u64>, f64)>> = path
        .unitaries
        .iter()
        .map(|c| c.iter().map(|u| copy_snapshot(u.as_mat())).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok(reduce_report(&path.times, per_copy))
}

/// Simulates and aggregates without storing the matrices. Produces the same
/// report as `fubm_stats(simulate_fubm(..))`.
pub fn fubm_stats_streaming(
    n: usize,
    t_grid: &[f64],
    steps_per_unit: usize,
    n_copies: usize,
    stream: &RngStream,
    retraction: Retraction,
) -> Result<FubmReport> {
    if n_copies == 0 {
        return Err(invalid("n_copies", "need at least one copy"));
    }
    let per_copy: Vec<Result<Vec<(Snapshot, Vec<u64>, f64)>>> = par_indexed(n_copies, |c| {
        let mut out = Vec::with_capacity(t_grid.len());
        simulate_fubm_copy(n, t_grid, steps_per_unit, retraction, &stream.substream(c as u64), |_, u| {
            out.push(copy_snapshot(u)?);
            Ok(())
        })?;
        Ok(out)
    });
    Ok(reduce_report(t_grid, per_copy.into_iter().collect::<Result<_>>()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConvergence {
    pub time: f64,
    pub mean_full_step: f64,
    pub mean_half_step: f64,
    pub difference: f64,
    /// Half-width of the combined 95% interval.
    pub ci_half_width: f64,
    pub converged: bool,
}

/// Convergence guard: reruns with half the step on independent streams and
/// compares `E tr_N U(t)`.
pub fn check_step_convergence(
    n: usize,
    t: f64,
    steps_per_unit: usize,
    n_copies: usize,
    stream: &RngStream,
    retraction: Retraction,
) -> Result<StepConvergence> {
    let grid = [0.0, t];
    let a = fubm_stats_streaming(n, &grid, steps_per_unit, n_copies, &stream.substream(0), retraction)?;
    let b = fubm_stats_streaming(n, &grid, 2 * steps_per_unit, n_copies, &stream.substream(1), retraction)?;
    let diff = (a.mean_trace_re[1] - b.mean_trace_re[1]).abs();
    let hw = stats::Z95 * (a.mean_trace_se[1].powi(2) + b.mean_trace_se[1].powi(2)).sqrt();
    Ok(StepConvergence {
        time: t,
        mean_full_step: a.mean_trace_re[1],
        mean_half_step: b.mean_trace_re[1],
        difference: diff,
        ci_half_width: hw,
        converged: diff < hw,
    })
}

/// Rotated tuples `(v_i(t) Ξ_i v_i(t)*)` along one liberation path per
/// family. Family `i` uses `stream.substream(i)`.
pub fn liberation_trajectory(
    xi: &MatrixTuple,
    t_grid: &[f64],
    steps_per_unit: usize,
    stream: &RngStream,
    retraction: Retraction,
) -> Result<Vec<MatrixTuple>> {
    let n = xi
        .first()
        .and_then(|f| f.first())
        .map(|m| m.nrows())
        .ok_or_else(|| invalid("Xi", "reference tuple must be non-empty"))?;
    if xi.iter().flatten().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::DimensionMismatch("reference matrices must share one dimension".into()));
    }
    let mut out: Vec<MatrixTuple> = vec![Vec::with_capacity(xi.len()); t_grid.len()];
    for (i, fam) in xi.iter().enumerate() {
        simulate_fubm_copy(n, t_grid, steps_per_unit, retraction, &stream.substream(i as u64), |k, u| {
            out[k].push(fam.iter().map(|m| linalg::conjugate(u, m)).collect());
            Ok(())
        })?;
    }
    Ok(out)
}

/// Law of `(v_1 X_1 v_1*, …, v_n X_n v_n*, v_1, …, v_n)` where the families
/// `X_i` have joint law `base` and the `v_i` are free from `base` and from
/// each other, each with the law of a given unitary matrix.
///
/// Layout: the `n` rotated families of `base`, then one family holding the
/// `n` unitaries.
pub struct LiberatedOracle {
    base: TracialSpec,
    unitaries: Vec<TracialSpec>,
    /// Base `(family, variable)` ↦ flattened variable index.
    flat: Vec<Vec<usize>>,
    base_layout: Layout,
}

impl LiberatedOracle {
    pub fn new(base: TracialSpec, unitaries: &[UnitaryMatrix]) -> Result<Self> {
        let base_layout = base.layout();
        if unitaries.len() != base_layout.family_count() {
            return Err(invalid(
                "unitaries",
                format!(
                    "{} unitaries for {} families",
                    unitaries.len(),
                    base_layout.family_count()
                ),
            ));
        }
        let mut idx = 0;
        let flat = base_layout
            .families
            .iter()
            .map(|f| {
                f.iter()
                    .map(|_| {
                        idx += 1;
                        idx - 1
                    })
                    .collect()
            })
            .collect();
        let unitaries = unitaries
            .iter()
            .map(|u| {
                let spec = TracialSpec::matrix_model(vec![vec![u.as_mat().clone()]])?;
                match spec.layout().families[0][0] {
                    LetterKind::Unitary => Ok(spec),
                    // self-adjoint unitaries are involutions; treat them as unitary letters
                    LetterKind::SelfAdjoint => Err(invalid(
                        "unitaries",
                        "rotation unitaries must not be self-adjoint",
                    )),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            base,
            unitaries,
            flat,
            base_layout,
        })
    }

    fn expand(&self, w: &Word) -> Word {
        let n = self.base_layout.family_count();
        let mut out = Vec::with_capacity(3 * w.len());
        for l in &w.0 {
            if l.family < n {
                out.push(Letter::new(1 + l.family, 0));
                out.push(Letter::new(0, self.flat[l.family][l.variable]));
                out.push(Letter::adj(1 + l.family, 0));
            } else {
                out.push(Letter {
                    family: 1 + l.variable,
                    variable: 0,
                    adjoint: l.adjoint,
                });
            }
        }
        Word(out)
    }

    fn evaluator(&self) -> FreeProductEvaluator<'_> {
        let mut marginals: Vec<&dyn MomentOracle> = vec![&self.base as &dyn MomentOracle];
        marginals.extend(self.unitaries.iter().map(|u| u as &dyn MomentOracle));
        FreeProductEvaluator::new(marginals)
    }
}

impl MomentOracle for LiberatedOracle {
    fn layout(&self) -> Layout {
        let mut families = self.base_layout.families.clone();
        families.push(vec![LetterKind::Unitary; self.unitaries.len()]);
        Layout { families }
    }

    fn moment(&self, w: &Word) -> Result<c64> {
        self.layout().validate(w)?;
        self.evaluator().compute(&self.expand(w))
    }

    fn operator_bound(&self) -> f64 {
        self.base.operator_bound().max(1.0)
    }

    fn moments(&self, words: &[Word]) -> Result<Vec<c64>> {
        let layout = self.layout();
        let mut ev = self.evaluator();
        words
            .iter()
            .map(|w| {
                layout.validate(w)?;
                ev.compute(&self.expand(w))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCurve {
    pub epsilons: Vec<f64>,
    /// `log_measure_per_N2 / |log ε^{1/2}|`; `-inf` at zero-hit points.
    pub values: Vec<f64>,
    pub zero_hit: Vec<bool>,
    pub hit_fractions: Vec<f64>,
    /// Wilson interval of each value, mapped through the same transform.
    pub intervals: Vec<Interval>,
    pub n_samples: usize,
    pub generator: Generator,
}

/// Rotation unitaries at scale `ε` for each family.
pub fn rotation_unitaries(
    n: usize,
    families: usize,
    eps: f64,
    generator: Generator,
    steps_per_unit: usize,
    stream: &RngStream,
) -> Result<Vec<UnitaryMatrix>> {
    (0..families)
        .map(|i| {
            let s = stream.substream(i as u64);
            match generator {
                Generator::Fubm => {
                    let mut last = None;
                    simulate_fubm_copy(n, &[0.0, eps], steps_per_unit, Retraction::Polar, &s, |k, u| {
                        if k == 1 {
                            last = Some(u.clone());
                        }
                        Ok(())
                    })?;
                    last.map(UnitaryMatrix::new_unchecked)
                        .ok_or_else(|| Error::Internal("path produced no endpoint".into()))
                }
                Generator::ExpSqrtT => {
                    let h = gue_from(n, &mut s.rng());
                    linalg::unitary_exp(&h.scale(eps.sqrt()))
                }
            }
        })
        .collect()
}

/// Finite-scale orbital dimension curve.
///
/// For each `ε`, draws rotation unitaries `V_i(ε)`, estimates the Haar
/// measure of orbital microstates for the liberated target in the presence
/// of the `V_i`, and divides the per-`N²` log by `|log ε^{1/2}|`. Point `e`
/// uses `stream.substream(e)`.
#[allow(clippy::too_many_arguments)]
pub fn delta0orb_curve(
    target: &TracialSpec,
    xi: &MatrixTuple,
    params: &MicrostateParams,
    eps_grid: &[f64],
    n_samples: usize,
    stream: &RngStream,
    generator: Generator,
    steps_per_unit: usize,
) -> Result<DimensionCurve> {
    params.validate()?;
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(invalid("eps_grid", "grid values must lie in (0, 1]"));
    }
    if eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("eps_grid", "grid must be strictly decreasing"));
    }
    let families = target.layout().family_count();
    let mut curve = DimensionCurve {
        epsilons: eps_grid.to_vec(),
        values: Vec::with_capacity(eps_grid.len()),
        zero_hit: Vec::with_capacity(eps_grid.len()),
        hit_fractions: Vec::with_capacity(eps_grid.len()),
        intervals: Vec::with_capacity(eps_grid.len()),
        n_samples,
        generator,
    };
    for (e, &eps) in eps_grid.iter().enumerate() {
        let s = stream.substream(e as u64);
        let vs = rotation_unitaries(params.n, families, eps, generator, steps_per_unit, &s.substream(0))?;
        let oracle = LiberatedOracle::new(target.clone(), &vs)?;
        let est: OrbitalEstimate =
            estimate_orbital_measure(target, xi, params, n_samples, &s.substream(1), Some((&vs, &oracle)))?;
        let denom = (0.5 * eps.ln()).abs();
        let n2 = (params.n * params.n) as f64;
        let map = |p: f64| {
            if p > 0.0 {
                p.ln() / n2 / denom
            } else {
                f64::NEG_INFINITY
            }
        };
        // ε = 1 gives a zero denominator; the value is then reported as 0
        // for full hits and −inf otherwise
        let value = if denom == 0.0 {
            if est.hits as usize == n_samples {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            est.log_measure_per_n2 / denom
        };
        curve.values.push(value);
        curve.zero_hit.push(est.zero_hits);
        curve.hit_fractions.push(est.hit_fraction);
        curve.intervals.push(Interval {
            lo: map(est.wilson_interval.lo),
            hi: map(est.wilson_interval.hi),
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstates::reference_microstates;

    #[test]
    fn starts_at_identity() {
        let p = simulate_fubm(4, &[0.0, 0.1], 200, 2, &RngStream::new(1, 0), Retraction::Polar).unwrap();
        for c in &p.unitaries {
            assert_eq!(c[0].as_mat(), UnitaryMatrix::identity(4).as_mat());
            assert!(c[1].residual() < 1e-8);
        }
    }

    #[test]
    fn rejects_coarse_steps() {
        assert!(simulate_fubm(4, &[0.0, 1.0], 50, 1, &RngStream::new(1, 0), Retraction::Polar).is_err());
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(simulate_fubm(4, &[0.1, 1.0], 200, 1, &RngStream::new(1, 0), Retraction::Polar).is_err());
        assert!(simulate_fubm(4, &[0.0, 0.5, 0.5], 200, 1, &RngStream::new(1, 0), Retraction::Polar).is_err());
    }

    #[test]
    fn paths_are_reproducible() {
        let a = simulate_fubm(5, &[0.0, 0.3], 200, 3, &RngStream::new(9, 1), Retraction::Polar).unwrap();
        let b = simulate_fubm(5, &[0.0, 0.3], 200, 3, &RngStream::new(9, 1), Retraction::Polar).unwrap();
        for (x, y) in a.unitaries.iter().zip(&b.unitaries) {
            assert_eq!(x[1].as_mat(), y[1].as_mat());
        }
    }

    #[test]
    fn streaming_matches_stored() {
        let grid = [0.0, 0.05, 0.2];
        let s = RngStream::new(4, 4);
        let a = fubm_stats(&simulate_fubm(6, &grid, 200, 4, &s, Retraction::Exponential).unwrap()).unwrap();
        let b = fubm_stats_streaming(6, &grid, 200, 4, &s, Retraction::Exponential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_time_spectrum_near_one() {
        let r = fubm_stats_streaming(16, &[0.0, 1e-3], 1000, 8, &RngStream::new(2, 0), Retraction::Polar).unwrap();
        assert!(r.max_abs_argument[1] < 0.5);
    }

    #[test]
    fn trajectory_preserves_spectra() {
        let t = TracialSpec::free_product(vec![
            TracialSpec::projection(0.5).unwrap(),
            TracialSpec::semicircular(),
        ])
        .unwrap();
        let xi = reference_microstates(&t, 8).unwrap();
        let traj = liberation_trajectory(&xi, &[0.0, 0.5], 200, &RngStream::new(3, 0), Retraction::Polar).unwrap();
        assert_eq!(traj[0][0][0], xi[0][0]);
        for (f, fam) in xi.iter().enumerate() {
            let d0 = linalg::eigvalsh(&linalg::HermitianMatrix::hermitian_part(&fam[0]).unwrap()).unwrap();
            let d1 = linalg::eigvalsh(&linalg::HermitianMatrix::hermitian_part(&traj[1][f][0]).unwrap()).unwrap();
            for (a, b) in d0.values().iter().zip(d1.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn liberated_oracle_low_degree_values() {
        let base = TracialSpec::projection(0.5).unwrap();
        let v = rotation_unitaries(6, 1, 0.3, Generator::ExpSqrtT, 1000, &RngStream::new(5, 0)).unwrap();
        let o = LiberatedOracle::new(base, &v).unwrap();
        // τ(v X v*) = τ(X)
        let y = o.moment(&Word(vec![Letter::new(0, 0)])).unwrap();
        assert!((y - c64::new(0.5, 0.0)).norm() < 1e-12);
        // τ(Y v) = τ(v X) = τ(v) τ(X)
        let tv = linalg::tr_n(v[0].as_mat());
        let yv = o.moment(&Word(vec![Letter::new(0, 0), Letter::new(1, 0)])).unwrap();
        assert!((yv - tv * 0.5).norm() < 1e-12);
    }

    #[test]
    fn curve_rejects_bad_grid() {
        let t = TracialSpec::projection(0.5).unwrap();
        let xi = reference_microstates(&t, 4).unwrap();
        let p = MicrostateParams::new(4, 2, 0.1, None).unwrap();
        for grid in [vec![0.0], vec![1.5], vec![0.1, 0.2]] {
            assert!(delta0orb_curve(&t, &xi, &p, &grid, 100, &RngStream::new(0, 0), Generator::ExpSqrtT, 1000).is_err());
        }
    }
}
