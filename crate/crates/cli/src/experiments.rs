//! Named experiments. Each one is a typed parameter record that validates
//! itself before any computation and then produces a single artifact.

use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use orbilab::classical::{h_sym_exact, h_sym_mc, mutual_information, JointDistribution};
use orbilab::dimension::{
    check_kp_sandwich, delta0_compose, delta0_hyperfinite, parse_rational, HyperfiniteProfile, PointCloud, Relation,
    EXACT_LIMIT, PROFILE_SCHEMA,
};
use orbilab::liberation::{delta0orb_curve, fubm_stats_streaming, Generator, Retraction};
use orbilab::linalg::{self, CMat, HermitianMatrix, UnitaryMatrix};
use orbilab::microstates::{estimate_orbital_measure, reference_microstates, MicrostateParams};
use orbilab::ncalg::{mf_free_deviation, TracialSpec, DEFAULT_WORD_BUDGET};
use orbilab::rng::RngStream;
use orbilab::sampling::{check_factorization, haar_unitary, Group};
use orbilab::transport::talagrand_check;

use crate::artifact::{num, Output};
use crate::error::{from_core, CliError, FieldError};

pub struct RunCtx {
    pub seed: u64,
    pub deadline: Option<Instant>,
}

impl RunCtx {
    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }
}

pub struct Finished {
    pub output: Output,
    /// Set when the budget ran out. Loop experiments stop early; single-shot
    /// ones finish and are flagged.
    pub partial: bool,
}

trait Experiment: DeserializeOwned + Serialize + Send + Sync {
    const SDE: bool = false;
    fn validate(&self) -> Vec<FieldError>;
    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError>;
}

pub trait Prepared: Send + Sync {
    fn params(&self) -> toml::Table;
    fn uses_sde(&self) -> bool;
    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError>;
}

struct Typed<E>(E);

impl<E: Experiment> Prepared for Typed<E> {
    fn params(&self) -> toml::Table {
        match toml::Value::try_from(&self.0) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("parameter records serialize to tables"),
        }
    }

    fn uses_sde(&self) -> bool {
        E::SDE
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        self.0.run(ctx)
    }
}

fn prepare<E: Experiment + 'static>(params: toml::Table) -> Result<Box<dyn Prepared>, CliError> {
    let e: E = toml::Value::Table(params)
        .try_into()
        .map_err(|err: toml::de::Error| CliError::field("params", err.message().to_string()))?;
    let errors = e.validate();
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    Ok(Box::new(Typed(e)))
}

pub struct Entry {
    pub name: &'static str,
    pub anchor: &'static str,
    pub summary: &'static str,
    pub required: &'static [&'static str],
    /// Optional parameters and their defaults.
    pub optional: &'static [(&'static str, &'static str)],
    pub prepare: fn(toml::Table) -> Result<Box<dyn Prepared>, CliError>,
}

pub const REGISTRY: &[Entry] = &[
    Entry {
        name: "orbital-measure",
        anchor: "Definition 2.1",
        summary: "Monte Carlo Haar measure of the orbital microstate set",
        required: &["target", "N", "m", "delta", "samples"],
        optional: &[("R", "none")],
        prepare: prepare::<OrbitalMeasure>,
    },
    Entry {
        name: "hsym-mi",
        anchor: "Remark 2.7",
        summary: "Exact and Monte Carlo symmetric-group microstate entropy of a Bernoulli pair",
        required: &["N", "delta"],
        optional: &[("joint", "diagonal"), ("p", "0.5"), ("m", "2"), ("samples", "100000")],
        prepare: prepare::<HsymMi>,
    },
    Entry {
        name: "asymptotic-freeness",
        anchor: "Lemma 1.3",
        summary: "Free deviation of two independently Haar-rotated diag(+1,-1) families",
        required: &["N", "m", "trials"],
        optional: &[],
        prepare: prepare::<AsymptoticFreeness>,
    },
    Entry {
        name: "factorization",
        anchor: "Section 1.2",
        summary: "Eigenvalue and eigenvector tests of the GUE measure factorization",
        required: &["N", "samples"],
        optional: &[],
        prepare: prepare::<Factorization>,
    },
    Entry {
        name: "fubm",
        anchor: "Definition 5.1",
        summary: "Matrix free unitary Brownian motion statistics",
        required: &["N", "times", "copies"],
        optional: &[("steps_per_unit", "1000"), ("retraction", "polar")],
        prepare: prepare::<Fubm>,
    },
    Entry {
        name: "delta0orb-curve",
        anchor: "Definition 5.1",
        summary: "Finite-N orbital dimension curve over an epsilon grid",
        required: &["target", "N", "m", "delta", "eps_grid", "samples"],
        optional: &[("generator", "fubm"), ("steps_per_unit", "1000")],
        prepare: prepare::<Delta0orbCurve>,
    },
    Entry {
        name: "kp-sandwich",
        anchor: "Section 5",
        summary: "Exact covering and packing numbers of a seeded point cloud",
        required: &["points", "eps"],
        optional: &[("dim", "2")],
        prepare: prepare::<KpSandwichRun>,
    },
    Entry {
        name: "talagrand",
        anchor: "Proposition 3.5",
        summary: "Restricted-Haar relative entropy against empirical W2 on SU(N)",
        required: &["samples"],
        optional: &[("N", "2"), ("restriction", "half-trace")],
        prepare: prepare::<Talagrand>,
    },
    Entry {
        name: "delta0-compose",
        anchor: "Theorem 5.8",
        summary: "Exact dimension of hyperfinite profiles and of their join",
        required: &["profiles", "relation"],
        optional: &[],
        prepare: prepare::<Delta0Compose>,
    },
];

pub fn lookup(name: &str) -> Option<&'static Entry> {
    REGISTRY.iter().find(|e| e.name == name)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Target {
    FreeProjections,
    IdenticalProjections,
    FreeSigns,
}

impl Target {
    fn spec(self) -> orbilab::Result<TracialSpec> {
        match self {
            Target::FreeProjections => {
                let p = TracialSpec::projection(0.5)?;
                TracialSpec::free_product(vec![p.clone(), p])
            }
            Target::IdenticalProjections => {
                TracialSpec::joint_atoms(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0.5, 0.5], vec![1, 1])
            }
            Target::FreeSigns => {
                let s = TracialSpec::finite_atoms(&[-1.0, 1.0], &[0.5, 0.5])?;
                TracialSpec::free_product(vec![s.clone(), s])
            }
        }
    }
}

fn core_errors(r: orbilab::Result<impl Sized>) -> Vec<FieldError> {
    match r.map_err(from_core) {
        Err(CliError::Validation(v)) => v,
        Err(e) => vec![FieldError::new("params", e.to_string())],
        Ok(_) => Vec::new(),
    }
}

fn require(errors: &mut Vec<FieldError>, ok: bool, field: &str, message: &str) {
    if !ok {
        errors.push(FieldError::new(format!("params.{field}"), message));
    }
}

fn json_out<T: Serialize>(value: &T, ctx: &RunCtx) -> Result<Finished, CliError> {
    Ok(Finished {
        output: Output::Json(serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?),
        partial: ctx.expired(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitalMeasure {
    target: Target,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    delta: f64,
    samples: usize,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
}

impl Experiment for OrbitalMeasure {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = core_errors(MicrostateParams::new(self.n, self.m, self.delta, self.r));
        require(&mut e, self.samples >= 100, "samples", "need at least 100 samples");
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let target = self.target.spec()?;
        let xi = reference_microstates(&target, self.n)?;
        let params = MicrostateParams::new(self.n, self.m, self.delta, self.r)?;
        let est = estimate_orbital_measure(&target, &xi, &params, self.samples, &ctx.stream(), None)?;
        json_out(
            &json!({ "estimate": est, "log_upper_per_n2": est.log_upper_per_n2(self.n) }),
            ctx,
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum JointKind {
    Diagonal,
    Independent,
}

fn default_joint() -> JointKind {
    JointKind::Diagonal
}
fn half() -> f64 {
    0.5
}
fn two() -> u32 {
    2
}
fn hundred_thousand() -> usize {
    100_000
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HsymMi {
    #[serde(rename = "N")]
    n: usize,
    delta: f64,
    #[serde(default = "default_joint")]
    joint: JointKind,
    #[serde(default = "half")]
    p: f64,
    #[serde(default = "two")]
    m: u32,
    #[serde(default = "hundred_thousand")]
    samples: usize,
}

/// Above this size the exact enumeration is skipped.
const HSYM_EXACT_LIMIT: usize = 200;

impl HsymMi {
    fn joint(&self) -> orbilab::Result<JointDistribution> {
        let w = [1.0 - self.p, self.p];
        match self.joint {
            JointKind::Diagonal => JointDistribution::diagonal(vec![0.0, 1.0], &w),
            JointKind::Independent => JointDistribution::independent(vec![0.0, 1.0], &w, vec![0.0, 1.0], &w),
        }
    }
}

impl Experiment for HsymMi {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = core_errors(self.joint());
        require(&mut e, self.p > 0.0 && self.p < 1.0, "p", "must lie in (0, 1)");
        require(&mut e, self.n >= 1, "N", "must be at least 1");
        require(&mut e, self.delta >= 0.0 && self.delta.is_finite(), "delta", "must be finite and non-negative");
        require(&mut e, self.m >= 1, "m", "must be at least 1");
        require(&mut e, self.samples >= 1000, "samples", "need at least 1000 samples");
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let joint = self.joint()?;
        let exact = if self.n <= HSYM_EXACT_LIMIT {
            let r = h_sym_exact(&joint, self.n, self.delta)?;
            json!({
                "value": r.value,
                "probability": r.probability.to_string(),
                "tables_within": r.tables_within,
                "no_feasible_table": r.no_feasible_table,
            })
        } else {
            serde_json::Value::Null
        };
        let mc = h_sym_mc(&joint, self.n, self.m, self.delta, self.samples, &ctx.stream())?;
        json_out(
            &json!({ "mutual_information": mutual_information(&joint), "exact": exact, "monte_carlo": mc }),
            ctx,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AsymptoticFreeness {
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    trials: u64,
}

impl Experiment for AsymptoticFreeness {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        require(&mut e, self.n >= 2, "N", "must be at least 2");
        require(&mut e, self.m >= 1, "m", "must be at least 1");
        require(&mut e, self.trials >= 1, "trials", "must be at least 1");
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let d: Vec<f64> = (0..self.n).map(|i| if i < self.n / 2 { 1.0 } else { -1.0 }).collect();
        let d = HermitianMatrix::from_diagonal(&d).into_mat();
        let mut rows = Vec::new();
        let mut partial = false;
        for k in 0..self.trials {
            if ctx.expired() {
                partial = true;
                break;
            }
            let s = ctx.stream().substream(k);
            let rotate = |i: u64| -> orbilab::Result<Vec<CMat>> {
                let u = haar_unitary(self.n, Group::U, &s.substream(i))?;
                Ok(vec![linalg::conjugate(u.as_mat(), &d)])
            };
            let dev = mf_free_deviation(&[rotate(0)?, rotate(1)?], self.m, DEFAULT_WORD_BUDGET)?;
            rows.push(vec![k.to_string(), num(dev), self.m.to_string(), self.n.to_string(), ctx.seed.to_string()]);
        }
        Ok(Finished {
            output: Output::Csv {
                columns: vec!["trial", "deviation", "m", "N", "seed"],
                rows,
            },
            partial,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Factorization {
    #[serde(rename = "N")]
    n: usize,
    samples: usize,
}

impl Experiment for Factorization {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        require(&mut e, self.n >= 1, "N", "must be at least 1");
        require(&mut e, self.samples >= 1000, "samples", "need at least 1000 samples");
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        json_out(&check_factorization(self.n, self.samples, &ctx.stream())?, ctx)
    }
}

fn thousand() -> usize {
    1000
}

fn check_times(e: &mut Vec<FieldError>, field: &str, times: &[f64]) {
    require(e, !times.is_empty(), field, "must not be empty");
    require(
        e,
        times.iter().all(|t| t.is_finite() && *t > 0.0) && times.windows(2).all(|w| w[0] < w[1]),
        field,
        "times must be positive, finite and strictly increasing",
    );
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fubm {
    #[serde(rename = "N")]
    n: usize,
    times: Vec<f64>,
    copies: usize,
    #[serde(default = "thousand")]
    steps_per_unit: usize,
    #[serde(default)]
    retraction: Retraction,
}

impl Experiment for Fubm {
    const SDE: bool = true;

    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        require(&mut e, self.n >= 1, "N", "must be at least 1");
        require(&mut e, self.copies >= 2, "copies", "need at least 2 copies for standard errors");
        require(&mut e, self.steps_per_unit >= 100, "steps_per_unit", "must be at least 100");
        check_times(&mut e, "times", &self.times);
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let mut grid = vec![0.0];
        grid.extend(&self.times);
        let r = fubm_stats_streaming(self.n, &grid, self.steps_per_unit, self.copies, &ctx.stream(), self.retraction)?;
        let rows = (1..grid.len())
            .map(|k| {
                vec![
                    num(grid[k]),
                    num(r.mean_trace_re[k]),
                    num(r.mean_trace_im[k]),
                    num(r.mean_trace_se[k]),
                    num((-grid[k] / 2.0).exp()),
                    num(r.norm_op_mean[k]),
                    num(r.norm_op_se[k]),
                    num(r.norm_2_mean[k]),
                    num(r.max_abs_argument[k]),
                ]
            })
            .collect();
        Ok(Finished {
            output: Output::Csv {
                columns: vec![
                    "t",
                    "mean_trace_re",
                    "mean_trace_im",
                    "mean_trace_se",
                    "exp_minus_t_half",
                    "norm_op_mean",
                    "norm_op_se",
                    "norm_2_mean",
                    "max_abs_argument",
                ],
                rows,
            },
            partial: ctx.expired(),
        })
    }
}

fn default_generator() -> Generator {
    Generator::Fubm
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Delta0orbCurve {
    target: Target,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    delta: f64,
    eps_grid: Vec<f64>,
    samples: usize,
    #[serde(default = "default_generator")]
    generator: Generator,
    #[serde(default = "thousand")]
    steps_per_unit: usize,
}

impl Experiment for Delta0orbCurve {
    const SDE: bool = true;

    fn validate(&self) -> Vec<FieldError> {
        let mut e = core_errors(MicrostateParams::new(self.n, self.m, self.delta, None));
        require(&mut e, self.samples >= 100, "samples", "need at least 100 samples");
        require(&mut e, self.steps_per_unit >= 100, "steps_per_unit", "must be at least 100");
        require(
            &mut e,
            !self.eps_grid.is_empty()
                && self.eps_grid.iter().all(|x| *x > 0.0 && *x <= 1.0)
                && self.eps_grid.windows(2).all(|w| w[0] > w[1]),
            "eps_grid",
            "values must lie in (0, 1] and be strictly decreasing",
        );
        e
    }

    /// Point `e` runs as a one-point curve on `stream.substream(e)`, so the
    /// budget can stop the grid between points.
    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let target = self.target.spec()?;
        let xi = reference_microstates(&target, self.n)?;
        let params = MicrostateParams::new(self.n, self.m, self.delta, None)?;
        let mut rows = Vec::new();
        let mut partial = false;
        for (k, &eps) in self.eps_grid.iter().enumerate() {
            if ctx.expired() {
                partial = true;
                break;
            }
            let c = delta0orb_curve(
                &target,
                &xi,
                &params,
                &[eps],
                self.samples,
                &ctx.stream().substream(k as u64),
                self.generator,
                self.steps_per_unit,
            )?;
            rows.push(vec![
                num(eps),
                num(c.values[0]),
                c.zero_hit[0].to_string(),
                num(c.hit_fractions[0]),
                num(c.intervals[0].lo),
                num(c.intervals[0].hi),
            ]);
        }
        Ok(Finished {
            output: Output::Csv {
                columns: vec!["eps", "value", "zero_hit", "hit_fraction", "value_lo", "value_hi"],
                rows,
            },
            partial,
        })
    }
}

fn two_usize() -> usize {
    2
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KpSandwichRun {
    points: usize,
    eps: Vec<f64>,
    #[serde(default = "two_usize")]
    dim: usize,
}

impl Experiment for KpSandwichRun {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        require(&mut e, (1..=EXACT_LIMIT).contains(&self.points), "points", "exact solvers take 1 to 64 points");
        require(&mut e, self.dim >= 1, "dim", "must be at least 1");
        require(
            &mut e,
            !self.eps.is_empty() && self.eps.iter().all(|x| x.is_finite() && *x > 0.0),
            "eps",
            "radii must be positive and finite",
        );
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        use rand::Rng;
        let mut rng = ctx.stream().rng();
        let pts: Vec<Vec<f64>> = (0..self.points)
            .map(|_| (0..self.dim).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let cloud = PointCloud::euclidean(&pts)?;
        let mut rows = Vec::new();
        let mut partial = false;
        for &eps in &self.eps {
            if ctx.expired() {
                partial = true;
                break;
            }
            let s = check_kp_sandwich(&cloud, eps)?;
            rows.push(vec![
                num(eps),
                s.p_eps.to_string(),
                s.k_2eps.to_string(),
                s.p_4eps.to_string(),
                s.holds.to_string(),
            ]);
        }
        Ok(Finished {
            output: Output::Csv {
                columns: vec!["eps", "p_eps", "k_2eps", "p_4eps", "holds"],
                rows,
            },
            partial,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Restriction {
    /// `Re Tr U ≥ 0`.
    HalfTrace,
    /// `U₀₀` in the closed first quadrant.
    QuarterEntry,
    Everything,
}

fn default_restriction() -> Restriction {
    Restriction::HalfTrace
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Talagrand {
    #[serde(rename = "N", default = "two_usize")]
    n: usize,
    samples: usize,
    #[serde(default = "default_restriction")]
    restriction: Restriction,
}

impl Experiment for Talagrand {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        require(&mut e, self.n >= 2, "N", "must be at least 2");
        require(&mut e, self.samples >= 200, "samples", "need at least 200 samples per side");
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let pred: Box<dyn Fn(&UnitaryMatrix) -> bool + Sync> = match self.restriction {
            Restriction::HalfTrace => Box::new(|u| linalg::trace(u.as_mat()).re >= 0.0),
            Restriction::QuarterEntry => Box::new(|u| u.as_mat()[(0, 0)].re >= 0.0 && u.as_mat()[(0, 0)].im >= 0.0),
            Restriction::Everything => Box::new(|_| true),
        };
        json_out(&talagrand_check(self.n, pred.as_ref(), self.samples, &ctx.stream())?, ctx)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Delta0Compose {
    /// Inline profile tables in the `profile/1` layout, without `schema`.
    profiles: Vec<toml::Table>,
    /// `free`, `identical`, or a non-positive rational orbital term.
    relation: String,
}

impl Delta0Compose {
    fn profiles(&self) -> Result<Vec<HyperfiniteProfile>, CliError> {
        self.profiles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut doc = serde_json::to_value(t).map_err(|e| CliError::field(format!("params.profiles[{i}]"), e.to_string()))?;
                doc["schema"] = PROFILE_SCHEMA.into();
                HyperfiniteProfile::from_json(&doc.to_string())
                    .map_err(|e| CliError::field(format!("params.profiles[{i}]"), e.to_string()))
            })
            .collect()
    }

    fn relation(&self) -> Result<Relation, CliError> {
        match self.relation.as_str() {
            "free" => Ok(Relation::Free),
            "identical" => Ok(Relation::Identical),
            s => parse_rational(s)
                .map(Relation::Custom)
                .map_err(|_| CliError::field("params.relation", "expected free, identical or a rational")),
        }
    }
}

impl Experiment for Delta0Compose {
    fn validate(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        let checked = self.profiles().and_then(|p| {
            let r = self.relation()?;
            delta0_compose(&p, &r).map_err(from_core)
        });
        if let Err(err) = checked {
            match err {
                CliError::Validation(v) => e.extend(v),
                other => e.push(FieldError::new("params", other.to_string())),
            }
        }
        e
    }

    fn run(&self, ctx: &RunCtx) -> Result<Finished, CliError> {
        let profiles = self.profiles()?;
        let each: Vec<serde_json::Value> = profiles
            .iter()
            .map(|p| {
                delta0_hyperfinite(p).map(|d| {
                    json!({
                        "delta0": d.value.to_string(),
                        "residual_weight": d.residual_weight.to_string(),
                        "residual_unassigned": d.residual_unassigned,
                    })
                })
            })
            .collect::<orbilab::Result<_>>()?;
        let c = delta0_compose(&profiles, &self.relation()?)?;
        json_out(
            &json!({
                "profiles": each,
                "delta0_orb": c.delta0_orb.to_string(),
                "delta0_join": c.delta0_join.to_string(),
            }),
            ctx,
        )
    }
}
