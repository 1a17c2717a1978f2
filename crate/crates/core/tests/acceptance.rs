//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! Parameters and thresholds are read from `configs/acceptance.toml`. The run
//! exits nonzero when a criterion fails that is not listed under
//! `expected_failures`.

mod common;

use std::error::Error as StdError;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::Deserialize;

use orbilab::classical::{h_sym_exact, h_sym_mc, JointDistribution};
use orbilab::dimension::{
    check_kp_sandwich, delta0_compose, delta0_hyperfinite, homogeneous_covering_bound, parse_rational, FiniteGroup,
    HyperfiniteProfile, PointCloud, Relation,
};
use orbilab::liberation::{delta0orb_curve, fubm_stats_streaming, Generator, Retraction};
use orbilab::linalg::{self, CMat, HermitianMatrix, UnitaryMatrix};
use orbilab::microstates::{estimate_orbital_measure, reference_microstates, MicrostateParams};
use orbilab::ncalg::{mf_free_deviation, TracialSpec, DEFAULT_WORD_BUDGET};
use orbilab::rng::RngStream;
use orbilab::sampling::{check_factorization, gue, haar_unitary, Group};
use orbilab::stats;
use orbilab::transport::{
    conjugation_lipschitz_check, metric_comparison, talagrand_check, wasserstein2, DiscreteMeasure, OtMethod,
};

type Res<T> = std::result::Result<T, Box<dyn StdError>>;

#[derive(Deserialize)]
struct Config {
    seed: u64,
    expected_failures: Vec<u32>,
    hsym: Hsym,
    asymptotic_freeness: Freeness,
    nonfree_contrast: Contrast,
    factorization: Factorization,
    fubm: Fubm,
    covering: Covering,
    transport: Transport,
    dimension_curve: Curve,
}

#[derive(Deserialize)]
struct Hsym {
    sizes: Vec<usize>,
    delta: f64,
    moment_degree: u32,
    mc_size: usize,
    mc_samples: usize,
    max_gap_at_16: f64,
    max_z: f64,
    budget_seconds: f64,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct Freeness {
    N: usize,
    m: usize,
    delta: f64,
    trials: u64,
    min_trials_below: usize,
    deviation_threshold: f64,
    samples: usize,
    min_hit_fraction: f64,
    log_measure_bound: f64,
    budget_seconds: f64,
}

#[derive(Deserialize)]
struct Contrast {
    sizes: Vec<usize>,
    m: usize,
    delta: f64,
    samples: usize,
    max_fraction_at_largest: f64,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct Factorization {
    N: usize,
    samples: usize,
    min_pvalue: f64,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct Fubm {
    N: usize,
    copies: usize,
    times: Vec<f64>,
    steps_per_unit: usize,
    max_z: f64,
    slope_times: Vec<f64>,
    slope_copies: usize,
    slope_steps_per_unit: usize,
    slope_target: f64,
    slope_tolerance: f64,
    budget_seconds: f64,
}

#[derive(Deserialize)]
struct Covering {
    clouds: u64,
    min_points: usize,
    max_points: usize,
    eps_fractions: Vec<f64>,
    max_group_order: usize,
    group_eps: Vec<f64>,
    budget_seconds: f64,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct Transport {
    oracle_instances: usize,
    max_atoms: usize,
    oracle_tolerance: f64,
    lipschitz_instances: u64,
    lipschitz_N: usize,
    metric_instances: u64,
    metric_N: usize,
    talagrand_N: usize,
    talagrand_samples: usize,
}

#[derive(Deserialize)]
#[allow(non_snake_case)]
struct Curve {
    N: usize,
    m: usize,
    delta: f64,
    eps_grid: Vec<f64>,
    samples: usize,
    steps_per_unit: usize,
    free_abs_threshold: f64,
    identical_threshold: f64,
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Res<Outcome> {
    Ok(Outcome { pass, detail })
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bernoulli_diagonal() -> Res<JointDistribution> {
    Ok(JointDistribution::diagonal(vec![0.0, 1.0], &[0.5, 0.5])?)
}

fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |a, k| a * k)
}

fn criterion_1(c: &Hsym, seed: u64) -> Res<Outcome> {
    let start = Instant::now();
    let joint = bernoulli_diagonal()?;

    // ((N/2)!)² permutations out of N! keep the diagonal type
    let oracle = |n: u64| {
        let h = factorial(n / 2);
        BigRational::new((&h * &h).into(), factorial(n).into())
    };
    let at4 = h_sym_exact(&joint, 4, 0.0)?;
    let want = BigRational::new(4.into(), 24.into());
    let exact_ok = at4.probability == want
        && at4.probability == oracle(4)
        && (at4.value - (4.0f64 / 24.0).ln() / 4.0).abs() <= 1e-15;

    let mut gaps = Vec::new();
    for &n in &c.sizes {
        let r = h_sym_exact(&joint, n, 0.0)?;
        if r.probability != oracle(n as u64) {
            return outcome(false, format!("exact probability at N={n} disagrees with the factorial count"));
        }
        gaps.push((r.value + 2f64.ln()).abs());
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let last_gap = *gaps.last().unwrap_or(&f64::INFINITY);

    let exact = h_sym_exact(&joint, c.mc_size, c.delta)?;
    let mc = h_sym_mc(&joint, c.mc_size, c.moment_degree, c.delta, c.mc_samples, &RngStream::new(seed, 1))?;
    let z = (mc.value - exact.value).abs() / mc.std_error;

    let secs = start.elapsed().as_secs_f64();
    let pass = exact_ok && monotone && last_gap < c.max_gap_at_16 && z <= c.max_z && secs < c.budget_seconds;
    outcome(
        pass,
        format!(
            "P(N=4)={} exact={exact_ok}; gaps={gaps:.4?} monotone={monotone}; MC N={} {:.5}±{:.5} vs {:.5} (z={z:.2}); {secs:.1}s",
            at4.probability, c.mc_size, mc.value, mc.std_error, exact.value
        ),
    )
}

fn sign_diagonal(n: usize) -> CMat {
    let d: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
    HermitianMatrix::from_diagonal(&d).into_mat()
}

fn criterion_2(c: &Freeness, seed: u64) -> Res<Outcome> {
    let start = Instant::now();
    let d = sign_diagonal(c.N);
    let mut below = 0usize;
    let mut worst: f64 = 0.0;
    for k in 0..c.trials {
        let s = RngStream::new(seed, 2).substream(k);
        let u = haar_unitary(c.N, Group::U, &s.substream(0))?;
        let v = haar_unitary(c.N, Group::U, &s.substream(1))?;
        let fam = [vec![linalg::conjugate(u.as_mat(), &d)], vec![linalg::conjugate(v.as_mat(), &d)]];
        let dev = mf_free_deviation(&fam, c.m, DEFAULT_WORD_BUDGET)?;
        worst = worst.max(dev);
        if dev < c.deviation_threshold {
            below += 1;
        }
    }

    let sign = TracialSpec::finite_atoms(&[-1.0, 1.0], &[0.5, 0.5])?;
    let target = TracialSpec::free_product(vec![sign.clone(), sign])?;
    let xi = reference_microstates(&target, c.N)?;
    let params = MicrostateParams::new(c.N, c.m, c.delta, None)?;
    let est = estimate_orbital_measure(&target, &xi, &params, c.samples, &RngStream::new(seed, 20), None)?;

    let secs = start.elapsed().as_secs_f64();
    let pass = below >= c.min_trials_below
        && est.hit_fraction >= c.min_hit_fraction
        && est.log_measure_per_n2.abs() < c.log_measure_bound
        && secs < c.budget_seconds;
    outcome(
        pass,
        format!(
            "{below}/{} trials below {} (max {worst:.4}); hit fraction {:.3} ({}/{}), log/N^2 = {:.3e}; {secs:.1}s",
            c.trials, c.deviation_threshold, est.hit_fraction, est.hits, est.n_samples, est.log_measure_per_n2
        ),
    )
}

fn criterion_3(c: &Contrast, seed: u64) -> Res<Outcome> {
    let target = TracialSpec::joint_atoms(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0.5, 0.5], vec![1, 1])?;
    let mut fractions = Vec::new();
    for (k, &n) in c.sizes.iter().enumerate() {
        let xi = reference_microstates(&target, n)?;
        let params = MicrostateParams::new(n, c.m, c.delta, None)?;
        let est = estimate_orbital_measure(&target, &xi, &params, c.samples, &RngStream::new(seed, 30 + k as u64), None)?;
        fractions.push(est.hit_fraction);
    }
    let decreasing = fractions.windows(2).all(|w| w[1] < w[0]);
    let small = *fractions.last().unwrap_or(&1.0) < c.max_fraction_at_largest;
    outcome(
        decreasing && small,
        format!(
            "hit fractions {fractions:?} over N={:?}; strictly decreasing={decreasing}, below {} at largest N={small}",
            c.sizes, c.max_fraction_at_largest
        ),
    )
}

fn criterion_4(c: &Factorization, seed: u64) -> Res<Outcome> {
    let r = check_factorization(c.N, c.samples, &RngStream::new(seed, 4))?;
    let gof = r.vandermonde_gof_pvalue.ok_or("goodness of fit unavailable")?;
    let inv = r.eigenvector_invariance_pvalue;
    outcome(
        gof > c.min_pvalue && inv > c.min_pvalue,
        format!("eigenvalue GOF p={gof:.4}, eigenvector invariance p={inv:.4}, {} samples", r.sample_count),
    )
}

fn criterion_5(c: &Fubm, seed: u64) -> Res<Outcome> {
    let start = Instant::now();
    let mut grid = vec![0.0];
    grid.extend(&c.times);
    let r = fubm_stats_streaming(c.N, &grid, c.steps_per_unit, c.copies, &RngStream::new(seed, 5), Retraction::Polar)?;
    let mut zs = Vec::new();
    for (k, t) in c.times.iter().enumerate() {
        let want = (-t / 2.0).exp();
        zs.push((r.mean_trace_re[k + 1] - want).abs() / r.mean_trace_se[k + 1]);
    }
    let means_ok = zs.iter().all(|z| *z <= c.max_z);

    let mut sgrid = vec![0.0];
    sgrid.extend(&c.slope_times);
    let s = fubm_stats_streaming(
        c.N,
        &sgrid,
        c.slope_steps_per_unit,
        c.slope_copies,
        &RngStream::new(seed, 50),
        Retraction::Polar,
    )?;
    let x: Vec<f64> = c.slope_times.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = s.norm_op_mean[1..].iter().map(|v| v.ln()).collect();
    let fit = stats::ols(&x, &y)?;
    let slope_ok = (fit.slope - c.slope_target).abs() <= c.slope_tolerance;

    let secs = start.elapsed().as_secs_f64();
    outcome(
        means_ok && slope_ok && secs < c.budget_seconds,
        format!(
            "mean trace z={zs:.2?} at t={:?} (N={}, {} copies, {} steps/unit); op-norm slope {:.3}; {secs:.1}s",
            c.times, c.N, c.copies, c.steps_per_unit, fit.slope
        ),
    )
}

fn load_profile(name: &str) -> Res<HyperfiniteProfile> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/profiles").join(name);
    Ok(HyperfiniteProfile::from_json(&std::fs::read_to_string(path)?)?)
}

fn criterion_6() -> Res<Outcome> {
    let q = |s: &str| parse_rational(s);
    let fixtures = [("diffuse.json", q("1")?), ("two_atoms.json", q("1/2")?), ("m2_block.json", q("3/4")?)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, want) in &fixtures {
        let d = delta0_hyperfinite(&load_profile(name)?)?;
        ok &= d.value == *want && !d.residual_unassigned;
        lines.push(format!("{name}={}", d.value));
    }

    let half = load_profile("two_atoms.json")?;
    let free = delta0_compose(&[half.clone(), half], &Relation::Free)?;
    ok &= free.delta0_orb.is_zero() && free.delta0_join == BigRational::one();

    let block = load_profile("m2_block.json")?;
    let ident = delta0_compose(&[block.clone(), block.clone(), block], &Relation::Identical)?;
    ok &= ident.delta0_orb == q("-3/2")? && ident.delta0_join == q("3/4")?;

    outcome(
        ok,
        format!(
            "{}; free pair ({}, {}); identical triple ({}, {})",
            lines.join(", "),
            free.delta0_orb,
            free.delta0_join,
            ident.delta0_orb,
            ident.delta0_join
        ),
    )
}

fn criterion_7(c: &Covering, seed: u64) -> Res<Outcome> {
    let start = Instant::now();
    let mut sandwich_ok = 0usize;
    let mut sandwich_total = 0usize;
    for k in 0..c.clouds {
        let mut rng = RngStream::new(seed, 7).substream(k).rng();
        let size = rng.random_range(c.min_points..=c.max_points);
        let pts: Vec<Vec<f64>> = (0..size)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let cloud = PointCloud::euclidean(&pts)?;
        let med = cloud.median_distance();
        for f in &c.eps_fractions {
            sandwich_total += 1;
            if check_kp_sandwich(&cloud, f * med)?.holds {
                sandwich_ok += 1;
            }
        }
    }

    let mut group_ok = 0usize;
    let mut group_total = 0usize;
    for n in 1..=c.max_group_order {
        let g = FiniteGroup::cyclic(n)?;
        for h in g.subgroups() {
            // every non-empty union of H-cosets is a saturated Γ
            let mut reps = Vec::new();
            let mut seen = vec![false; n];
            for x in 0..n {
                if !seen[x] {
                    for &y in &h {
                        seen[g.mul(x, y)] = true;
                    }
                    reps.push(x);
                }
            }
            for mask in 1u32..1 << reps.len() {
                let gamma: Vec<usize> = reps
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .flat_map(|(_, &x)| h.iter().map(move |&y| (x, y)))
                    .map(|(x, y)| g.mul(x, y))
                    .collect();
                for &eps in &c.group_eps {
                    group_total += 1;
                    if homogeneous_covering_bound(&g, &h, &gamma, eps)?.holds {
                        group_ok += 1;
                    }
                }
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    outcome(
        sandwich_ok == sandwich_total && group_ok == group_total && secs < c.budget_seconds,
        format!(
            "sandwich {sandwich_ok}/{sandwich_total}; homogeneous bound {group_ok}/{group_total} (n ≤ {}); {secs:.1}s",
            c.max_group_order
        ),
    )
}

fn random_measure<R: Rng>(k: usize, rng: &mut R) -> Res<DiscreteMeasure> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let head: f64 = w[..k - 1].iter().sum();
    w[k - 1] = 1.0 - head;
    Ok(DiscreteMeasure::new((0..k).collect(), w)?)
}

fn criterion_8(c: &Transport, seed: u64) -> Res<Outcome> {
    let mut rng = RngStream::new(seed, 8).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..c.oracle_instances {
        let (m, n) = (rng.random_range(1..=c.max_atoms), rng.random_range(1..=c.max_atoms));
        let mu = random_measure(m, &mut rng)?;
        let nu = random_measure(n, &mut rng)?;
        let pts = |k: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (x, y) = (pts(m, &mut rng), pts(n, &mut rng));
        let cost = common::sq_cost(&x, &y);
        let w = wasserstein2(&mu, &nu, &cost, OtMethod::Exact)?;
        worst = worst.max((w.plan.cost - common::brute_force_ot(&mu.weights, &nu.weights, &cost)).abs());
    }
    let oracle_ok = worst <= c.oracle_tolerance;

    let mut lip = 0u64;
    for k in 0..c.lipschitz_instances {
        let s = RngStream::new(seed, 81).substream(k);
        let xi = gue(c.lipschitz_N, &s.substream(0))?;
        let u = haar_unitary(c.lipschitz_N, Group::U, &s.substream(1))?;
        let v = haar_unitary(c.lipschitz_N, Group::U, &s.substream(2))?;
        lip += conjugation_lipschitz_check(&xi, &u, &v)?.holds as u64;
    }
    let mut ordered = 0u64;
    for k in 0..c.metric_instances {
        let s = RngStream::new(seed, 82).substream(k);
        let u = haar_unitary(c.metric_N, Group::U, &s.substream(0))?;
        let v = haar_unitary(c.metric_N, Group::U, &s.substream(1))?;
        ordered += metric_comparison(&[u], &[v])?.ordered as u64;
    }

    let half = |u: &UnitaryMatrix| linalg::trace(u.as_mat()).re >= 0.0;
    let t = talagrand_check(c.talagrand_N, &half, c.talagrand_samples, &RngStream::new(seed, 83))?;

    let pass = oracle_ok && lip == c.lipschitz_instances && ordered == c.metric_instances && t.holds_within_ci;
    outcome(
        pass,
        format!(
            "OT vs enumeration max error {worst:.2e} on {}; Lipschitz {lip}/{}; HS ≤ geodesic {ordered}/{}; \
             Talagrand mass {:.3}, W2 {:.3} ≤ bound {:.3} + allowance {:.3}: {}",
            c.oracle_instances,
            c.lipschitz_instances,
            c.metric_instances,
            t.gamma_mass_est,
            t.w2_est,
            t.bound,
            t.allowance,
            t.holds_within_ci
        ),
    )
}

fn criterion_9(c: &Curve, seed: u64) -> Res<Outcome> {
    let proj = TracialSpec::projection(0.5)?;
    let free = TracialSpec::free_product(vec![proj.clone(), proj])?;
    let ident = TracialSpec::joint_atoms(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0.5, 0.5], vec![1, 1])?;
    let params = MicrostateParams::new(c.N, c.m, c.delta, None)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (gi, g) in [Generator::Fubm, Generator::ExpSqrtT].into_iter().enumerate() {
        for (ti, (label, target)) in [("free", &free), ("identical", &ident)].into_iter().enumerate() {
            let xi = reference_microstates(target, c.N)?;
            let stream = RngStream::new(seed, 90 + 2 * gi as u64 + ti as u64);
            let curve = delta0orb_curve(target, &xi, &params, &c.eps_grid, c.samples, &stream, g, c.steps_per_unit)?;
            let good = match label {
                "free" => curve.values.iter().all(|v| v.abs() < c.free_abs_threshold),
                _ => curve.values.iter().all(|v| *v <= c.identical_threshold),
            };
            ok &= good;
            parts.push(format!("{g:?}/{label} {:?}", curve.values));
        }
    }
    outcome(ok, format!("{} over eps {:?}", parts.join("; "), c.eps_grid))
}

fn main() {
    let path = repo_root().join("configs/acceptance.toml");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let cfg: Config = toml::from_str(&text).expect("acceptance config parses");
    let seed = cfg.seed;

    let runs: Vec<(u32, Box<dyn Fn() -> Res<Outcome> + '_>)> = vec![
        (1, Box::new(|| criterion_1(&cfg.hsym, seed))),
        (2, Box::new(|| criterion_2(&cfg.asymptotic_freeness, seed))),
        (3, Box::new(|| criterion_3(&cfg.nonfree_contrast, seed))),
        (4, Box::new(|| criterion_4(&cfg.factorization, seed))),
        (5, Box::new(|| criterion_5(&cfg.fubm, seed))),
        (6, Box::new(criterion_6)),
        (7, Box::new(|| criterion_7(&cfg.covering, seed))),
        (8, Box::new(|| criterion_8(&cfg.transport, seed))),
        (9, Box::new(|| criterion_9(&cfg.dimension_curve, seed))),
    ];

    let only: Option<Vec<u32>> = std::env::var("ORBILAB_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (id, run) in runs {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let o = run().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        let expected = cfg.expected_failures.contains(&id);
        let note = if !o.pass && expected { " [expected: see decisions ledger]" } else { "" };
        println!("criterion {id}: {} {}{note}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass && !expected {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
