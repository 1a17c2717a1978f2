//! Covering and packing numbers of finite metric spaces, the homogeneous
//! covering inequality, and exact free entropy dimension formulas for
//! hyperfinite profiles.

use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TOLERANCES;
use crate::error::{invalid, Error, Result};

/// Largest cloud handled by the exact solvers (one bit per point).
pub const EXACT_LIMIT: usize = 64;

const TRIANGLE_TRIPLES: usize = 1000;

/// Finite metric space stored as a dense distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n: usize,
    dist: Vec<f64>,
}

impl PointCloud {
    /// Validates symmetry, zero diagonal, positivity off the diagonal, and
    /// the triangle inequality on up to 1000 seeded triples.
    pub fn from_distances(d: Vec<Vec<f64>>) -> Result<Self> {
        let n = d.len();
        if n == 0 {
            return Err(invalid("cloud", "point cloud must be non-empty"));
        }
        if d.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("distance matrix must be square".into()));
        }
        for i in 0..n {
            if d[i][i] != 0.0 {
                return Err(invalid("metric", format!("d(x{i}, x{i}) = {} is not zero", d[i][i])));
            }
            for j in 0..i {
                let x = d[i][j];
                if !x.is_finite() || x <= 0.0 {
                    return Err(invalid("metric", format!("d(x{i}, x{j}) = {x} must be positive")));
                }
                if x != d[j][i] {
                    return Err(invalid("metric", format!("d(x{i}, x{j}) is not symmetric")));
                }
            }
        }
        let cloud = Self {
            n,
            dist: d.into_iter().flatten().collect(),
        };
        cloud.spot_check_triangle()?;
        Ok(cloud)
    }

    pub fn from_points<P>(points: &[P], metric: impl Fn(&P, &P) -> f64) -> Result<Self> {
        Self::from_distances(
            points
                .iter()
                .map(|a| points.iter().map(|b| metric(a, b)).collect())
                .collect(),
        )
    }

    /// Euclidean cloud in `R^d`.
    pub fn euclidean(points: &[Vec<f64>]) -> Result<Self> {
        Self::from_points(points, |a, b| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        })
    }

    fn spot_check_triangle(&self) -> Result<()> {
        let n = self.n;
        let check = |i: usize, j: usize, k: usize| {
            if self.d(i, k) > self.d(i, j) + self.d(j, k) + TOLERANCES.inequality_slack {
                return Err(invalid(
                    "metric",
                    format!("triangle inequality fails on ({i}, {j}, {k})"),
                ));
            }
            Ok(())
        };
        if n * n * n <= TRIANGLE_TRIPLES {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        check(i, j, k)?;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7269_616e_676c_65);
            for _ in 0..TRIANGLE_TRIPLES {
                check(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Open ball `{y : d(x, y) < r}` as a bit set.
    fn ball(&self, x: usize, r: f64) -> u64 {
        (0..self.n).filter(|&y| self.d(x, y) < r).fold(0, |m, y| m | 1 << y)
    }

    pub fn median_distance(&self) -> f64 {
        let mut v: Vec<f64> = (0..self.n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.d(i, j))
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Greedy,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", "radius must be positive and finite"));
    }
    Ok(())
}

fn check_exact(n: usize) -> Result<()> {
    if n > EXACT_LIMIT {
        return Err(Error::ExactLimit {
            limit: EXACT_LIMIT,
            got: n,
        });
    }
    Ok(())
}

fn bits(mut m: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let b = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(b)
        }
    })
}

/// Greedy set cover; `sets[c]` is the part of the universe covered by
/// candidate `c`. Returns `None` if the universe cannot be covered.
fn greedy_cover(universe: u64, sets: &[u64]) -> Option<usize> {
    let mut left = universe;
    let mut count = 0;
    while left != 0 {
        let best = sets.iter().max_by_key(|s| (*s & left).count_ones())?;
        if best & left == 0 {
            return None;
        }
        left &= !best;
        count += 1;
    }
    Some(count)
}

struct CoverSearch<'a> {
    sets: &'a [u64],
    /// Candidates containing each element.
    holders: Vec<Vec<usize>>,
    best: usize,
}

impl CoverSearch<'_> {
    fn lower_bound(&self, left: u64) -> usize {
        let widest = self
            .sets
            .iter()
            .map(|s| (s & left).count_ones())
            .max()
            .unwrap_or(0);
        if widest == 0 {
            return usize::MAX / 2;
        }
        // elements whose holder sets are pairwise disjoint need distinct sets
        let mut used = 0u64;
        let mut disjoint = 0;
        for e in bits(left) {
            let mask = self.holders[e].iter().fold(0u64, |m, &c| m | self.sets[c]);
            if mask & used == 0 {
                disjoint += 1;
                used |= mask;
            }
        }
        disjoint.max(left.count_ones().div_ceil(widest) as usize)
    }

    fn run(&mut self, left: u64, count: usize) {
        if left == 0 {
            self.best = self.best.min(count);
            return;
        }
        if count + self.lower_bound(left) >= self.best {
            return;
        }
        // branch on the uncovered element with the fewest holders
        let e = bits(left)
            .min_by_key(|&e| self.holders[e].len())
            .expect("non-empty");
        let mut cands: Vec<usize> = self.holders[e].clone();
        cands.sort_by_key(|&c| std::cmp::Reverse((self.sets[c] & left).count_ones()));
        for c in cands {
            self.run(left & !self.sets[c], count + 1);
        }
    }
}

fn exact_cover(universe: u64, sets: &[u64]) -> Option<usize> {
    let greedy = greedy_cover(universe, sets)?;
    let mut holders = vec![Vec::new(); 64];
    for (c, s) in sets.iter().enumerate() {
        for e in bits(*s & universe) {
            holders[e].push(c);
        }
    }
    let mut search = CoverSearch {
        sets,
        holders,
        best: greedy,
    };
    search.run(universe, 0);
    Some(search.best)
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Minimum number of open `ε`-balls centred in the cloud that cover it.
pub fn covering_number(cloud: &PointCloud, eps: f64, mode: Mode) -> Result<usize> {
    check_eps(eps)?;
    let n = cloud.len();
    if mode == Mode::Greedy {
        return Ok(greedy_cover_large(cloud, eps));
    }
    check_exact(n)?;
    let sets: Vec<u64> = (0..n).map(|x| cloud.ball(x, eps)).collect();
    exact_cover(full_mask(n), &sets).ok_or_else(|| Error::Internal("self-centred balls failed to cover".into()))
}

/// Greedy covering without the 64-point bit-set limit.
fn greedy_cover_large(cloud: &PointCloud, eps: f64) -> usize {
    let n = cloud.len();
    let mut covered = vec![false; n];
    let mut left = n;
    let mut count = 0;
    while left > 0 {
        let (x, _) = (0..n)
            .map(|x| (x, (0..n).filter(|&y| !covered[y] && cloud.d(x, y) < eps).count()))
            .max_by_key(|&(x, c)| (c, std::cmp::Reverse(x)))
            .expect("non-empty cloud");
        for y in 0..n {
            if !covered[y] && cloud.d(x, y) < eps {
                covered[y] = true;
                left -= 1;
            }
        }
        count += 1;
    }
    count
}

/// Whether the open balls `B(x, ε)` and `B(y, ε)` share a point of the cloud.
fn balls_meet(cloud: &PointCloud, x: usize, y: usize, eps: f64) -> bool {
    (0..cloud.len()).any(|z| cloud.d(x, z) < eps && cloud.d(y, z) < eps)
}

fn conflict_graph(cloud: &PointCloud, eps: f64) -> Vec<u64> {
    let n = cloud.len();
    let mut adj = vec![0u64; n];
    for x in 0..n {
        for y in 0..x {
            if balls_meet(cloud, x, y, eps) {
                adj[x] |= 1 << y;
                adj[y] |= 1 << x;
            }
        }
    }
    adj
}

struct IndependentSearch<'a> {
    adj: &'a [u64],
    best: usize,
}

impl IndependentSearch<'_> {
    /// Greedy clique partition of `left`; its size bounds any independent set.
    fn clique_bound(&self, mut left: u64) -> usize {
        let mut cliques = 0;
        while left != 0 {
            let v = left.trailing_zeros() as usize;
            let mut clique = 1u64 << v;
            let mut cand = left & self.adj[v];
            while cand != 0 {
                let w = cand.trailing_zeros() as usize;
                clique |= 1 << w;
                cand &= self.adj[w] & !(1 << w);
            }
            left &= !clique;
            cliques += 1;
        }
        cliques
    }

    fn run(&mut self, left: u64, count: usize) {
        if left == 0 {
            self.best = self.best.max(count);
            return;
        }
        if count + self.clique_bound(left) <= self.best {
            return;
        }
        // a vertex of degree ≤ 1 can always be taken
        if let Some(v) = bits(left).find(|&v| (self.adj[v] & left).count_ones() <= 1) {
            self.run(left & !(1 << v) & !self.adj[v], count + 1);
            return;
        }
        let v = bits(left)
            .max_by_key(|&v| (self.adj[v] & left).count_ones())
            .expect("non-empty");
        self.run(left & !(1 << v) & !self.adj[v], count + 1);
        self.run(left & !(1 << v), count);
    }
}

fn greedy_independent(adj: &[u64], universe: u64) -> usize {
    let mut order: Vec<usize> = bits(universe).collect();
    order.sort_by_key(|&v| ((adj[v] & universe).count_ones(), v));
    let mut taken = 0u64;
    let mut count = 0;
    for v in order {
        if adj[v] & taken == 0 {
            taken |= 1 << v;
            count += 1;
        }
    }
    count
}

/// Maximum number of mutually disjoint open `ε`-balls centred in the cloud,
/// where balls are compared as subsets of the cloud.
pub fn packing_number(cloud: &PointCloud, eps: f64, mode: Mode) -> Result<usize> {
    check_eps(eps)?;
    let n = cloud.len();
    if mode == Mode::Greedy {
        return Ok(greedy_packing_large(cloud, eps));
    }
    check_exact(n)?;
    let adj = conflict_graph(cloud, eps);
    let universe = full_mask(n);
    let mut search = IndependentSearch {
        adj: &adj,
        best: greedy_independent(&adj, universe),
    };
    search.run(universe, 0);
    Ok(search.best)
}

fn greedy_packing_large(cloud: &PointCloud, eps: f64) -> usize {
    let n = cloud.len();
    let degree: Vec<usize> = (0..n)
        .map(|x| (0..n).filter(|&y| y != x && balls_meet(cloud, x, y, eps)).count())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (degree[v], v));
    let mut taken: Vec<usize> = Vec::new();
    for v in order {
        if taken.iter().all(|&w| !balls_meet(cloud, v, w, eps)) {
            taken.push(v);
        }
    }
    taken.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KpSandwich {
    pub p_eps: usize,
    pub k_2eps: usize,
    pub p_4eps: usize,
    pub holds: bool,
}

/// Exact `P_ε ≥ K_{2ε} ≥ P_{4ε}`.
pub fn check_kp_sandwich(cloud: &PointCloud, eps: f64) -> Result<KpSandwich> {
    let p_eps = packing_number(cloud, eps, Mode::Exact)?;
    let k_2eps = covering_number(cloud, 2.0 * eps, Mode::Exact)?;
    let p_4eps = packing_number(cloud, 4.0 * eps, Mode::Exact)?;
    Ok(KpSandwich {
        p_eps,
        k_2eps,
        p_4eps,
        holds: p_eps >= k_2eps && k_2eps >= p_4eps,
    })
}

/// Finite group given by its multiplication table, with a bi-invariant
/// metric.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGroup {
    table: Vec<Vec<usize>>,
    identity: usize,
    metric: PointCloud,
}

impl FiniteGroup {
    pub fn from_table(table: Vec<Vec<usize>>, metric: PointCloud) -> Result<Self> {
        let n = table.len();
        if n == 0 || table.iter().any(|r| r.len() != n || r.iter().any(|&x| x >= n)) {
            return Err(invalid("table", "multiplication table must be square over 0..n"));
        }
        if metric.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "group of order {n} with a metric on {} points",
                metric.len()
            )));
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|g| table[e][g] == g && table[g][e] == g))
            .ok_or_else(|| invalid("table", "no identity element"))?;
        for row in &table {
            let mut seen = vec![false; n];
            for &x in row {
                seen[x] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(invalid("table", "rows must be permutations"));
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if table[table[a][b]][c] != table[a][table[b][c]] {
                        return Err(invalid("table", "multiplication is not associative"));
                    }
                }
            }
        }
        for g in 0..n {
            for x in 0..n {
                for y in 0..n {
                    let d = metric.d(x, y);
                    if (metric.d(table[g][x], table[g][y]) - d).abs() > TOLERANCES.inequality_slack
                        || (metric.d(table[x][g], table[y][g]) - d).abs() > TOLERANCES.inequality_slack
                    {
                        return Err(invalid("metric", "metric is not bi-invariant"));
                    }
                }
            }
        }
        Ok(Self {
            table,
            identity,
            metric,
        })
    }

    /// `ℤ_n` with the cyclic distance `min(|a − b|, n − |a − b|)`.
    pub fn cyclic(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "group order must be positive"));
        }
        let table = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        let metric = PointCloud::from_distances(
            (0..n)
                .map(|a| {
                    (0..n)
                        .map(|b| {
                            let k = a.abs_diff(b);
                            k.min(n - k) as f64
                        })
                        .collect()
                })
                .collect(),
        )?;
        Self::from_table(table, metric)
    }

    pub fn order(&self) -> usize {
        self.table.len()
    }

    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.table[a][b]
    }

    pub fn metric(&self) -> &PointCloud {
        &self.metric
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    /// All subgroups, each sorted; found as the closures of subsets
    /// generated by at most two elements (enough for cyclic groups and the
    /// small groups used in tests).
    pub fn subgroups(&self) -> Vec<Vec<usize>> {
        let n = self.order();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for a in 0..n {
            for b in a..n {
                let h = self.closure(&[a, b]);
                if !out.contains(&h) {
                    out.push(h);
                }
            }
        }
        out.sort_by_key(|h| (h.len(), h.clone()));
        out
    }

    fn closure(&self, gens: &[usize]) -> Vec<usize> {
        let mut set = vec![self.identity];
        let mut frontier: Vec<usize> = gens.to_vec();
        while let Some(g) = frontier.pop() {
            if set.contains(&g) {
                continue;
            }
            set.push(g);
            let snapshot = set.clone();
            for &h in &snapshot {
                frontier.push(self.mul(g, h));
                frontier.push(self.mul(h, g));
            }
        }
        set.sort_unstable();
        set
    }

    fn is_subgroup(&self, h: &[usize]) -> bool {
        h.contains(&self.identity) && h.iter().all(|&a| h.iter().all(|&b| h.contains(&self.mul(a, b))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousBound {
    pub k_eps_gamma: usize,
    pub k_eps_h: usize,
    pub p_2eps_quotient: usize,
    pub holds: bool,
}

/// Exact `K_ε(Γ) ≥ K_ε(H) · P_{2ε}(π(Γ))` for a subgroup `H` and an
/// `H`-saturated `Γ ⊂ G`.
///
/// `K_ε(Γ)` uses centres in `Γ`. `K_ε(H)` uses centres anywhere in `G`: with
/// centres forced into `H` the inequality fails, e.g. on `ℤ₁₂` with
/// `H = 2ℤ₁₂`, `Γ = G`, `ε = 1.4` (4 against 6·1). The quotient `G/H`
/// carries `d_Q(g₁H, g₂H) = min_h d(g₁, g₂h)`.
pub fn homogeneous_covering_bound(
    g: &FiniteGroup,
    h: &[usize],
    gamma: &[usize],
    eps: f64,
) -> Result<HomogeneousBound> {
    check_eps(eps)?;
    let n = g.order();
    check_exact(n)?;
    if h.iter().chain(gamma).any(|&x| x >= n) {
        return Err(invalid("subset", "element index out of range"));
    }
    if !g.is_subgroup(h) {
        return Err(invalid("H", "not a subgroup"));
    }
    if gamma.is_empty() {
        return Err(invalid("Gamma", "subset must be non-empty"));
    }
    let gamma_mask = gamma.iter().fold(0u64, |m, &x| m | 1 << x);
    let h_mask = h.iter().fold(0u64, |m, &x| m | 1 << x);
    let coset = |x: usize| h.iter().fold(0u64, |m, &k| m | 1 << g.mul(x, k));
    if bits(gamma_mask).any(|x| coset(x) & !gamma_mask != 0) {
        return Err(Error::NotSaturated);
    }
    let metric = g.metric();
    let k_eps_gamma = exact_cover(
        gamma_mask,
        &bits(gamma_mask).map(|x| metric.ball(x, eps) & gamma_mask).collect::<Vec<_>>(),
    )
    .ok_or_else(|| Error::Internal("self-centred balls failed to cover".into()))?;
    let k_eps_h = exact_cover(h_mask, &(0..n).map(|x| metric.ball(x, eps) & h_mask).collect::<Vec<_>>())
        .ok_or_else(|| Error::Internal("balls failed to cover the subgroup".into()))?;

    let mut reps: Vec<usize> = Vec::new();
    let mut seen = 0u64;
    for x in bits(gamma_mask) {
        if seen & 1 << x == 0 {
            seen |= coset(x);
            reps.push(x);
        }
    }
    let p_2eps_quotient = if reps.len() == 1 {
        1
    } else {
        let quotient = PointCloud::from_distances(
            reps.iter()
                .map(|&a| {
                    reps.iter()
                        .map(|&b| {
                            h.iter()
                                .map(|&k| metric.d(a, g.mul(b, k)))
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                })
                .collect(),
        )?;
        packing_number(&quotient, 2.0 * eps, Mode::Exact)?
    };
    Ok(HomogeneousBound {
        k_eps_gamma,
        k_eps_h,
        p_2eps_quotient,
        holds: k_eps_gamma >= k_eps_h * p_2eps_quotient,
    })
}

/// Exact rational parsed from `"p/q"`, an integer, or a decimal such as
/// `"0.25"` or `"1e-3"`.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    if let Ok(r) = BigRational::from_str(s) {
        return Ok(r);
    }
    let bad = || invalid("rational", format!("cannot parse `{s}` as an exact rational"));
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() || !(int.chars().chain(frac.chars())).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = BigInt::from_str(&format!("{int}{frac}")).map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if scale >= 0 {
        BigRational::from_integer(digits * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(digits, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        r = -r;
    }
    Ok(r)
}

/// Finite-dimensional-plus-diffuse decomposition of a hyperfinite algebra:
/// a diffuse summand of weight `diffuse_weight` and matrix blocks
/// `M_{m_k}` carrying trace weight `τ(p_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperfiniteProfile {
    pub diffuse_weight: BigRational,
    /// `(block size m_k, weight τ(p_k))`.
    pub atoms: Vec<(u64, BigRational)>,
    /// Block size assigned to the leftover weight `1 − diffuse − Σ weights`,
    /// if any.
    pub residual_block_size: Option<u64>,
}

impl HyperfiniteProfile {
    pub fn new(diffuse_weight: BigRational, atoms: Vec<(u64, BigRational)>) -> Result<Self> {
        let p = Self {
            diffuse_weight,
            atoms,
            residual_block_size: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn diffuse() -> Self {
        Self {
            diffuse_weight: BigRational::one(),
            atoms: Vec::new(),
            residual_block_size: None,
        }
    }

    pub fn with_residual_block(mut self, size: u64) -> Result<Self> {
        self.residual_block_size = Some(size);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = BigRational::zero();
        let one = BigRational::one();
        if self.diffuse_weight < zero || self.diffuse_weight > one {
            return Err(invalid("diffuse_weight", "must lie in [0, 1]"));
        }
        for (m, w) in &self.atoms {
            if *m == 0 {
                return Err(invalid("atoms", "block sizes must be at least 1"));
            }
            if !w.is_positive() {
                return Err(invalid("atoms", "atom weights must be positive"));
            }
        }
        if self.residual_block_size == Some(0) {
            return Err(invalid("residual_block_size", "block size must be at least 1"));
        }
        if self.residual().is_negative() {
            return Err(invalid("atoms", "weights exceed total mass 1"));
        }
        Ok(())
    }

    /// Weight not accounted for by the diffuse part and the listed atoms.
    pub fn residual(&self) -> BigRational {
        self.atoms
            .iter()
            .fold(BigRational::one() - &self.diffuse_weight, |r, (_, w)| r - w)
    }

    /// Keeps the first `ell` atoms; the rest becomes residual weight.
    pub fn truncate(&self, ell: usize) -> Self {
        Self {
            diffuse_weight: self.diffuse_weight.clone(),
            atoms: self.atoms.iter().take(ell).cloned().collect(),
            residual_block_size: self.residual_block_size,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ProfileDocument =
            serde_json::from_str(s).map_err(|e| invalid("profile", e.to_string()))?;
        if doc.schema != PROFILE_SCHEMA {
            return Err(invalid(
                "schema",
                format!("expected `{PROFILE_SCHEMA}`, got `{}`", doc.schema),
            ));
        }
        let atoms = doc
            .atoms
            .iter()
            .map(|(m, w)| Ok((*m, w.to_rational()?)))
            .collect::<Result<_>>()?;
        let p = Self {
            diffuse_weight: doc.diffuse_weight.to_rational()?,
            atoms,
            residual_block_size: doc.residual_block_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let doc = ProfileDocument {
            schema: PROFILE_SCHEMA.into(),
            diffuse_weight: RationalField::Text(self.diffuse_weight.to_string()),
            atoms: self
                .atoms
                .iter()
                .map(|(m, w)| (*m, RationalField::Text(w.to_string())))
                .collect(),
            residual_block_size: self.residual_block_size,
        };
        serde_json::to_string_pretty(&doc).expect("profile serializes")
    }
}

pub const PROFILE_SCHEMA: &str = "profile/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RationalField {
    Text(String),
    Number(serde_json::Number),
}

impl RationalField {
    fn to_rational(&self) -> Result<BigRational> {
        match self {
            RationalField::Text(s) => parse_rational(s),
            RationalField::Number(n) => parse_rational(&n.to_string()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDocument {
    schema: String,
    diffuse_weight: RationalField,
    atoms: Vec<(u64, RationalField)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    residual_block_size: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta0 {
    pub value: BigRational,
    pub residual_weight: BigRational,
    /// Residual weight present with no declared block size; it is then
    /// treated as diffuse (no subtraction), which makes `value` an upper
    /// bound.
    pub residual_unassigned: bool,
}

/// `δ₀ = 1 − Σ_k τ(p_k)² / m_k²` for a hyperfinite profile; the diffuse
/// part subtracts nothing.
pub fn delta0_hyperfinite(profile: &HyperfiniteProfile) -> Result<Delta0> {
    profile.validate()?;
    let term = |m: u64, w: &BigRational| {
        let m = BigRational::from_integer(BigInt::from(m));
        w * w / (&m * &m)
    };
    let mut value = BigRational::one();
    for (m, w) in &profile.atoms {
        value -= term(*m, w);
    }
    let residual = profile.residual();
    let mut unassigned = false;
    if residual.is_positive() {
        match profile.residual_block_size {
            Some(m) => value -= term(m, &residual),
            None => unassigned = true,
        }
    }
    Ok(Delta0 {
        value,
        residual_weight: residual,
        residual_unassigned: unassigned,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Relation {
    /// Freely independent families: the orbital term vanishes.
    Free,
    /// All families are the same variable: the orbital term is
    /// `−(n − 1) δ₀(X)`.
    Identical,
    /// Caller-supplied orbital term, which must be `≤ 0`.
    Custom(BigRational),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeReport {
    pub delta0_orb: BigRational,
    pub delta0_join: BigRational,
}

/// `δ₀(X₁ ⊔ ⋯ ⊔ Xₙ) = δ_{0,orb}(X₁, …, Xₙ) + Σ δ₀(X_i)`.
///
/// The block-algebra alignment arguments behind this identity reduce, at
/// the level of dimension counts, to the additivity checked here.
pub fn delta0_compose(profiles: &[HyperfiniteProfile], relation: &Relation) -> Result<ComposeReport> {
    if profiles.is_empty() {
        return Err(invalid("profiles", "need at least one profile"));
    }
    let deltas: Vec<BigRational> = profiles
        .iter()
        .map(|p| delta0_hyperfinite(p).map(|d| d.value))
        .collect::<Result<_>>()?;
    let sum = deltas.iter().fold(BigRational::zero(), |a, d| a + d);
    let n = BigRational::from_integer(BigInt::from(profiles.len()));
    let orb = match relation {
        Relation::Free => BigRational::zero(),
        Relation::Identical => {
            if profiles.iter().any(|p| p != &profiles[0]) {
                return Err(invalid("profiles", "identical mode requires equal profiles"));
            }
            -(n - BigRational::one()) * &deltas[0]
        }
        Relation::Custom(c) => {
            if c.is_positive() {
                return Err(invalid("relation", "orbital term must be non-positive"));
            }
            if profiles.len() == 1 && !c.is_zero() {
                return Err(invalid("relation", "a single family has orbital term 0"));
            }
            c.clone()
        }
    };
    Ok(ComposeReport {
        delta0_join: &orb + sum,
        delta0_orb: orb,
    })
}
