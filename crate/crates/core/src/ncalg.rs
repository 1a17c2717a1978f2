//! Non-commutative words, tracial moment oracles and the free product.

use std::collections::HashMap;
use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::config::TOLERANCES;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, c64, CMat};

/// Default cap on the number of enumerated words.
pub const DEFAULT_WORD_BUDGET: u64 = 1_000_000;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Letter {
    pub family: usize,
    pub variable: usize,
    pub adjoint: bool,
}

impl Letter {
    pub fn new(family: usize, variable: usize) -> Self {
        Self {
            family,
            variable,
            adjoint: false,
        }
    }

    pub fn adj(family: usize, variable: usize) -> Self {
        Self {
            family,
            variable,
            adjoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Word `x_{f,v}^k`.
    pub fn power(family: usize, variable: usize, k: usize) -> Self {
        Self(vec![Letter::new(family, variable); k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    /// Cyclic rotation by `k` positions to the left.
    pub fn rotate(&self, k: usize) -> Word {
        let mut v = self.0.clone();
        if !v.is_empty() {
            let k = k % v.len();
            v.rotate_left(k);
        }
        Word(v)
    }

    /// Formal adjoint: reversed order, adjoint flags toggled on unitary
    /// letters.
    pub fn adjoint(&self, layout: &Layout) -> Word {
        Word(
            self.0
                .iter()
                .rev()
                .map(|l| match layout.kind(l) {
                    Some(LetterKind::Unitary) => Letter {
                        adjoint: !l.adjoint,
                        ..*l
                    },
                    _ => *l,
                })
                .collect(),
        )
    }

    pub fn mentions_multiple_families(&self) -> bool {
        self.0.windows(2).any(|w| w[0].family != w[1].family)
            || self
                .0
                .first()
                .is_some_and(|f| self.0.iter().any(|l| l.family != f.family))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "·")?;
            }
            write!(f, "x{}_{}{}", l.family, l.variable, if l.adjoint { "*" } else { "" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LetterKind {
    SelfAdjoint,
    Unitary,
}

/// Variable kinds per family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub families: Vec<Vec<LetterKind>>,
}

impl Layout {
    pub fn kind(&self, l: &Letter) -> Option<LetterKind> {
        self.families.get(l.family)?.get(l.variable).copied()
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn validate(&self, w: &Word) -> Result<()> {
        for (pos, l) in w.0.iter().enumerate() {
            match self.kind(l) {
                None => {
                    return Err(Error::UnsupportedWord(format!(
                        "letter {pos} refers to family {} variable {}, which the target does not declare",
                        l.family, l.variable
                    )))
                }
                Some(LetterKind::SelfAdjoint) if l.adjoint => {
                    return Err(Error::UnsupportedWord(format!(
                        "letter {pos}: adjoint flag on self-adjoint variable ({}, {})",
                        l.family, l.variable
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Letters usable in words: one per self-adjoint variable, two per
    /// unitary variable. Sorted lexicographically.
    pub fn alphabet(&self) -> Vec<Letter> {
        let mut out = Vec::new();
        for (f, vars) in self.families.iter().enumerate() {
            for (v, k) in vars.iter().enumerate() {
                out.push(Letter::new(f, v));
                if *k == LetterKind::Unitary {
                    out.push(Letter::adj(f, v));
                }
            }
        }
        out.sort();
        out
    }

    fn all_self_adjoint(&self) -> bool {
        self.families
            .iter()
            .flatten()
            .all(|k| *k == LetterKind::SelfAdjoint)
    }
}

/// Anything that can answer `τ(word)`.
pub trait MomentOracle: Sync {
    fn layout(&self) -> Layout;

    fn moment(&self, w: &Word) -> Result<c64>;

    fn operator_bound(&self) -> f64;

    /// Batch evaluation. Implementations may share caches across words.
    fn moments(&self, words: &[Word]) -> Result<Vec<c64>> {
        words.iter().map(|w| self.moment(w)).collect()
    }
}

/// Matrix model letter.
#[derive(Debug, Clone)]
pub struct ModelMatrix {
    pub kind: LetterKind,
    pub matrix: CMat,
}

impl ModelMatrix {
    /// Classifies a matrix as self-adjoint or unitary.
    pub fn classify(matrix: CMat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch("model matrices must be square".into()));
        }
        let n = matrix.nrows();
        let herm = (0..n).all(|j| {
            (j..n).all(|k| (matrix[(j, k)] - matrix[(k, j)].conj()).norm() <= TOLERANCES.hermitian)
        });
        if herm {
            return Ok(Self {
                kind: LetterKind::SelfAdjoint,
                matrix,
            });
        }
        if linalg::unitarity_residual(&matrix) <= TOLERANCES.unitary {
            return Ok(Self {
                kind: LetterKind::Unitary,
                matrix,
            });
        }
        Err(invalid(
            "matrix",
            "model matrices must be self-adjoint or unitary",
        ))
    }
}

/// Target non-commutative distribution.
#[derive(Debug, Clone)]
pub enum SpecKind {
    /// Matrices with the normalized trace.
    MatrixModel { families: Vec<Vec<ModelMatrix>> },
    /// Standard semicircular element (one variable).
    Semicircular,
    /// Projection of trace `alpha` (one variable).
    Projection { alpha: f64 },
    /// Commuting real variables with a finitely supported joint law.
    /// `atoms[a][v]` is the value of variable `v` at atom `a`;
    /// `families` gives the number of variables in each family.
    FiniteAtoms {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        families: Vec<usize>,
    },
    /// Free product; marginal `i` becomes family `i` with its variables
    /// flattened in family order.
    FreeProduct { marginals: Vec<TracialSpec> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpecDocument", into = "SpecDocument")]
pub struct TracialSpec {
    kind: SpecKind,
    operator_bound: f64,
}

impl TracialSpec {
    pub fn semicircular() -> Self {
        Self {
            kind: SpecKind::Semicircular,
            operator_bound: 2.0,
        }
    }

    pub fn projection(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid("alpha", format!("projection trace must lie in [0,1], got {alpha}")));
        }
        Ok(Self {
            kind: SpecKind::Projection { alpha },
            operator_bound: 1.0,
        })
    }

    /// Single real variable with atoms `values` and probabilities `weights`.
    pub fn finite_atoms(values: &[f64], weights: &[f64]) -> Result<Self> {
        Self::joint_atoms(values.iter().map(|v| vec![*v]).collect(), weights.to_vec(), vec![1])
    }

    /// Commuting joint law. `families` partitions the variables.
    pub fn joint_atoms(atoms: Vec<Vec<f64>>, weights: Vec<f64>, families: Vec<usize>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(invalid("weights", "need one weight per atom and at least one atom"));
        }
        let nv = atoms[0].len();
        if nv == 0 || atoms.iter().any(|a| a.len() != nv) {
            return Err(invalid("atoms", "all atoms must list the same positive number of values"));
        }
        if families.iter().sum::<usize>() != nv || families.iter().any(|&f| f == 0) {
            return Err(invalid("families", "family sizes must be positive and sum to the variable count"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", "weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("weights sum to {total}, expected 1")));
        }
        if atoms.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("atoms", "atom values must be finite"));
        }
        let bound = atoms.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()));
        Ok(Self {
            kind: SpecKind::FiniteAtoms {
                atoms,
                weights,
                families,
            },
            operator_bound: bound,
        })
    }

    /// Matrix model from families of square matrices of a common size.
    pub fn matrix_model(families: Vec<Vec<CMat>>) -> Result<Self> {
        if families.is_empty() || families.iter().any(|f| f.is_empty()) {
            return Err(invalid("families", "each family needs at least one matrix"));
        }
        let n = families[0][0].nrows();
        let mut out = Vec::with_capacity(families.len());
        let mut bound = 0.0_f64;
        for (fi, fam) in families.into_iter().enumerate() {
            let mut row = Vec::with_capacity(fam.len());
            for (vi, m) in fam.into_iter().enumerate() {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "family {fi} variable {vi} is {}x{}, expected {n}x{n}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                let mm = ModelMatrix::classify(m)?;
                bound = bound.max(match mm.kind {
                    LetterKind::Unitary => 1.0,
                    LetterKind::SelfAdjoint => linalg::hermitian_op_norm(&mm.matrix),
                });
                row.push(mm);
            }
            out.push(row);
        }
        Ok(Self {
            kind: SpecKind::MatrixModel { families: out },
            operator_bound: bound,
        })
    }

    pub fn free_product(marginals: Vec<TracialSpec>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(invalid("marginals", "free product needs at least one marginal"));
        }
        let bound = marginals
            .iter()
            .fold(0.0_f64, |m, s| m.max(s.operator_bound));
        Ok(Self {
            kind: SpecKind::FreeProduct { marginals },
            operator_bound: bound,
        })
    }

    pub fn kind(&self) -> &SpecKind {
        &self.kind
    }

    /// Single-variable marginal: the law of variable `variable` of family
    /// `family`, as a standalone spec when one exists in closed form.
    pub fn marginal(&self, family: usize) -> Result<TracialSpec> {
        match &self.kind {
            SpecKind::FreeProduct { marginals } => marginals
                .get(family)
                .cloned()
                .ok_or_else(|| invalid("family", "family index out of range")),
            SpecKind::FiniteAtoms {
                atoms,
                weights,
                families,
            } => {
                let start: usize = families.iter().take(family).sum();
                let len = *families
                    .get(family)
                    .ok_or_else(|| invalid("family", "family index out of range"))?;
                let sub: Vec<Vec<f64>> = atoms.iter().map(|a| a[start..start + len].to_vec()).collect();
                TracialSpec::joint_atoms(sub, weights.clone(), vec![len])
            }
            SpecKind::MatrixModel { families } => {
                let fam = families
                    .get(family)
                    .ok_or_else(|| invalid("family", "family index out of range"))?;
                TracialSpec::matrix_model(vec![fam.iter().map(|m| m.matrix.clone()).collect()])
            }
            _ if family == 0 => Ok(self.clone()),
            _ => Err(invalid("family", "family index out of range")),
        }
    }

    fn raw_moment(&self, w: &Word) -> Result<c64> {
        match &self.kind {
            SpecKind::Semicircular => {
                let k = w.len();
                Ok(if k % 2 == 1 {
                    ZERO
                } else {
                    c64::new(catalan(k / 2), 0.0)
                })
            }
            SpecKind::Projection { alpha } => Ok(if w.is_empty() {
                ONE
            } else {
                c64::new(*alpha, 0.0)
            }),
            SpecKind::FiniteAtoms {
                atoms,
                weights,
                families,
            } => {
                let offsets: Vec<usize> = families
                    .iter()
                    .scan(0, |s, f| {
                        let o = *s;
                        *s += f;
                        Some(o)
                    })
                    .collect();
                let mut total = 0.0;
                for (a, wgt) in atoms.iter().zip(weights) {
                    let mut p = *wgt;
                    for l in &w.0 {
                        p *= a[offsets[l.family] + l.variable];
                    }
                    total += p;
                }
                Ok(c64::new(total, 0.0))
            }
            SpecKind::MatrixModel { families } => {
                let mats: Vec<Vec<CMat>> = families
                    .iter()
                    .map(|f| f.iter().map(|m| m.matrix.clone()).collect())
                    .collect();
                eval_word(w, &mats)
            }
            SpecKind::FreeProduct { marginals } => {
                let refs: Vec<&dyn MomentOracle> = marginals.iter().map(|m| m as &dyn MomentOracle).collect();
                FreeProductEvaluator::new(refs).compute(w)
            }
        }
    }
}

impl MomentOracle for TracialSpec {
    fn layout(&self) -> Layout {
        match &self.kind {
            SpecKind::Semicircular | SpecKind::Projection { .. } => Layout {
                families: vec![vec![LetterKind::SelfAdjoint]],
            },
            SpecKind::FiniteAtoms { families, .. } => Layout {
                families: families
                    .iter()
                    .map(|&k| vec![LetterKind::SelfAdjoint; k])
                    .collect(),
            },
            SpecKind::MatrixModel { families } => Layout {
                families: families
                    .iter()
                    .map(|f| f.iter().map(|m| m.kind).collect())
                    .collect(),
            },
            SpecKind::FreeProduct { marginals } => Layout {
                families: marginals
                    .iter()
                    .map(|m| m.layout().families.concat())
                    .collect(),
            },
        }
    }

    fn moment(&self, w: &Word) -> Result<c64> {
        let layout = self.layout();
        layout.validate(w)?;
        let v = self.raw_moment(w)?;
        check_self_adjoint_moment(&layout, w, v)?;
        Ok(v)
    }

    fn operator_bound(&self) -> f64 {
        self.operator_bound
    }

    fn moments(&self, words: &[Word]) -> Result<Vec<c64>> {
        let layout = self.layout();
        for w in words {
            layout.validate(w)?;
        }
        let out: Vec<c64> = match &self.kind {
            SpecKind::FreeProduct { marginals } => {
                let refs: Vec<&dyn MomentOracle> = marginals.iter().map(|m| m as &dyn MomentOracle).collect();
                let mut ev = FreeProductEvaluator::new(refs);
                words.iter().map(|w| ev.compute(w)).collect::<Result<_>>()?
            }
            SpecKind::MatrixModel { families } => {
                let mats: Vec<Vec<CMat>> = families
                    .iter()
                    .map(|f| f.iter().map(|m| m.matrix.clone()).collect())
                    .collect();
                let max_len = words.iter().map(Word::len).max().unwrap_or(0);
                let mut ev = WordEvaluator::new(&layout, &mats, max_len)?;
                words.iter().map(|w| ev.eval(w)).collect::<Result<_>>()?
            }
            _ => words.iter().map(|w| self.raw_moment(w)).collect::<Result<_>>()?,
        };
        for (w, v) in words.iter().zip(&out) {
            check_self_adjoint_moment(&layout, w, *v)?;
        }
        Ok(out)
    }
}

/// Moments of self-adjoint words on self-adjoint targets must be real.
fn check_self_adjoint_moment(layout: &Layout, w: &Word, v: c64) -> Result<()> {
    if layout.all_self_adjoint() && w.adjoint(layout) == *w && v.im.abs() > TOLERANCES.imaginary_moment {
        return Err(Error::Numerical(format!(
            "moment of self-adjoint word {w} has imaginary part {:.3e}",
            v.im
        )));
    }
    Ok(())
}

fn catalan(k: usize) -> f64 {
    let mut c = 1.0_f64;
    for j in 0..k {
        c = c * 2.0 * (2 * j + 1) as f64 / (j + 2) as f64;
    }
    c
}

/// `tr_N` of the product of the assigned matrices in letter order.
pub fn eval_word(w: &Word, assignment: &[Vec<CMat>]) -> Result<c64> {
    let mut n = None;
    for (pos, l) in w.0.iter().enumerate() {
        let m = assignment
            .get(l.family)
            .and_then(|f| f.get(l.variable))
            .ok_or_else(|| {
                Error::UnsupportedWord(format!(
                    "letter {pos} ({}, {}) has no assigned matrix",
                    l.family, l.variable
                ))
            })?;
        let d = *n.get_or_insert(m.nrows());
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "letter {pos} ({}, {}) is {}x{}, expected {d}x{d}",
                l.family,
                l.variable,
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let Some(n) = n else {
        return Ok(ONE);
    };
    let pick = |l: &Letter| -> CMat {
        let m = &assignment[l.family][l.variable];
        if l.adjoint {
            m.adjoint().to_owned()
        } else {
            m.clone()
        }
    };
    let k = w.len();
    if k == 1 {
        return Ok(linalg::tr_n(&pick(&w.0[0])));
    }
    let half = k.div_ceil(2);
    let mut left = pick(&w.0[0]);
    for l in &w.0[1..half] {
        left = linalg::mul(&left, &pick(l));
    }
    let mut right = pick(&w.0[half]);
    for l in &w.0[half + 1..] {
        right = linalg::mul(&right, &pick(l));
    }
    Ok(linalg::trace_of_product(&left, &right) / n as f64)
}

/// All words over `alphabet` with lengths `1..=max_len`, shortest first,
/// lexicographic within a length.
pub fn enumerate_words(alphabet: &[Letter], max_len: usize, budget: u64) -> Result<Vec<Word>> {
    let a = alphabet.len() as u64;
    let mut count: u64 = 0;
    let mut p: u64 = 1;
    for _ in 0..max_len {
        p = p.saturating_mul(a);
        count = count.saturating_add(p);
    }
    if count > budget {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut sorted = alphabet.to_vec();
    sorted.sort();
    if sorted.is_empty() {
        return Ok(out);
    }
    for len in 1..=max_len {
        let mut idx = vec![0usize; len];
        'words: loop {
            out.push(Word(idx.iter().map(|&i| sorted[i]).collect()));
            let mut pos = len;
            loop {
                if pos == 0 {
                    break 'words;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < sorted.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    Ok(out)
}

/// Cached evaluation of many words on one matrix assignment.
///
/// Products of up to `⌈max_len/2⌉` letters are built lazily from shorter
/// ones; a word of length `k` is the trace of a product of two cached
/// halves, which costs `O(N^2)`.
pub struct WordEvaluator {
    alphabet: Vec<Letter>,
    letter_index: HashMap<Letter, usize>,
    letters: Vec<CMat>,
    half: usize,
    /// `cache[k-1]` maps a base-`L` index to the product of that length.
    cache: Vec<HashMap<usize, CMat>>,
    n: usize,
}

impl WordEvaluator {
    pub fn new(layout: &Layout, assignment: &[Vec<CMat>], max_len: usize) -> Result<Self> {
        let alphabet = layout.alphabet();
        let mut letters = Vec::with_capacity(alphabet.len());
        let mut n = None;
        for l in &alphabet {
            let m = assignment
                .get(l.family)
                .and_then(|f| f.get(l.variable))
                .ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "no matrix assigned to family {} variable {}",
                        l.family, l.variable
                    ))
                })?;
            let d = *n.get_or_insert(m.nrows());
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "family {} variable {} is {}x{}, expected {d}x{d}",
                    l.family,
                    l.variable,
                    m.nrows(),
                    m.ncols()
                )));
            }
            letters.push(if l.adjoint {
                m.adjoint().to_owned()
            } else {
                m.clone()
            });
        }
        let letter_index = alphabet.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let half = max_len.div_ceil(2).max(1);
        Ok(Self {
            alphabet,
            letter_index,
            letters,
            half,
            cache: vec![HashMap::new(); half],
            n: n.unwrap_or(1),
        })
    }

    pub fn alphabet(&self) -> &[Letter] {
        &self.alphabet
    }

    fn indices(&self, w: &[Letter]) -> Result<Vec<usize>> {
        w.iter()
            .map(|l| {
                self.letter_index
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::UnsupportedWord(format!("letter ({}, {}) not in alphabet", l.family, l.variable)))
            })
            .collect()
    }

    fn product(&mut self, idx: &[usize]) -> &CMat {
        let len = idx.len();
        if len == 1 {
            return &self.letters[idx[0]];
        }
        let base = self.letters.len();
        let key = idx.iter().fold(0usize, |k, &i| k * base + i);
        if !self.cache[len - 1].contains_key(&key) {
            let prefix = self.product(&idx[..len - 1]).clone();
            let p = linalg::mul(&prefix, &self.letters[idx[len - 1]]);
            self.cache[len - 1].insert(key, p);
        }
        &self.cache[len - 1][&key]
    }

    /// `tr_N(w)`.
    pub fn eval(&mut self, w: &Word) -> Result<c64> {
        let k = w.len();
        if k == 0 {
            return Ok(ONE);
        }
        if k > 2 * self.half {
            return Err(invalid("word", format!("length {k} exceeds evaluator capacity {}", 2 * self.half)));
        }
        let idx = self.indices(&w.0)?;
        if k == 1 {
            return Ok(linalg::tr_n(&self.letters[idx[0]]));
        }
        let h = k.div_ceil(2);
        let left = self.product(&idx[..h]).clone();
        let right = self.product(&idx[h..]);
        Ok(linalg::trace_of_product(&left, right) / self.n as f64)
    }
}

/// Free product of marginal states, evaluated by the centering recursion.
///
/// A word is split into maximal single-family runs `b_1 … b_r` (the first and
/// last runs are merged cyclically when they share a family). Freeness gives
/// `τ((b_1 − c_1)…(b_r − c_r)) = 0` with `c_j = τ(b_j)`; expanding expresses
/// `τ(b_1…b_r)` through strictly shorter words.
pub struct FreeProductEvaluator<'a> {
    marginals: Vec<&'a dyn MomentOracle>,
    /// Product variable `(f, v)` ↦ marginal letter `(family, variable)`.
    maps: Vec<Vec<(usize, usize)>>,
    memo: HashMap<Vec<Letter>, c64>,
    marginal_memo: HashMap<Vec<Letter>, c64>,
}

impl<'a> FreeProductEvaluator<'a> {
    pub fn new(marginals: Vec<&'a dyn MomentOracle>) -> Self {
        let maps = marginals
            .iter()
            .map(|m| {
                m.layout()
                    .families
                    .iter()
                    .enumerate()
                    .flat_map(|(f, vars)| (0..vars.len()).map(move |v| (f, v)))
                    .collect()
            })
            .collect();
        Self {
            marginals,
            maps,
            memo: HashMap::new(),
            marginal_memo: HashMap::new(),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            families: self
                .marginals
                .iter()
                .map(|m| m.layout().families.concat())
                .collect(),
        }
    }

    pub fn compute(&mut self, w: &Word) -> Result<c64> {
        self.layout().validate(w)?;
        let limit = w.len() * w.len();
        self.eval(&w.0, 0, limit)
    }

    fn marginal_moment(&mut self, run: &[Letter]) -> Result<c64> {
        if let Some(v) = self.marginal_memo.get(run) {
            return Ok(*v);
        }
        let fam = run[0].family;
        let mapped = Word(
            run.iter()
                .map(|l| {
                    let (f, v) = self.maps[fam][l.variable];
                    Letter {
                        family: f,
                        variable: v,
                        adjoint: l.adjoint,
                    }
                })
                .collect(),
        );
        let v = self.marginals[fam].moment(&mapped)?;
        self.marginal_memo.insert(run.to_vec(), v);
        Ok(v)
    }

    fn eval(&mut self, w: &[Letter], depth: usize, limit: usize) -> Result<c64> {
        if w.is_empty() {
            return Ok(ONE);
        }
        if depth > limit.max(1) {
            return Err(Error::Internal(format!(
                "free product recursion exceeded depth {limit}"
            )));
        }
        if let Some(v) = self.memo.get(w) {
            return Ok(*v);
        }
        let mut runs: Vec<Vec<Letter>> = Vec::new();
        for l in w {
            match runs.last_mut() {
                Some(r) if r[0].family == l.family => r.push(*l),
                _ => runs.push(vec![*l]),
            }
        }
        if runs.len() > 1 && runs[0][0].family == runs[runs.len() - 1][0].family {
            let mut last = runs.pop().unwrap_or_default();
            last.extend_from_slice(&runs[0]);
            runs[0] = last;
        }
        let value = if runs.len() == 1 {
            self.marginal_moment(&runs[0])?
        } else {
            let r = runs.len();
            let c: Vec<c64> = runs
                .iter()
                .map(|b| self.marginal_moment(b))
                .collect::<Result<_>>()?;
            let mut total = ZERO;
            for mask in 0..((1usize << r) - 1) {
                let mut coef = ONE;
                for (j, cj) in c.iter().enumerate() {
                    if mask & (1 << j) == 0 {
                        coef *= -*cj;
                    }
                }
                if coef == ZERO {
                    continue;
                }
                let sub: Vec<Letter> = runs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| mask & (1 << j) != 0)
                    .flat_map(|(_, b)| b.iter().copied())
                    .collect();
                total += coef * self.eval(&sub, depth + 1, limit)?;
            }
            -total
        };
        self.memo.insert(w.to_vec(), value);
        Ok(value)
    }
}

impl MomentOracle for FreeProductEvaluator<'_> {
    fn layout(&self) -> Layout {
        FreeProductEvaluator::layout(self)
    }

    fn moment(&self, w: &Word) -> Result<c64> {
        let mut fresh = FreeProductEvaluator::new(self.marginals.clone());
        fresh.compute(w)
    }

    fn operator_bound(&self) -> f64 {
        self.marginals
            .iter()
            .fold(0.0_f64, |m, s| m.max(s.operator_bound()))
    }

    fn moments(&self, words: &[Word]) -> Result<Vec<c64>> {
        let mut fresh = FreeProductEvaluator::new(self.marginals.clone());
        words.iter().map(|w| fresh.compute(w)).collect()
    }
}

/// Smallest `ε` for which the families are `(m, ε)`-free: the largest gap
/// between `tr_N` of a word of length `≤ m` and its value under the free
/// product of the families' own matrix marginals.
pub fn mf_free_deviation(families: &[Vec<CMat>], m: usize, budget: u64) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m", "degree must be at least 1"));
    }
    if families.is_empty() {
        return Err(invalid("families", "need at least one family"));
    }
    let marginals: Vec<TracialSpec> = families
        .iter()
        .map(|f| TracialSpec::matrix_model(vec![f.clone()]))
        .collect::<Result<_>>()?;
    let joint = TracialSpec::matrix_model(families.to_vec())?;
    let layout = joint.layout();
    let words = enumerate_words(&layout.alphabet(), m, budget)?;
    let mut ev = WordEvaluator::new(&layout, families, m)?;
    let refs: Vec<&dyn MomentOracle> = marginals.iter().map(|s| s as &dyn MomentOracle).collect();
    let mut free = FreeProductEvaluator::new(refs);
    let mut worst = 0.0_f64;
    for w in &words {
        if !w.mentions_multiple_families() {
            continue;
        }
        let d = (ev.eval(w)? - free.compute(w)?).norm();
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Constant matrix `c I_n`.
pub fn scalar_matrix(n: usize, c: f64) -> CMat {
    Mat::from_fn(n, n, |j, k| if j == k { c64::new(c, 0.0) } else { ZERO })
}

// ---- serialization -------------------------------------------------------

pub const SPEC_SCHEMA: &str = "tracial-spec/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDocument {
    schema: String,
    #[serde(flatten)]
    kind: KindDocument,
    operator_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum KindDocument {
    MatrixModel {
        families: Vec<Vec<MatrixDocument>>,
    },
    Semicircular,
    Projection {
        alpha: f64,
    },
    FiniteAtoms {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        #[serde(default)]
        families: Option<Vec<usize>>,
    },
    FreeProduct {
        marginals: Vec<TracialSpec>,
    },
}

/// Row-major complex matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixDocument {
    dim: usize,
    re: Vec<f64>,
    #[serde(default)]
    im: Vec<f64>,
}

impl From<&CMat> for MatrixDocument {
    fn from(m: &CMat) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                re.push(m[(j, k)].re);
                im.push(m[(j, k)].im);
            }
        }
        Self { dim: n, re, im }
    }
}

impl TryFrom<MatrixDocument> for CMat {
    type Error = Error;

    fn try_from(d: MatrixDocument) -> Result<CMat> {
        let nn = d.dim * d.dim;
        if d.re.len() != nn || !(d.im.is_empty() || d.im.len() == nn) {
            return Err(invalid("matrix", format!("expected {nn} entries for dim {}", d.dim)));
        }
        Ok(Mat::from_fn(d.dim, d.dim, |j, k| {
            let i = j * d.dim + k;
            c64::new(d.re[i], d.im.get(i).copied().unwrap_or(0.0))
        }))
    }
}

impl From<TracialSpec> for SpecDocument {
    fn from(s: TracialSpec) -> Self {
        let kind = match s.kind {
            SpecKind::MatrixModel { families } => KindDocument::MatrixModel {
                families: families
                    .iter()
                    .map(|f| f.iter().map(|m| MatrixDocument::from(&m.matrix)).collect())
                    .collect(),
            },
            SpecKind::Semicircular => KindDocument::Semicircular,
            SpecKind::Projection { alpha } => KindDocument::Projection { alpha },
            SpecKind::FiniteAtoms {
                atoms,
                weights,
                families,
            } => KindDocument::FiniteAtoms {
                atoms,
                weights,
                families: Some(families),
            },
            SpecKind::FreeProduct { marginals } => KindDocument::FreeProduct { marginals },
        };
        SpecDocument {
            schema: SPEC_SCHEMA.to_string(),
            kind,
            operator_bound: s.operator_bound,
        }
    }
}

impl TryFrom<SpecDocument> for TracialSpec {
    type Error = Error;

    fn try_from(d: SpecDocument) -> Result<Self> {
        if d.schema != SPEC_SCHEMA {
            return Err(invalid("schema", format!("expected {SPEC_SCHEMA}, got {}", d.schema)));
        }
        let spec = match d.kind {
            KindDocument::MatrixModel { families } => TracialSpec::matrix_model(
                families
                    .into_iter()
                    .map(|f| f.into_iter().map(CMat::try_from).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?,
            )?,
            KindDocument::Semicircular => TracialSpec::semicircular(),
            KindDocument::Projection { alpha } => TracialSpec::projection(alpha)?,
            KindDocument::FiniteAtoms {
                atoms,
                weights,
                families,
            } => {
                let nv = atoms.first().map_or(0, Vec::len);
                TracialSpec::joint_atoms(atoms, weights, families.unwrap_or(vec![nv]))?
            }
            KindDocument::FreeProduct { marginals } => TracialSpec::free_product(marginals)?,
        };
        if !(d.operator_bound >= spec.operator_bound - 1e-9) {
            return Err(invalid(
                "operator_bound",
                format!(
                    "declared bound {} is below the actual norm {}",
                    d.operator_bound, spec.operator_bound
                ),
            ));
        }
        Ok(TracialSpec {
            operator_bound: d.operator_bound,
            ..spec
        })
    }
}
