//! Dense complex matrix kernel.
//!
//! Thin wrappers over `faer` that fix the conventions used throughout the
//! crate: spectra are ordered non-increasingly, tracial norms use the
//! normalized trace `tr_N = Tr / N`, and every kernel runs sequentially so
//! that results do not depend on the worker count.

use std::sync::Once;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::config::TOLERANCES;
use crate::error::{invalid, Error, Result};

pub use faer::c64;

/// Owned dense complex matrix.
pub type CMat = Mat<c64>;

static SEQUENTIAL: Once = Once::new();

/// Pins faer's global parallelism to sequential execution.
///
/// Parallelism lives at the sample level; nested kernel threading would make
/// floating-point reductions depend on the thread count.
pub fn ensure_sequential_kernels() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Self-adjoint `N x N` matrix.
#[derive(Debug, Clone)]
pub struct HermitianMatrix(CMat);

/// Unitary `N x N` matrix.
#[derive(Debug, Clone)]
pub struct UnitaryMatrix(CMat);

/// Real spectrum ordered non-increasingly.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalVector(Vec<f64>);

/// Matrix norm selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    Operator,
    /// Unnormalized Hilbert-Schmidt (Frobenius) norm.
    HilbertSchmidt,
    /// `tr_N(|A|^p)^{1/p}`.
    Tracial(f64),
}

impl HermitianMatrix {
    /// Validates Hermitian symmetry within the global tolerance.
    pub fn new(m: CMat) -> Result<Self> {
        check_square(&m)?;
        let n = m.nrows();
        for j in 0..n {
            for k in j..n {
                let d = m[(j, k)] - m[(k, j)].conj();
                if d.norm() > TOLERANCES.hermitian {
                    return Err(invalid(
                        "matrix",
                        format!("not Hermitian at ({j},{k}): asymmetry {:.3e}", d.norm()),
                    ));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds `(M + M*)/2`, which is Hermitian by construction.
    pub fn hermitian_part(m: &CMat) -> Result<Self> {
        check_square(m)?;
        let n = m.nrows();
        Ok(Self(Mat::from_fn(n, n, |j, k| {
            (m[(j, k)] + m[(k, j)].conj()) * 0.5
        })))
    }

    /// Real diagonal matrix with the given entries, in the given order.
    pub fn from_diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self(Mat::from_fn(n, n, |j, k| {
            if j == k {
                c64::new(values[j], 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        }))
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Mat::zeros(n, n))
    }

    /// Wraps a matrix known to be Hermitian up to rounding; the lower
    /// triangle is mirrored to make it exactly so.
    pub(crate) fn from_raw_symmetrize(mut m: CMat) -> Self {
        let n = m.nrows();
        for j in 0..n {
            m[(j, j)] = c64::new(m[(j, j)].re, 0.0);
            for k in (j + 1)..n {
                let avg = (m[(j, k)] + m[(k, j)].conj()) * 0.5;
                m[(j, k)] = avg;
                m[(k, j)] = avg.conj();
            }
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_mat(self) -> CMat {
        self.0
    }

    /// `U A U*`, symmetrized to absorb rounding.
    pub fn conjugate_by(&self, u: &UnitaryMatrix) -> Self {
        Self::from_raw_symmetrize(conjugate(u.as_mat(), &self.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(Mat::from_fn(self.dim(), self.dim(), |j, k| self.0[(j, k)] * s))
    }
}

impl UnitaryMatrix {
    /// Validates `‖U*U − I‖_op` against the global tolerance.
    pub fn new(m: CMat) -> Result<Self> {
        check_square(&m)?;
        let r = unitarity_residual(&m);
        if r > TOLERANCES.unitary {
            return Err(invalid(
                "matrix",
                format!("not unitary: ‖U*U − I‖ = {r:.3e}"),
            ));
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: CMat) -> Self {
        Self(m)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    /// Diagonal unitary `diag(e^{iθ_j})`.
    pub fn from_phases(theta: &[f64]) -> Self {
        let n = theta.len();
        Self(Mat::from_fn(n, n, |j, k| {
            if j == k {
                c64::from_polar(1.0, theta[j])
            } else {
                c64::new(0.0, 0.0)
            }
        }))
    }

    /// Permutation matrix with `P e_k = e_{perm[k]}`.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(invalid("perm", "not a permutation of 0..n"));
            }
            seen[p] = true;
        }
        Ok(Self(Mat::from_fn(n, n, |j, k| {
            if perm[k] == j {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        })))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &CMat {
        &self.0
    }

    pub fn into_mat(self) -> CMat {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint().to_owned())
    }

    /// Product `self · other`.
    pub fn compose(&self, other: &UnitaryMatrix) -> Self {
        Self(mul(&self.0, &other.0))
    }

    pub fn residual(&self) -> f64 {
        unitarity_residual(&self.0)
    }
}

impl DiagonalVector {
    /// Validates the non-increasing order.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.windows(2).any(|w| !(w[0] >= w[1])) {
            return Err(invalid("values", "diagonal vector must be non-increasing"));
        }
        Ok(Self(values))
    }

    /// Sorts into non-increasing order (stable for ties).
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `tr_N(D^k)`.
    pub fn power_trace(&self, k: u32) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|x| x.powi(k as i32)).sum::<f64>() / self.0.len() as f64
    }

    pub fn to_matrix(&self) -> HermitianMatrix {
        HermitianMatrix::from_diagonal(&self.0)
    }
}

fn check_square(m: &CMat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(invalid("matrix", "dimension must be positive"));
    }
    Ok(())
}

/// Sequential product `a · b`.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    mul_ref(a.as_ref(), b.as_ref())
}

pub(crate) fn mul_ref(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, c64::new(1.0, 0.0), Par::Seq);
    out
}

/// Sequential product `a · b*`.
pub fn mul_adj(a: &CMat, b: &CMat) -> CMat {
    mul_ref(a.as_ref(), b.adjoint().to_owned().as_ref())
}

/// Sequential product `a* · b`.
pub fn adj_mul(a: &CMat, b: &CMat) -> CMat {
    mul_ref(a.adjoint().to_owned().as_ref(), b.as_ref())
}

/// `u x u*`.
pub fn conjugate(u: &CMat, x: &CMat) -> CMat {
    mul_adj(&mul(u, x), u)
}

/// `u diag(d) u*` for a real diagonal.
pub fn conjugate_diagonal(u: &CMat, d: &[f64]) -> CMat {
    let n = u.nrows();
    let scaled = Mat::from_fn(n, n, |j, k| u[(j, k)] * d[k]);
    mul_adj(&scaled, u)
}

/// Unnormalized trace.
pub fn trace(a: &CMat) -> c64 {
    (0..a.nrows()).map(|j| a[(j, j)]).sum()
}

/// Normalized trace `tr_N`.
pub fn tr_n(a: &CMat) -> c64 {
    trace(a) / a.nrows() as f64
}

/// `Tr(a b)` in O(N²) without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> c64 {
    let n = a.nrows();
    let mut acc = c64::new(0.0, 0.0);
    for j in 0..n {
        for k in 0..n {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

/// `‖U*U − I‖_op`. Uses the Frobenius norm as a cheap upper bound first.
pub fn unitarity_residual(u: &CMat) -> f64 {
    let n = u.nrows();
    let mut g = adj_mul(u, u);
    for j in 0..n {
        g[(j, j)] -= c64::new(1.0, 0.0);
    }
    let fro = g.norm_l2();
    if fro < TOLERANCES.unitary * 1e-2 {
        return fro;
    }
    hermitian_op_norm(&g)
}

/// Operator norm of a Hermitian matrix (max |eigenvalue|).
pub(crate) fn hermitian_op_norm(a: &CMat) -> f64 {
    ensure_sequential_kernels();
    match a.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => ev.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        Err(_) => a.norm_l2(),
    }
}

/// Singular values of a square matrix.
fn singular_values(a: &CMat) -> Result<Vec<f64>> {
    ensure_sequential_kernels();
    a.singular_values()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))
}

/// Evaluates the requested norm.
pub fn norm(a: &CMat, kind: Norm) -> Result<f64> {
    check_square(a)?;
    match kind {
        Norm::HilbertSchmidt => Ok(a.norm_l2()),
        Norm::Operator => Ok(singular_values(a)?.iter().fold(0.0_f64, |m, x| m.max(*x))),
        Norm::Tracial(p) => {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(invalid("p", format!("tracial norm needs 1 <= p < inf, got {p}")));
            }
            let s = singular_values(a)?;
            let n = s.len() as f64;
            if p == 2.0 {
                return Ok(a.norm_l2() / n.sqrt());
            }
            let scale = s.iter().fold(0.0_f64, |m, x| m.max(*x));
            if scale == 0.0 {
                return Ok(0.0);
            }
            let mean = s.iter().map(|x| (x / scale).powf(p)).sum::<f64>() / n;
            Ok(scale * mean.powf(1.0 / p))
        }
    }
}

/// Raw eigendecomposition: non-increasing eigenvalues and matching
/// eigenvector columns. No reconstruction check.
pub(crate) fn eigh_raw(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    ensure_sequential_kernels();
    let n = a.nrows();
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenConvergence {
        dim: n,
        residual: f64::NAN,
    })?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|j| s[j].re).collect();
    // stable: ties keep solver order
    order.sort_by(|&x, &y| vals[y].partial_cmp(&vals[x]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted: Vec<f64> = order.iter().map(|&j| vals[j]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((sorted, vecs))
}

/// Hermitian eigendecomposition `A = U D U*` with `D` non-increasing.
pub fn eigh(a: &HermitianMatrix) -> Result<(DiagonalVector, UnitaryMatrix)> {
    let n = a.dim();
    let (vals, vecs) = eigh_raw(a.as_mat())?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenConvergence {
            dim: n,
            residual: f64::NAN,
        });
    }
    let recon = conjugate_diagonal(&vecs, &vals);
    let residual = (&recon - a.as_mat()).norm_l2();
    let scale = a.as_mat().norm_l2().max(1.0);
    if !(residual <= TOLERANCES.eigh_reconstruction * scale) {
        return Err(Error::EigenConvergence { dim: n, residual });
    }
    Ok((DiagonalVector(vals), UnitaryMatrix(vecs)))
}

/// Eigenvalues only, non-increasing.
pub fn eigvalsh(a: &HermitianMatrix) -> Result<DiagonalVector> {
    ensure_sequential_kernels();
    let n = a.dim();
    let vals = a
        .as_mat()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::EigenConvergence {
            dim: n,
            residual: f64::NAN,
        })?;
    Ok(DiagonalVector::from_unsorted(vals))
}

/// Applies a scalar function to the spectrum of a Hermitian matrix,
/// returning `V diag(f(λ)) V*`.
pub(crate) fn spectral_map(a: &CMat, f: impl Fn(f64) -> c64) -> Result<CMat> {
    let (vals, vecs) = eigh_raw(a)?;
    let n = a.nrows();
    let fv: Vec<c64> = vals.iter().map(|&x| f(x)).collect();
    let scaled = Mat::from_fn(n, n, |j, k| vecs[(j, k)] * fv[k]);
    Ok(mul_adj(&scaled, &vecs))
}

/// `exp(iH)`.
pub fn unitary_exp(h: &HermitianMatrix) -> Result<UnitaryMatrix> {
    let scale = h.as_mat().norm_max();
    if !scale.is_finite() || scale > 1e12 {
        return Err(Error::Numerical(format!(
            "exponential of a matrix with entries up to {scale:.3e} is not representable"
        )));
    }
    let u = spectral_map(h.as_mat(), |x| c64::from_polar(1.0, x))?;
    let r = unitarity_residual(&u);
    if r > TOLERANCES.unitary {
        return Err(Error::Numerical(format!(
            "exponential lost unitarity: residual {r:.3e}"
        )));
    }
    Ok(UnitaryMatrix(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::sampling::{gue, haar_unitary, Group};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn eigh_identity() {
        let (d, u) = eigh(&HermitianMatrix::identity(3)).unwrap();
        assert_eq!(d.values(), &[1.0, 1.0, 1.0]);
        let recon = conjugate_diagonal(u.as_mat(), d.values());
        assert!((&recon - HermitianMatrix::identity(3).as_mat()).norm_l2() < 1e-12);
    }

    #[test]
    fn eigh_orders_descending() {
        let (d, _) = eigh(&HermitianMatrix::from_diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(d.values(), &[3.0, 1.0]);
    }

    #[test]
    fn eigh_random_round_trip() {
        let a = gue(16, &RngStream::new(11, 0)).unwrap();
        let (d, u) = eigh(&a).unwrap();
        let recon = conjugate_diagonal(u.as_mat(), d.values());
        assert!((&recon - a.as_mat()).norm_l2() < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = Mat::from_fn(2, 2, |j, k| c64::new((j + 2 * k) as f64, 0.0));
        assert!(HermitianMatrix::new(m).is_err());
    }

    #[test]
    fn diagonal_vector_order_enforced() {
        assert!(DiagonalVector::new(vec![1.0, 2.0]).is_err());
        assert!(DiagonalVector::new(vec![2.0, 2.0, -1.0]).is_ok());
    }

    #[test]
    fn tracial_norm_of_identity_is_one() {
        for n in [1, 3, 7] {
            for p in [1.0, 1.5, 2.0, 4.0] {
                let v = norm(HermitianMatrix::identity(n).as_mat(), Norm::Tracial(p)).unwrap();
                assert_close(v, 1.0, 1e-12);
            }
        }
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let a = HermitianMatrix::from_diagonal(&[3.0, -4.0]);
        assert_close(norm(a.as_mat(), Norm::Operator).unwrap(), 4.0, 1e-12);
    }

    #[test]
    fn two_norm_of_sign_matrix() {
        let a = HermitianMatrix::from_diagonal(&[1.0, -1.0]);
        assert_close(norm(a.as_mat(), Norm::Tracial(2.0)).unwrap(), 1.0, 1e-12);
        assert_close(norm(a.as_mat(), Norm::Tracial(3.0)).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn tracial_norm_rejects_small_p() {
        let a = HermitianMatrix::identity(2);
        assert!(matches!(
            norm(a.as_mat(), Norm::Tracial(0.5)),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let u = unitary_exp(&HermitianMatrix::zeros(4)).unwrap();
        assert!((u.as_mat() - UnitaryMatrix::identity(4).as_mat()).norm_l2() < 1e-14);
    }

    #[test]
    fn exp_of_scalar_diagonal() {
        let u = unitary_exp(&HermitianMatrix::from_diagonal(&[std::f64::consts::PI, 0.0])).unwrap();
        assert!((u.as_mat()[(0, 0)] - c64::new(-1.0, 0.0)).norm() < 1e-14);
        assert!((u.as_mat()[(1, 1)] - c64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn exp_of_random_is_unitary() {
        let h = gue(8, &RngStream::new(5, 1)).unwrap();
        let u = unitary_exp(&h).unwrap();
        assert!(u.residual() < 1e-12);
    }

    #[test]
    fn spectrum_is_conjugation_invariant() {
        let a = gue(10, &RngStream::new(3, 0)).unwrap();
        let v = haar_unitary(10, Group::U, &RngStream::new(3, 1)).unwrap();
        let d1 = eigvalsh(&a).unwrap();
        let d2 = eigh(&a.conjugate_by(&v)).unwrap().0;
        for (x, y) in d1.values().iter().zip(d2.values()) {
            assert_close(*x, *y, 1e-9);
        }
    }

    #[test]
    fn norms_are_monotone_in_p() {
        for seed in 0..100 {
            let a = gue(6, &RngStream::new(seed, 7)).unwrap();
            let m = a.as_mat();
            let n1 = norm(m, Norm::Tracial(1.0)).unwrap();
            let n2 = norm(m, Norm::Tracial(2.0)).unwrap();
            let n3 = norm(m, Norm::Tracial(3.5)).unwrap();
            let op = norm(m, Norm::Operator).unwrap();
            assert!(n1 <= n2 + 1e-12 && n2 <= n3 + 1e-12 && n3 <= op + 1e-12);
        }
    }

    #[test]
    fn trace_of_product_matches_product() {
        let a = gue(5, &RngStream::new(9, 0)).unwrap();
        let b = gue(5, &RngStream::new(9, 1)).unwrap();
        let direct = trace(&mul(a.as_mat(), b.as_mat()));
        assert!((trace_of_product(a.as_mat(), b.as_mat()) - direct).norm() < 1e-12);
    }
}
