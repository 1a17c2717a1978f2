//! Global numerical tolerances.
//!
//! Every hard-coded threshold used by the library lives here so that a
//! single record controls calibration.

/// Tolerance record shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Hermitian symmetry check, absolute per entry.
    pub hermitian: f64,
    /// Unitarity check, operator norm of `U*U - I`.
    pub unitary: f64,
    /// Relative Hilbert-Schmidt reconstruction error accepted from `eigh`.
    pub eigh_reconstruction: f64,
    /// Imaginary part tolerated on moments of self-adjoint targets.
    pub imaginary_moment: f64,
    /// Slack for inequality checks (Lipschitz, metric comparison).
    pub inequality_slack: f64,
    /// Marginal residual accepted on transport plans.
    pub plan_marginal: f64,
    /// Unitarity residual above which a simulated path is rejected.
    pub path_unitarity: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    hermitian: 1e-12,
    unitary: 1e-10,
    eigh_reconstruction: 1e-9,
    imaginary_moment: 1e-10,
    inequality_slack: 1e-9,
    plan_marginal: 1e-9,
    path_unitarity: 1e-6,
};

/// Version string written into artifact headers.
pub const TOOL_VERSION: &str = concat!("orbilab ", env!("CARGO_PKG_VERSION"));

/// Matrix-Gaussian normalization recorded in every artifact header.
pub const GAUSSIAN_NORMALIZATION: &str =
    "GUE entries: diagonal N(0,1/N), off-diagonal complex with E|a_jk|^2 = 1/N; E tr_N(A^2) = 1";

/// Brownian increment normalization recorded in liberation artifacts.
pub const SDE_NORMALIZATION: &str =
    "dU = i U dH - U dt/2 with E tr_N(dH^2) = dt; E tr_N U(t) = exp(-t/2)";
