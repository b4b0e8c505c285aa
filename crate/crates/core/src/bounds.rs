//! Temperature lower bounds and the block closed-loop matrix used to certify
//! them.
//!
//! Both bounds share the shape
//!
//! ```text
//! β = C · H² κ² / (2e (1 - ‖θ‖)² ε²)
//! ```
//!
//! where `(M, θ, κ)` factor the relevant stable matrix and `C = 1` for
//! filtering. Evaluation is done in log-space so that ill-conditioned
//! factorizations report an overflow instead of returning `inf`.

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, stable_factorization, Matrix, StableFactorization};
use crate::system::{GainSet, LinearSystem};

/// Bounds above this value are reported as [`Error::BetaOverflow`].
pub const BETA_LIMIT: f64 = 1e300;

/// A temperature bound together with the factorization it was derived from.
///
/// Any valid factorization gives a valid bound, so the factorization is kept
/// alongside β rather than treating β as canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaBound {
    pub beta: f64,
    pub log_beta: f64,
    pub window: usize,
    pub eps: f64,
    /// Noise-coupling constant; 1 for filtering.
    pub coupling: f64,
    pub factorization: StableFactorization,
}

impl BetaBound {
    pub fn kappa(&self) -> f64 {
        self.factorization.kappa
    }

    pub fn theta_norm(&self) -> f64 {
        self.factorization.theta_norm
    }
}

fn validate_window_eps(window: usize, eps: f64) -> Result<()> {
    if window == 0 {
        return Err(Error::InvalidArgument("window H must be at least 1".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive and finite, got {eps}")));
    }
    Ok(())
}

/// `ln(C H² κ² / (2e (1-‖θ‖)² ε²))`.
pub fn log_beta(window: usize, eps: f64, kappa: f64, theta_norm: f64, coupling: f64) -> f64 {
    coupling.ln() + 2.0 * (window as f64).ln() + 2.0 * kappa.ln()
        - std::f64::consts::LN_2
        - 1.0
        - 2.0 * (-theta_norm).ln_1p()
        - 2.0 * eps.ln()
}

fn finish(window: usize, eps: f64, coupling: f64, factorization: StableFactorization) -> Result<BetaBound> {
    let log_beta = log_beta(window, eps, factorization.kappa, factorization.theta_norm, coupling);
    if log_beta.is_nan() || log_beta > BETA_LIMIT.ln() {
        return Err(Error::BetaOverflow { log_beta });
    }
    Ok(BetaBound {
        beta: log_beta.exp(),
        log_beta,
        window,
        eps,
        coupling,
        factorization,
    })
}

/// Temperature sufficient for the windowed filter to track the Kalman
/// predictor within `eps`, from a factorization of `A - LC`.
pub fn beta_for_filter(sys: &LinearSystem, gains: &GainSet, window: usize, eps: f64) -> Result<BetaBound> {
    validate_window_eps(window, eps)?;
    let factorization = stable_factorization(&gains.observer_matrix(sys))?;
    finish(window, eps, 1.0, factorization)
}

/// `2‖BK‖² + 2‖A + BK - LC‖²`.
pub fn coupling_constant(sys: &LinearSystem, gains: &GainSet) -> Result<f64> {
    let bk = &sys.b * gains.require_k()?;
    let lqg = gains.lqg_matrix(sys)?;
    Ok(2.0 * spectral_norm(&bk).powi(2) + 2.0 * spectral_norm(&lqg).powi(2))
}

/// Temperature sufficient for the windowed controller's state to stay within
/// `eps` of the LQG state, from a factorization of the block matrix.
pub fn beta_for_control(sys: &LinearSystem, gains: &GainSet, window: usize, eps: f64) -> Result<BetaBound> {
    validate_window_eps(window, eps)?;
    let coupling = coupling_constant(sys, gains)?;
    let factorization = stable_factorization(&build_block_a(sys, gains)?)?;
    finish(window, eps, coupling, factorization)
}

/// `H e^{-1/2} (2β)^{-1/2}`: uniform bound on the gap between the windowed
/// estimate and its newest interpolant.
pub fn intermediate_gap_bound(window: usize, beta: f64) -> f64 {
    window as f64 * (-0.5f64).exp() / (2.0 * beta).sqrt()
}

/// `γ ↦ H e^{-βγ²} γ`, the per-term envelope behind [`intermediate_gap_bound`].
pub fn gap_envelope(window: usize, beta: f64, gamma: f64) -> f64 {
    window as f64 * (-beta * gamma * gamma).exp() * gamma
}

/// `d/dγ` of [`gap_envelope`]: `H e^{-βγ²} (1 - 2βγ²)`.
pub fn gap_envelope_derivative(window: usize, beta: f64, gamma: f64) -> f64 {
    window as f64 * (-beta * gamma * gamma).exp() * (1.0 - 2.0 * beta * gamma * gamma)
}

/// Numerically maximizes [`gap_envelope`] over `γ ≥ 0`, returning
/// `(argmax, max)`.
///
/// A grid scan brackets the peak and golden-section search narrows it. The
/// envelope is flat at the top, so function values stop discriminating near
/// `√ε` relative width; the last digits come from bisecting on the sign of
/// the derivative.
pub fn gap_envelope_argmax(window: usize, beta: f64) -> (f64, f64) {
    let f = |g: f64| gap_envelope(window, beta, g);
    let span = 10.0 / beta.sqrt();
    let grid = 1000;
    let best = (0..=grid)
        .map(|i| span * i as f64 / grid as f64)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap_or(0.0);
    let step = span / grid as f64;
    let (mut lo, mut hi) = ((best - step).max(0.0), best + step);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 * hi {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap_envelope_derivative(window, beta, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let arg = 0.5 * (lo + hi);
    (arg, f(arg))
}

fn set_block(target: &mut Matrix, row: usize, col: usize, block: &Matrix) {
    let n = block.nrows();
    target.view_mut((row * n, col * n), (n, n)).copy_from(block);
}

/// The `4n × 4n` matrix of the stacked closed loop on
/// `[x; x̃; x*; x̂*]`:
///
/// ```text
/// [ A   BK          0   0          ]
/// [ LC  A + BK - LC 0   0          ]
/// [ 0   0           A   BK         ]
/// [ 0   0           LC  A + BK - LC]
/// ```
pub fn build_block_a(sys: &LinearSystem, gains: &GainSet) -> Result<Matrix> {
    let n = sys.state_dim();
    let bk = &sys.b * gains.require_k()?;
    let lc = gains.l() * &sys.c;
    let lqg = gains.lqg_matrix(sys)?;
    let mut block = Matrix::zeros(4 * n, 4 * n);
    for offset in [0, 2] {
        set_block(&mut block, offset, offset, &sys.a);
        set_block(&mut block, offset, offset + 1, &bk);
        set_block(&mut block, offset + 1, offset, &lc);
        set_block(&mut block, offset + 1, offset + 1, &lqg);
    }
    Ok(block)
}

/// Unit upper block-triangular change of basis `[[I, -I], [0, I]]`, twice.
pub fn build_block_q(n: usize) -> Matrix {
    let eye = Matrix::identity(n, n);
    let mut q = Matrix::identity(4 * n, 4 * n);
    set_block(&mut q, 0, 1, &(-&eye));
    set_block(&mut q, 2, 3, &(-eye));
    q
}

/// Block lower-triangular form with `A - LC` and `A + BK` on the diagonal.
pub fn build_block_s(sys: &LinearSystem, gains: &GainSet) -> Result<Matrix> {
    let n = sys.state_dim();
    let observer = gains.observer_matrix(sys);
    let regulator = &sys.a + &sys.b * gains.require_k()?;
    let lc = gains.l() * &sys.c;
    let mut s = Matrix::zeros(4 * n, 4 * n);
    for offset in [0, 2] {
        set_block(&mut s, offset, offset, &observer);
        set_block(&mut s, offset + 1, offset, &lc);
        set_block(&mut s, offset + 1, offset + 1, &regulator);
    }
    Ok(s)
}

/// `‖𝔸 - ℚ⁻¹𝕊ℚ‖₂`, which vanishes up to rounding for any gains.
pub fn verify_block_similarity(sys: &LinearSystem, gains: &GainSet) -> Result<f64> {
    let block_a = build_block_a(sys, gains)?;
    let q = build_block_q(sys.state_dim());
    let s = build_block_s(sys, gains)?;
    let q_inv = q.clone().try_inverse().ok_or(Error::Singular)?;
    Ok(spectral_norm(&(block_a - q_inv * s * q)))
}
