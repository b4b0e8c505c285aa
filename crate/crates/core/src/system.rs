//! Linear plants, rank tests and Riccati-based gain synthesis.

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, ensure_len, ensure_pd, ensure_psd, ensure_shape, ensure_square, spectral_norm,
    spectral_radius, symmetrize, Matrix, Vector,
};

/// Closed-loop matrices must have spectral radius at most `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Singular values below `RANK_TOL * σmax` count as zero in rank tests.
pub const RANK_TOL: f64 = 1e-10;

/// `x_{t+1} = A x_t + B u_t + w_t`, `y_t = C x_t + v_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Process-noise covariance.
    pub w_cov: Matrix,
    /// Observation-noise covariance.
    pub v_cov: Matrix,
    pub x0: Vector,
}

impl LinearSystem {
    /// Validates dimensions, covariances and the rank conditions. The
    /// controllability check is skipped when `B` has no columns.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, w_cov: Matrix, v_cov: Matrix, x0: Vector) -> Result<Self> {
        ensure_square("A", &a)?;
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        let p = c.nrows();
        if p == 0 {
            return Err(Error::InvalidArgument("observation dimension must be positive".into()));
        }
        ensure_shape("B", &b, n, b.ncols())?;
        ensure_shape("C", &c, p, n)?;
        ensure_shape("W_cov", &w_cov, n, n)?;
        ensure_shape("V_cov", &v_cov, p, p)?;
        ensure_len("x0", &x0, n)?;
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("W_cov", &w_cov), ("V_cov", &v_cov)] {
            ensure_finite(name, m)?;
        }
        if !x0.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { name: "x0" });
        }
        ensure_psd("W_cov", &w_cov)?;
        ensure_pd("V_cov", &v_cov)?;
        if !check_observability(&a, &c)? {
            return Err(Error::NotObservable);
        }
        if b.ncols() > 0 && !check_controllability(&a, &b)? {
            return Err(Error::NotControllable);
        }
        Ok(Self { a, b, c, w_cov, v_cov, x0 })
    }

    /// A plant without control inputs.
    pub fn filtering(a: Matrix, c: Matrix, w_cov: Matrix, v_cov: Matrix, x0: Vector) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, Matrix::zeros(n, 0), c, w_cov, v_cov, x0)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_x0(mut self, x0: Vector) -> Result<Self> {
        ensure_len("x0", &x0, self.state_dim())?;
        self.x0 = x0;
        Ok(self)
    }
}

/// Quadratic stage cost `xᵀQx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix,
    pub r: Matrix,
}

impl CostWeights {
    pub fn new(q: Matrix, r: Matrix) -> Result<Self> {
        ensure_finite("Q", &q)?;
        ensure_finite("R", &r)?;
        ensure_psd("Q", &q)?;
        ensure_pd("R", &r)?;
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: Matrix::identity(n, n),
            r: Matrix::identity(m, m),
        }
    }

    pub fn stage_cost(&self, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthesized,
    UserSupplied,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Synthesized => "synthesized",
            Provenance::UserSupplied => "user-supplied",
        }
    }
}

/// Observer gain `L` and, for control, state-feedback gain `K`.
///
/// Construction fails unless `A - LC` and (when present) `A + BK` are stable.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    l: Matrix,
    k: Option<Matrix>,
    provenance: Provenance,
}

impl GainSet {
    pub fn new(sys: &LinearSystem, l: Matrix, k: Option<Matrix>, provenance: Provenance) -> Result<Self> {
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
        ensure_shape("L", &l, n, p)?;
        ensure_finite("L", &l)?;
        let radius = spectral_radius(&(&sys.a - &l * &sys.c))?;
        if radius > 1.0 - STABILITY_MARGIN {
            return Err(Error::NotStabilizing {
                gain: "L",
                matrix: "A - LC",
                radius,
            });
        }
        if let Some(k) = &k {
            ensure_shape("K", k, m, n)?;
            ensure_finite("K", k)?;
            let radius = spectral_radius(&(&sys.a + &sys.b * k))?;
            if radius > 1.0 - STABILITY_MARGIN {
                return Err(Error::NotStabilizing {
                    gain: "K",
                    matrix: "A + BK",
                    radius,
                });
            }
        }
        Ok(Self { l, k, provenance })
    }

    /// Synthesizes `L` from the filtering Riccati equation and, when `cost`
    /// is given, `K` from the control one.
    pub fn synthesize(sys: &LinearSystem, cost: Option<&CostWeights>) -> Result<Self> {
        let l = kalman_gain(sys)?.gain;
        let k = cost.map(|c| lqr_gain(sys, c)).transpose()?.map(|s| s.gain);
        Self::new(sys, l, k, Provenance::Synthesized)
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    pub fn k(&self) -> Option<&Matrix> {
        self.k.as_ref()
    }

    pub fn require_k(&self) -> Result<&Matrix> {
        self.k.as_ref().ok_or(Error::MissingGain("state-feedback K"))
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `A - LC`.
    pub fn observer_matrix(&self, sys: &LinearSystem) -> Matrix {
        &sys.a - &self.l * &sys.c
    }

    /// `A + BK - LC`, the estimator transition under state feedback.
    pub fn lqg_matrix(&self, sys: &LinearSystem) -> Result<Matrix> {
        let k = self.require_k()?;
        Ok(&sys.a + &sys.b * k - &self.l * &sys.c)
    }
}

fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Rank test on the stacked observability matrix `[C; CA; …; CA^{n-1}]`.
pub fn check_observability(a: &Matrix, c: &Matrix) -> Result<bool> {
    ensure_square("A", a)?;
    let n = a.nrows();
    ensure_shape("C", c, c.nrows(), n)?;
    let p = c.nrows();
    let mut stacked = Matrix::zeros(p * n, n);
    let mut block = c.clone();
    for i in 0..n {
        stacked.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    Ok(numerical_rank(&stacked) == n)
}

/// Rank test on the reachability matrix `[B, AB, …, A^{n-1}B]`.
pub fn check_controllability(a: &Matrix, b: &Matrix) -> Result<bool> {
    ensure_square("A", a)?;
    let n = a.nrows();
    ensure_shape("B", b, n, b.ncols())?;
    check_observability(&a.transpose(), &b.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    pub max_iterations: usize,
    /// Converged once `‖P_{k+1} - P_k‖ ≤ step_tol · ‖P_{k+1}‖`.
    pub step_tol: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            step_tol: 1e-13,
        }
    }
}

fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let at_p = a.transpose() * p;
    let gram = r + b.transpose() * p * b;
    let solved = gram
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R + BᵀPB"))?
        .solve(&(b.transpose() * p * a));
    Ok(symmetrize(&(&at_p * a - &at_p * b * solved + q)))
}

/// `‖P - (AᵀPA - AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q)‖₂`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    Ok(spectral_norm(&(p - riccati_map(a, b, q, r, p)?)))
}

pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    solve_dare_with(a, b, q, r, &DareOptions::default())
}

/// Riccati fixed-point iteration started from `P₀ = Q`.
pub fn solve_dare_with(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, opts: &DareOptions) -> Result<Matrix> {
    ensure_square("A", a)?;
    let n = a.nrows();
    ensure_shape("B", b, n, b.ncols())?;
    ensure_shape("Q", q, n, n)?;
    ensure_shape("R", r, b.ncols(), b.ncols())?;
    ensure_psd("Q", q)?;
    ensure_pd("R", r)?;

    let mut p = symmetrize(q);
    for _ in 0..opts.max_iterations {
        let next = riccati_map(a, b, q, r, &p)?;
        let step = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        if step <= opts.step_tol * scale || scale == 0.0 {
            return Ok(p);
        }
        if !scale.is_finite() {
            break;
        }
    }
    Err(Error::DareDivergence {
        iterations: opts.max_iterations,
    })
}

/// A synthesized gain with the Riccati solution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    pub gain: Matrix,
    pub riccati: Matrix,
    pub residual: f64,
}

/// Steady-state predictor gain `L = APCᵀ(CPCᵀ + V)⁻¹`, `P` from the dual DARE.
pub fn kalman_gain(sys: &LinearSystem) -> Result<GainSolution> {
    if !check_observability(&sys.a, &sys.c)? {
        return Err(Error::NotObservable);
    }
    let at = sys.a.transpose();
    let ct = sys.c.transpose();
    let p = solve_dare(&at, &ct, &sys.w_cov, &sys.v_cov)?;
    let residual = dare_residual(&at, &ct, &sys.w_cov, &sys.v_cov, &p)?;
    let innovation = &sys.c * &p * &ct + &sys.v_cov;
    // L = A P Cᵀ S⁻¹  <=>  S Lᵀ = C P Aᵀ (S symmetric)
    let lt = innovation
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("CPCᵀ + V"))?
        .solve(&(&sys.c * &p * &at));
    let gain = lt.transpose();
    let radius = spectral_radius(&(&sys.a - &gain * &sys.c))?;
    if radius > 1.0 - STABILITY_MARGIN {
        return Err(Error::NotStabilizing {
            gain: "L",
            matrix: "A - LC",
            radius,
        });
    }
    Ok(GainSolution { gain, riccati: p, residual })
}

/// Infinite-horizon LQR gain `K = -(R + BᵀPB)⁻¹BᵀPA`.
pub fn lqr_gain(sys: &LinearSystem, cost: &CostWeights) -> Result<GainSolution> {
    if sys.input_dim() == 0 {
        return Err(Error::InvalidArgument("system has no control inputs".into()));
    }
    if !check_controllability(&sys.a, &sys.b)? {
        return Err(Error::NotControllable);
    }
    let n = sys.state_dim();
    ensure_shape("Q", &cost.q, n, n)?;
    let p = solve_dare(&sys.a, &sys.b, &cost.q, &cost.r)?;
    let residual = dare_residual(&sys.a, &sys.b, &cost.q, &cost.r, &p)?;
    let gram = &cost.r + sys.b.transpose() * &p * &sys.b;
    let gain = -gram
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("R + BᵀPB"))?
        .solve(&(sys.b.transpose() * &p * &sys.a));
    let radius = spectral_radius(&(&sys.a + &sys.b * &gain))?;
    if radius > 1.0 - STABILITY_MARGIN {
        return Err(Error::NotStabilizing {
            gain: "K",
            matrix: "A + BK",
            radius,
        });
    }
    Ok(GainSolution { gain, riccati: p, residual })
}
