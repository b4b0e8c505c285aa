//! Dense matrix primitives: norms, spectral radius, discrete Lyapunov solves
//! and the contraction factorization `A = M θ M⁻¹` with `‖θ‖ < 1`.
//!
//! Matrices are plain `nalgebra` dynamic matrices. Constructors that accept
//! external data go through [`matrix_from_rows`] or [`ensure_finite`], which
//! reject NaN and infinite entries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used when checking symmetry of user-supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues of `P` are clamped to this floor before taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-14;

const SCHUR_MAX_ITER: usize = 10_000;

/// Builds a matrix from row-major nested rows, checking shape and finiteness.
pub fn matrix_from_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: name,
            expected: format!("{ncols} columns in every row"),
            actual: format!("a row with {} columns", bad.len()),
        });
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(name, &m)?;
    Ok(m)
}

pub fn ensure_finite(name: &'static str, m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { name })
    }
}

pub fn ensure_square(name: &'static str, m: &Matrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare(name))
    }
}

pub fn ensure_shape(context: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: format!("{rows}x{cols}"),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        })
    }
}

pub fn ensure_len(context: &'static str, v: &Vector, len: usize) -> Result<()> {
    if v.len() == len {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: format!("length {len}"),
            actual: format!("length {}", v.len()),
        })
    }
}

pub fn is_symmetric(m: &Matrix) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= SYMMETRY_TOL * scale
}

pub fn ensure_symmetric(name: &'static str, m: &Matrix) -> Result<()> {
    ensure_square(name, m)?;
    if is_symmetric(m) {
        Ok(())
    } else {
        Err(Error::NotSymmetric(name))
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().min()
}

pub fn ensure_psd(name: &'static str, m: &Matrix) -> Result<()> {
    ensure_symmetric(name, m)?;
    if m.nrows() == 0 || min_symmetric_eigenvalue(m) >= -SYMMETRY_TOL * m.amax().max(1.0) {
        Ok(())
    } else {
        Err(Error::NotPositiveSemidefinite(name))
    }
}

pub fn ensure_pd(name: &'static str, m: &Matrix) -> Result<()> {
    ensure_symmetric(name, m)?;
    if m.nrows() == 0 || min_symmetric_eigenvalue(m) > 0.0 {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(name))
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Largest eigenvalue modulus, computed from the real Schur form.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    ensure_square("spectral_radius input", m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::EigenFailure)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Integer matrix power by repeated squaring.
pub fn matrix_power(m: &Matrix, mut k: u32) -> Matrix {
    let mut result = Matrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovOptions {
    /// Inputs with spectral radius at or above `1 - stability_margin` are rejected.
    pub stability_margin: f64,
    /// Stop once the latest series increment is this small relative to `P`.
    pub increment_tol: f64,
    pub max_doublings: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            stability_margin: 1e-9,
            increment_tol: 1e-14,
            max_doublings: 200,
        }
    }
}

/// Solves `P = Aᵀ P A + Q` for stable `A`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    solve_discrete_lyapunov_with(a, q, &LyapunovOptions::default())
}

/// Sums `Σₖ (Aᵀ)ᵏ Q Aᵏ` with the doubling recursion
/// `S₂ₖ = Sₖ + (Aᵏ)ᵀ Sₖ Aᵏ`, squaring `Aᵏ` each round.
pub fn solve_discrete_lyapunov_with(
    a: &Matrix,
    q: &Matrix,
    opts: &LyapunovOptions,
) -> Result<Matrix> {
    ensure_square("A", a)?;
    ensure_finite("A", a)?;
    ensure_finite("Q", q)?;
    ensure_shape("Lyapunov Q", q, a.nrows(), a.nrows())?;
    ensure_psd("Q", q)?;

    let radius = spectral_radius(a)?;
    if radius >= 1.0 - opts.stability_margin {
        return Err(Error::NotStable {
            radius,
            margin: opts.stability_margin,
        });
    }

    let mut p = symmetrize(q);
    let mut power = a.clone();
    for _ in 0..opts.max_doublings {
        let increment = power.transpose() * &p * &power;
        p += &increment;
        let p_norm = p.norm();
        if increment.norm() <= opts.increment_tol * p_norm || p_norm == 0.0 {
            return Ok(symmetrize(&p));
        }
        power = &power * &power;
    }
    Err(Error::LyapunovDivergence {
        doublings: opts.max_doublings,
    })
}

/// Returns `(P^{1/2}, P^{-1/2})` for symmetric positive semidefinite `P`,
/// flooring eigenvalues at [`EIGEN_FLOOR`].
pub fn symmetric_sqrt_pair(p: &Matrix) -> Result<(Matrix, Matrix)> {
    ensure_symmetric("P", p)?;
    let eig = symmetrize(p)
        .try_symmetric_eigen(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::EigenFailure)?;
    let vecs = &eig.eigenvectors;
    let floored = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let sqrt = vecs * Matrix::from_diagonal(&floored.map(f64::sqrt)) * vecs.transpose();
    let inv_sqrt = vecs * Matrix::from_diagonal(&floored.map(|l| 1.0 / l.sqrt())) * vecs.transpose();
    Ok((symmetrize(&sqrt), symmetrize(&inv_sqrt)))
}

/// Symmetric square root of a PSD matrix; slightly negative eigenvalues
/// from rounding are treated as zero.
pub fn psd_sqrt(p: &Matrix) -> Result<Matrix> {
    ensure_psd("P", p)?;
    let eig = symmetrize(p)
        .try_symmetric_eigen(f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(Error::EigenFailure)?;
    let vecs = &eig.eigenvectors;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(symmetrize(&(vecs * Matrix::from_diagonal(&roots) * vecs.transpose())))
}

/// A similarity `A = M θ M⁻¹` certifying stability through `‖θ‖ < 1`.
///
/// Yields the power bound `‖Aᵏ‖ ≤ κ ‖θ‖ᵏ` with `κ = ‖M‖ ‖M⁻¹‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableFactorization {
    pub m: Matrix,
    pub m_inv: Matrix,
    pub theta: Matrix,
    pub kappa: f64,
    pub theta_norm: f64,
}

impl StableFactorization {
    pub fn reconstruct(&self) -> Matrix {
        &self.m * &self.theta * &self.m_inv
    }

    /// `κ ‖θ‖ᵏ`, an upper bound on `‖Aᵏ‖`.
    pub fn power_bound(&self, k: u32) -> f64 {
        self.kappa * self.theta_norm.powi(k as i32)
    }
}

/// Factors a stable matrix as `A = M θ M⁻¹` with `‖θ‖ < 1`.
///
/// A matrix that is already a contraction is returned as-is with `M = I`.
/// Otherwise `P` solves `P = Aᵀ P A + I`, `M = P^{-1/2}` and
/// `θ = P^{1/2} A P^{-1/2}`, which gives `‖θ‖² ≤ 1 - 1/λmax(P)` and
/// `κ = √cond(P)`.
pub fn stable_factorization(a: &Matrix) -> Result<StableFactorization> {
    ensure_square("A", a)?;
    ensure_finite("A", a)?;
    let n = a.nrows();

    let norm = spectral_norm(a);
    if norm < 1.0 {
        return Ok(StableFactorization {
            m: Matrix::identity(n, n),
            m_inv: Matrix::identity(n, n),
            theta: a.clone(),
            kappa: 1.0,
            theta_norm: norm,
        });
    }

    let p = solve_discrete_lyapunov(a, &Matrix::identity(n, n))?;
    let (p_sqrt, p_inv_sqrt) = symmetric_sqrt_pair(&p)?;
    let theta = &p_sqrt * a * &p_inv_sqrt;
    let theta_norm = spectral_norm(&theta);
    if theta_norm >= 1.0 {
        // Only reachable when P is so ill-conditioned that the eigenvalue
        // floor kicked in.
        return Err(Error::NotStable {
            radius: theta_norm,
            margin: 0.0,
        });
    }
    let kappa = spectral_norm(&p_inv_sqrt) * spectral_norm(&p_sqrt);
    Ok(StableFactorization {
        m: p_inv_sqrt,
        m_inv: p_sqrt,
        theta,
        kappa,
        theta_norm,
    })
}
