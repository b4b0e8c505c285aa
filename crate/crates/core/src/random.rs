//! Seeded generators for random test plants.
//!
//! `A` has standard normal entries rescaled to a spectral radius drawn from
//! `[0.3, 0.95]`; `B`, `C` and `x₀` are standard normal; both noise
//! covariances are identities. Draws failing the rank tests are discarded.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{spectral_radius, Matrix, Vector};
use crate::system::{check_controllability, check_observability, LinearSystem};

pub const RADIUS_RANGE: (f64, f64) = (0.3, 0.95);

const MAX_ATTEMPTS: usize = 1000;

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gaussian `n × n` matrix scaled to spectral radius `radius`.
pub fn random_stable_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Matrix {
    loop {
        let raw = standard_normal_matrix(rng, n, n);
        let rho = spectral_radius(&raw).expect("square input");
        if rho > 1e-8 {
            return raw * (radius / rho);
        }
    }
}

/// Random observable plant with `m` inputs (controllable when `m > 0`).
///
/// # Panics
/// If no admissible draw is found in 1000 attempts, which for Gaussian
/// matrices does not happen in practice.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, p: usize) -> LinearSystem {
    for _ in 0..MAX_ATTEMPTS {
        let radius = rng.random_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
        let a = random_stable_matrix(rng, n, radius);
        let b = standard_normal_matrix(rng, n, m);
        let c = standard_normal_matrix(rng, p, n);
        let x0 = Vector::from_fn(n, |_, _| rng.sample(StandardNormal));
        if !check_observability(&a, &c).unwrap_or(false) {
            continue;
        }
        if m > 0 && !check_controllability(&a, &b).unwrap_or(false) {
            continue;
        }
        if let Ok(sys) = LinearSystem::new(a, b, c, Matrix::identity(n, n), Matrix::identity(p, p), x0) {
            return sys;
        }
    }
    panic!("no admissible random system after {MAX_ATTEMPTS} draws");
}
