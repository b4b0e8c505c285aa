//! Certificate checks used by `verify` and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfilter_core::attention::{attention_forward, embed_phi, nadaraya_watson, AttentionParams, KernelSpec};
use tfilter_core::bounds::{gap_envelope_argmax, intermediate_gap_bound};
use tfilter_core::linalg::{matrix_power, spectral_norm, stable_factorization};
use tfilter_core::random::standard_normal_matrix;
use tfilter_core::{Matrix, Result, Vector};

use crate::report::Check;

/// Relative tolerance of the attention / kernel-smoother agreement.
pub const EQUIVALENCE_TOL: f64 = 1e-11;
/// Reconstruction tolerance of `A = M θ M⁻¹`, relative to `‖A‖`.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Largest power checked against `κ ‖θ‖ᵏ`.
pub const POWER_CHECK_MAX: u32 = 50;
/// Rounding allowance on `‖Aᵏ‖ ≤ κ ‖θ‖ᵏ`, relative.
pub const POWER_CHECK_SLACK: f64 = 1e-12;
/// Absolute slack on the intermediate-gap bound.
pub const GAP_SLACK: f64 = 1e-12;
pub const ARGMAX_TOL: f64 = 1e-8;

/// Amount added to one bilinear coefficient by the corruption fixture.
const CORRUPTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceTrial {
    pub dim: usize,
    pub points: usize,
    /// `‖attention - NW‖ / maxᵢ ‖W zᵢ‖`.
    pub relative: f64,
}

/// One randomized comparison with `d ≤ 4`, `N ≤ 20`, PSD `Σ`.
pub fn equivalence_trial<R: Rng + ?Sized>(rng: &mut R, corrupt: bool) -> Result<EquivalenceTrial> {
    let d = rng.random_range(1..=4usize);
    let n_points = rng.random_range(1..=20usize);
    let k = rng.random_range(1..=4usize);
    let g = standard_normal_matrix(rng, d, d);
    let sigma = (g.transpose() * &g) / d as f64;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let w_out = standard_normal_matrix(rng, k, d);
    let data: Vec<Vector> = (0..n_points)
        .map(|_| standard_normal_matrix(rng, d, 1).column(0).into_owned())
        .collect();
    let query = standard_normal_matrix(rng, d, 1).column(0).into_owned();

    let spec = KernelSpec::new(sigma, w_out)?;
    let mut params = AttentionParams::from_kernel(&spec)?;
    if corrupt {
        // Cross term between the linear blocks; shifts every logit by a
        // point-dependent amount, unlike a change to the (0, 0) entry.
        let mut a = params.attn_matrix().clone();
        a[(1, 1)] += CORRUPTION;
        params = AttentionParams::new(a, params.out_matrix().clone())?;
    }
    let tokens: Vec<Vector> = data.iter().map(embed_phi).collect();
    let via_attention = attention_forward(&tokens, &embed_phi(&query), &params)?;
    let via_kernel = nadaraya_watson(&data, &query, &spec)?;
    let scale = data
        .iter()
        .map(|z| (&spec.w_out * z).norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Ok(EquivalenceTrial {
        dim: d,
        points: n_points,
        relative: (via_attention - via_kernel).norm() / scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceSummary {
    pub trials: usize,
    pub failures: usize,
    pub max_relative: f64,
}

pub fn equivalence_suite(seed: u64, trials: usize, corrupt: bool) -> Result<EquivalenceSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = EquivalenceSummary {
        trials,
        failures: 0,
        max_relative: 0.0,
    };
    for _ in 0..trials {
        let trial = equivalence_trial(&mut rng, corrupt)?;
        if trial.relative.is_nan() || trial.relative > EQUIVALENCE_TOL {
            summary.failures += 1;
        }
        summary.max_relative = summary.max_relative.max(trial.relative);
    }
    Ok(summary)
}

pub fn equivalence_check(summary: &EquivalenceSummary) -> Check {
    Check::new(
        "attention-equivalence",
        summary.failures == 0 && summary.trials > 0,
        format!(
            "{}/{} trials within {EQUIVALENCE_TOL:e}, max relative difference {:.3e}",
            summary.trials - summary.failures,
            summary.trials,
            summary.max_relative
        ),
    )
}

/// `‖θ‖ < 1`, reconstruction and power-bound certificates for `a`.
pub fn factorization_checks(label: &str, a: &Matrix) -> Vec<Check> {
    let f = match stable_factorization(a) {
        Ok(f) => f,
        Err(e) => return vec![Check::new(format!("{label}-factorization"), false, e.to_string())],
    };
    let a_norm = spectral_norm(a);
    let recon = spectral_norm(&(a - f.reconstruct()));
    let worst_power = (1..=POWER_CHECK_MAX)
        .map(|k| spectral_norm(&matrix_power(a, k)) / (f.power_bound(k) * (1.0 + POWER_CHECK_SLACK)))
        .fold(0.0, f64::max);
    vec![
        Check::new(
            format!("{label}-contraction"),
            f.theta_norm < 1.0,
            format!("|theta| {:.6e} < 1, kappa {:.6e}", f.theta_norm, f.kappa),
        ),
        Check::at_most(
            format!("{label}-reconstruction"),
            "|A - M theta M^-1|",
            recon,
            RECONSTRUCTION_TOL * a_norm,
        ),
        Check::new(
            format!("{label}-power-bound"),
            worst_power <= 1.0,
            format!("max_k<={POWER_CHECK_MAX} |A^k| / (kappa |theta|^k) = {worst_power:.6e}"),
        ),
    ]
}

/// Location of the peak of `γ ↦ H e^{-βγ²} γ` against `(2β)^{-1/2}`.
pub fn argmax_check(window: usize, beta: f64) -> Check {
    let (gamma, _) = gap_envelope_argmax(window, beta);
    let expected = (2.0 * beta).powf(-0.5);
    let rel = (gamma - expected).abs() / expected;
    Check::new(
        "gap-envelope-peak",
        rel <= ARGMAX_TOL,
        format!("peak at {gamma:.12e}, expected {expected:.12e}, relative {rel:.3e}"),
    )
}

/// Sup of recorded gaps against `H e^{-1/2} (2β)^{-1/2}`.
pub fn gap_check(name: &str, window: usize, beta: f64, sup_gap: f64) -> Check {
    Check::at_most(name, "sup |xhat - xtilde|", sup_gap, intermediate_gap_bound(window, beta) + GAP_SLACK)
}
