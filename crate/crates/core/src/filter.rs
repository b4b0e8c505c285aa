//! The steady-state Kalman predictor and its windowed softmax approximation.
//!
//! The transformer estimate at time `t` is a softmax-weighted average of
//! the last `H` interpolants
//!
//! ```text
//! x̃ᵢ = F x̂ᵢ₋₁ + L yᵢ₋₁,    αᵢ ∝ exp(-β ‖x̃ᵢ - x̃ₜ‖²),    x̂ₜ = Σ αᵢ x̃ᵢ
//! ```
//!
//! with `F = A - LC` for filtering and `F = A + BK - LC` for control. Each
//! `x̃ᵢ` is what the Kalman recursion would produce from the previous
//! transformer estimate. Slots before time zero hold zero vectors, and
//! `x̂₀ = x̃₀ = x₀`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::attention::{attention_forward, embed_phi, softmax, weighted_sum, AttentionParams, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::{ensure_len, Matrix, Vector};
use crate::noise::{DisturbanceSource, RNG_NAME};
use crate::system::{GainSet, LinearSystem};

/// `(A - LC) x̂ + L y`.
pub fn kalman_step(prev_estimate: &Vector, prev_obs: &Vector, sys: &LinearSystem, gains: &GainSet) -> Result<Vector> {
    ensure_len("previous estimate", prev_estimate, sys.state_dim())?;
    ensure_len("previous observation", prev_obs, sys.output_dim())?;
    Ok(gains.observer_matrix(sys) * prev_estimate + gains.l() * prev_obs)
}

/// The Kalman map applied to the previous transformer estimate.
pub fn tf_intermediate(
    prev_tf_estimate: &Vector,
    prev_obs: &Vector,
    sys: &LinearSystem,
    gains: &GainSet,
) -> Result<Vector> {
    kalman_step(prev_tf_estimate, prev_obs, sys, gains)
}

/// Softmax weights `exp(-β ‖x̃ᵢ - x̃ₜ‖²)` over a window whose last entry is `x̃ₜ`.
pub fn tf_weights(tilde_window: &[Vector], beta: f64) -> Vec<f64> {
    let Some(newest) = tilde_window.last() else {
        return Vec::new();
    };
    let logits: Vec<f64> = tilde_window
        .iter()
        .map(|x| -beta * (x - newest).norm_squared())
        .collect();
    softmax(&logits)
}

/// How the windowed average is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorMode {
    /// Direct evaluation of the kernel weights on the interpolants.
    #[default]
    Kernel,
    /// A softmax attention head over quadratically embedded
    /// `(x̂ᵢ₋₁, yᵢ₋₁, sᵢ)` tokens. `sᵢ` is `x₀` for `i = 0` and zero
    /// otherwise, so that one linear readout `[F, L, I]` reproduces every
    /// interpolant including `x̃₀ = x₀`.
    FullAttention,
}

impl EstimatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorMode::Kernel => "kernel",
            EstimatorMode::FullAttention => "attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub window: usize,
    pub beta: f64,
    pub gains: GainSet,
    pub mode: EstimatorMode,
}

impl FilterConfig {
    pub fn new(window: usize, beta: f64, gains: GainSet) -> Result<Self> {
        validate_window_beta(window, beta)?;
        Ok(Self {
            window,
            beta,
            gains,
            mode: EstimatorMode::Kernel,
        })
    }

    pub fn with_mode(mut self, mode: EstimatorMode) -> Self {
        self.mode = mode;
        self
    }
}

pub(crate) fn validate_window_beta(window: usize, beta: f64) -> Result<()> {
    if window == 0 {
        return Err(Error::InvalidArgument("window H must be at least 1".into()));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// Rolling window of the estimator: the last `H` interpolants and the
/// tokens they were read out from.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: usize,
    pub estimate: Vector,
    /// `x̃ᵢ` for `i = t-H+1 ..= t`, oldest first.
    pub tildes: VecDeque<Vector>,
    /// `(x̂ᵢ₋₁, yᵢ₋₁, sᵢ)` for the same indices.
    pub tokens: VecDeque<Vector>,
}

impl FilterState {
    pub fn new(x0: &Vector, output_dim: usize, window: usize) -> Self {
        let n = x0.len();
        let token_dim = 2 * n + output_dim;
        let mut tildes: VecDeque<Vector> = (0..window).map(|_| Vector::zeros(n)).collect();
        let mut tokens: VecDeque<Vector> = (0..window).map(|_| Vector::zeros(token_dim)).collect();
        tildes[window - 1] = x0.clone();
        let mut first = Vector::zeros(token_dim);
        first.rows_mut(n + output_dim, n).copy_from(x0);
        tokens[window - 1] = first;
        Self {
            t: 0,
            estimate: x0.clone(),
            tildes,
            tokens,
        }
    }

    /// Number of window slots holding real (non-padding) entries.
    pub fn filled(&self) -> usize {
        (self.t + 1).min(self.tildes.len())
    }

    pub fn newest_tilde(&self) -> &Vector {
        self.tildes.back().expect("window is never empty")
    }
}

/// One estimator step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStep {
    pub estimate: Vector,
    pub intermediate: Vector,
}

/// The windowed softmax estimator for a fixed transition `F` and gain `L`.
#[derive(Debug, Clone)]
pub struct TransformerEstimator {
    transition: Matrix,
    gain: Matrix,
    window: usize,
    beta: f64,
    mode: EstimatorMode,
    head: Option<AttentionParams>,
    state: FilterState,
}

impl TransformerEstimator {
    pub fn new(
        transition: Matrix,
        gain: Matrix,
        window: usize,
        beta: f64,
        mode: EstimatorMode,
        x0: &Vector,
    ) -> Result<Self> {
        validate_window_beta(window, beta)?;
        let n = transition.nrows();
        ensure_len("x0", x0, n)?;
        let p = gain.ncols();
        let head = match mode {
            EstimatorMode::Kernel => None,
            EstimatorMode::FullAttention => Some(readout_head(&transition, &gain, beta)?),
        };
        Ok(Self {
            transition,
            gain,
            window,
            beta,
            mode,
            head,
            state: FilterState::new(x0, p, window),
        })
    }

    /// Estimator tracking the Kalman predictor, `F = A - LC`.
    pub fn for_filter(sys: &LinearSystem, config: &FilterConfig) -> Result<Self> {
        Self::new(
            config.gains.observer_matrix(sys),
            config.gains.l().clone(),
            config.window,
            config.beta,
            config.mode,
            &sys.x0,
        )
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn estimate(&self) -> &Vector {
        &self.state.estimate
    }

    /// Advances to `t + 1` given `y_t`.
    pub fn step(&mut self, prev_obs: &Vector) -> Result<EstimatorStep> {
        let n = self.transition.nrows();
        ensure_len("previous observation", prev_obs, self.gain.ncols())?;
        let prev = &self.state.estimate;
        let intermediate = &self.transition * prev + &self.gain * prev_obs;

        let mut token = Vector::zeros(2 * n + self.gain.ncols());
        token.rows_mut(0, n).copy_from(prev);
        token.rows_mut(n, prev_obs.len()).copy_from(prev_obs);

        self.state.tildes.pop_front();
        self.state.tildes.push_back(intermediate.clone());
        self.state.tokens.pop_front();
        self.state.tokens.push_back(token);

        let estimate = match &self.head {
            None => {
                let window = self.state.tildes.make_contiguous();
                let weights = tf_weights(window, self.beta);
                weighted_sum(n, &weights, window.iter())
            }
            Some(head) => {
                let embedded: Vec<Vector> = self.state.tokens.iter().map(embed_phi).collect();
                let query = embedded.last().expect("window is never empty");
                attention_forward(&embedded, query, head)?
            }
        };
        self.state.t += 1;
        self.state.estimate = estimate.clone();
        Ok(EstimatorStep { estimate, intermediate })
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Attention head whose kernel is `β GᵀG` and readout `G = [F, L, I]`, so
/// the logits equal `-β ‖x̃ᵢ - x̃ₜ‖²` and values equal `x̃ᵢ`.
fn readout_head(transition: &Matrix, gain: &Matrix, beta: f64) -> Result<AttentionParams> {
    let n = transition.nrows();
    let p = gain.ncols();
    let mut readout = Matrix::zeros(n, 2 * n + p);
    readout.view_mut((0, 0), (n, n)).copy_from(transition);
    readout.view_mut((0, n), (n, p)).copy_from(gain);
    readout.view_mut((0, n + p), (n, n)).fill_with_identity();
    let sigma = (readout.transpose() * &readout) * beta;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    AttentionParams::from_kernel(&KernelSpec::new(sigma, readout)?)
}

/// Functional form of one filter step: returns the new estimate and the
/// advanced state, leaving `state` untouched.
pub fn tf_step(
    state: &FilterState,
    prev_obs: &Vector,
    config: &FilterConfig,
    sys: &LinearSystem,
) -> Result<(Vector, FilterState)> {
    let mut est = TransformerEstimator::for_filter(sys, config)?;
    if state.tildes.len() != config.window {
        return Err(Error::DimensionMismatch {
            context: "filter state window",
            expected: config.window.to_string(),
            actual: state.tildes.len().to_string(),
        });
    }
    est.state = state.clone();
    let step = est.step(prev_obs)?;
    Ok((step.estimate, est.state))
}

/// Run metadata carried into CSV headers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub beta: f64,
    pub window: usize,
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRow {
    pub t: usize,
    pub state: Vector,
    pub obs: Vector,
    pub kalman: Vector,
    pub transformer: Vector,
    pub intermediate: Vector,
    pub error: f64,
    /// `‖x̂ₜ - x̃ₜ‖`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub meta: RunMeta,
    pub mode: EstimatorMode,
    pub rows: Vec<FilterRow>,
}

impl TrajectoryRecord {
    pub fn sup_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).fold(0.0, f64::max)
    }

    pub fn sup_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.gap).fold(0.0, f64::max)
    }

    pub fn horizon(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        write_meta(&mut out, &self.meta);
        let _ = writeln!(out, "# mode={}", self.mode.as_str());
        let Some(first) = self.rows.first() else {
            return out;
        };
        let mut header = vec!["t".to_string()];
        header.extend(vector_columns("x", first.state.len()));
        header.extend(vector_columns("y", first.obs.len()));
        header.extend(vector_columns("kf", first.kalman.len()));
        header.extend(vector_columns("tf", first.transformer.len()));
        header.extend(vector_columns("tilde", first.intermediate.len()));
        header.push("error".into());
        header.push("gap".into());
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.rows {
            let mut fields = vec![r.t.to_string()];
            for v in [&r.state, &r.obs, &r.kalman, &r.transformer, &r.intermediate] {
                fields.extend(v.iter().map(|&x| fmt_float(x)));
            }
            fields.push(fmt_float(r.error));
            fields.push(fmt_float(r.gap));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn vector_columns(prefix: &str, len: usize) -> impl Iterator<Item = String> + '_ {
    (0..len).map(move |i| format!("{prefix}_{i}"))
}

pub(crate) fn write_meta(out: &mut String, meta: &RunMeta) {
    let _ = writeln!(out, "# rng={RNG_NAME}");
    let _ = writeln!(out, "# seed={}", meta.seed);
    let _ = writeln!(out, "# beta={}", fmt_float(meta.beta));
    let _ = writeln!(out, "# window={}", meta.window);
    match meta.eps {
        Some(eps) => {
            let _ = writeln!(out, "# eps={}", fmt_float(eps));
        }
        None => {
            let _ = writeln!(out, "# eps=none");
        }
    }
}

/// Simulates `x_{t+1} = A x_t + w_t`, `y_t = C x_t + v_t` once and runs the
/// Kalman predictor and the transformer filter on the same observations.
pub fn run_filter_comparison(
    sys: &LinearSystem,
    config: &FilterConfig,
    horizon: usize,
    noise: &mut dyn DisturbanceSource,
    meta: RunMeta,
) -> Result<TrajectoryRecord> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let gains = &config.gains;
    let mut estimator = TransformerEstimator::for_filter(sys, config)?;

    let mut x = sys.x0.clone();
    let mut kalman = sys.x0.clone();
    let mut tf = sys.x0.clone();
    let mut tilde = sys.x0.clone();
    let mut rows = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let d = noise.next_disturbance();
        ensure_len("process noise", &d.w, sys.state_dim())?;
        ensure_len("observation noise", &d.v, sys.output_dim())?;
        let y = &sys.c * &x + &d.v;
        rows.push(FilterRow {
            t,
            state: x.clone(),
            obs: y.clone(),
            kalman: kalman.clone(),
            transformer: tf.clone(),
            intermediate: tilde.clone(),
            error: (&tf - &kalman).norm(),
            gap: (&tf - &tilde).norm(),
        });
        if t == horizon {
            break;
        }
        kalman = kalman_step(&kalman, &y, sys, gains)?;
        let step = estimator.step(&y)?;
        tf = step.estimate;
        tilde = step.intermediate;
        x = &sys.a * &x + &d.w;
    }
    Ok(TrajectoryRecord {
        meta,
        mode: config.mode,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseSpec, ZeroNoise};
    use crate::system::Provenance;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn v(data: &[f64]) -> Vector {
        Vector::from_column_slice(data)
    }

    fn scalar_sys(x0: f64) -> LinearSystem {
        let one = m(1, 1, &[1.0]);
        LinearSystem::filtering(m(1, 1, &[0.5]), one.clone(), one.clone(), one, v(&[x0])).unwrap()
    }

    fn meta(window: usize, beta: f64) -> RunMeta {
        RunMeta {
            seed: 0,
            beta,
            window,
            eps: None,
        }
    }

    #[test]
    fn kalman_step_examples() {
        let sys = scalar_sys(0.0);
        let gains = GainSet::new(&sys, m(1, 1, &[0.25]), None, Provenance::UserSupplied).unwrap();
        let next = kalman_step(&v(&[2.0]), &v(&[4.0]), &sys, &gains).unwrap();
        assert!((next[0] - 1.5).abs() < 1e-15);
        assert_eq!(kalman_step(&v(&[0.0]), &v(&[0.0]), &sys, &gains).unwrap(), v(&[0.0]));

        let zero = GainSet::new(&sys, m(1, 1, &[0.0]), None, Provenance::UserSupplied).unwrap();
        assert_eq!(kalman_step(&v(&[2.0]), &v(&[4.0]), &sys, &zero).unwrap(), v(&[1.0]));
        assert!(kalman_step(&v(&[2.0, 1.0]), &v(&[4.0]), &sys, &zero).is_err());
    }

    #[test]
    fn weights_examples() {
        let equal = vec![v(&[1.0, 2.0]); 4];
        for w in tf_weights(&equal, 3.0) {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert_eq!(tf_weights(&[v(&[7.0])], 1.0), vec![1.0]);
        let w = tf_weights(&[v(&[0.0]), v(&[1.0])], 1.0);
        let e = (-1.0f64).exp();
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.268941).abs() < 1e-6 && (w[1] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn newest_weight_is_largest() {
        let window = vec![v(&[0.3]), v(&[-2.0]), v(&[0.29]), v(&[0.1])];
        let w = tf_weights(&window, 5.0);
        let last = *w.last().unwrap();
        assert!(w.iter().all(|&x| x <= last));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn initial_state_layout() {
        let st = FilterState::new(&v(&[3.0, -1.0]), 1, 3);
        assert_eq!(st.tildes.len(), 3);
        assert_eq!(st.tildes[0], v(&[0.0, 0.0]));
        assert_eq!(st.newest_tilde(), &v(&[3.0, -1.0]));
        assert_eq!(st.tokens[2], v(&[0.0, 0.0, 0.0, 3.0, -1.0]));
        assert_eq!(st.filled(), 1);
    }

    #[test]
    fn window_one_is_kalman() {
        let sys = scalar_sys(1.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        let config = FilterConfig::new(1, 0.01, gains.clone()).unwrap();
        let state = FilterState::new(&sys.x0, 1, 1);
        let (est, next) = tf_step(&state, &v(&[2.5]), &config, &sys).unwrap();
        assert_eq!(est, kalman_step(&sys.x0, &v(&[2.5]), &sys, &gains).unwrap());
        assert_eq!(next.t, 1);
    }

    #[test]
    fn large_beta_concentrates_on_newest() {
        let sys = scalar_sys(1.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        let config = FilterConfig::new(4, 1e12, gains).unwrap();
        let mut est = TransformerEstimator::for_filter(&sys, &config).unwrap();
        for y in [0.3, -1.2, 2.0, 0.7, 1.1] {
            let step = est.step(&v(&[y])).unwrap();
            assert!((step.estimate - step.intermediate).norm() <= 1e-9);
        }
    }

    #[test]
    fn zero_trajectory() {
        let sys = scalar_sys(0.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        let config = FilterConfig::new(3, 2.0, gains).unwrap();
        let rec = run_filter_comparison(&sys, &config, 20, &mut ZeroNoise::new(1, 1), meta(3, 2.0)).unwrap();
        assert_eq!(rec.rows.len(), 21);
        assert!(rec.rows.iter().all(|r| r.kalman[0] == 0.0 && r.transformer[0] == 0.0));
        assert_eq!(rec.sup_error(), 0.0);
    }

    #[test]
    fn first_row_is_initial_state() {
        let sys = scalar_sys(2.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        let config = FilterConfig::new(3, 2.0, gains).unwrap();
        let mut noise = NoiseSpec::truncated_gaussian(1.0).source(&sys, 1).unwrap();
        let rec = run_filter_comparison(&sys, &config, 5, noise.as_mut(), meta(3, 2.0)).unwrap();
        assert_eq!(rec.rows[0].transformer, v(&[2.0]));
        assert_eq!(rec.rows[0].kalman, v(&[2.0]));
        assert_eq!(rec.rows[0].error, 0.0);
    }

    #[test]
    fn attention_mode_matches_kernel_mode() {
        let sys = LinearSystem::filtering(
            m(2, 2, &[0.8, 0.3, -0.2, 0.7]),
            m(1, 2, &[1.0, 0.5]),
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            v(&[1.0, -1.0]),
        )
        .unwrap();
        let gains = GainSet::synthesize(&sys, None).unwrap();
        for &beta in &[0.5, 20.0, 1e4] {
            let kernel = FilterConfig::new(4, beta, gains.clone()).unwrap();
            let attn = kernel.clone().with_mode(EstimatorMode::FullAttention);
            let mut n1 = NoiseSpec::truncated_gaussian(1.0).source(&sys, 9).unwrap();
            let mut n2 = NoiseSpec::truncated_gaussian(1.0).source(&sys, 9).unwrap();
            let r1 = run_filter_comparison(&sys, &kernel, 200, n1.as_mut(), meta(4, beta)).unwrap();
            let r2 = run_filter_comparison(&sys, &attn, 200, n2.as_mut(), meta(4, beta)).unwrap();
            for (a, b) in r1.rows.iter().zip(&r2.rows) {
                assert!((&a.transformer - &b.transformer).norm() <= 1e-10, "beta {beta} t {}", a.t);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let sys = scalar_sys(1.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        let config = FilterConfig::new(2, 1.0, gains).unwrap();
        let rec = run_filter_comparison(&sys, &config, 3, &mut ZeroNoise::new(1, 1), meta(2, 1.0)).unwrap();
        let csv = rec.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# rng=ChaCha8Rng"));
        let header = lines.iter().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(*header, "t,x_0,y_0,kf_0,tf_0,tilde_0,error,gap");
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 5);
        let last: f64 = lines.last().unwrap().split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(last, rec.rows[3].kalman[0]);
    }

    #[test]
    fn invalid_configs() {
        let sys = scalar_sys(1.0);
        let gains = GainSet::synthesize(&sys, None).unwrap();
        assert!(FilterConfig::new(0, 1.0, gains.clone()).is_err());
        assert!(FilterConfig::new(2, 0.0, gains.clone()).is_err());
        assert!(FilterConfig::new(2, f64::INFINITY, gains.clone()).is_err());
        let config = FilterConfig::new(2, 1.0, gains).unwrap();
        assert!(run_filter_comparison(&sys, &config, 0, &mut ZeroNoise::new(1, 1), meta(2, 1.0)).is_err());
    }
}
