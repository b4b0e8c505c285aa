//! Experiment configuration: a flat TOML file with explicit matrix literals.
//!
//! ```toml
//! seed = 7
//! window = 4
//! eps = 0.1
//! horizon = 500
//!
//! [system]
//! preset = "oscillator"
//!
//! [noise]
//! distribution = "gaussian"
//! scale = 1.0
//! clip = 5.0
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tfilter_core::filter::EstimatorMode;
use tfilter_core::linalg::matrix_from_rows;
use tfilter_core::noise::{NoiseKind, NoiseSpec, DEFAULT_CLIP};
use tfilter_core::system::{CostWeights, GainSet, LinearSystem, Provenance};
use tfilter_core::{Matrix, Vector};

use crate::presets::{preset_matrices, PRESET_NAMES};
use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub eps: Option<f64>,
    /// Explicit β. Takes the place of the ε-derived bound when present.
    pub beta: Option<f64>,
    pub horizon: Option<usize>,
    pub output: Option<PathBuf>,
    /// `kernel` (default) or `attention`.
    pub estimator: Option<String>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub gains: GainSection,
    pub cost: Option<CostSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub verify: VerifySection,
}

/// Either `preset = "<name>"` or inline `a`, `c`, `w`, `v` (and `b` for
/// control). `x0` may be given in both cases.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub preset: Option<String>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub w: Option<Vec<Vec<f64>>>,
    pub v: Option<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    #[default]
    Synthesize,
    User,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSection {
    #[serde(default)]
    pub mode: GainMode,
    pub l: Option<Vec<Vec<f64>>>,
    pub k: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    #[default]
    Gaussian,
    Uniform,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            distribution: Distribution::Gaussian,
            scale: 1.0,
            clip: DEFAULT_CLIP,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_clip() -> f64 {
    DEFAULT_CLIP
}

/// Grid for `sweep`. Exactly one of the three lists is used.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eps_grid: Option<Vec<f64>>,
    pub beta_grid: Option<Vec<f64>>,
    /// Multiples of the filter bound at ε = 1.
    pub beta_multipliers: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Perturbs the attention matrix before the equivalence trials.
    #[serde(default)]
    pub corrupt_attention: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            corrupt_attention: false,
        }
    }
}

fn default_trials() -> usize {
    500
}

/// Command-line values that replace fields of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub beta: Option<f64>,
    pub eps: Option<f64>,
    pub horizon: Option<usize>,
    pub window: Option<usize>,
    pub preset: Option<String>,
}

pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_HORIZON: usize = 500;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Config for a named preset with the documented defaults.
    pub fn for_preset(name: &str, seed: u64) -> Self {
        Self {
            seed: Some(seed),
            eps: Some(0.1),
            system: SystemSection {
                preset: Some(name.to_string()),
                ..SystemSection::default()
            },
            ..Self::default()
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(out) = &o.output {
            self.output = Some(out.clone());
        }
        if let Some(beta) = o.beta {
            self.beta = Some(beta);
        }
        if let Some(eps) = o.eps {
            self.eps = Some(eps);
        }
        if let Some(h) = o.horizon {
            self.horizon = Some(h);
        }
        if let Some(w) = o.window {
            self.window = Some(w);
        }
        if let Some(p) = &o.preset {
            self.system = SystemSection {
                preset: Some(p.clone()),
                x0: self.system.x0.clone(),
                ..SystemSection::default()
            };
        }
    }

    /// Validates the file and synthesizes or checks the gains.
    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let seed = self
            .seed
            .ok_or_else(|| CliError::Config("a seed is required (set `seed` or pass --seed)".into()))?;
        let window = self.window.unwrap_or(DEFAULT_WINDOW);
        let horizon = self.horizon.unwrap_or(DEFAULT_HORIZON);
        if window == 0 {
            return Err(CliError::Config("window must be at least 1".into()));
        }
        if horizon == 0 {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        if let Some(eps) = self.eps {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(CliError::Config(format!("eps must be positive and finite, got {eps}")));
            }
        }
        if let Some(beta) = self.beta {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(CliError::Config(format!("beta must be positive and finite, got {beta}")));
            }
        }
        if self.eps.is_none() && self.beta.is_none() {
            return Err(CliError::Config("set eps, beta, or both".into()));
        }
        let mode = match self.estimator.as_deref() {
            None | Some("kernel") => EstimatorMode::Kernel,
            Some("attention") => EstimatorMode::FullAttention,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown estimator `{other}` (expected kernel or attention)"
                )))
            }
        };

        let sys = self.system.build()?;
        let cost = match &self.cost {
            Some(c) => CostWeights::new(matrix_from_rows("Q", &c.q)?, matrix_from_rows("R", &c.r)?)?,
            None => CostWeights::identity(sys.state_dim(), sys.input_dim()),
        };
        let gains = match self.gains.mode {
            GainMode::Synthesize => {
                let cost = (sys.input_dim() > 0).then_some(&cost);
                GainSet::synthesize(&sys, cost)?
            }
            GainMode::User => {
                let l = self
                    .gains
                    .l
                    .as_ref()
                    .ok_or_else(|| CliError::Config("gains.mode = \"user\" needs gains.l".into()))?;
                let k = self.gains.k.as_ref().map(|k| matrix_from_rows("K", k)).transpose()?;
                GainSet::new(&sys, matrix_from_rows("L", l)?, k, Provenance::UserSupplied)?
            }
        };
        let noise = match self.noise.distribution {
            Distribution::Zero => NoiseSpec::zero(),
            Distribution::Gaussian => NoiseSpec {
                kind: NoiseKind::Gaussian { clip: self.noise.clip },
                scale: self.noise.scale,
            },
            Distribution::Uniform => NoiseSpec {
                kind: NoiseKind::Uniform,
                scale: self.noise.scale,
            },
        };
        if !(self.noise.scale.is_finite() && self.noise.scale >= 0.0) {
            return Err(CliError::Config("noise.scale must be finite and non-negative".into()));
        }
        if !(self.noise.clip.is_finite() && self.noise.clip > 0.0) {
            return Err(CliError::Config("noise.clip must be positive and finite".into()));
        }
        Ok(Experiment {
            sys,
            gains,
            cost,
            window,
            eps: self.eps,
            beta: self.beta,
            horizon,
            noise,
            seed,
            output: self.output.clone(),
            mode,
            sweep: self.sweep.clone(),
            verify: self.verify.clone(),
        })
    }
}

impl SystemSection {
    pub fn build(&self) -> Result<LinearSystem, CliError> {
        let inline = [&self.a, &self.b, &self.c, &self.w, &self.v].iter().any(|m| m.is_some());
        let sys = match (&self.preset, inline) {
            (Some(_), true) => {
                return Err(CliError::Config(
                    "give either system.preset or inline matrices, not both".into(),
                ))
            }
            (Some(name), false) => {
                let m = preset_matrices(name).ok_or_else(|| {
                    CliError::Config(format!(
                        "unknown preset `{name}` (known: {})",
                        PRESET_NAMES.join(", ")
                    ))
                })?;
                m.build()?
            }
            (None, true) => {
                let need = |field: &Option<Vec<Vec<f64>>>, name: &'static str| {
                    field
                        .as_ref()
                        .ok_or_else(|| CliError::Config(format!("system.{name} is required")))
                        .and_then(|rows| Ok(matrix_from_rows(name, rows)?))
                };
                let a = need(&self.a, "a")?;
                let c = need(&self.c, "c")?;
                let w = need(&self.w, "w")?;
                let v = need(&self.v, "v")?;
                let x0 = match &self.x0 {
                    Some(x) => Vector::from_column_slice(x),
                    None => Vector::zeros(a.nrows()),
                };
                match &self.b {
                    Some(b) => LinearSystem::new(a, matrix_from_rows("b", b)?, c, w, v, x0)?,
                    None => LinearSystem::filtering(a, c, w, v, x0)?,
                }
            }
            (None, false) => return Err(CliError::Config("the [system] section is empty".into())),
        };
        match &self.x0 {
            Some(x) => Ok(sys.with_x0(Vector::from_column_slice(x))?),
            None => Ok(sys),
        }
    }
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub sys: LinearSystem,
    pub gains: GainSet,
    pub cost: CostWeights,
    pub window: usize,
    pub eps: Option<f64>,
    pub beta: Option<f64>,
    pub horizon: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub mode: EstimatorMode,
    pub sweep: SweepSection,
    pub verify: VerifySection,
}

/// Renders a matrix as a TOML-style nested array literal.
pub fn matrix_literal(m: &Matrix) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|x| tfilter_core::filter::fmt_float(*x)).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}
