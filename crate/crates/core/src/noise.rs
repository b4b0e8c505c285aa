//! Disturbance sources driving `w_t` and `v_t`.
//!
//! All random sources run on ChaCha8 so a seed reproduces the same stream on
//! every platform. Samples are `S ξ`, where `S` is the symmetric square root
//! of the covariance times `scale`, and `ξ` has independent unit-variance
//! entries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::{psd_sqrt, Matrix, Vector};
use crate::system::LinearSystem;

/// Identifier of the generator, written into output headers.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9)";

/// One draw of process and observation disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub w: Vector,
    pub v: Vector,
}

pub trait DisturbanceSource {
    fn next_disturbance(&mut self) -> Disturbance;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Zero,
    /// Standard normal entries clipped to `[-clip, clip]`.
    Gaussian { clip: f64 },
    /// Entries uniform on `[-√3, √3]`.
    Uniform,
}

/// Default clipping for truncated Gaussian noise, in standard deviations.
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub scale: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            kind: NoiseKind::Zero,
            scale: 0.0,
        }
    }

    pub fn truncated_gaussian(scale: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian { clip: DEFAULT_CLIP },
            scale,
        }
    }

    pub fn source(&self, sys: &LinearSystem, seed: u64) -> Result<Box<dyn DisturbanceSource + Send>> {
        Ok(match self.kind {
            NoiseKind::Zero => Box::new(ZeroNoise::new(sys.state_dim(), sys.output_dim())),
            kind => Box::new(ShapedNoise::new(sys, kind, self.scale, seed)?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ZeroNoise {
    n: usize,
    p: usize,
}

impl ZeroNoise {
    pub fn new(n: usize, p: usize) -> Self {
        Self { n, p }
    }
}

impl DisturbanceSource for ZeroNoise {
    fn next_disturbance(&mut self) -> Disturbance {
        Disturbance {
            w: Vector::zeros(self.n),
            v: Vector::zeros(self.p),
        }
    }
}

/// Covariance-shaped noise on a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct ShapedNoise {
    w_factor: Matrix,
    v_factor: Matrix,
    kind: NoiseKind,
    rng: ChaCha8Rng,
}

impl ShapedNoise {
    pub fn new(sys: &LinearSystem, kind: NoiseKind, scale: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            w_factor: psd_sqrt(&sys.w_cov)? * scale,
            v_factor: psd_sqrt(&sys.v_cov)? * scale,
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn unit_sample(&mut self, len: usize) -> Vector {
        let kind = self.kind;
        let rng = &mut self.rng;
        Vector::from_fn(len, |_, _| match kind {
            NoiseKind::Zero => 0.0,
            NoiseKind::Gaussian { clip } => {
                let x: f64 = rng.sample(StandardNormal);
                x.clamp(-clip, clip)
            }
            NoiseKind::Uniform => rng.random_range(-3f64.sqrt()..=3f64.sqrt()),
        })
    }
}

impl DisturbanceSource for ShapedNoise {
    fn next_disturbance(&mut self) -> Disturbance {
        let xi_w = self.unit_sample(self.w_factor.ncols());
        let xi_v = self.unit_sample(self.v_factor.ncols());
        Disturbance {
            w: &self.w_factor * xi_w,
            v: &self.v_factor * xi_v,
        }
    }
}

/// Replays a fixed list of disturbances, then zeros.
#[derive(Debug, Clone)]
pub struct RecordedNoise {
    draws: std::vec::IntoIter<Disturbance>,
    n: usize,
    p: usize,
}

impl RecordedNoise {
    pub fn new(draws: Vec<Disturbance>, n: usize, p: usize) -> Self {
        Self {
            draws: draws.into_iter(),
            n,
            p,
        }
    }
}

impl DisturbanceSource for RecordedNoise {
    fn next_disturbance(&mut self) -> Disturbance {
        self.draws.next().unwrap_or_else(|| Disturbance {
            w: Vector::zeros(self.n),
            v: Vector::zeros(self.p),
        })
    }
}
