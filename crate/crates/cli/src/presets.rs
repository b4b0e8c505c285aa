//! Built-in systems used by the default configs and the acceptance suite.

use tfilter_core::{Matrix, Result, Vector};
use tfilter_core::system::LinearSystem;

/// Names accepted by `[system] preset = ...`.
pub const PRESET_NAMES: &[&str] = &["scalar", "oscillator", "chain", "identity", "unobservable"];

/// The presets that anchor the theorem checks.
pub const ANCHOR_PRESETS: &[&str] = &["scalar", "oscillator", "chain"];

/// Raw matrices of a preset, before any validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetMatrices {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub x0: Vector,
}

impl PresetMatrices {
    pub fn build(self) -> Result<LinearSystem> {
        LinearSystem::new(self.a, self.b, self.c, self.w, self.v, self.x0)
    }
}

pub fn preset_matrices(name: &str) -> Option<PresetMatrices> {
    let m = match name {
        // x_{t+1} = 0.5 x_t + u_t + w_t, y_t = x_t + v_t
        "scalar" => PresetMatrices {
            a: Matrix::from_element(1, 1, 0.5),
            b: Matrix::from_element(1, 1, 1.0),
            c: Matrix::from_element(1, 1, 1.0),
            w: Matrix::identity(1, 1),
            v: Matrix::identity(1, 1),
            x0: Vector::from_element(1, 1.0),
        },
        // Rotation by π/6 damped to spectral radius 0.9, position measured.
        "oscillator" => {
            let (s, c) = (std::f64::consts::PI / 6.0).sin_cos();
            PresetMatrices {
                a: Matrix::from_row_slice(2, 2, &[0.9 * c, -0.9 * s, 0.9 * s, 0.9 * c]),
                b: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
                c: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
                w: Matrix::identity(2, 2),
                v: Matrix::identity(1, 1),
                x0: Vector::from_column_slice(&[1.0, 0.0]),
            }
        }
        // Jordan-like chain: non-normal, so ‖A‖ > 1 although ρ(A) = 0.5.
        "chain" => PresetMatrices {
            a: Matrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.5]),
            b: Matrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            c: Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            w: Matrix::identity(3, 3),
            v: Matrix::identity(1, 1),
            x0: Vector::from_column_slice(&[1.0, 0.0, 0.0]),
        },
        // Fully actuated and measured random walk.
        "identity" => PresetMatrices {
            a: Matrix::identity(2, 2),
            b: Matrix::identity(2, 2),
            c: Matrix::identity(2, 2),
            w: Matrix::identity(2, 2),
            v: Matrix::identity(2, 2),
            x0: Vector::from_column_slice(&[1.0, 0.0]),
        },
        // The second coordinate never reaches the output.
        "unobservable" => PresetMatrices {
            a: Matrix::identity(2, 2),
            b: Matrix::identity(2, 2),
            c: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            w: Matrix::identity(2, 2),
            v: Matrix::identity(1, 1),
            x0: Vector::from_column_slice(&[1.0, 0.0]),
        },
        _ => return None,
    };
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tfilter_core::Error;

    #[test]
    fn every_name_resolves() {
        for name in PRESET_NAMES {
            assert!(preset_matrices(name).is_some(), "{name}");
        }
        assert!(preset_matrices("nope").is_none());
    }

    #[test]
    fn unobservable_preset_is_rejected() {
        let err = preset_matrices("unobservable").unwrap().build().unwrap_err();
        assert_eq!(err, Error::NotObservable);
        assert_eq!(err.to_string(), "pair (A, C) not observable");
    }

    #[test]
    fn anchors_build() {
        for name in ANCHOR_PRESETS {
            preset_matrices(name).unwrap().build().unwrap();
        }
    }
}
