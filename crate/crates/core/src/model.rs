//! Quantities shared by the exact and message-passing SBL solvers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Hyperparameters are clamped to this floor instead of being pruned.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// How the working noise variance is set for a solver run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum Sigma2Policy {
    /// Use this value verbatim.
    Fixed(f64),
    /// Multiply the problem's true noise variance by this factor.
    ScaledTrue(f64),
    /// Start from `factor * sigma2_true` and re-estimate after every M-step.
    EmUpdate(f64),
}

impl Default for Sigma2Policy {
    fn default() -> Self {
        Sigma2Policy::ScaledTrue(3.0)
    }
}

impl Sigma2Policy {
    pub fn initial(&self, sigma2_true: f64) -> Result<f64> {
        let v = match *self {
            Sigma2Policy::Fixed(v) => v,
            Sigma2Policy::ScaledTrue(f) | Sigma2Policy::EmUpdate(f) => f * sigma2_true,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(domain(
                "sigma2",
                format!("working noise variance {v} must be positive"),
            ));
        }
        Ok(v)
    }

    pub fn updates(&self) -> bool {
        matches!(self, Sigma2Policy::EmUpdate(_))
    }
}

/// `||new - old||^2 / ||new||^2`, the normalized stopping statistic.
///
/// Two zero vectors give 0; a zero `new` with a nonzero change gives infinity.
pub fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let diff: f64 = new
        .iter()
        .zip(old.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let norm = new.norm_squared();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

pub(crate) fn floor_gamma(gamma: &mut DVector<f64>) {
    for g in gamma.iter_mut() {
        if !(*g >= GAMMA_FLOOR) {
            *g = GAMMA_FLOOR;
        }
    }
}
