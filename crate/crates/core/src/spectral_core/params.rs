use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Order θ of the operator, ambient dimension and nonlinearity exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracParams {
    pub theta: f64,
    pub n_dim: usize,
    pub p_exponent: f64,
}

impl FracParams {
    pub fn new(theta: f64, n_dim: usize, p_exponent: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 2.0) {
            return Err(invalid(format!("theta must lie in (0, 2], got {theta}")));
        }
        if n_dim != 1 && n_dim != 2 {
            return Err(invalid(format!("dimension must be 1 or 2, got {n_dim}")));
        }
        if !(p_exponent > 1.0 && p_exponent.is_finite()) {
            return Err(invalid(format!("p must exceed 1, got {p_exponent}")));
        }
        Ok(Self {
            theta,
            n_dim,
            p_exponent,
        })
    }

    /// `1 + θ/N`.
    pub fn critical_exponent(&self) -> f64 {
        1.0 + self.theta / self.n_dim as f64
    }

    /// Conjugate exponent `p/(p-1)`.
    pub fn conjugate(&self) -> f64 {
        self.p_exponent / (self.p_exponent - 1.0)
    }

    pub fn is_critical(&self) -> bool {
        (self.p_exponent - self.critical_exponent()).abs() <= 1e-12 * self.p_exponent
    }

    pub fn is_classical(&self) -> bool {
        self.theta == 2.0
    }
}
