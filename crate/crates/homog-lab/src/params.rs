//! Exponent parameters (p, mu, Lambda) threaded through every inequality.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentParams {
    /// Growth exponent, p > 1.
    pub p: f64,
    /// Degeneracy parameter, mu in [0,1].
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Ellipticity cap Lambda >= 1 used by the verifiers.
    #[serde(default = "default_lambda_cap")]
    pub lambda_cap: f64,
}

fn default_mu() -> f64 {
    1.0
}

fn default_lambda_cap() -> f64 {
    1e3
}

impl ExponentParams {
    pub fn new(p: f64, mu: f64) -> Self {
        ExponentParams { p, mu, lambda_cap: default_lambda_cap() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!("p must lie in (1, inf), got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::invalid(format!("mu must lie in [0,1], got {}", self.mu)));
        }
        if self.lambda_cap < 1.0 {
            return Err(Error::invalid(format!(
                "lambda_cap must be >= 1, got {}",
                self.lambda_cap
            )));
        }
        Ok(())
    }

    /// Conjugate exponent p' = p/(p-1).
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

/// t^e with the convention 0^e = 0 for e > 0 and 0^0 = 1; avoids NaN from
/// 0 raised to a negative power when p < 2 collapses a base to zero.
pub fn powf_guarded(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        if e > 0.0 {
            0.0
        } else if e == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        t.powf(e)
    }
}
