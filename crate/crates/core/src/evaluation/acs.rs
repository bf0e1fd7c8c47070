//! ACS: weighted human score over accuracy of legal meaning (A), coherence
//! and cohesion (C) and stylistic appropriateness (S).

use serde::{Deserialize, Serialize};

pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcsError {
    #[error("weights must be non-negative and sum to 1 (got {alpha} + {beta} + {gamma})")]
    Weights { alpha: f64, beta: f64, gamma: f64 },
    #[error("{dimension} score {value} is outside [0, 10]")]
    OutOfRange { dimension: char, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcsWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for AcsWeights {
    fn default() -> Self {
        AcsWeights {
            alpha: 0.6,
            beta: 0.3,
            gamma: 0.1,
        }
    }
}

impl AcsWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, AcsError> {
        let w = AcsWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), AcsError> {
        let AcsWeights { alpha, beta, gamma } = *self;
        let finite = [alpha, beta, gamma].iter().all(|w| w.is_finite() && *w >= 0.0);
        if !finite || ((alpha + beta + gamma) - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(AcsError::Weights { alpha, beta, gamma });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcsScore {
    pub a: f64,
    pub c: f64,
    pub s: f64,
    /// Combined score `alpha*a + beta*c + gamma*s`.
    pub i: f64,
    pub weights: AcsWeights,
}

impl AcsScore {
    /// `i` rounded to two decimals, as printed in reports.
    pub fn rounded(&self) -> f64 {
        (self.i * 100.0).round() / 100.0
    }
}

fn check_range(dimension: char, value: f64) -> Result<(), AcsError> {
    if (SCORE_MIN..=SCORE_MAX).contains(&value) {
        Ok(())
    } else {
        Err(AcsError::OutOfRange { dimension, value })
    }
}

pub fn compute_acs(a: f64, c: f64, s: f64, weights: &AcsWeights) -> Result<AcsScore, AcsError> {
    weights.validate()?;
    check_range('A', a)?;
    check_range('C', c)?;
    check_range('S', s)?;
    Ok(AcsScore {
        a,
        c,
        s,
        i: weights.alpha * a + weights.beta * c + weights.gamma * s,
        weights: *weights,
    })
}
