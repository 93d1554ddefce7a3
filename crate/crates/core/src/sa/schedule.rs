use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Step-size sequence `α_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `α_k = a / (k + 1)^β`; summable squares and divergent sum for `β ∈ (0.5, 1]`.
    Power { a: f64, beta: f64 },
    /// Fixed step. Does not converge under noise; diagnostics only.
    Constant { a: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Power { a: 1.0, beta: 0.6 }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Power { a, beta } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(invalid(format!("step schedule scale a = {a} must be > 0")));
                }
                if !(beta > 0.5 && beta <= 1.0) {
                    return Err(invalid(format!("step schedule exponent beta = {beta} must lie in (0.5, 1]")));
                }
            }
            StepSchedule::Constant { a } => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(invalid(format!("constant step a = {a} must be > 0")));
                }
            }
        }
        Ok(())
    }

    /// True when `Σα_k = ∞` and `Σα_k² < ∞`.
    pub fn is_convergent(&self) -> bool {
        matches!(self, StepSchedule::Power { beta, .. } if *beta > 0.5 && *beta <= 1.0)
    }

    pub fn step_size(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Power { a, beta } => a / ((k + 1) as f64).powf(beta),
            StepSchedule::Constant { a } => a,
        }
    }
}

/// Free-function form of [`StepSchedule::step_size`].
pub fn step_size(schedule: &StepSchedule, k: usize) -> f64 {
    schedule.step_size(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = StepSchedule::Power { a: 1.0, beta: 0.6 };
        assert_eq!(step_size(&s, 0), 1.0);
        assert!((step_size(&s, 999) - 1000f64.powf(-0.6)).abs() < 1e-15);
        assert!((step_size(&s, 999) - 0.01585).abs() < 1e-5);
        let c = StepSchedule::Constant { a: 0.01 };
        assert_eq!(step_size(&c, 12345), 0.01);
        assert!(!c.is_convergent());
        assert!(s.is_convergent());
        assert!(StepSchedule::Power { a: 1.0, beta: 0.5 }.validate().is_err());
        assert!(StepSchedule::Power { a: 0.0, beta: 0.7 }.validate().is_err());
    }
}
