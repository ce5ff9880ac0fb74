use serde::{Deserialize, Serialize};

use super::{AgentError, Result};

/// `eps(i) = end + (start - end) * exp(-i / decay)`, `i` the training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.9,
            end: 0.25,
            decay: 200.0,
        }
    }
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay: f64) -> Result<Self> {
        let s = Self { start, end, decay };
        s.validate()?;
        Ok(s)
    }

    /// Exploration disabled throughout.
    pub fn greedy() -> Self {
        Self {
            start: 0.0,
            end: 0.0,
            decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.end && self.end <= self.start && self.start <= 1.0) {
            return Err(AgentError::Config(format!(
                "epsilon schedule needs 0 <= end <= start <= 1, got start {} end {}",
                self.start, self.end
            )));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(AgentError::Config(format!("epsilon decay must be > 0, got {}", self.decay)));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        self.end + (self.start - self.end) * (-(epoch as f64) / self.decay).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_values() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.epsilon_at(0), 0.9);
        assert!((s.epsilon_at(200) - (0.25 + 0.65 / std::f64::consts::E)).abs() < 1e-12);
        assert!((s.epsilon_at(200) - 0.48913).abs() < 1e-5);
        assert!(s.epsilon_at(1_000_000) - 0.25 < 1e-6);
    }

    #[test]
    fn greedy_is_always_zero() {
        let s = EpsilonSchedule::greedy();
        assert!((0..1000).all(|i| s.epsilon_at(i) == 0.0));
    }

    #[test]
    fn invalid_schedules() {
        assert!(EpsilonSchedule::new(0.2, 0.5, 10.0).is_err());
        assert!(EpsilonSchedule::new(0.9, 0.1, 0.0).is_err());
        assert!(EpsilonSchedule::new(1.5, 0.1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_decreasing(start in 0.01f64..=1.0, frac in 0.0f64..0.99, decay in 1.0f64..500.0, i in 0usize..700) {
            let s = EpsilonSchedule::new(start, start * frac, decay).unwrap();
            let (a, b) = (s.epsilon_at(i), s.epsilon_at(i + 1));
            prop_assert!(a >= s.end && a <= s.start);
            // strict while the gap to `end` is above float resolution
            prop_assert!(b <= a);
            if a - s.end > 1e-9 {
                prop_assert!(b < a);
            }
        }
    }
}
