use serde::{Deserialize, Serialize};

use super::{AgentError, Result};

/// Reference score the first step's reward is measured against.
pub const FIRST_STEP_BASELINE: f64 = 0.5;

/// Feedback at or above this ends an interactive episode early.
pub const SATISFACTION_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub s: Vec<f64>,
    /// Proposed action ids in proposal order.
    pub proposed: Vec<usize>,
    pub step: usize,
}

/// `s = f_t`, nothing proposed.
pub fn init_episode(top_feature: &[f64], dim: usize) -> Result<AgentState> {
    if top_feature.len() != dim {
        return Err(AgentError::StateDim {
            expected: dim,
            actual: top_feature.len(),
        });
    }
    Ok(AgentState {
        s: top_feature.to_vec(),
        proposed: Vec::new(),
        step: 0,
    })
}

impl AgentState {
    pub fn is_proposed(&self, action: usize) -> bool {
        self.proposed.contains(&action)
    }

    /// Boolean mask over `n` actions, `true` where already proposed.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &a in &self.proposed {
            if a < n {
                m[a] = true;
            }
        }
        m
    }

    /// `s <- s + feedback * f_b`, marks `action` proposed, advances the step.
    pub fn update(&mut self, action: usize, feedback: f64, bottom_feature: &[f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&feedback) {
            return Err(AgentError::InvalidFeedback(feedback));
        }
        if bottom_feature.len() != self.s.len() {
            return Err(AgentError::StateDim {
                expected: self.s.len(),
                actual: bottom_feature.len(),
            });
        }
        if self.is_proposed(action) {
            return Err(AgentError::DuplicateAction(action));
        }
        for (s, f) in self.s.iter_mut().zip(bottom_feature) {
            *s += feedback * f;
        }
        self.proposed.push(action);
        self.step += 1;
        Ok(())
    }
}

/// Feedback is snapped to multiples of this before use. On that grid every
/// difference of two scores in `[0, 1]` and every partial sum of such
/// differences is exactly representable, so per-episode rewards telescope
/// without rounding error.
pub const FEEDBACK_RESOLUTION: f64 = 1.0 / (1u64 << 24) as f64;

/// Rounds a score to the nearest multiple of [`FEEDBACK_RESOLUTION`].
pub fn quantize_feedback(p: f64) -> f64 {
    (p / FEEDBACK_RESOLUTION).round() * FEEDBACK_RESOLUTION
}

/// `curr - prev`, or `curr - FIRST_STEP_BASELINE` on the first step.
pub fn reward(prev: Option<f64>, curr: f64) -> f64 {
    curr - prev.unwrap_or(FIRST_STEP_BASELINE)
}
