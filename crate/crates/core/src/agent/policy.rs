use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{init_episode, select_action, AgentState, QNetwork, Result};
use crate::nn::LstmState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rl,
    NoExploration,
    Lstm,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Rl, Self::NoExploration, Self::Lstm, Self::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rl => "rl",
            Self::NoExploration => "no_exploration",
            Self::Lstm => "lstm",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s || k.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown policy {s:?} (expected rl, no_exploration, lstm or random)"))
    }
}

/// Per-episode mutable state owned by the caller, so one frozen policy can
/// drive any number of concurrent episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeContext {
    pub state: AgentState,
    /// Recurrent state for policies that carry one.
    pub recurrent: Option<LstmState>,
}

/// Common interface of the agent and every baseline.
pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;
    fn n_actions(&self) -> usize;
    fn state_dim(&self) -> usize;

    fn begin(&self, top_feature: &[f64]) -> Result<EpisodeContext> {
        Ok(EpisodeContext {
            state: init_episode(top_feature, self.state_dim())?,
            recurrent: None,
        })
    }

    /// Next action; never one already in `ctx.state.proposed`.
    fn choose(&self, ctx: &EpisodeContext, rng: &mut dyn RngCore) -> Result<usize>;

    fn observe(&self, ctx: &mut EpisodeContext, action: usize, feedback: f64, bottom_feature: &[f64]) -> Result<()> {
        ctx.state.update(action, feedback, bottom_feature)
    }
}

/// A Q-network acting epsilon-greedily with a fixed epsilon (0 at inference).
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub q: QNetwork,
    pub epsilon: f64,
    pub kind: PolicyKind,
}

impl DqnPolicy {
    pub fn greedy(q: QNetwork, kind: PolicyKind) -> Self {
        Self { q, epsilon: 0.0, kind }
    }
}

impl Policy for DqnPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn n_actions(&self) -> usize {
        self.q.n_actions()
    }

    fn state_dim(&self) -> usize {
        self.q.state_dim()
    }

    fn choose(&self, ctx: &EpisodeContext, rng: &mut dyn RngCore) -> Result<usize> {
        select_action(&self.q, &ctx.state, self.epsilon, rng)
    }
}
