//! The interactive recommender: feedback-weighted state, masked Q-network
//! action selection, episode rollout and deep Q-learning.

pub(crate) mod episode;
mod policy;
mod qnet;
mod replay;
mod schedule;
mod state;
mod store;
mod train;

pub use episode::{
    run_episode, write_jsonl, ActionCatalog, Episode, EpisodeLog, FeedbackSource, ProxyScorer, Scored,
    StepRecord, StopRule,
};
pub use policy::{DqnPolicy, EpisodeContext, Policy, PolicyKind};
pub use qnet::{masked_argmax, select_action, td_loss_and_grads, QNetwork};
pub use replay::{ReplayMemory, Transition};
pub use schedule::EpsilonSchedule;
pub use state::{
    init_episode, quantize_feedback, reward, AgentState, FEEDBACK_RESOLUTION, FIRST_STEP_BASELINE, SATISFACTION_THRESHOLD,
};
pub use store::{load_agent, save_agent, AgentMeta, AGENT_FILE, QNET_FILE};
pub use train::{train_dqn, DqnConfig, DqnEpoch, DqnTrainLog};

use thiserror::Error;

use crate::nn::NnError;
use crate::proxy::ProxyError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("state dimension mismatch: expected {expected}, got {actual}")]
    StateDim { expected: usize, actual: usize },
    #[error("all {0} actions have already been proposed")]
    ActionsExhausted(usize),
    #[error("action {0} was already proposed in this episode")]
    DuplicateAction(usize),
    #[error("action {action} outside the action space of size {n}")]
    ActionOutOfRange { action: usize, n: usize },
    #[error("feedback {0} outside [0, 1]")]
    InvalidFeedback(f64),
    #[error("episode length {n} exceeds the action space of size {actions}")]
    EpisodeTooLong { n: usize, actions: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("no pending recommendation")]
    NoPending,
    #[error("feedback source failed: {0}")]
    Feedback(String),
    #[error("training diverged: TD loss above {threshold} for {window} consecutive updates (last {loss} at update {update})")]
    Diverged {
        update: usize,
        loss: f64,
        threshold: f64,
        window: usize,
    },
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("candidate set mismatch: checkpoint was trained on {expected}, catalog is {actual}")]
    CandidateMismatch { expected: String, actual: String },
    #[error("unknown garment {0}")]
    UnknownGarment(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed agent checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;
