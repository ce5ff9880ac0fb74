//! Comparison policies sharing the agent's episode interface.

mod lstm;
mod random;

pub use lstm::{
    lstm_examples, load_lstm_recommender, save_lstm_recommender, train_lstm, LstmEpoch, LstmExample, LstmGrads,
    LstmRecommender, LstmTrainConfig, LSTM_CELL_FILE, LSTM_META_FILE,
};
pub use random::RandomPolicy;

use crate::agent::{DqnConfig, EpsilonSchedule};

/// The agent's training configuration with exploration switched off.
pub fn no_exploration_config(cfg: &DqnConfig) -> DqnConfig {
    DqnConfig {
        schedule: EpsilonSchedule::greedy(),
        ..cfg.clone()
    }
}
