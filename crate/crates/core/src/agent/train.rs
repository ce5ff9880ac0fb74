use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    init_episode, quantize_feedback, reward, select_action, td_loss_and_grads, ActionCatalog, AgentError, EpsilonSchedule,
    FeedbackSource, QNetwork, ReplayMemory, Result, Transition,
};
use crate::data::Dataset;
use crate::nn::{NnError, Optimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Target network refresh period, in gradient updates.
    pub target_sync: usize,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub episode_len: usize,
    pub schedule: EpsilonSchedule,
    pub divergence_threshold: f64,
    pub divergence_window: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.9,
            learning_rate: 1e-3,
            replay_capacity: 10_000,
            batch_size: 64,
            target_sync: 100,
            epochs: 400,
            episodes_per_epoch: 8,
            episode_len: 10,
            schedule: EpsilonSchedule::default(),
            divergence_threshold: 1e6,
            divergence_window: 50,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        let bad = |m: String| Err(AgentError::Config(m));
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "need 0 < batch_size <= replay_capacity, got {} and {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.target_sync == 0 || self.divergence_window == 0 {
            return bad("target_sync and divergence_window must be positive".into());
        }
        if self.episode_len == 0 || self.episode_len > n_actions {
            return Err(AgentError::EpisodeTooLong {
                n: self.episode_len,
                actions: n_actions,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnEpoch {
    pub epoch: usize,
    pub epsilon: f64,
    /// Mean normalized feedback over every step of the epoch's episodes.
    pub mean_score: f64,
    pub mean_final_score: f64,
    /// `None` until the replay memory holds a full batch.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DqnTrainLog {
    pub epochs: Vec<DqnEpoch>,
    pub updates: usize,
}

/// Deep Q-learning against a feedback source. Episodes start from `(user,
/// top)` pairs drawn uniformly from `keys` and always run `episode_len`
/// steps; one gradient update follows every step once the replay memory
/// holds a batch.
pub fn train_dqn<R: Rng>(
    catalog: &ActionCatalog,
    dataset: &Dataset,
    source: &mut dyn FeedbackSource,
    keys: &[(String, String)],
    cfg: &DqnConfig,
    rng: &mut R,
) -> Result<(QNetwork, DqnTrainLog)> {
    let n_actions = catalog.len();
    cfg.validate(n_actions)?;
    if keys.is_empty() {
        return Err(AgentError::Config("no training episodes".into()));
    }
    let dim = dataset.feature_dim;
    let mut online = QNetwork::new(dim, &cfg.hidden, n_actions, rng)?;
    let mut target = online.clone();
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut memory = ReplayMemory::new(cfg.replay_capacity);
    let mut log = DqnTrainLog::default();
    let mut over_threshold = 0usize;

    for epoch in 0..cfg.epochs {
        let eps = cfg.schedule.epsilon_at(epoch);
        let (mut score_sum, mut final_sum, mut steps) = (0.0, 0.0, 0usize);
        let (mut loss_sum, mut losses) = (0.0, 0usize);
        for _ in 0..cfg.episodes_per_epoch {
            let (user, top) = &keys[rng.random_range(0..keys.len())];
            let top_g = dataset.top(top).ok_or_else(|| AgentError::UnknownGarment(top.clone()))?;
            let mut state = init_episode(&top_g.feature, dim)?;
            let mut prev = None;
            for k in 0..cfg.episode_len {
                let action = select_action(&online, &state, eps, rng)?;
                let scored = source.feedback(user, top, action)?;
                let p = quantize_feedback(scored.normalized);
                let before = state.s.clone();
                state.update(action, p, catalog.feature(action))?;
                let terminal = k + 1 == cfg.episode_len || state.proposed.len() == n_actions;
                memory.push(Transition {
                    state: before,
                    action,
                    reward: reward(prev, p),
                    next_state: (!terminal).then(|| state.s.clone()),
                    next_mask: state.mask(n_actions),
                    terminal,
                });
                prev = Some(p);
                score_sum += p;
                steps += 1;

                let Some(batch) = memory.sample(cfg.batch_size, rng) else {
                    continue;
                };
                let (loss, grads) = td_loss_and_grads(&online, &target, &batch, cfg.gamma)?;
                log.updates += 1;
                if !loss.is_finite() || loss > cfg.divergence_threshold {
                    over_threshold += 1;
                    if over_threshold >= cfg.divergence_window || !loss.is_finite() {
                        return Err(AgentError::Diverged {
                            update: log.updates,
                            loss,
                            threshold: cfg.divergence_threshold,
                            window: cfg.divergence_window,
                        });
                    }
                } else {
                    over_threshold = 0;
                }
                match online.mlp.apply_gradients(&mut opt, 0, &grads) {
                    Ok(_) => {}
                    Err(NnError::NonFiniteGradient { .. }) => {
                        return Err(AgentError::Diverged {
                            update: log.updates,
                            loss,
                            threshold: cfg.divergence_threshold,
                            window: cfg.divergence_window,
                        })
                    }
                    Err(e) => return Err(e.into()),
                }
                loss_sum += loss;
                losses += 1;
                if log.updates % cfg.target_sync == 0 {
                    target = online.clone();
                }
            }
            final_sum += prev.unwrap_or(0.0);
        }
        log.epochs.push(DqnEpoch {
            epoch,
            epsilon: eps,
            mean_score: score_sum / steps.max(1) as f64,
            mean_final_score: final_sum / cfg.episodes_per_epoch.max(1) as f64,
            mean_loss: (losses > 0).then(|| loss_sum / losses as f64),
        });
    }
    Ok((online, log))
}
