use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::agent::{
    init_episode, masked_argmax, quantize_feedback, ActionCatalog, AgentError, EpisodeContext, FeedbackSource, Policy, PolicyKind,
    Result,
};
use crate::data::Dataset;
use crate::nn::checkpoint::{load_lstm, load_mlp, save_lstm, save_mlp};
use crate::nn::{self, Activation, LstmCell, LstmState, Mlp, MlpGrads, NnError, Optimizer, Params};

pub const LSTM_META_FILE: &str = "lstm.json";
pub const LSTM_CELL_FILE: &str = "cell.ckpt";
const LIFT_FILE: &str = "lift.ckpt";
const HEAD_FILE: &str = "head.ckpt";

/// Recurrent recommender: the hidden state starts at the top feature, each
/// feedback score is lifted to the hidden size and fed to the cell, and a
/// linear head scores every candidate from the current hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmRecommender {
    pub cell: LstmCell,
    /// Linear `1 -> D`.
    pub lift: Mlp,
    /// Linear `D -> |A|`.
    pub head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub cell: nn::LstmGrads,
    pub lift: MlpGrads,
    pub head: MlpGrads,
}

impl LstmGrads {
    /// Same order as [`LstmRecommender::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.cell.slices();
        v.extend(self.lift.slices());
        v.extend(self.head.slices());
        v
    }

    fn add_assign(&mut self, other: &LstmGrads) {
        for (a, b) in [
            (&mut self.cell.w_x, &other.cell.w_x),
            (&mut self.cell.w_h, &other.cell.w_h),
            (&mut self.cell.bias, &other.cell.bias),
        ] {
            nn::axpy(1.0, b, a);
        }
        self.lift.add_assign(&other.lift);
        self.head.add_assign(&other.head);
    }

    fn scale(&mut self, f: f64) {
        self.cell.scale(f);
        self.lift.scale(f);
        self.head.scale(f);
    }
}

fn log_softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

impl LstmRecommender {
    pub fn new<R: Rng + ?Sized>(dim: usize, n_actions: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            cell: LstmCell::new(dim, dim, rng)?,
            lift: Mlp::new(&[1, dim], Activation::Identity, Activation::Identity, rng)?,
            head: Mlp::new(&[dim, n_actions], Activation::Identity, Activation::Identity, rng)?,
        })
    }

    pub fn from_parts(cell: LstmCell, lift: Mlp, head: Mlp) -> Result<Self> {
        let d = cell.hidden_dim();
        let ok = cell.input_dim() == d
            && lift.input_dim() == 1
            && lift.output_dim() == d
            && head.input_dim() == d
            && lift.layers().len() == 1
            && head.layers().len() == 1;
        if !ok {
            return Err(AgentError::Config(format!(
                "inconsistent LSTM parts: cell {}->{}, lift {}->{}, head {}->{}",
                cell.input_dim(),
                d,
                lift.input_dim(),
                lift.output_dim(),
                head.input_dim(),
                head.output_dim()
            )));
        }
        Ok(Self { cell, lift, head })
    }

    pub fn dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head.forward(h)?)
    }

    pub fn advance(&self, state: &LstmState, feedback: f64) -> Result<LstmState> {
        let x = self.lift.forward(&[feedback])?;
        Ok(self.cell.step(state, &x)?)
    }

    /// Mean cross-entropy of the head against `target` at every step of a
    /// rollout whose feedback inputs are fixed. Step `k` scores from the
    /// hidden state after `k` feedbacks, so `feedbacks.len() + 1` steps are
    /// scored. Gradients flow back through time.
    pub fn sequence_loss_and_grads(&self, top: &[f64], feedbacks: &[f64], target: usize) -> Result<(f64, LstmGrads)> {
        let n_actions = self.head.output_dim();
        if target >= n_actions {
            return Err(AgentError::ActionOutOfRange { action: target, n: n_actions });
        }
        let steps = feedbacks.len() + 1;
        let mut states = vec![LstmState::from_hidden(top.to_vec())];
        let mut lift_caches = Vec::with_capacity(feedbacks.len());
        let mut cell_caches = Vec::with_capacity(feedbacks.len());
        for &p in feedbacks {
            let lc = self.lift.forward_cached(&[p])?;
            let (next, cc) = self.cell.step_cached(states.last().expect("non-empty"), lc.output())?;
            lift_caches.push(lc);
            cell_caches.push(cc);
            states.push(next);
        }
        let mut grads = LstmGrads {
            cell: self.cell.zero_grads(),
            lift: self.lift.zero_grads(),
            head: self.head.zero_grads(),
        };
        let mut loss = 0.0;
        let mut dh_future = vec![0.0; self.dim()];
        let mut dc = vec![0.0; self.dim()];
        for k in (0..steps).rev() {
            let hc = self.head.forward_cached(&states[k].h)?;
            let (l, mut dz) = log_softmax_ce(hc.output(), target);
            loss += l / steps as f64;
            dz.iter_mut().for_each(|g| *g /= steps as f64);
            let dh_head = self.head.backward_accumulate(&hc, &dz, &mut grads.head)?;
            if k == 0 {
                break;
            }
            let dh: Vec<f64> = dh_head.iter().zip(&dh_future).map(|(a, b)| a + b).collect();
            let (dh_prev, dc_prev, dx) = self.cell.backward_step(&cell_caches[k - 1], &dh, &dc, &mut grads.cell);
            self.lift.backward_accumulate(&lift_caches[k - 1], &dx, &mut grads.lift)?;
            dh_future = dh_prev;
            dc = dc_prev;
        }
        Ok((loss, grads))
    }

    fn apply(&mut self, opt: &mut Optimizer, g: &LstmGrads) -> Result<()> {
        if g.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFiniteGradient {
                param: "lstm recommender".into(),
            }
            .into());
        }
        for (slot, (p, d)) in self.cell.param_slices_mut().into_iter().zip(g.cell.slices()).enumerate() {
            opt.step(slot, p, d)?;
        }
        let used = self.lift.apply_gradients(opt, 3, &g.lift)?;
        self.head.apply_gradients(opt, 3 + used, &g.head)?;
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.cell.round_to_f32();
        self.lift.round_to_f32();
        self.head.round_to_f32();
    }
}

impl Params for LstmRecommender {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.cell.param_slices();
        v.extend(self.lift.param_slices());
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.cell.param_slices_mut();
        v.extend(self.lift.param_slices_mut());
        v.extend(self.head.param_slices_mut());
        v
    }
}

impl Policy for LstmRecommender {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Lstm
    }

    fn n_actions(&self) -> usize {
        self.head.output_dim()
    }

    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn begin(&self, top_feature: &[f64]) -> Result<EpisodeContext> {
        Ok(EpisodeContext {
            state: init_episode(top_feature, self.dim())?,
            recurrent: Some(LstmState::from_hidden(top_feature.to_vec())),
        })
    }

    fn choose(&self, ctx: &EpisodeContext, _rng: &mut dyn RngCore) -> Result<usize> {
        let h = ctx
            .recurrent
            .as_ref()
            .ok_or_else(|| AgentError::Config("LSTM policy needs a recurrent state".into()))?;
        let n = self.n_actions();
        masked_argmax(&self.logits(&h.h)?, &ctx.state.mask(n)).ok_or(AgentError::ActionsExhausted(n))
    }

    fn observe(&self, ctx: &mut EpisodeContext, action: usize, feedback: f64, bottom_feature: &[f64]) -> Result<()> {
        ctx.state.update(action, feedback, bottom_feature)?;
        let h = ctx
            .recurrent
            .as_ref()
            .ok_or_else(|| AgentError::Config("LSTM policy needs a recurrent state".into()))?;
        ctx.recurrent = Some(self.advance(h, feedback)?);
        Ok(())
    }
}

/// One supervised sequence: the action whose cluster holds the positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmExample {
    pub user: String,
    pub top: String,
    pub target: usize,
}

/// Maps each training positive to the candidate representing its cluster.
/// Positives in clusters without a candidate are skipped.
pub fn lstm_examples(dataset: &Dataset, catalog: &ActionCatalog, assignment: &BTreeMap<String, usize>) -> Vec<LstmExample> {
    let by_cluster: BTreeMap<usize, usize> = (0..catalog.len()).map(|a| (catalog.cluster(a), a)).collect();
    dataset
        .train
        .iter()
        .filter_map(|q| {
            let target = *by_cluster.get(assignment.get(&q.pos)?)?;
            Some(LstmExample {
                user: q.user.clone(),
                top: q.top.clone(),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub episode_len: usize,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            episode_len: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Plain SGD on the sequence cross-entropy. Each example is first rolled out
/// greedily by the current model to collect proxy feedback, which is then
/// held fixed as the input sequence.
pub fn train_lstm<R: Rng>(
    catalog: &ActionCatalog,
    dataset: &Dataset,
    source: &mut dyn FeedbackSource,
    examples: &[LstmExample],
    cfg: &LstmTrainConfig,
    rng: &mut R,
) -> Result<(LstmRecommender, Vec<LstmEpoch>)> {
    if examples.is_empty() {
        return Err(AgentError::Config("no LSTM training examples".into()));
    }
    if cfg.batch_size == 0 || cfg.episode_len == 0 || cfg.episode_len > catalog.len() {
        return Err(AgentError::Config(format!(
            "need batch_size > 0 and 0 < episode_len <= {}",
            catalog.len()
        )));
    }
    let mut model = LstmRecommender::new(dataset.feature_dim, catalog.len(), rng)?;
    let mut opt = Optimizer::sgd(cfg.learning_rate)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc: Option<LstmGrads> = None;
            for &i in chunk {
                let ex = &examples[i];
                let top = dataset
                    .top(&ex.top)
                    .ok_or_else(|| AgentError::UnknownGarment(ex.top.clone()))?;
                let feedbacks = rollout_feedback(&model, catalog, source, ex, &top.feature, cfg.episode_len - 1, rng)?;
                let (loss, g) = model.sequence_loss_and_grads(&top.feature, &feedbacks, ex.target)?;
                if !loss.is_finite() {
                    return Err(AgentError::Diverged {
                        update: epoch,
                        loss,
                        threshold: f64::INFINITY,
                        window: 1,
                    });
                }
                total += loss;
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
            let mut g = acc.expect("chunks are non-empty");
            g.scale(1.0 / chunk.len() as f64);
            model.apply(&mut opt, &g)?;
        }
        history.push(LstmEpoch {
            epoch,
            loss: total / examples.len() as f64,
        });
    }
    Ok((model, history))
}

fn rollout_feedback(
    model: &LstmRecommender,
    catalog: &ActionCatalog,
    source: &mut dyn FeedbackSource,
    ex: &LstmExample,
    top: &[f64],
    len: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let mut ctx = model.begin(top)?;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let a = model.choose(&ctx, rng)?;
        let p = quantize_feedback(source.feedback(&ex.user, &ex.top, a)?.normalized);
        model.observe(&mut ctx, a, p, catalog.feature(a))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct LstmMeta {
    candidate_set_hash: String,
    dim: usize,
    n_actions: usize,
    config: LstmTrainConfig,
}

fn io_err(path: &Path, source: std::io::Error) -> AgentError {
    AgentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_lstm_recommender(
    dir: impl AsRef<Path>,
    model: &LstmRecommender,
    candidate_set_hash: &str,
    config: &LstmTrainConfig,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_lstm(dir.join(LSTM_CELL_FILE), &model.cell)?;
    save_mlp(dir.join(LIFT_FILE), &model.lift)?;
    save_mlp(dir.join(HEAD_FILE), &model.head)?;
    let meta = LstmMeta {
        candidate_set_hash: candidate_set_hash.to_owned(),
        dim: model.dim(),
        n_actions: model.n_actions(),
        config: config.clone(),
    };
    let path = dir.join(LSTM_META_FILE);
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| AgentError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

pub fn load_lstm_recommender(dir: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<LstmRecommender> {
    let dir = dir.as_ref();
    let path = dir.join(LSTM_META_FILE);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let meta: LstmMeta = serde_json::from_slice(&bytes).map_err(|e| AgentError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if let Some(h) = expected_hash {
        if h != meta.candidate_set_hash {
            return Err(AgentError::CandidateMismatch {
                expected: meta.candidate_set_hash,
                actual: h.to_owned(),
            });
        }
    }
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(io_err(&p, std::io::ErrorKind::NotFound.into()))
        }
    };
    let model = LstmRecommender::from_parts(
        load_lstm(need(LSTM_CELL_FILE)?)?,
        load_mlp(need(LIFT_FILE)?)?,
        load_mlp(need(HEAD_FILE)?)?,
    )?;
    if model.dim() != meta.dim || model.n_actions() != meta.n_actions {
        return Err(AgentError::Checkpoint {
            path: path.display().to_string(),
            message: "network shapes disagree with metadata".into(),
        });
    }
    Ok(model)
}
