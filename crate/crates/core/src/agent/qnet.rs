use rand::{Rng, RngCore};

use super::{AgentError, AgentState, Result, Transition};
use crate::nn::{Activation, Mlp, MlpGrads};

/// `D -> hidden... -> |A|`, ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub mlp: Mlp,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![state_dim];
        dims.extend(hidden);
        dims.push(n_actions);
        Ok(Self {
            mlp: Mlp::new(&dims, Activation::Relu, Activation::Identity, rng)?,
        })
    }

    pub fn from_mlp(mlp: Mlp) -> Self {
        Self { mlp }
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn q_values(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(s)?)
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        let layers = self.mlp.layers();
        layers[..layers.len() - 1].iter().map(|l| l.out_dim()).collect()
    }
}

/// Index of the largest value among unmasked entries; ties to the lowest
/// index. `None` when every entry is masked.
pub fn masked_argmax(values: &[f64], masked: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if masked.get(i).copied().unwrap_or(false) {
            continue;
        }
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Epsilon-greedy over unproposed actions. The generator is only touched
/// when `eps > 0`, so greedy selection is RNG-free.
pub fn select_action(q: &QNetwork, state: &AgentState, eps: f64, rng: &mut dyn RngCore) -> Result<usize> {
    let n = q.n_actions();
    let mask = state.mask(n);
    let open: Vec<usize> = (0..n).filter(|&a| !mask[a]).collect();
    if open.is_empty() {
        return Err(AgentError::ActionsExhausted(n));
    }
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(open[rng.random_range(0..open.len())]);
    }
    let values = q.q_values(&state.s)?;
    masked_argmax(&values, &mask).ok_or(AgentError::ActionsExhausted(n))
}

/// Mean of `0.5 (Q(s,a) - y)^2` over the batch, with
/// `y = r + gamma * max_{a' unproposed} Q_target(s', a')`, or `y = r` when
/// terminal. Returns the loss and the gradient wrt the online network.
pub fn td_loss_and_grads(
    online: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, MlpGrads)> {
    let n = batch.len().max(1) as f64;
    let mut grads = online.mlp.zero_grads();
    let mut loss = 0.0;
    for t in batch {
        let y = match (&t.next_state, t.terminal) {
            (Some(next), false) => {
                let q_next = target.q_values(next)?;
                match masked_argmax(&q_next, &t.next_mask) {
                    Some(a) => t.reward + gamma * q_next[a],
                    None => t.reward,
                }
            }
            _ => t.reward,
        };
        let cache = online.mlp.forward_cached(&t.state)?;
        let q = cache.output();
        if t.action >= q.len() {
            return Err(AgentError::ActionOutOfRange {
                action: t.action,
                n: q.len(),
            });
        }
        let diff = q[t.action] - y;
        loss += 0.5 * diff * diff / n;
        let mut up = vec![0.0; q.len()];
        up[t.action] = diff / n;
        online.mlp.backward_accumulate(&cache, &up, &mut grads)?;
    }
    Ok((loss, grads))
}
