use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GpbprModel, ProxyError, Result};
use crate::data::{Dataset, OutfitQuadruple};
use crate::nn::{NnError, Optimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for BprTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprEpoch {
    pub epoch: usize,
    /// Mean objective over the epoch's batches.
    pub train_loss: f64,
    /// Pairwise accuracy on the validation split; `None` if it is empty.
    pub val_auc: Option<f64>,
}

/// Fraction of quadruples with `p_pos > p_neg`; ties count one half.
pub fn pairwise_auc(model: &GpbprModel, dataset: &Dataset, quads: &[OutfitQuadruple]) -> Result<f64> {
    if quads.is_empty() {
        return Err(ProxyError::Config("pairwise AUC over an empty set".into()));
    }
    let mut wins = 0.0;
    for q in quads {
        let top = dataset
            .garment(&q.top)
            .ok_or_else(|| ProxyError::UnknownGarment(q.top.clone()))?;
        let top_p = model.project_top(top)?;
        let score = |id: &str| -> Result<f64> {
            let b = dataset
                .garment(id)
                .ok_or_else(|| ProxyError::UnknownGarment(id.to_owned()))?;
            Ok(model.score_projected(&q.user, &top_p, &model.project_bottom(b)?, id))
        };
        let (p, n) = (score(&q.pos)?, score(&q.neg)?);
        wins += if p > n {
            1.0
        } else if p == n {
            0.5
        } else {
            0.0
        };
    }
    Ok(wins / quads.len() as f64)
}

/// Mini-batch BPR on the training split, reporting validation AUC per epoch.
pub fn train_bpr<R: Rng + ?Sized>(
    model: &mut GpbprModel,
    dataset: &Dataset,
    cfg: &BprTrainConfig,
    opt: &mut Optimizer,
    rng: &mut R,
) -> Result<Vec<BprEpoch>> {
    if dataset.train.is_empty() {
        return Err(ProxyError::EmptyTraining);
    }
    if cfg.batch_size == 0 {
        return Err(ProxyError::Config("batch_size must be > 0".into()));
    }
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&OutfitQuadruple> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let (loss, grads) = model.loss_and_grads(dataset, &batch)?;
            if !loss.is_finite() {
                return Err(ProxyError::NonFiniteLoss { epoch });
            }
            model.apply_gradients(opt, &grads).map_err(|e| match e {
                ProxyError::Nn(NnError::NonFiniteGradient { .. }) => ProxyError::NonFiniteLoss { epoch },
                other => other,
            })?;
            total += loss;
            batches += 1;
        }
        let val_auc = if dataset.val.is_empty() {
            None
        } else {
            Some(pairwise_auc(model, dataset, &dataset.val)?)
        };
        history.push(BprEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_auc,
        });
    }
    Ok(history)
}
