use serde::{Deserialize, Serialize};

use super::{GpbprModel, ProxyError, Result};
use crate::data::Dataset;

pub const MIN_VALIDATION_TRIPLES: usize = 20;

/// Nearest-rank percentile of an ascending slice: the value at 1-based rank
/// `ceil(p/100 * n)`, with rank clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Percentile min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreNormalizer {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(ProxyError::Config(format!("normalizer bounds must be finite, got [{lo}, {hi}]")));
        }
        if lo >= hi {
            return Err(ProxyError::DegenerateNormalizer(lo));
        }
        Ok(Self { lo, hi })
    }

    /// lo/hi are the 5th and 95th nearest-rank percentiles of `scores`.
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.len() < MIN_VALIDATION_TRIPLES {
            return Err(ProxyError::TooFewValidation {
                needed: MIN_VALIDATION_TRIPLES,
                got: scores.len(),
            });
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self::new(nearest_rank(&sorted, 5.0), nearest_rank(&sorted, 95.0))
    }

    pub fn normalize(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

/// Fits on the raw scores of every validation `(user, top, positive)` triple.
pub fn fit_normalizer(model: &GpbprModel, dataset: &Dataset) -> Result<ScoreNormalizer> {
    let mut scores = Vec::with_capacity(dataset.val.len());
    for q in &dataset.val {
        let top = dataset
            .garment(&q.top)
            .ok_or_else(|| ProxyError::UnknownGarment(q.top.clone()))?;
        let pos = dataset
            .garment(&q.pos)
            .ok_or_else(|| ProxyError::UnknownGarment(q.pos.clone()))?;
        scores.push(model.personalized_score(&q.user, top, pos)?);
    }
    ScoreNormalizer::fit(&scores)
}
