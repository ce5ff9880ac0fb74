//! GP-BPR personalized compatibility: the simulated user that scores every
//! proposal during training and offline evaluation.

mod model;
mod normalize;
mod store;
mod train;

pub use model::{ContextPairing, GpbprConfig, GpbprGrads, GpbprModel, MfParams, Projected};
pub use normalize::{fit_normalizer, nearest_rank, ScoreNormalizer, MIN_VALIDATION_TRIPLES};
pub use store::{load_proxy, save_proxy, PROXY_FILE};
pub use train::{pairwise_auc, train_bpr, BprEpoch, BprTrainConfig};

use thiserror::Error;

use crate::data::{DataError, Dataset, Garment};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("invalid proxy configuration: {0}")]
    Config(String),
    #[error("garment {id} has no context features but phi < 1")]
    MissingContext { id: String },
    #[error("unknown garment {0}")]
    UnknownGarment(String),
    #[error("need at least {needed} validation triples to fit the normalizer, got {got}")]
    TooFewValidation { needed: usize, got: usize },
    #[error("degenerate score distribution: 5th and 95th percentiles are both {0}")]
    DegenerateNormalizer(f64),
    #[error("no training quadruples")]
    EmptyTraining,
    #[error("non-finite BPR loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed proxy checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = ProxyError> = std::result::Result<T, E>;

/// A trained model plus its fitted normalizer. Immutable once built, so one
/// instance can score for many concurrent episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Proxy {
    pub model: GpbprModel,
    pub normalizer: ScoreNormalizer,
}

impl Proxy {
    pub fn new(model: GpbprModel, normalizer: ScoreNormalizer) -> Self {
        Self { model, normalizer }
    }

    pub fn raw_score(&self, user: &str, top: &Garment, bottom: &Garment) -> Result<f64> {
        self.model.personalized_score(user, top, bottom)
    }

    /// Normalized feedback in `[0, 1]`.
    pub fn feedback(&self, user: &str, top: &Garment, bottom: &Garment) -> Result<f64> {
        Ok(self.normalizer.normalize(self.raw_score(user, top, bottom)?))
    }

    /// Raw and normalized score by garment id.
    pub fn score_ids(&self, dataset: &Dataset, user: &str, top: &str, bottom: &str) -> Result<(f64, f64)> {
        let t = dataset
            .garment(top)
            .ok_or_else(|| ProxyError::UnknownGarment(top.to_owned()))?;
        let b = dataset
            .garment(bottom)
            .ok_or_else(|| ProxyError::UnknownGarment(bottom.to_owned()))?;
        let raw = self.raw_score(user, t, b)?;
        Ok((raw, self.normalizer.normalize(raw)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SynthConfig, SyntheticWorld};
    use crate::nn::sigmoid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Dataset, Proxy) {
        let ds = SyntheticWorld::new(SynthConfig::tiny(8)).unwrap().generate().unwrap();
        let model = GpbprModel::new(&GpbprConfig::default(), &ds, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let scores: Vec<f64> = ds
            .train
            .iter()
            .map(|q| model.personalized_score(&q.user, &ds.garments[&q.top], &ds.garments[&q.pos]).unwrap())
            .collect();
        let norm = ScoreNormalizer::fit(&scores).unwrap();
        (ds, Proxy::new(model, norm))
    }

    #[test]
    fn feedback_regression_fixture() {
        let (ds, proxy) = fixture();
        let (raw, fb) = proxy.score_ids(&ds, "u001", "t003", "b005").unwrap();
        assert!((raw - FIXTURE_RAW).abs() < 1e-12, "{raw:.17}");
        assert!((fb - FIXTURE_FEEDBACK).abs() < 1e-12, "{fb:.17}");
    }

    const FIXTURE_RAW: f64 = 0.03702282779346090;
    const FIXTURE_FEEDBACK: f64 = 0.54366033682021886;

    proptest! {
        #[test]
        fn sigmoid_is_symmetric(x in -40.0f64..40.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn ranking_is_preserved_inside_the_normalizer_range(user in 0usize..6, top in 0usize..10) {
            let (ds, proxy) = fixture();
            let (u, t) = (crate::data::user_id(user), crate::data::top_id(top));
            let scored: Vec<(f64, f64)> = ds
                .bottoms
                .iter()
                .map(|b| proxy.score_ids(&ds, &u, &t, b).unwrap())
                .collect();
            let lo = proxy.normalizer.lo;
            let hi = proxy.normalizer.hi;
            for a in &scored {
                for b in &scored {
                    if (lo..=hi).contains(&a.0) && (lo..=hi).contains(&b.0) && a.0 > b.0 {
                        prop_assert!(a.1 >= b.1);
                    }
                }
            }
            let best_raw = scored.iter().map(|s| s.0).fold(f64::MIN, f64::max);
            let best_fb = scored.iter().map(|s| s.1).fold(f64::MIN, f64::max);
            prop_assert_eq!(best_fb, proxy.normalizer.normalize(best_raw));
        }

        #[test]
        fn cold_users_score_finitely(name in "[a-z]{1,12}", top in 0usize..10, bottom in 0usize..16) {
            let (ds, proxy) = fixture();
            let t = crate::data::top_id(top);
            let b = crate::data::bottom_id(bottom);
            let (raw, fb) = proxy.score_ids(&ds, &format!("cold-{name}"), &t, &b).unwrap();
            prop_assert!(raw.is_finite() && (0.0..=1.0).contains(&fb));
        }
    }
}
