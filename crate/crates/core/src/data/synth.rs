//! Synthetic garment world with a known ground-truth preference model.
//!
//! Every user has a hidden taste vector, every garment a hidden style vector.
//! Garment features are a fixed random linear embedding of the style plus
//! optional feature noise. The ground-truth affinity of user `m` for bottom
//! `j` paired with top `i` is
//!
//! ```text
//! truth(m, i, j) = taste_weight * <taste_m, style_j> + match_weight * <style_i, M style_j>
//! ```
//!
//! where `M` is a hidden top/bottom compatibility matrix.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Category, DataError, Dataset, Garment, OutfitQuadruple, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_tops: usize,
    pub n_bottoms: usize,
    pub n_quadruples: usize,
    pub feature_dim: usize,
    pub context_dim: Option<usize>,
    pub style_dim: usize,
    /// Std-dev of the Gaussian noise added to ground truth when ranking the
    /// positive against the negative.
    pub noise: f64,
    pub taste_weight: f64,
    pub match_weight: f64,
    /// Std-dev of per-garment noise added to features.
    pub feature_noise: f64,
    /// Each quadruple draws this many bottoms; the best (under noisy truth)
    /// is the positive and a uniform other member the negative.
    pub positive_pool: usize,
}

impl SynthConfig {
    pub fn tiny(seed: u64) -> Self {
        Self {
            seed,
            n_users: 6,
            n_tops: 10,
            n_bottoms: 16,
            n_quadruples: 200,
            feature_dim: 8,
            context_dim: None,
            style_dim: 3,
            noise: 0.0,
            taste_weight: 1.0,
            match_weight: 0.5,
            feature_noise: 0.0,
            positive_pool: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: SynthConfig,
    user_taste: Vec<Vec<f64>>,
    top_style: Vec<Vec<f64>>,
    bottom_style: Vec<Vec<f64>>,
    compat: Vec<f64>,
    top_features: Vec<Vec<f64>>,
    bottom_features: Vec<Vec<f64>>,
    top_context: Option<Vec<Vec<f64>>>,
    bottom_context: Option<Vec<Vec<f64>>>,
}

pub fn user_id(i: usize) -> String {
    format!("u{i:03}")
}

pub fn top_id(i: usize) -> String {
    format!("t{i:03}")
}

pub fn bottom_id(i: usize) -> String {
    format!("b{i:03}")
}

fn parse_index(id: &str, prefix: char) -> Option<usize> {
    id.strip_prefix(prefix)?.parse().ok()
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn embed<R: Rng>(
    rng: &mut R,
    mixing: &[f64],
    style: &[f64],
    dim: usize,
    noise: f64,
) -> Vec<f64> {
    let s = style.len();
    (0..dim)
        .map(|r| {
            let v: f64 = (0..s).map(|k| mixing[r * s + k] * style[k]).sum();
            let n = if noise > 0.0 {
                noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            // stored as f32 on disk; keep in-memory values representable
            (v + n) as f32 as f64
        })
        .collect()
}

impl SyntheticWorld {
    pub fn new(config: SynthConfig) -> Result<Self> {
        let c = &config;
        if c.n_users == 0 || c.n_tops == 0 || c.n_quadruples == 0 {
            return Err(DataError::InvalidSynth("all counts must be >= 1".into()));
        }
        if c.n_bottoms < 2 {
            return Err(DataError::InvalidSynth(format!(
                "need at least 2 bottoms to form quadruples, got {}",
                c.n_bottoms
            )));
        }
        if c.feature_dim == 0 || c.style_dim == 0 {
            return Err(DataError::InvalidSynth("feature and style dims must be >= 1".into()));
        }
        if !(c.noise >= 0.0 && c.feature_noise >= 0.0) {
            return Err(DataError::InvalidSynth("noise levels must be >= 0".into()));
        }
        if c.positive_pool < 2 || c.positive_pool > c.n_bottoms {
            return Err(DataError::InvalidSynth(format!(
                "positive_pool must be in [2, n_bottoms], got {}",
                c.positive_pool
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let scale = 1.0 / (c.style_dim as f64).sqrt();
        let user_taste = (0..c.n_users)
            .map(|_| gaussian_vec(&mut rng, c.style_dim, 1.0))
            .collect();
        let top_style: Vec<Vec<f64>> = (0..c.n_tops)
            .map(|_| gaussian_vec(&mut rng, c.style_dim, 1.0))
            .collect();
        let bottom_style: Vec<Vec<f64>> = (0..c.n_bottoms)
            .map(|_| gaussian_vec(&mut rng, c.style_dim, 1.0))
            .collect();
        let compat = gaussian_vec(&mut rng, c.style_dim * c.style_dim, scale);
        let top_mix = gaussian_vec(&mut rng, c.feature_dim * c.style_dim, scale);
        let bottom_mix = gaussian_vec(&mut rng, c.feature_dim * c.style_dim, scale);
        let top_features = top_style
            .iter()
            .map(|s| embed(&mut rng, &top_mix, s, c.feature_dim, c.feature_noise))
            .collect();
        let bottom_features = bottom_style
            .iter()
            .map(|s| embed(&mut rng, &bottom_mix, s, c.feature_dim, c.feature_noise))
            .collect();
        let (top_context, bottom_context) = match c.context_dim {
            Some(d) => {
                let tm = gaussian_vec(&mut rng, d * c.style_dim, scale);
                let bm = gaussian_vec(&mut rng, d * c.style_dim, scale);
                (
                    Some(
                        top_style
                            .iter()
                            .map(|s| embed(&mut rng, &tm, s, d, c.feature_noise))
                            .collect(),
                    ),
                    Some(
                        bottom_style
                            .iter()
                            .map(|s| embed(&mut rng, &bm, s, d, c.feature_noise))
                            .collect(),
                    ),
                )
            }
            None => (None, None),
        };
        Ok(Self {
            config,
            user_taste,
            top_style,
            bottom_style,
            compat,
            top_features,
            bottom_features,
            top_context,
            bottom_context,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// `<taste_user, style_bottom>`
    pub fn taste_affinity(&self, user: usize, bottom: usize) -> f64 {
        crate::nn::dot(&self.user_taste[user], &self.bottom_style[bottom])
    }

    /// `<style_top, M style_bottom>`
    pub fn top_match(&self, top: usize, bottom: usize) -> f64 {
        let s = self.config.style_dim;
        let t = &self.top_style[top];
        let b = &self.bottom_style[bottom];
        (0..s)
            .map(|r| t[r] * (0..s).map(|k| self.compat[r * s + k] * b[k]).sum::<f64>())
            .sum()
    }

    /// Noise-free ground-truth affinity by index.
    pub fn truth(&self, user: usize, top: usize, bottom: usize) -> f64 {
        self.config.taste_weight * self.taste_affinity(user, bottom)
            + self.config.match_weight * self.top_match(top, bottom)
    }

    /// Ground-truth affinity by garment/user id, `None` for unknown ids.
    pub fn truth_by_id(&self, user: &str, top: &str, bottom: &str) -> Option<f64> {
        let u = parse_index(user, 'u').filter(|&i| i < self.config.n_users)?;
        let t = parse_index(top, 't').filter(|&i| i < self.config.n_tops)?;
        let b = parse_index(bottom, 'b').filter(|&i| i < self.config.n_bottoms)?;
        Some(self.truth(u, t, b))
    }

    /// Builds the dataset. All quadruples land in `train`; use
    /// [`super::split`] to partition them.
    pub fn generate(&self) -> Result<Dataset> {
        let c = &self.config;
        let mut garments = BTreeMap::new();
        let tops: Vec<String> = (0..c.n_tops).map(top_id).collect();
        let bottoms: Vec<String> = (0..c.n_bottoms).map(bottom_id).collect();
        for (i, id) in tops.iter().enumerate() {
            garments.insert(
                id.clone(),
                Garment {
                    id: id.clone(),
                    category: Category::Top,
                    feature: self.top_features[i].clone(),
                    context: self.top_context.as_ref().map(|v| v[i].clone()),
                    image_url: None,
                },
            );
        }
        for (j, id) in bottoms.iter().enumerate() {
            garments.insert(
                id.clone(),
                Garment {
                    id: id.clone(),
                    category: Category::Bottom,
                    feature: self.bottom_features[j].clone(),
                    context: self.bottom_context.as_ref().map(|v| v[j].clone()),
                    image_url: None,
                },
            );
        }

        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut quads = Vec::with_capacity(c.n_quadruples);
        while quads.len() < c.n_quadruples {
            let m = rng.random_range(0..c.n_users);
            let i = rng.random_range(0..c.n_tops);
            let pool = sample(&mut rng, c.n_bottoms, c.positive_pool).into_vec();
            let noisy: Vec<f64> = pool
                .iter()
                .map(|&j| {
                    let n = if c.noise > 0.0 {
                        c.noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    self.truth(m, i, j) + n
                })
                .collect();
            let best = (0..pool.len())
                .max_by(|&a, &b| noisy[a].total_cmp(&noisy[b]))
                .expect("pool is non-empty");
            let mut other = rng.random_range(0..pool.len() - 1);
            if other >= best {
                other += 1;
            }
            if noisy[best] == noisy[other] {
                continue;
            }
            quads.push(OutfitQuadruple {
                user: user_id(m),
                top: top_id(i),
                pos: bottom_id(pool[best]),
                neg: bottom_id(pool[other]),
            });
        }

        let dataset = Dataset {
            feature_dim: c.feature_dim,
            context_dim: c.context_dim,
            garments,
            tops,
            bottoms,
            users: (0..c.n_users).map(user_id).collect(),
            train: quads,
            val: Vec::new(),
            test: Vec::new(),
        };
        dataset.validate()?;
        Ok(dataset)
    }
}
