//! Garments, outfit quadruples and datasets.

mod manifest;
mod split;
mod synth;

pub use manifest::{load_manifest, save_manifest, Manifest, ManifestGarment, ManifestQuadruple, MANIFEST_FILE};
pub use split::split;
pub use synth::{bottom_id, top_id, user_id, SynthConfig, SyntheticWorld};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("garment {id}: feature dimension {actual}, expected {expected}")]
    FeatureDim {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("{file}: expected {expected} f32 values, found {actual}")]
    FeatureCount {
        file: String,
        expected: usize,
        actual: usize,
    },
    #[error("quadruple references unknown {role} id `{id}`")]
    DanglingId { role: &'static str, id: String },
    #[error("garment `{id}` used as {role} but is a {category}")]
    WrongCategory {
        id: String,
        role: &'static str,
        category: Category,
    },
    #[error("duplicate garment id `{0}`")]
    DuplicateId(String),
    #[error("quadruple for user `{user}` and top `{top}` has identical positive and negative `{bottom}`")]
    PositiveIsNegative {
        user: String,
        top: String,
        bottom: String,
    },
    #[error("(user `{user}`, top `{top}`) appears in more than one split")]
    SplitLeak { user: String, top: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic world: {0}")]
    InvalidSynth(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Top,
    Bottom,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Category::Top => "top",
            Category::Bottom => "bottom",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Garment {
    pub id: String,
    pub category: Category,
    pub feature: Vec<f64>,
    /// Embedding of textual metadata, when the dataset has one.
    pub context: Option<Vec<f64>>,
    pub image_url: Option<String>,
}

/// `user` prefers `pos` over `neg` as the bottom for `top`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutfitQuadruple {
    pub user: String,
    pub top: String,
    pub pos: String,
    pub neg: String,
}

impl OutfitQuadruple {
    pub fn key(&self) -> (&str, &str) {
        (&self.user, &self.top)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub context_dim: Option<usize>,
    pub garments: BTreeMap<String, Garment>,
    /// Top ids in feature-file row order.
    pub tops: Vec<String>,
    /// Bottom ids in feature-file row order.
    pub bottoms: Vec<String>,
    pub users: Vec<String>,
    pub train: Vec<OutfitQuadruple>,
    pub val: Vec<OutfitQuadruple>,
    pub test: Vec<OutfitQuadruple>,
}

impl Dataset {
    pub fn garment(&self, id: &str) -> Option<&Garment> {
        self.garments.get(id)
    }

    pub fn top(&self, id: &str) -> Option<&Garment> {
        self.garments.get(id).filter(|g| g.category == Category::Top)
    }

    pub fn bottom(&self, id: &str) -> Option<&Garment> {
        self.garments
            .get(id)
            .filter(|g| g.category == Category::Bottom)
    }

    pub fn split_quads(&self, split: Split) -> &[OutfitQuadruple] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all_quadruples(&self) -> impl Iterator<Item = (Split, &OutfitQuadruple)> {
        self.train
            .iter()
            .map(|q| (Split::Train, q))
            .chain(self.val.iter().map(|q| (Split::Val, q)))
            .chain(self.test.iter().map(|q| (Split::Test, q)))
    }

    /// Checks dimensions, referential integrity, categories and split
    /// disjointness on `(user, top)`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (list, category) in [(&self.tops, Category::Top), (&self.bottoms, Category::Bottom)] {
            for id in list {
                if !seen.insert(id.as_str()) {
                    return Err(DataError::DuplicateId(id.clone()));
                }
                let g = self
                    .garments
                    .get(id)
                    .ok_or_else(|| DataError::DanglingId {
                        role: "garment",
                        id: id.clone(),
                    })?;
                if g.category != category {
                    return Err(DataError::WrongCategory {
                        id: id.clone(),
                        role: if category == Category::Top { "top" } else { "bottom" },
                        category: g.category,
                    });
                }
            }
        }
        if seen.len() != self.garments.len() {
            return Err(DataError::Manifest {
                path: "<dataset>".into(),
                message: "garment map and category lists disagree".into(),
            });
        }
        for g in self.garments.values() {
            if g.feature.len() != self.feature_dim {
                return Err(DataError::FeatureDim {
                    id: g.id.clone(),
                    expected: self.feature_dim,
                    actual: g.feature.len(),
                });
            }
            match (self.context_dim, &g.context) {
                (Some(d), Some(c)) if c.len() != d => {
                    return Err(DataError::FeatureDim {
                        id: g.id.clone(),
                        expected: d,
                        actual: c.len(),
                    })
                }
                (Some(d), None) => {
                    return Err(DataError::FeatureDim {
                        id: g.id.clone(),
                        expected: d,
                        actual: 0,
                    })
                }
                (None, Some(c)) => {
                    return Err(DataError::FeatureDim {
                        id: g.id.clone(),
                        expected: 0,
                        actual: c.len(),
                    })
                }
                _ => {}
            }
        }
        let users: BTreeSet<&str> = self.users.iter().map(String::as_str).collect();
        let mut key_split: BTreeMap<(&str, &str), Split> = BTreeMap::new();
        for (split, q) in self.all_quadruples() {
            if !users.contains(q.user.as_str()) {
                return Err(DataError::DanglingId {
                    role: "user",
                    id: q.user.clone(),
                });
            }
            self.expect(&q.top, "top", Category::Top)?;
            self.expect(&q.pos, "positive bottom", Category::Bottom)?;
            self.expect(&q.neg, "negative bottom", Category::Bottom)?;
            if q.pos == q.neg {
                return Err(DataError::PositiveIsNegative {
                    user: q.user.clone(),
                    top: q.top.clone(),
                    bottom: q.pos.clone(),
                });
            }
            if let Some(prev) = key_split.insert(q.key(), split) {
                if prev != split {
                    return Err(DataError::SplitLeak {
                        user: q.user.clone(),
                        top: q.top.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn expect(&self, id: &str, role: &'static str, category: Category) -> Result<()> {
        let g = self.garments.get(id).ok_or_else(|| DataError::DanglingId {
            role,
            id: id.to_owned(),
        })?;
        if g.category != category {
            return Err(DataError::WrongCategory {
                id: id.to_owned(),
                role,
                category: g.category,
            });
        }
        Ok(())
    }

    /// Distinct `(user, top)` pairs of a split, in first-occurrence order.
    pub fn episode_keys(&self, split: Split) -> Vec<(String, String)> {
        let mut seen = HashSet::new();
        self.split_quads(split)
            .iter()
            .filter(|q| seen.insert((q.user.clone(), q.top.clone())))
            .map(|q| (q.user.clone(), q.top.clone()))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny() -> Dataset {
        let mut garments = BTreeMap::new();
        for (id, cat, f) in [
            ("t0", Category::Top, vec![1.0, 0.0]),
            ("b0", Category::Bottom, vec![0.0, 1.0]),
            ("b1", Category::Bottom, vec![0.5, 0.5]),
        ] {
            garments.insert(
                id.to_owned(),
                Garment {
                    id: id.to_owned(),
                    category: cat,
                    feature: f,
                    context: None,
                    image_url: None,
                },
            );
        }
        Dataset {
            feature_dim: 2,
            context_dim: None,
            garments,
            tops: vec!["t0".into()],
            bottoms: vec!["b0".into(), "b1".into()],
            users: vec!["u0".into()],
            train: vec![OutfitQuadruple {
                user: "u0".into(),
                top: "t0".into(),
                pos: "b0".into(),
                neg: "b1".into(),
            }],
            val: vec![],
            test: vec![],
        }
    }

    #[test]
    fn tiny_dataset_validates() {
        tiny().validate().unwrap();
    }

    #[test]
    fn unknown_bottom_is_named() {
        let mut d = tiny();
        d.train[0].neg = "b9".into();
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("b9"), "{err}");
    }

    #[test]
    fn top_used_as_bottom_is_rejected() {
        let mut d = tiny();
        d.train[0].pos = "t0".into();
        assert!(matches!(d.validate(), Err(DataError::WrongCategory { .. })));
    }

    #[test]
    fn positive_equal_negative_is_rejected() {
        let mut d = tiny();
        d.train[0].neg = "b0".into();
        assert!(matches!(d.validate(), Err(DataError::PositiveIsNegative { .. })));
    }

    #[test]
    fn split_leak_is_detected() {
        let mut d = tiny();
        d.test.push(d.train[0].clone());
        assert!(matches!(d.validate(), Err(DataError::SplitLeak { .. })));
    }

    #[test]
    fn feature_dim_mismatch_is_rejected() {
        let mut d = tiny();
        d.garments.get_mut("b1").unwrap().feature.push(0.0);
        assert!(matches!(d.validate(), Err(DataError::FeatureDim { .. })));
    }
}
