//! `dataset.json` plus per-category little-endian `f32` feature matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Category, DataError, Dataset, Garment, OutfitQuadruple, Result, Split};

pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestGarment {
    pub id: String,
    pub category: Category,
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestQuadruple {
    pub user: String,
    pub top: String,
    pub pos: String,
    pub neg: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub feature_dim: usize,
    pub context_dim: Option<usize>,
    /// Optional; derived from the quadruples when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<Vec<String>>,
    pub garments: Vec<ManifestGarment>,
    pub quadruples: Vec<ManifestQuadruple>,
}

fn feature_file(category: Category) -> &'static str {
    match category {
        Category::Top => "features_top.f32",
        Category::Bottom => "features_bottom.f32",
    }
}

fn context_file(category: Category) -> &'static str {
    match category {
        Category::Top => "context_top.f32",
        Category::Bottom => "context_bottom.f32",
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_matrix(path: &Path, rows: &[&[f64]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(rows.iter().map(|r| r.len() * 4).sum());
    for row in rows {
        for v in row.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_matrix(path: &Path, rows: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != rows * dim {
        return Err(DataError::FeatureCount {
            file: path.display().to_string(),
            expected: rows * dim,
            actual: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if dim == 0 {
        return Ok(vec![Vec::new(); rows]);
    }
    Ok(values.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

/// Writes `dataset.json` and the feature matrices into `dir`.
/// Features are stored as `f32`.
pub fn save_manifest(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut garments = Vec::with_capacity(dataset.garments.len());
    for (list, category) in [(&dataset.tops, Category::Top), (&dataset.bottoms, Category::Bottom)] {
        let mut feats = Vec::with_capacity(list.len());
        let mut ctx = Vec::with_capacity(list.len());
        for (row, id) in list.iter().enumerate() {
            let g = &dataset.garments[id];
            feats.push(g.feature.as_slice());
            if let Some(c) = &g.context {
                ctx.push(c.as_slice());
            }
            garments.push(ManifestGarment {
                id: id.clone(),
                category,
                row,
                image_url: g.image_url.clone(),
            });
        }
        write_matrix(&dir.join(feature_file(category)), &feats)?;
        if dataset.context_dim.is_some() {
            write_matrix(&dir.join(context_file(category)), &ctx)?;
        }
    }
    let quadruples = dataset
        .all_quadruples()
        .map(|(split, q)| ManifestQuadruple {
            user: q.user.clone(),
            top: q.top.clone(),
            pos: q.pos.clone(),
            neg: q.neg.clone(),
            split,
        })
        .collect();
    let manifest = Manifest {
        feature_dim: dataset.feature_dim,
        context_dim: dataset.context_dim,
        users: Some(dataset.users.clone()),
        garments,
        quadruples,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| DataError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

/// Loads and fully validates a dataset. `path` is either the manifest file
/// or the directory containing `dataset.json`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| DataError::Manifest {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let bad = |message: String| DataError::Manifest {
        path: manifest_path.display().to_string(),
        message,
    };

    let mut by_cat: BTreeMap<Category, Vec<Option<&ManifestGarment>>> = BTreeMap::new();
    for g in &manifest.garments {
        let slots = by_cat.entry(g.category).or_default();
        if slots.len() <= g.row {
            slots.resize(g.row + 1, None);
        }
        if slots[g.row].replace(g).is_some() {
            return Err(bad(format!("{} row {} assigned twice", g.category, g.row)));
        }
    }

    let mut garments = BTreeMap::new();
    let mut tops = Vec::new();
    let mut bottoms = Vec::new();
    for category in [Category::Top, Category::Bottom] {
        let slots = by_cat.remove(&category).unwrap_or_default();
        if slots.is_empty() {
            continue;
        }
        let rows: Vec<&ManifestGarment> = slots
            .into_iter()
            .enumerate()
            .map(|(row, s)| s.ok_or_else(|| bad(format!("{category} row {row} has no garment"))))
            .collect::<Result<_>>()?;
        let feats = read_matrix(&dir.join(feature_file(category)), rows.len(), manifest.feature_dim)?;
        let ctx = match manifest.context_dim {
            Some(d) => Some(read_matrix(&dir.join(context_file(category)), rows.len(), d)?),
            None => None,
        };
        for (row, (g, feature)) in rows.into_iter().zip(feats).enumerate() {
            if garments.contains_key(&g.id) {
                return Err(DataError::DuplicateId(g.id.clone()));
            }
            garments.insert(
                g.id.clone(),
                Garment {
                    id: g.id.clone(),
                    category,
                    feature,
                    context: ctx.as_ref().map(|c| c[row].clone()),
                    image_url: g.image_url.clone(),
                },
            );
            match category {
                Category::Top => tops.push(g.id.clone()),
                Category::Bottom => bottoms.push(g.id.clone()),
            }
        }
    }

    let users = match manifest.users {
        Some(u) => u,
        None => manifest
            .quadruples
            .iter()
            .map(|q| q.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut dataset = Dataset {
        feature_dim: manifest.feature_dim,
        context_dim: manifest.context_dim,
        garments,
        tops,
        bottoms,
        users,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for q in manifest.quadruples {
        let quad = OutfitQuadruple {
            user: q.user,
            top: q.top,
            pos: q.pos,
            neg: q.neg,
        };
        match q.split {
            Split::Train => dataset.train.push(quad),
            Split::Val => dataset.val.push(quad),
            Split::Test => dataset.test.push(quad),
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::tiny;
    use crate::data::{split, SynthConfig, SyntheticWorld};

    #[test]
    fn hand_written_two_garment_manifest_loads() {
        // A valid quadruple needs two distinct bottoms, so the two-garment
        // manifest carries no quadruples.
        let dir = tempfile::tempdir().unwrap();
        let json = r#"{
            "feature_dim": 2,
            "context_dim": null,
            "garments": [
                {"id": "t0", "category": "top", "row": 0},
                {"id": "b0", "category": "bottom", "row": 0, "image_url": "b0.png"}
            ],
            "quadruples": []
        }"#;
        fs::write(dir.path().join(MANIFEST_FILE), json).unwrap();
        write_matrix(&dir.path().join("features_top.f32"), &[&[1.0, 2.0]]).unwrap();
        write_matrix(&dir.path().join("features_bottom.f32"), &[&[0.5, -1.0]]).unwrap();
        let d = load_manifest(dir.path()).unwrap();
        assert_eq!(d.garments.len(), 2);
        assert_eq!(d.garments["b0"].feature, vec![0.5, -1.0]);
        assert_eq!(d.garments["b0"].image_url.as_deref(), Some("b0.png"));
        assert!(d.users.is_empty());
    }

    #[test]
    fn one_quadruple_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        save_manifest(dir.path(), &d).unwrap();
        let back = load_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.garments.len(), 3);
        assert_eq!(back.train.len(), 1);
        assert_eq!(back, d);
    }

    #[test]
    fn unknown_bottom_in_manifest_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_manifest(dir.path(), &tiny()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"neg\": \"b1\"", "\"neg\": \"b42\"");
        fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("b42"), "{err}");
    }

    #[test]
    fn short_feature_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_manifest(dir.path(), &tiny()).unwrap();
        let f = dir.path().join("features_bottom.f32");
        let mut bytes = fs::read(&f).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&f, bytes).unwrap();
        assert!(matches!(
            load_manifest(dir.path()),
            Err(DataError::FeatureCount { expected: 4, actual: 3, .. })
        ));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(dir.path().join("nope.json")).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
        assert!(err.to_string().contains("nope.json"));
    }

    #[test]
    fn synthetic_dataset_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::tiny(21);
        cfg.context_dim = Some(3);
        let world = SyntheticWorld::new(cfg).unwrap();
        let d = split(&world.generate().unwrap(), [0.8, 0.1, 0.1], 3).unwrap();
        save_manifest(dir.path(), &d).unwrap();
        assert_eq!(load_manifest(dir.path()).unwrap(), d);
    }
}
