use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{squared_distance, Clustering, PreprocessError, Result};

pub const CLUSTERING_FILE: &str = "clustering.json";
pub const CENTROIDS_FILE: &str = "centroids.f32";

/// The action space: one medoid bottom per non-empty cluster, ordered by
/// cluster index. Action `a` recommends `bottoms[a]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub bottoms: Vec<String>,
    pub clusters: Vec<usize>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.bottoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bottoms.is_empty()
    }

    pub fn action_of(&self, bottom: &str) -> Option<usize> {
        self.bottoms.iter().position(|b| b == bottom)
    }

    /// Hex SHA-256 over the newline-joined medoid ids. Stored alongside
    /// trained agents to detect mismatched action spaces.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, b) in self.bottoms.iter().enumerate() {
            if i > 0 {
                h.update(b"\n");
            }
            h.update(b.as_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// For each non-empty cluster, the member nearest its centroid; ties go to
/// the lexicographically smallest id.
pub fn select_medoids(clustering: &Clustering, ids: &[String], latents: &[Vec<f64>]) -> Result<CandidateSet> {
    if ids.len() != clustering.labels.len() || latents.len() != ids.len() {
        return Err(PreprocessError::Invalid(format!(
            "{} ids, {} latents, {} labels",
            ids.len(),
            latents.len(),
            clustering.labels.len()
        )));
    }
    let mut best: Vec<Option<(f64, &str)>> = vec![None; clustering.k];
    for ((id, z), &c) in ids.iter().zip(latents).zip(&clustering.labels) {
        let d = squared_distance(z, &clustering.centroids[c]);
        let better = match best[c] {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id.as_str() < bid),
        };
        if better {
            best[c] = Some((d, id));
        }
    }
    let (clusters, bottoms) = best
        .iter()
        .enumerate()
        .filter_map(|(c, b)| b.map(|(_, id)| (c, id.to_string())))
        .unzip();
    Ok(CandidateSet { bottoms, clusters })
}

/// On-disk form of a clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringArtifact {
    pub k: usize,
    pub seed: u64,
    pub medoids: Vec<String>,
    pub assignment: BTreeMap<String, usize>,
    #[serde(skip)]
    pub centroids: Vec<Vec<f64>>,
}

impl ClusteringArtifact {
    pub fn new(clustering: &Clustering, ids: &[String], candidates: &CandidateSet) -> Self {
        Self {
            k: clustering.k,
            seed: clustering.seed,
            medoids: candidates.bottoms.clone(),
            assignment: ids.iter().cloned().zip(clustering.labels.iter().copied()).collect(),
            centroids: clustering.centroids.clone(),
        }
    }

    pub fn candidates(&self) -> Result<CandidateSet> {
        let clusters = self
            .medoids
            .iter()
            .map(|m| {
                self.assignment
                    .get(m)
                    .copied()
                    .ok_or_else(|| PreprocessError::Invalid(format!("medoid {m} has no cluster assignment")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateSet {
            bottoms: self.medoids.clone(),
            clusters,
        })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PreprocessError {
    PreprocessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_clustering(dir: impl AsRef<Path>, artifact: &ClusteringArtifact) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(CLUSTERING_FILE);
    let json = serde_json::to_vec_pretty(artifact).map_err(|e| PreprocessError::Invalid(e.to_string()))?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    let bytes: Vec<u8> = artifact
        .centroids
        .iter()
        .flatten()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect();
    let path = dir.join(CENTROIDS_FILE);
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))
}

pub fn load_clustering(dir: impl AsRef<Path>) -> Result<ClusteringArtifact> {
    let dir = dir.as_ref();
    let path = dir.join(CLUSTERING_FILE);
    let text = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let mut artifact: ClusteringArtifact = serde_json::from_slice(&text)
        .map_err(|e| PreprocessError::Invalid(format!("{}: {e}", path.display())))?;
    let path = dir.join(CENTROIDS_FILE);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if artifact.k == 0 || bytes.len() % 4 != 0 || values.len() % artifact.k != 0 {
        return Err(PreprocessError::Invalid(format!(
            "{} holds {} bytes, not a multiple of k = {}",
            path.display(),
            bytes.len(),
            artifact.k
        )));
    }
    let dim = values.len() / artifact.k;
    artifact.centroids = values.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
    artifact.candidates()?;
    Ok(artifact)
}
