//! Working-directory layout, artifact loading and run manifests.
//!
//! Every stage writes `manifests/<artifact>.json` next to its output. The
//! manifest records the sha256 of each input artifact, so a later stage can
//! tell when an upstream artifact was regenerated underneath it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use iterec_core::agent::{load_agent, ActionCatalog, AGENT_FILE, AgentError, AgentMeta, PolicyKind, ProxyScorer, QNetwork};
use iterec_core::baselines::{load_lstm_recommender, LstmRecommender, LSTM_META_FILE};
use iterec_core::data::{load_manifest, DataError, Dataset, MANIFEST_FILE};
use iterec_core::pipeline::{PipelineError, Profile};
use iterec_core::preprocess::{load_clustering, ClusteringArtifact, PreprocessError, CLUSTERING_FILE};
use iterec_core::proxy::{load_proxy, Proxy, ProxyError, PROXY_FILE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PROFILE_FILE: &str = "profile.json";
pub const DATASET_DIR: &str = "dataset";
pub const PREPROCESS_DIR: &str = "preprocess";
pub const PROXY_DIR: &str = "proxy";
pub const AGENT_DIR: &str = "agent";
pub const NO_EXPLORATION_DIR: &str = "agent-noexp";
pub const LSTM_DIR: &str = "lstm";
pub const MANIFEST_DIR: &str = "manifests";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SIMULATION_FILE: &str = "simulation.jsonl";
pub const JOURNAL_FILE: &str = "sessions.jsonl";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing artifact {path} (produced by `iterec {stage}`)")]
    Missing { path: PathBuf, stage: &'static str },
    #[error("inconsistent artifact {path}: {message}")]
    Inconsistent { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl ArtifactError {
    pub fn write(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        Self::Write {
            path: path.into(),
            message: e.to_string(),
        }
    }

    /// Process exit status: 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = ArtifactError> = std::result::Result<T, E>;

/// Which stage produces an artifact, used in error messages.
fn producer(name: &str) -> &'static str {
    match name {
        PROFILE_FILE | DATASET_DIR => "synth",
        PREPROCESS_DIR => "preprocess",
        PROXY_DIR => "train-proxy",
        AGENT_DIR | NO_EXPLORATION_DIR | LSTM_DIR => "train-agent",
        _ => "evaluate",
    }
}

/// Hex sha256 of a file, or of every file in a directory (sorted by name,
/// hashing each name and content).
pub fn sha256_path(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        entries.sort();
        for p in entries.iter().filter(|p| p.is_file()) {
            h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
            h.update([0]);
            h.update(fs::read(p)?);
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub command: String,
    pub version: String,
    pub profile: String,
    pub seed: u64,
    pub created_unix: u64,
    /// Stage-specific configuration actually used.
    pub config: serde_json::Value,
    /// Relative path to sha256 of each input artifact.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_path(&self, artifact: &str) -> PathBuf {
        self.root.join(MANIFEST_DIR).join(format!("{artifact}.json"))
    }

    fn require(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(ArtifactError::Missing {
                path: p,
                stage: producer(rel),
            })
        }
    }

    fn hash(&self, rel: &str) -> Result<String> {
        let p = self.require(rel)?;
        sha256_path(&p).map_err(|e| ArtifactError::Inconsistent {
            path: p,
            message: e.to_string(),
        })
    }

    pub fn read_manifest(&self, artifact: &str) -> Result<RunManifest> {
        let p = self.manifest_path(artifact);
        let bytes = fs::read(&p).map_err(|_| ArtifactError::Missing {
            path: p.clone(),
            stage: producer(artifact),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ArtifactError::Inconsistent {
            path: p,
            message: e.to_string(),
        })
    }

    /// Fails when any input recorded for `artifact` has changed since it
    /// was built, or when the artifact itself was modified afterwards.
    pub fn check_lineage(&self, artifact: &str) -> Result<()> {
        let m = self.read_manifest(artifact)?;
        for (rel, expected) in m.outputs.iter().chain(&m.inputs) {
            let actual = self.hash(rel)?;
            if &actual != expected {
                let message = if m.outputs.contains_key(rel) {
                    format!("contents changed after `iterec {}` wrote it", m.command)
                } else {
                    format!("{artifact} was built from an older {rel}; rerun `iterec {}`", m.command)
                };
                return Err(ArtifactError::Inconsistent {
                    path: self.path(rel),
                    message,
                });
            }
        }
        Ok(())
    }

    /// Records a finished stage. Inputs and outputs are hashed now.
    pub fn write_manifest(
        &self,
        artifact: &str,
        command: &str,
        profile: &Profile,
        seed: u64,
        config: serde_json::Value,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Result<RunManifest> {
        let hashes = |names: &[&str]| -> Result<BTreeMap<String, String>> {
            names.iter().map(|n| Ok(((*n).to_owned(), self.hash(n)?))).collect()
        };
        let m = RunManifest {
            artifact: artifact.to_owned(),
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            profile: profile.name.clone(),
            seed,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config,
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        };
        self.write_json(&format!("{MANIFEST_DIR}/{artifact}.json"), &m)?;
        Ok(m)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| ArtifactError::write(dir, e))?;
        }
        let json = serde_json::to_vec_pretty(value).map_err(|e| ArtifactError::write(&p, e))?;
        fs::write(&p, json).map_err(|e| ArtifactError::write(&p, e))
    }

    pub fn profile(&self) -> Result<Profile> {
        let p = self.require(PROFILE_FILE)?;
        let bytes = fs::read(&p).map_err(|e| inconsistent(&p, e))?;
        let profile: Profile = serde_json::from_slice(&bytes).map_err(|e| inconsistent(&p, e))?;
        profile.validate().map_err(|e| inconsistent(&p, e))?;
        Ok(profile)
    }

    /// The saved profile, checked against one given on the command line.
    pub fn profile_matching(&self, requested: Option<&Profile>) -> Result<Profile> {
        let saved = self.profile()?;
        match requested {
            Some(r) if r != &saved => Err(ArtifactError::Inconsistent {
                path: self.path(PROFILE_FILE),
                message: format!(
                    "workdir was created with profile {:?}, not {:?}; rerun `iterec synth` to start over",
                    saved.name, r.name
                ),
            }),
            _ => Ok(saved),
        }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let dir = self.require(DATASET_DIR)?;
        let p = dir.join(MANIFEST_FILE);
        let ds = load_manifest(&p).map_err(|e| data_err(&p, e))?;
        self.check_lineage(DATASET_DIR)?;
        Ok(ds)
    }

    pub fn clustering(&self) -> Result<ClusteringArtifact> {
        let dir = self.require(PREPROCESS_DIR)?;
        let c = load_clustering(&dir).map_err(|e| preprocess_err(&dir.join(CLUSTERING_FILE), e))?;
        self.check_lineage(PREPROCESS_DIR)?;
        Ok(c)
    }

    /// Candidate catalog for `dataset`, from the preprocessing output.
    pub fn catalog(&self, dataset: &Dataset) -> Result<(ActionCatalog, ClusteringArtifact)> {
        let clustering = self.clustering()?;
        let p = self.path(PREPROCESS_DIR).join(CLUSTERING_FILE);
        let candidates = clustering.candidates().map_err(|e| inconsistent(&p, e))?;
        let catalog = ActionCatalog::new(dataset, candidates).map_err(|e| inconsistent(&p, e))?;
        Ok((catalog, clustering))
    }

    pub fn proxy(&self) -> Result<Proxy> {
        let dir = self.require(PROXY_DIR)?;
        let proxy = load_proxy(&dir).map_err(|e| proxy_err(&dir.join(PROXY_FILE), e))?;
        self.check_lineage(PROXY_DIR)?;
        Ok(proxy)
    }

    pub fn scorer(&self, dataset: &Dataset, catalog: &ActionCatalog) -> Result<ProxyScorer> {
        let proxy = self.proxy()?;
        let p = self.path(PROXY_DIR).join(PROXY_FILE);
        ProxyScorer::new(proxy, dataset, catalog).map_err(|e| inconsistent(&p, e))
    }

    pub fn agent_dir(kind: PolicyKind) -> Result<&'static str> {
        match kind {
            PolicyKind::Rl => Ok(AGENT_DIR),
            PolicyKind::NoExploration => Ok(NO_EXPLORATION_DIR),
            PolicyKind::Lstm => Ok(LSTM_DIR),
            PolicyKind::Random => Err(ArtifactError::Usage("the random policy has no artifact".into())),
        }
    }

    /// A trained Q-network, refused unless it matches `catalog`.
    pub fn agent(&self, kind: PolicyKind, catalog: &ActionCatalog) -> Result<(QNetwork, AgentMeta)> {
        let rel = Self::agent_dir(kind)?;
        let dir = self.require(rel)?;
        let (q, meta) = load_agent(&dir, Some(catalog.hash())).map_err(|e| agent_err(&dir.join(AGENT_FILE), e))?;
        self.check_lineage(rel)?;
        if meta.kind != kind {
            return Err(inconsistent(&dir.join(AGENT_FILE), format!("holds a {} agent", meta.kind)));
        }
        Ok((q, meta))
    }

    pub fn lstm(&self, catalog: &ActionCatalog) -> Result<LstmRecommender> {
        let dir = self.require(LSTM_DIR)?;
        let model = load_lstm_recommender(&dir, Some(catalog.hash())).map_err(|e| agent_err(&dir.join(LSTM_META_FILE), e))?;
        self.check_lineage(LSTM_DIR)?;
        Ok(model)
    }
}

fn inconsistent(path: &Path, e: impl ToString) -> ArtifactError {
    ArtifactError::Inconsistent {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

/// A load failure caused by an absent file becomes `Missing`, naming it.
fn load_err(default: &Path, io: Option<(&str, &io::Error)>, e: impl ToString, stage: &'static str) -> ArtifactError {
    match io {
        Some((path, source)) if source.kind() == io::ErrorKind::NotFound => ArtifactError::Missing {
            path: path.into(),
            stage,
        },
        _ => inconsistent(default, e),
    }
}

fn data_err(default: &Path, e: DataError) -> ArtifactError {
    let io = match &e {
        DataError::Io { path, source } => Some((path.as_str(), source)),
        _ => None,
    };
    load_err(default, io, &e, "synth")
}

fn preprocess_err(default: &Path, e: PreprocessError) -> ArtifactError {
    let io = match &e {
        PreprocessError::Io { path, source } => Some((path.as_str(), source)),
        _ => None,
    };
    load_err(default, io, &e, "preprocess")
}

fn proxy_err(default: &Path, e: ProxyError) -> ArtifactError {
    let io = match &e {
        ProxyError::Io { path, source } => Some((path.as_str(), source)),
        _ => None,
    };
    load_err(default, io, &e, "train-proxy")
}

/// Maps checkpoint errors onto the file they concern.
fn agent_err(meta: &Path, e: AgentError) -> ArtifactError {
    match e {
        AgentError::Io { path, source } if source.kind() == io::ErrorKind::NotFound => ArtifactError::Missing {
            path: path.into(),
            stage: "train-agent",
        },
        AgentError::CandidateMismatch { .. } => inconsistent(meta, format!("{e}; rerun `iterec train-agent`")),
        AgentError::Io { ref path, .. } | AgentError::Checkpoint { ref path, .. } => inconsistent(Path::new(path), &e),
        other => inconsistent(meta, other),
    }
}
