use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentError, EpsilonSchedule, PolicyKind, QNetwork, Result};
use crate::nn::checkpoint::{load_mlp, save_mlp};

pub const AGENT_FILE: &str = "agent.json";
pub const QNET_FILE: &str = "qnet.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub kind: PolicyKind,
    pub candidate_set_hash: String,
    pub state_dim: usize,
    pub n_actions: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub schedule: EpsilonSchedule,
}

fn io_err(path: &Path, source: std::io::Error) -> AgentError {
    AgentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_agent(dir: impl AsRef<Path>, q: &QNetwork, meta: &AgentMeta) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_mlp(dir.join(QNET_FILE), &q.mlp)?;
    let path = dir.join(AGENT_FILE);
    let json = serde_json::to_vec_pretty(meta).map_err(|e| AgentError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

/// Loads a checkpoint and, when `expected_hash` is given, refuses one
/// trained on a different candidate set.
pub fn load_agent(dir: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<(QNetwork, AgentMeta)> {
    let dir = dir.as_ref();
    let path = dir.join(AGENT_FILE);
    let bad = |message: String| AgentError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let meta: AgentMeta = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if let Some(h) = expected_hash {
        if h != meta.candidate_set_hash {
            return Err(AgentError::CandidateMismatch {
                expected: meta.candidate_set_hash,
                actual: h.to_owned(),
            });
        }
    }
    let qpath = dir.join(QNET_FILE);
    if !qpath.exists() {
        return Err(io_err(&qpath, std::io::ErrorKind::NotFound.into()));
    }
    let q = QNetwork::from_mlp(load_mlp(&qpath)?);
    if q.state_dim() != meta.state_dim || q.n_actions() != meta.n_actions {
        return Err(bad(format!(
            "network is {}->{} but metadata says {}->{}",
            q.state_dim(),
            q.n_actions(),
            meta.state_dim,
            meta.n_actions
        )));
    }
    Ok((q, meta))
}
