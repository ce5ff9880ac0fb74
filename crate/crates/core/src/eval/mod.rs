//! Hit-rate metrics over test episodes, score curves and report writers.
//!
//! All comparisons use raw proxy scores; normalized scores only drive the
//! agent's feedback loop.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, ActionCatalog, AgentError, EpisodeLog, Policy, PolicyKind, ProxyScorer, StopRule};
use crate::data::{Dataset, OutfitQuadruple};

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("T = {t} outside 1..={n}")]
    TOutOfRange { t: usize, n: usize },
    #[error("episodes of different lengths ({0} and {1}) cannot be aggregated")]
    MixedLength(usize, usize),
    #[error("no episodes to aggregate")]
    Empty,
    #[error("episode for ({user}, {top}) is incomplete: {reason}")]
    Incomplete { user: String, top: String, reason: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// One test episode with the raw proxy scores of its reference bottoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub log: EpisodeLog,
    pub positive_score: f64,
    pub negative_score: f64,
}

impl EpisodeEval {
    fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.log.steps.iter().map(|s| s.raw_score)
    }

    pub fn len(&self) -> usize {
        self.log.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Some proposal beats the dataset negative.
    Hn,
    /// Some proposal beats the ground-truth positive.
    Hp,
}

impl Metric {
    fn threshold(self, e: &EpisodeEval) -> f64 {
        match self {
            Metric::Hn => e.negative_score,
            Metric::Hp => e.positive_score,
        }
    }
}

/// 1 iff some step scores strictly above the negative.
pub fn hn(e: &EpisodeEval) -> u8 {
    hit(Metric::Hn, e, e.len())
}

/// 1 iff some step scores strictly above the positive.
pub fn hp(e: &EpisodeEval) -> u8 {
    hit(Metric::Hp, e, e.len())
}

fn hit(metric: Metric, e: &EpisodeEval, t: usize) -> u8 {
    let th = metric.threshold(e);
    u8::from(e.scores().take(t).any(|s| s > th))
}

/// The metric restricted to the first `t` steps.
pub fn at_t(metric: Metric, e: &EpisodeEval, t: usize) -> Result<u8> {
    if t == 0 || t > e.len() {
        return Err(EvalError::TOutOfRange { t, n: e.len() });
    }
    Ok(hit(metric, e, t))
}

/// `at_t` for every `t` in `1..=N`, in one pass.
pub fn at_t_series(metric: Metric, e: &EpisodeEval) -> Vec<u8> {
    let th = metric.threshold(e);
    let mut seen = false;
    e.scores()
        .map(|s| {
            seen |= s > th;
            u8::from(seen)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub policy: PolicyKind,
    pub episodes: usize,
    pub episode_len: usize,
    pub hn: f64,
    pub hp: f64,
    /// Index `t - 1` holds the rate at `T = t`.
    pub hn_at_t: Vec<f64>,
    pub hp_at_t: Vec<f64>,
    /// Mean raw score at each step.
    pub mean_score: Vec<f64>,
    pub mean_normalized_score: Vec<f64>,
    pub distinct_bottoms: usize,
    pub mean_above_negative: f64,
}

pub fn aggregate(policy: PolicyKind, evals: &[EpisodeEval]) -> Result<PolicyMetrics> {
    let first = evals.first().ok_or(EvalError::Empty)?;
    let n = first.len();
    for e in evals {
        if let Some(reason) = &e.log.aborted {
            return Err(EvalError::Incomplete {
                user: e.log.user.clone(),
                top: e.log.top.clone(),
                reason: reason.clone(),
            });
        }
        if e.len() != n {
            return Err(EvalError::MixedLength(n, e.len()));
        }
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let m = evals.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeEval) -> f64| evals.iter().map(f).sum::<f64>() / m;
    let series_mean = |f: &dyn Fn(&EpisodeEval) -> Vec<f64>| {
        let mut acc = vec![0.0; n];
        for e in evals {
            for (a, v) in acc.iter_mut().zip(f(e)) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a / m).collect::<Vec<_>>()
    };
    let as_f64 = |v: Vec<u8>| v.into_iter().map(f64::from).collect::<Vec<_>>();
    let distinct: BTreeSet<usize> = evals.iter().flat_map(|e| e.log.steps.iter().map(|s| s.action)).collect();
    Ok(PolicyMetrics {
        policy,
        episodes: evals.len(),
        episode_len: n,
        hn: mean(&|e| f64::from(hn(e))),
        hp: mean(&|e| f64::from(hp(e))),
        hn_at_t: series_mean(&|e| as_f64(at_t_series(Metric::Hn, e))),
        hp_at_t: series_mean(&|e| as_f64(at_t_series(Metric::Hp, e))),
        mean_score: series_mean(&|e| e.scores().collect()),
        mean_normalized_score: series_mean(&|e| e.log.steps.iter().map(|s| s.normalized_score).collect()),
        distinct_bottoms: distinct.len(),
        mean_above_negative: mean(&|e| e.scores().filter(|&s| s > e.negative_score).count() as f64),
    })
}

/// Runs one fixed-length episode per test quadruple and attaches the raw
/// scores of its positive and negative.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    policy: &dyn Policy,
    catalog: &ActionCatalog,
    dataset: &Dataset,
    scorer: &ProxyScorer,
    quads: &[OutfitQuadruple],
    episode_len: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<EpisodeEval>> {
    quads
        .iter()
        .map(|q| {
            let mut src = scorer;
            let log = run_episode(policy, catalog, dataset, &mut src, &q.user, &q.top, episode_len, StopRule::FixedLength, rng)?;
            Ok(EpisodeEval {
                log,
                positive_score: scorer.score_bottom(dataset, &q.user, &q.top, &q.pos)?,
                negative_score: scorer.score_bottom(dataset, &q.user, &q.top, &q.neg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Which proxy score the curves and hit rates are computed on.
    pub score_basis: String,
    pub candidate_set_hash: String,
    pub policies: Vec<PolicyMetrics>,
}

impl MetricsReport {
    pub fn new(candidate_set_hash: &str, policies: Vec<PolicyMetrics>) -> Self {
        Self {
            score_basis: "raw".into(),
            candidate_set_hash: candidate_set_hash.to_owned(),
            policies,
        }
    }

    pub fn get(&self, kind: PolicyKind) -> Option<&PolicyMetrics> {
        self.policies.iter().find(|p| p.policy == kind)
    }
}

#[derive(Serialize)]
struct CurveRow {
    policy: PolicyKind,
    #[serde(rename = "T")]
    t: usize,
    mean_score: f64,
    #[serde(rename = "HN_at_T")]
    hn_at_t: f64,
    #[serde(rename = "HP_at_T")]
    hp_at_t: f64,
}

fn write_err(path: &Path, message: impl ToString) -> EvalError {
    EvalError::Write {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(report).map_err(|e| write_err(path, e))?;
    fs::write(path, json).map_err(|e| write_err(path, e))
}

/// `policy,T,mean_score,HN_at_T,HP_at_T`, one row per policy and step.
pub fn write_curves(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    for p in &report.policies {
        for t in 0..p.episode_len {
            w.serialize(CurveRow {
                policy: p.policy,
                t: t + 1,
                mean_score: p.mean_score[t],
                hn_at_t: p.hn_at_t[t],
                hp_at_t: p.hp_at_t[t],
            })
            .map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(path, e))
}
