//! The pipeline stages behind each subcommand, reading and writing a
//! working directory.

use std::fs::File;
use std::io::BufWriter;

use iterec_core::agent::{
    run_episode, save_agent, write_jsonl, AgentMeta, DqnPolicy, EpisodeLog, Policy, PolicyKind, StopRule,
};
use iterec_core::baselines::{save_lstm_recommender, LstmTrainConfig, RandomPolicy};
use iterec_core::data::{save_manifest, Dataset, Split};
use iterec_core::eval::{write_curves, write_report, MetricsReport, CURVES_FILE, REPORT_FILE};
use iterec_core::pipeline::{self, stage_seed, Profile, Stage};
use iterec_core::preprocess::save_clustering;
use iterec_core::proxy::save_proxy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::artifacts::{
    ArtifactError, Result, Workdir, AGENT_DIR, DATASET_DIR, EPISODES_FILE, LSTM_DIR, NO_EXPLORATION_DIR, PREPROCESS_DIR,
    PROFILE_FILE, PROXY_DIR, SIMULATION_FILE,
};

pub fn synth(wd: &Workdir, profile: &Profile, seed: u64) -> Result<Dataset> {
    profile.validate()?;
    let ds = pipeline::synthesize(profile, seed)?;
    let dir = wd.path(DATASET_DIR);
    save_manifest(&dir, &ds).map_err(|e| ArtifactError::write(&dir, e))?;
    wd.write_json(PROFILE_FILE, profile)?;
    wd.write_manifest(
        DATASET_DIR,
        "synth",
        profile,
        seed,
        json!({ "synth": profile.synth, "split": profile.split }),
        &[],
        &[DATASET_DIR, PROFILE_FILE],
    )?;
    Ok(ds)
}

pub fn preprocess(wd: &Workdir, requested: Option<&Profile>, seed: u64) -> Result<()> {
    let profile = wd.profile_matching(requested)?;
    let ds = wd.dataset()?;
    let out = pipeline::preprocess(&ds, &profile, seed)?;
    let dir = wd.path(PREPROCESS_DIR);
    save_clustering(&dir, &out.clustering).map_err(|e| ArtifactError::write(&dir, e))?;
    wd.write_json(&format!("{PREPROCESS_DIR}/autoencoder.json"), &out.autoencoder)?;
    wd.write_manifest(
        PREPROCESS_DIR,
        "preprocess",
        &profile,
        seed,
        json!({
            "autoencoder": profile.autoencoder,
            "clusters": profile.clusters,
            "kmeans_iters": profile.kmeans_iters,
            "final_mse": out.autoencoder.final_mse(),
        }),
        &[DATASET_DIR],
        &[PREPROCESS_DIR],
    )?;
    Ok(())
}

pub fn train_proxy(wd: &Workdir, requested: Option<&Profile>, seed: u64) -> Result<()> {
    let profile = wd.profile_matching(requested)?;
    let ds = wd.dataset()?;
    let (proxy, history) = pipeline::train_proxy(&ds, &profile, seed)?;
    let dir = wd.path(PROXY_DIR);
    save_proxy(&dir, &proxy).map_err(|e| ArtifactError::write(&dir, e))?;
    wd.write_json(&format!("{PROXY_DIR}/history.json"), &history)?;
    wd.write_manifest(
        PROXY_DIR,
        "train-proxy",
        &profile,
        seed,
        json!({
            "model": profile.proxy,
            "train": profile.proxy_train,
            "learning_rate": profile.proxy_learning_rate,
            "normalizer": proxy.normalizer,
            "final_val_auc": history.last().and_then(|e| e.val_auc),
        }),
        &[DATASET_DIR],
        &[PROXY_DIR],
    )?;
    Ok(())
}

/// Trains the requested policies, each into its own directory.
pub fn train_agent(wd: &Workdir, requested: Option<&Profile>, seed: u64, kinds: &[PolicyKind]) -> Result<()> {
    let profile = wd.profile_matching(requested)?;
    let ds = wd.dataset()?;
    let (catalog, clustering) = wd.catalog(&ds)?;
    let scorer = wd.scorer(&ds, &catalog)?;
    let inputs = [DATASET_DIR, PREPROCESS_DIR, PROXY_DIR];
    for &kind in kinds {
        let rel = Workdir::agent_dir(kind)?;
        let dir = wd.path(rel);
        let config = match kind {
            PolicyKind::Lstm => {
                let cfg = LstmTrainConfig {
                    episode_len: profile.agent.episode_len,
                    ..profile.lstm.clone()
                };
                let (model, history) =
                    pipeline::train_lstm_baseline(&ds, &catalog, &clustering.assignment, &scorer, &profile, seed)?;
                save_lstm_recommender(&dir, &model, catalog.hash(), &cfg).map_err(|e| ArtifactError::write(&dir, e))?;
                wd.write_json(&format!("{rel}/history.json"), &history)?;
                json!(cfg)
            }
            _ => {
                let (q, log, cfg) = pipeline::train_agent(kind, &ds, &catalog, &scorer, &profile, seed)?;
                let meta = AgentMeta {
                    kind,
                    candidate_set_hash: catalog.hash().to_owned(),
                    state_dim: q.state_dim(),
                    n_actions: q.n_actions(),
                    hidden: q.hidden_dims(),
                    gamma: cfg.gamma,
                    schedule: cfg.schedule,
                };
                save_agent(&dir, &q, &meta).map_err(|e| ArtifactError::write(&dir, e))?;
                wd.write_json(&format!("{rel}/train_log.json"), &log)?;
                json!(cfg)
            }
        };
        wd.write_manifest(rel, "train-agent", &profile, seed, config, &inputs, &[rel])?;
    }
    Ok(())
}

/// Loads a frozen policy from the working directory.
pub fn load_policy(wd: &Workdir, kind: PolicyKind, ds: &Dataset, catalog: &iterec_core::agent::ActionCatalog) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(catalog.len(), ds.feature_dim)),
        PolicyKind::Lstm => Box::new(wd.lstm(catalog)?),
        k => Box::new(DqnPolicy::greedy(wd.agent(k, catalog)?.0, k)),
    })
}

/// Evaluates every trained policy plus the random baseline. The LSTM
/// baseline is included when it has been trained.
pub fn evaluate(wd: &Workdir, requested: Option<&Profile>, seed: u64) -> Result<MetricsReport> {
    let profile = wd.profile_matching(requested)?;
    let ds = wd.dataset()?;
    let (catalog, _) = wd.catalog(&ds)?;
    let scorer = wd.scorer(&ds, &catalog)?;
    let mut kinds = vec![PolicyKind::Rl, PolicyKind::NoExploration];
    if wd.path(LSTM_DIR).exists() {
        kinds.push(PolicyKind::Lstm);
    }
    kinds.push(PolicyKind::Random);
    let policies = kinds
        .iter()
        .map(|&k| load_policy(wd, k, &ds, &catalog))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Policy> = policies.iter().map(|p| p.as_ref()).collect();
    let (report, evals) = pipeline::evaluate_all(&refs, &ds, &catalog, &scorer, &profile, seed)?;

    let path = wd.path(REPORT_FILE);
    write_report(&path, &report).map_err(|e| ArtifactError::write(&path, e))?;
    let path = wd.path(CURVES_FILE);
    write_curves(&path, &report).map_err(|e| ArtifactError::write(&path, e))?;
    let logs: Vec<EpisodeLog> = evals.into_iter().flatten().map(|e| e.log).collect();
    write_episodes(wd, EPISODES_FILE, &logs)?;

    let mut inputs = vec![DATASET_DIR, PREPROCESS_DIR, PROXY_DIR, AGENT_DIR, NO_EXPLORATION_DIR];
    if kinds.contains(&PolicyKind::Lstm) {
        inputs.push(LSTM_DIR);
    }
    wd.write_manifest(
        "evaluate",
        "evaluate",
        &profile,
        seed,
        json!({
            "policies": kinds,
            "episode_len": profile.agent.episode_len,
            "episodes": pipeline::eval_quads(&ds, &profile).len(),
        }),
        &inputs,
        &[REPORT_FILE, CURVES_FILE, EPISODES_FILE],
    )?;
    Ok(report)
}

fn write_episodes(wd: &Workdir, rel: &str, logs: &[EpisodeLog]) -> Result<()> {
    let path = wd.path(rel);
    let file = File::create(&path).map_err(|e| ArtifactError::write(&path, e))?;
    write_jsonl(BufWriter::new(file), logs).map_err(|e| ArtifactError::write(&path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub policy: PolicyKind,
    pub episodes: usize,
    /// Restrict to one `(user, top)` pair.
    pub pair: Option<(String, String)>,
    pub stop: StopRule,
}

/// Rolls out episodes against the proxy on test-split pairs.
pub fn simulate(wd: &Workdir, requested: Option<&Profile>, seed: u64, opts: &SimulateOptions) -> Result<Vec<EpisodeLog>> {
    let profile = wd.profile_matching(requested)?;
    let ds = wd.dataset()?;
    let (catalog, _) = wd.catalog(&ds)?;
    let scorer = wd.scorer(&ds, &catalog)?;
    let policy = load_policy(wd, opts.policy, &ds, &catalog)?;
    let keys = match &opts.pair {
        Some((u, t)) => {
            if ds.top(t).is_none() {
                return Err(ArtifactError::Usage(format!("unknown top {t:?}")));
            }
            vec![(u.clone(), t.clone())]
        }
        None => ds.episode_keys(Split::Test).into_iter().take(opts.episodes).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Stage::Evaluate));
    let mut logs = Vec::with_capacity(keys.len());
    for (user, top) in &keys {
        let mut src = &scorer;
        let log = run_episode(
            policy.as_ref(),
            &catalog,
            &ds,
            &mut src,
            user,
            top,
            profile.agent.episode_len,
            opts.stop,
            &mut rng,
        )
        .map_err(|e| ArtifactError::Pipeline(e.into()))?;
        logs.push(log);
    }
    write_episodes(wd, SIMULATION_FILE, &logs)?;
    let mut inputs = vec![DATASET_DIR, PREPROCESS_DIR, PROXY_DIR];
    if let Ok(rel) = Workdir::agent_dir(opts.policy) {
        inputs.push(rel);
    }
    wd.write_manifest(
        "simulate",
        "simulate",
        &profile,
        seed,
        json!({ "policy": opts.policy, "episodes": keys.len(), "stop": opts.stop }),
        &inputs,
        &[SIMULATION_FILE],
    )?;
    Ok(logs)
}
