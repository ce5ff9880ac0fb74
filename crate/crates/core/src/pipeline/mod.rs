//! Stage functions and size profiles shared by the command line and tests.
//!
//! Every stage takes its own seed, so any stage can be rerun in isolation
//! and reproduce the artifact written by a full run.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    train_dqn, ActionCatalog, AgentError, DqnConfig, DqnPolicy, DqnTrainLog, Policy, PolicyKind, ProxyScorer, QNetwork,
};
use crate::baselines::{lstm_examples, no_exploration_config, train_lstm, LstmEpoch, LstmRecommender, LstmTrainConfig, RandomPolicy};
use crate::data::{split, DataError, Dataset, Split, SynthConfig, SyntheticWorld};
use crate::eval::{aggregate, evaluate_policy, EvalError, EpisodeEval, MetricsReport, PolicyMetrics};
use crate::nn::{NnError, Optimizer};
use crate::preprocess::{
    kmeans, select_medoids, train_autoencoder, AutoencoderConfig, AutoencoderReport, ClusteringArtifact, PreprocessError,
};
use crate::proxy::{fit_normalizer, train_bpr, BprEpoch, BprTrainConfig, GpbprConfig, GpbprModel, Proxy, ProxyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown profile {0:?} (expected tiny, desk or full)")]
    UnknownProfile(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Sizes and hyperparameters for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub synth: SynthConfig,
    pub split: [f64; 3],
    pub autoencoder: AutoencoderConfig,
    pub clusters: usize,
    pub kmeans_iters: usize,
    pub proxy: GpbprConfig,
    pub proxy_train: BprTrainConfig,
    pub proxy_learning_rate: f64,
    pub agent: DqnConfig,
    pub lstm: LstmTrainConfig,
    /// Cap on evaluated test episodes; `None` uses the whole test split.
    pub eval_episodes: Option<usize>,
}

impl Profile {
    /// Seconds-scale run for smoke tests.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            synth: SynthConfig {
                n_users: 6,
                n_tops: 12,
                n_bottoms: 30,
                n_quadruples: 300,
                ..SynthConfig::tiny(0)
            },
            split: [0.8, 0.1, 0.1],
            autoencoder: AutoencoderConfig {
                epochs: 20,
                ..AutoencoderConfig::desk_scale()
            },
            clusters: 12,
            kmeans_iters: 50,
            proxy: GpbprConfig::default(),
            proxy_train: BprTrainConfig {
                epochs: 10,
                batch_size: 32,
            },
            proxy_learning_rate: 0.01,
            agent: DqnConfig {
                hidden: vec![16],
                batch_size: 16,
                replay_capacity: 2_000,
                target_sync: 50,
                epochs: 20,
                episodes_per_epoch: 4,
                ..DqnConfig::default()
            },
            lstm: LstmTrainConfig {
                epochs: 3,
                ..LstmTrainConfig::default()
            },
            eval_episodes: Some(20),
        }
    }

    /// Minutes-scale run used for the directional checks.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            synth: SynthConfig {
                seed: 0,
                n_users: 30,
                n_tops: 50,
                n_bottoms: 240,
                n_quadruples: 4000,
                feature_dim: 16,
                context_dim: None,
                style_dim: 4,
                noise: 0.1,
                taste_weight: 1.0,
                match_weight: 0.3,
                feature_noise: 0.02,
                positive_pool: 2,
            },
            split: [0.8, 0.1, 0.1],
            autoencoder: AutoencoderConfig::desk_scale(),
            clusters: 48,
            kmeans_iters: 100,
            proxy: GpbprConfig::default(),
            proxy_train: BprTrainConfig {
                epochs: 30,
                batch_size: 64,
            },
            proxy_learning_rate: 0.01,
            agent: DqnConfig {
                hidden: vec![64],
                learning_rate: 3e-4,
                epochs: 400,
                episodes_per_epoch: 8,
                schedule: crate::agent::EpsilonSchedule {
                    start: 0.9,
                    end: 0.25,
                    decay: 100.0,
                },
                ..DqnConfig::default()
            },
            lstm: LstmTrainConfig {
                epochs: 10,
                ..LstmTrainConfig::default()
            },
            eval_episodes: Some(200),
        }
    }

    /// Full-size configuration (2048-d features, 1500 candidates).
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            synth: SynthConfig {
                seed: 0,
                n_users: 600,
                n_tops: 8000,
                n_bottoms: 20000,
                n_quadruples: 200_000,
                feature_dim: 2048,
                context_dim: Some(300),
                style_dim: 32,
                noise: 0.5,
                taste_weight: 1.0,
                match_weight: 1.0,
                feature_noise: 0.1,
                positive_pool: 8,
            },
            split: [0.8, 0.1, 0.1],
            autoencoder: AutoencoderConfig::full_scale(),
            clusters: 1500,
            kmeans_iters: 100,
            proxy: GpbprConfig {
                latent_dim: 512,
                mf_dim: 64,
                ..GpbprConfig::default()
            },
            proxy_train: BprTrainConfig {
                epochs: 30,
                batch_size: 256,
            },
            proxy_learning_rate: 1e-3,
            agent: DqnConfig {
                hidden: vec![1024, 512],
                epochs: 1000,
                ..DqnConfig::default()
            },
            lstm: LstmTrainConfig::default(),
            eval_episodes: None,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(PipelineError::UnknownProfile(other.to_owned())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.clusters > self.synth.n_bottoms {
            return Err(PipelineError::Profile(format!(
                "clusters must be in 1..={}, got {}",
                self.synth.n_bottoms, self.clusters
            )));
        }
        if self.agent.episode_len > self.clusters {
            return Err(PipelineError::Profile(format!(
                "episode length {} exceeds the {} candidates",
                self.agent.episode_len, self.clusters
            )));
        }
        Ok(())
    }
}

/// Per-stage seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Synth,
    Split,
    Preprocess,
    Proxy,
    Agent,
    NoExploration,
    Lstm,
    Evaluate,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (stage as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub fn synthesize(profile: &Profile, seed: u64) -> Result<Dataset> {
    let world = SyntheticWorld::new(SynthConfig {
        seed: stage_seed(seed, Stage::Synth),
        ..profile.synth.clone()
    })?;
    Ok(split(&world.generate()?, profile.split, stage_seed(seed, Stage::Split))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOutput {
    pub clustering: ClusteringArtifact,
    pub autoencoder: AutoencoderReport,
}

/// Compresses bottom features, clusters the codes and keeps each cluster's
/// medoid as a candidate.
pub fn preprocess(dataset: &Dataset, profile: &Profile, seed: u64) -> Result<PreprocessOutput> {
    let seed = stage_seed(seed, Stage::Preprocess);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<Vec<f64>> = dataset.bottoms.iter().map(|b| dataset.garments[b].feature.clone()).collect();
    let mut opt = Optimizer::adam(profile.autoencoder.learning_rate)?;
    let (ae, report) = train_autoencoder(&features, &profile.autoencoder, &mut opt, &mut rng)?;
    let latents = features.iter().map(|f| ae.encode(f)).collect::<Result<Vec<_>, _>>()?;
    let clustering = kmeans(&latents, profile.clusters, seed, profile.kmeans_iters)?;
    let candidates = select_medoids(&clustering, &dataset.bottoms, &latents)?;
    Ok(PreprocessOutput {
        clustering: ClusteringArtifact::new(&clustering, &dataset.bottoms, &candidates),
        autoencoder: report,
    })
}

pub fn train_proxy(dataset: &Dataset, profile: &Profile, seed: u64) -> Result<(Proxy, Vec<BprEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Stage::Proxy));
    let mut model = GpbprModel::new(&profile.proxy, dataset, &mut rng)?;
    let mut opt = Optimizer::adam(profile.proxy_learning_rate)?;
    let history = train_bpr(&mut model, dataset, &profile.proxy_train, &mut opt, &mut rng)?;
    let normalizer = fit_normalizer(&model, dataset)?;
    Ok((Proxy::new(model, normalizer), history))
}

/// Trains the agent (`Rl`) or its exploration-free variant.
pub fn train_agent(
    kind: PolicyKind,
    dataset: &Dataset,
    catalog: &ActionCatalog,
    scorer: &ProxyScorer,
    profile: &Profile,
    seed: u64,
) -> Result<(QNetwork, DqnTrainLog, DqnConfig)> {
    let (cfg, stage) = match kind {
        PolicyKind::Rl => (profile.agent.clone(), Stage::Agent),
        PolicyKind::NoExploration => (no_exploration_config(&profile.agent), Stage::NoExploration),
        other => return Err(PipelineError::Profile(format!("{other} is not a Q-learning policy"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, stage));
    let keys = dataset.episode_keys(Split::Train);
    let mut src = scorer;
    let (q, log) = train_dqn(catalog, dataset, &mut src, &keys, &cfg, &mut rng)?;
    Ok((q, log, cfg))
}

pub fn train_lstm_baseline(
    dataset: &Dataset,
    catalog: &ActionCatalog,
    assignment: &BTreeMap<String, usize>,
    scorer: &ProxyScorer,
    profile: &Profile,
    seed: u64,
) -> Result<(LstmRecommender, Vec<LstmEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Stage::Lstm));
    let examples = lstm_examples(dataset, catalog, assignment);
    let cfg = LstmTrainConfig {
        episode_len: profile.agent.episode_len,
        ..profile.lstm.clone()
    };
    let mut src = scorer;
    Ok(train_lstm(catalog, dataset, &mut src, &examples, &cfg, &mut rng)?)
}

/// Test quadruples used for evaluation, capped by the profile.
pub fn eval_quads<'a>(dataset: &'a Dataset, profile: &Profile) -> &'a [crate::data::OutfitQuadruple] {
    let test = dataset.split_quads(Split::Test);
    &test[..profile.eval_episodes.map_or(test.len(), |n| n.min(test.len()))]
}

/// Evaluates each policy on the same test episodes with the same seed.
pub fn evaluate_all(
    policies: &[&dyn Policy],
    dataset: &Dataset,
    catalog: &ActionCatalog,
    scorer: &ProxyScorer,
    profile: &Profile,
    seed: u64,
) -> Result<(MetricsReport, Vec<Vec<EpisodeEval>>)> {
    let quads = eval_quads(dataset, profile);
    let mut metrics: Vec<PolicyMetrics> = Vec::new();
    let mut all = Vec::new();
    for p in policies {
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Stage::Evaluate));
        let evals = evaluate_policy(*p, catalog, dataset, scorer, quads, profile.agent.episode_len, &mut rng)?;
        metrics.push(aggregate(p.kind(), &evals)?);
        all.push(evals);
    }
    Ok((MetricsReport::new(catalog.hash(), metrics), all))
}

/// Everything a full in-memory run produces.
pub struct RunOutcome {
    pub dataset: Dataset,
    pub preprocess: PreprocessOutput,
    pub proxy_history: Vec<BprEpoch>,
    pub catalog: ActionCatalog,
    pub scorer: ProxyScorer,
    pub rl: QNetwork,
    pub rl_log: DqnTrainLog,
    pub no_exploration: QNetwork,
    pub no_exploration_log: DqnTrainLog,
    pub lstm: Option<LstmRecommender>,
    pub report: MetricsReport,
}

/// Runs every stage in memory. The LSTM baseline is optional because it
/// dominates the runtime of small profiles.
pub fn run_all(profile: &Profile, seed: u64, with_lstm: bool) -> Result<RunOutcome> {
    profile.validate()?;
    let dataset = synthesize(profile, seed)?;
    let pre = preprocess(&dataset, profile, seed)?;
    let (proxy, proxy_history) = train_proxy(&dataset, profile, seed)?;
    let catalog = ActionCatalog::new(&dataset, pre.clustering.candidates()?)?;
    let scorer = ProxyScorer::new(proxy, &dataset, &catalog)?;
    let (rl, rl_log, _) = train_agent(PolicyKind::Rl, &dataset, &catalog, &scorer, profile, seed)?;
    let (ne, ne_log, _) = train_agent(PolicyKind::NoExploration, &dataset, &catalog, &scorer, profile, seed)?;
    let lstm = if with_lstm {
        Some(train_lstm_baseline(&dataset, &catalog, &pre.clustering.assignment, &scorer, profile, seed)?.0)
    } else {
        None
    };
    let rl_p = DqnPolicy::greedy(rl.clone(), PolicyKind::Rl);
    let ne_p = DqnPolicy::greedy(ne.clone(), PolicyKind::NoExploration);
    let random = RandomPolicy::new(catalog.len(), dataset.feature_dim);
    let mut policies: Vec<&dyn Policy> = vec![&rl_p, &ne_p];
    if let Some(l) = &lstm {
        policies.push(l);
    }
    policies.push(&random);
    let (report, _) = evaluate_all(&policies, &dataset, &catalog, &scorer, profile, seed)?;
    Ok(RunOutcome {
        dataset,
        preprocess: pre,
        proxy_history,
        catalog,
        scorer,
        rl,
        rl_log,
        no_exploration: ne,
        no_exploration_log: ne_log,
        lstm,
        report,
    })
}
