use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iterec_core::agent::{PolicyKind, StopRule};
use iterec_core::pipeline::Profile;
use serde_json::json;

use crate::artifacts::{ArtifactError, Result, Workdir, AGENT_DIR, DATASET_DIR, JOURNAL_FILE, PREPROCESS_DIR, PROXY_DIR};
use crate::session::{Engine, Journal, SessionConfig, SessionManager};
use crate::stages::{self, SimulateOptions};

#[derive(Debug, Parser)]
#[command(name = "iterec", version, about = "Interactive bottom recommender: training pipeline and session server")]
pub struct Cli {
    /// Directory holding every artifact of a run.
    #[arg(long, global = true, default_value = "iterec-work")]
    pub workdir: PathBuf,
    /// Size profile: tiny, desk, full, or a JSON file. Later stages
    /// default to the profile saved by `synth`.
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and split it.
    Synth,
    /// Train the autoencoder and pick one candidate bottom per cluster.
    Preprocess,
    /// Train the compatibility proxy and fit its score normalizer.
    TrainProxy,
    /// Train the agent and the learned baselines.
    TrainAgent {
        #[arg(long, value_enum, default_value_t = AgentChoice::All)]
        policy: AgentChoice,
    },
    /// Evaluate every trained policy on the test split.
    Evaluate,
    /// Roll out episodes of one policy against the proxy.
    Simulate(SimulateArgs),
    /// Serve recommendation sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentChoice {
    Rl,
    NoExploration,
    Lstm,
    All,
}

impl AgentChoice {
    fn kinds(self) -> Vec<PolicyKind> {
        match self {
            Self::Rl => vec![PolicyKind::Rl],
            Self::NoExploration => vec![PolicyKind::NoExploration],
            Self::Lstm => vec![PolicyKind::Lstm],
            Self::All => vec![PolicyKind::Rl, PolicyKind::NoExploration, PolicyKind::Lstm],
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "rl", value_parser = parse_policy)]
    pub policy: PolicyKind,
    /// Number of test (user, top) pairs to roll out.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long, requires = "top")]
    pub user: Option<String>,
    #[arg(long, requires = "user")]
    pub top: Option<String>,
    /// Always run the full episode instead of stopping once satisfied.
    #[arg(long)]
    pub fixed_length: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Most concurrently active sessions.
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u64).range(1..))]
    pub capacity: u64,
    /// Idle seconds before a session is evicted.
    #[arg(long, default_value_t = 1800, value_parser = clap::value_parser!(u64).range(1..))]
    pub ttl_secs: u64,
    /// Session journal (JSONL); defaults to sessions.jsonl in the workdir.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Serve human-scored sessions only, without loading the proxy.
    #[arg(long)]
    pub no_proxy: bool,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    if let Ok(p) = Profile::by_name(s) {
        return Ok(p);
    }
    let text = std::fs::read(s).map_err(|_| format!("{s:?} is neither tiny, desk, full nor a readable JSON file"))?;
    let p: Profile = serde_json::from_slice(&text).map_err(|e| format!("{s}: {e}"))?;
    p.validate().map_err(|e| format!("{s}: {e}"))?;
    Ok(p)
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse()
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir);
    let requested = cli.profile.as_ref();
    let seed = cli.seed;
    match cli.command {
        Command::Synth => {
            let profile = cli.profile.clone().unwrap_or_else(Profile::desk);
            let ds = stages::synth(&wd, &profile, seed)?;
            println!(
                "synth: {} tops, {} bottoms, {} users, {}/{}/{} quadruples -> {}",
                ds.tops.len(),
                ds.bottoms.len(),
                ds.users.len(),
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                wd.path(DATASET_DIR).display()
            );
        }
        Command::Preprocess => {
            stages::preprocess(&wd, requested, seed)?;
            println!("preprocess: candidates -> {}", wd.path(PREPROCESS_DIR).display());
        }
        Command::TrainProxy => {
            stages::train_proxy(&wd, requested, seed)?;
            let m = wd.read_manifest(PROXY_DIR)?;
            println!("train-proxy: validation AUC {} -> {}", m.config["final_val_auc"], wd.path(PROXY_DIR).display());
        }
        Command::TrainAgent { policy } => {
            let kinds = policy.kinds();
            stages::train_agent(&wd, requested, seed, &kinds)?;
            for k in kinds {
                println!("train-agent: {k} -> {}", wd.path(Workdir::agent_dir(k)?).display());
            }
        }
        Command::Evaluate => {
            let report = stages::evaluate(&wd, requested, seed)?;
            for p in &report.policies {
                println!(
                    "{:<15} HN {:.3}  HP {:.3}  distinct {}",
                    p.policy.as_str(),
                    p.hn,
                    p.hp,
                    p.distinct_bottoms
                );
            }
        }
        Command::Simulate(a) => {
            let opts = SimulateOptions {
                policy: a.policy,
                episodes: a.episodes as usize,
                pair: a.user.zip(a.top),
                stop: if a.fixed_length { StopRule::FixedLength } else { StopRule::interactive() },
            };
            let logs = stages::simulate(&wd, requested, seed, &opts)?;
            let steps: usize = logs.iter().map(|l| l.steps.len()).sum();
            let satisfied = logs.iter().filter(|l| l.satisfied).count();
            println!("simulate: {} episodes, {steps} steps, {satisfied} satisfied", logs.len());
        }
        Command::Serve(a) => serve(&wd, requested, seed, a)?,
    }
    Ok(())
}

fn serve(wd: &Workdir, requested: Option<&Profile>, seed: u64, a: ServeArgs) -> Result<()> {
    let profile = wd.profile_matching(requested)?;
    let engine = Engine::from_workdir(wd, !a.no_proxy)?;
    let journal_path = a.journal.unwrap_or_else(|| wd.path(JOURNAL_FILE));
    let journal = Journal::open(&journal_path).map_err(|e| ArtifactError::write(&journal_path, e))?;
    let cfg = SessionConfig {
        capacity: a.capacity as usize,
        ttl: Duration::from_secs(a.ttl_secs),
        ..SessionConfig::new(profile.agent.episode_len)
    };
    let mut inputs = vec![DATASET_DIR, PREPROCESS_DIR, AGENT_DIR];
    if !a.no_proxy {
        inputs.push(PROXY_DIR);
    }
    wd.write_manifest(
        "serve",
        "serve",
        &profile,
        seed,
        json!({
            "addr": a.addr.to_string(),
            "capacity": cfg.capacity,
            "ttl_secs": a.ttl_secs,
            "max_steps": cfg.max_steps,
            "journal": journal_path.display().to_string(),
            "proxy_mode": !a.no_proxy,
        }),
        &inputs,
        &[],
    )?;
    let manager = Arc::new(SessionManager::new(Arc::new(engine), cfg, Some(journal)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| ArtifactError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .map_err(|e| ArtifactError::Runtime(format!("cannot bind {}: {e}", a.addr)))?;
        tracing::info!("listening on {}", a.addr);
        let sweeper = Arc::clone(&manager);
        let period = (cfg.ttl / 2).clamp(Duration::from_millis(100), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                if let Err(e) = sweeper.evict_expired() {
                    tracing::warn!("eviction failed: {e}");
                }
            }
        });
        axum::serve(listener, crate::api::router(manager))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ArtifactError::Runtime(e.to_string()))
    })
}
