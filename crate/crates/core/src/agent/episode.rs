use std::collections::HashMap;
use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{quantize_feedback, reward, AgentError, EpisodeContext, Policy, PolicyKind, Result, SATISFACTION_THRESHOLD};
use crate::data::{Category, Dataset};
use crate::preprocess::CandidateSet;
use crate::proxy::{Projected, Proxy};

/// Candidate bottoms with their features, indexed by action id.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCatalog {
    pub candidates: CandidateSet,
    features: Vec<Vec<f64>>,
    hash: String,
}

impl ActionCatalog {
    pub fn new(dataset: &Dataset, candidates: CandidateSet) -> Result<Self> {
        if candidates.is_empty() {
            return Err(AgentError::Config("empty candidate set".into()));
        }
        let features = candidates
            .bottoms
            .iter()
            .map(|id| match dataset.garment(id) {
                Some(g) if g.category == Category::Bottom => Ok(g.feature.clone()),
                _ => Err(AgentError::UnknownGarment(id.clone())),
            })
            .collect::<Result<Vec<_>>>()?;
        let hash = candidates.hash();
        Ok(Self {
            candidates,
            features,
            hash,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn bottom_id(&self, action: usize) -> &str {
        &self.candidates.bottoms[action]
    }

    pub fn cluster(&self, action: usize) -> usize {
        self.candidates.clusters[action]
    }

    pub fn feature(&self, action: usize) -> &[f64] {
        &self.features[action]
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }
}

/// One scored proposal: the raw compatibility (for metrics) and the
/// normalized feedback (for the agent).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub raw: f64,
    pub normalized: f64,
}

/// Anything that can rate a proposed action: the proxy, a scripted test
/// double, or a human relayed through the service.
pub trait FeedbackSource {
    fn feedback(&mut self, user: &str, top: &str, action: usize) -> Result<Scored>;
}

/// The proxy with every garment projection precomputed. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct ProxyScorer {
    proxy: Proxy,
    tops: HashMap<String, Projected>,
    bottoms: Vec<Projected>,
    bottom_ids: Vec<String>,
}

impl ProxyScorer {
    pub fn new(proxy: Proxy, dataset: &Dataset, catalog: &ActionCatalog) -> Result<Self> {
        let tops = dataset
            .tops
            .iter()
            .map(|id| Ok((id.clone(), proxy.model.project_top(&dataset.garments[id])?)))
            .collect::<Result<HashMap<_, _>>>()?;
        let bottom_ids: Vec<String> = catalog.candidates.bottoms.clone();
        let bottoms = bottom_ids
            .iter()
            .map(|id| Ok(proxy.model.project_bottom(&dataset.garments[id])?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            proxy,
            tops,
            bottoms,
            bottom_ids,
        })
    }

    pub fn proxy(&self) -> &Proxy {
        &self.proxy
    }

    pub fn score(&self, user: &str, top: &str, action: usize) -> Result<Scored> {
        let t = self.tops.get(top).ok_or_else(|| AgentError::UnknownGarment(top.to_owned()))?;
        let b = self.bottoms.get(action).ok_or(AgentError::ActionOutOfRange {
            action,
            n: self.bottoms.len(),
        })?;
        let raw = self.proxy.model.score_projected(user, t, b, &self.bottom_ids[action]);
        Ok(Scored {
            raw,
            normalized: quantize_feedback(self.proxy.normalizer.normalize(raw)),
        })
    }

    /// Raw score of an arbitrary dataset bottom (e.g. a ground-truth positive).
    pub fn score_bottom(&self, dataset: &Dataset, user: &str, top: &str, bottom: &str) -> Result<f64> {
        let t = self.tops.get(top).ok_or_else(|| AgentError::UnknownGarment(top.to_owned()))?;
        let g = dataset
            .garment(bottom)
            .ok_or_else(|| AgentError::UnknownGarment(bottom.to_owned()))?;
        let b = self.proxy.model.project_bottom(g)?;
        Ok(self.proxy.model.score_projected(user, t, &b, bottom))
    }
}

impl FeedbackSource for &ProxyScorer {
    fn feedback(&mut self, user: &str, top: &str, action: usize) -> Result<Scored> {
        self.score(user, top, action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopRule {
    /// Always run the full episode length.
    FixedLength,
    /// Also stop once feedback reaches `threshold`.
    Interactive { threshold: f64 },
}

impl StopRule {
    pub fn interactive() -> Self {
        Self::Interactive {
            threshold: SATISFACTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub action: usize,
    pub bottom_id: String,
    pub raw_score: f64,
    pub normalized_score: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub user: String,
    pub top: String,
    pub policy: PolicyKind,
    pub steps: Vec<StepRecord>,
    pub satisfied: bool,
    /// Set when the feedback source failed; `steps` is then partial.
    pub aborted: Option<String>,
}

impl EpisodeLog {
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Stepwise episode driver shared by batch rollouts and live sessions.
#[derive(Debug, Clone)]
pub struct Episode {
    ctx: EpisodeContext,
    log: EpisodeLog,
    n_steps: usize,
    stop: StopRule,
    pending: Option<usize>,
    done: bool,
}

impl Episode {
    pub fn start(
        policy: &dyn Policy,
        catalog: &ActionCatalog,
        dataset: &Dataset,
        user: &str,
        top: &str,
        n_steps: usize,
        stop: StopRule,
    ) -> Result<Self> {
        if policy.n_actions() != catalog.len() {
            return Err(AgentError::Config(format!(
                "policy has {} actions, catalog {}",
                policy.n_actions(),
                catalog.len()
            )));
        }
        if n_steps == 0 || n_steps > catalog.len() {
            return Err(AgentError::EpisodeTooLong {
                n: n_steps,
                actions: catalog.len(),
            });
        }
        let top_g = dataset
            .top(top)
            .ok_or_else(|| AgentError::UnknownGarment(top.to_owned()))?;
        Ok(Self {
            ctx: policy.begin(&top_g.feature)?,
            log: EpisodeLog {
                user: user.to_owned(),
                top: top.to_owned(),
                policy: policy.kind(),
                steps: Vec::with_capacity(n_steps),
                satisfied: false,
                aborted: None,
            },
            n_steps,
            stop,
            pending: None,
            done: false,
        })
    }

    pub fn context(&self) -> &EpisodeContext {
        &self.ctx
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Picks the next recommendation. At most one may be pending.
    pub fn propose(&mut self, policy: &dyn Policy, rng: &mut dyn RngCore) -> Result<usize> {
        if self.done {
            return Err(AgentError::EpisodeFinished);
        }
        if let Some(a) = self.pending {
            return Ok(a);
        }
        let a = policy.choose(&self.ctx, rng)?;
        if self.ctx.state.is_proposed(a) {
            return Err(AgentError::DuplicateAction(a));
        }
        self.pending = Some(a);
        Ok(a)
    }

    /// Applies feedback for the pending action. Returns whether the episode
    /// has ended. The normalized score is quantized first.
    pub fn record(&mut self, policy: &dyn Policy, catalog: &ActionCatalog, scored: Scored) -> Result<bool> {
        let action = self.pending.ok_or(AgentError::NoPending)?;
        if !(0.0..=1.0).contains(&scored.normalized) {
            return Err(AgentError::InvalidFeedback(scored.normalized));
        }
        let scored = Scored {
            normalized: quantize_feedback(scored.normalized),
            ..scored
        };
        let prev = self.log.steps.last().map(|s| s.normalized_score);
        policy.observe(&mut self.ctx, action, scored.normalized, catalog.feature(action))?;
        self.pending = None;
        self.log.steps.push(StepRecord {
            step: self.log.steps.len() + 1,
            action,
            bottom_id: catalog.bottom_id(action).to_owned(),
            raw_score: scored.raw,
            normalized_score: scored.normalized,
            reward: reward(prev, scored.normalized),
        });
        if let StopRule::Interactive { threshold } = self.stop {
            if scored.normalized >= threshold {
                self.log.satisfied = true;
                self.done = true;
            }
        }
        if self.log.steps.len() >= self.n_steps {
            self.done = true;
        }
        Ok(self.done)
    }

    pub fn abort(&mut self, reason: String) {
        self.log.aborted = Some(reason);
        self.pending = None;
        self.done = true;
    }
}

/// Rolls out one episode. A failing feedback source ends the episode with a
/// flagged partial log rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    policy: &dyn Policy,
    catalog: &ActionCatalog,
    dataset: &Dataset,
    source: &mut dyn FeedbackSource,
    user: &str,
    top: &str,
    n_steps: usize,
    stop: StopRule,
    rng: &mut dyn RngCore,
) -> Result<EpisodeLog> {
    let mut ep = Episode::start(policy, catalog, dataset, user, top, n_steps, stop)?;
    while !ep.is_done() {
        let a = ep.propose(policy, rng)?;
        match source.feedback(user, top, a) {
            Ok(scored) => {
                ep.record(policy, catalog, scored)?;
            }
            Err(e) => ep.abort(e.to_string()),
        }
    }
    Ok(ep.into_log())
}

#[derive(Serialize)]
struct StepLine<'a> {
    episode: usize,
    user: &'a str,
    top: &'a str,
    policy: PolicyKind,
    #[serde(flatten)]
    step: &'a StepRecord,
}

/// One JSON object per step.
pub fn write_jsonl<W: Write>(mut w: W, logs: &[EpisodeLog]) -> std::io::Result<()> {
    for (i, log) in logs.iter().enumerate() {
        for step in &log.steps {
            let line = StepLine {
                episode: i,
                user: &log.user,
                top: &log.top,
                policy: log.policy,
                step,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agent::{DqnPolicy, QNetwork, FIRST_STEP_BASELINE};
    use crate::data::{SynthConfig, SyntheticWorld};
    use crate::proxy::{GpbprConfig, GpbprModel, ScoreNormalizer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) struct Fixture {
        pub ds: Dataset,
        pub catalog: ActionCatalog,
        pub scorer: ProxyScorer,
    }

    /// Tiny world with every bottom a candidate and an untrained proxy.
    pub(crate) fn fixture(seed: u64) -> Fixture {
        let ds = SyntheticWorld::new(SynthConfig::tiny(seed)).unwrap().generate().unwrap();
        let cs = CandidateSet {
            bottoms: ds.bottoms.clone(),
            clusters: (0..ds.bottoms.len()).collect(),
        };
        let catalog = ActionCatalog::new(&ds, cs).unwrap();
        let model = GpbprModel::new(&GpbprConfig::default(), &ds, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let scores: Vec<f64> = ds
            .train
            .iter()
            .map(|q| model.personalized_score(&q.user, &ds.garments[&q.top], &ds.garments[&q.pos]).unwrap())
            .collect();
        let proxy = Proxy::new(model, ScoreNormalizer::fit(&scores).unwrap());
        let scorer = ProxyScorer::new(proxy, &ds, &catalog).unwrap();
        Fixture { ds, catalog, scorer }
    }

    struct Scripted(Vec<f64>, usize);

    impl FeedbackSource for Scripted {
        fn feedback(&mut self, _: &str, _: &str, _: usize) -> Result<Scored> {
            let v = *self.0.get(self.1).ok_or_else(|| AgentError::Feedback("script exhausted".into()))?;
            self.1 += 1;
            Ok(Scored { raw: v, normalized: v })
        }
    }

    fn random_q(f: &Fixture, seed: u64) -> DqnPolicy {
        let q = QNetwork::new(f.ds.feature_dim, &[12], f.catalog.len(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        DqnPolicy::greedy(q, PolicyKind::Rl)
    }

    #[test]
    fn scorer_matches_direct_proxy_scores() {
        let f = fixture(2);
        for (a, b) in f.catalog.candidates.bottoms.iter().enumerate() {
            let direct = f.scorer.proxy().raw_score("u002", &f.ds.garments["t004"], &f.ds.garments[b]).unwrap();
            assert_eq!(f.scorer.score("u002", "t004", a).unwrap().raw.to_bits(), direct.to_bits());
            assert_eq!(f.scorer.score_bottom(&f.ds, "u002", "t004", b).unwrap().to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn lengths_and_coverage() {
        let f = fixture(3);
        let p = random_q(&f, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut src = &f.scorer;
        let one = run_episode(&p, &f.catalog, &f.ds, &mut src, "u000", "t000", 1, StopRule::FixedLength, &mut rng).unwrap();
        assert_eq!(one.steps.len(), 1);
        let n = f.catalog.len();
        let all = run_episode(&p, &f.catalog, &f.ds, &mut src, "u000", "t000", n, StopRule::FixedLength, &mut rng).unwrap();
        let mut actions = all.actions();
        actions.sort();
        assert_eq!(actions, (0..n).collect::<Vec<_>>());
        assert!(matches!(
            Episode::start(&p, &f.catalog, &f.ds, "u000", "t000", n + 1, StopRule::FixedLength),
            Err(AgentError::EpisodeTooLong { .. })
        ));
    }

    #[test]
    fn greedy_rerun_is_identical() {
        let f = fixture(4);
        let p = random_q(&f, 2);
        let run = || {
            let mut src = &f.scorer;
            run_episode(&p, &f.catalog, &f.ds, &mut src, "u001", "t002", 10, StopRule::FixedLength, &mut ChaCha8Rng::seed_from_u64(9))
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn satisfaction_stops_interactive_episodes_only() {
        let f = fixture(5);
        let p = random_q(&f, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let script = vec![0.2, 0.96, 0.4, 0.4, 0.4];
        let log = run_episode(&p, &f.catalog, &f.ds, &mut Scripted(script.clone(), 0), "u", "t000", 5, StopRule::interactive(), &mut rng).unwrap();
        assert_eq!(log.steps.len(), 2);
        assert!(log.satisfied);
        let log = run_episode(&p, &f.catalog, &f.ds, &mut Scripted(script, 0), "u", "t000", 5, StopRule::FixedLength, &mut rng).unwrap();
        assert_eq!(log.steps.len(), 5);
        assert!(!log.satisfied);
    }

    #[test]
    fn failing_source_flags_partial_log() {
        let f = fixture(6);
        let p = random_q(&f, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = run_episode(&p, &f.catalog, &f.ds, &mut Scripted(vec![0.3, 0.6], 0), "u", "t001", 5, StopRule::FixedLength, &mut rng).unwrap();
        assert_eq!(log.steps.len(), 2);
        assert!(log.aborted.as_deref().unwrap().contains("script exhausted"));
    }

    #[test]
    fn rewards_telescope_and_state_accumulates() {
        let f = fixture(7);
        let p = DqnPolicy {
            epsilon: 0.5,
            ..random_q(&f, 5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let user = f.ds.users[rng.random_range(0..f.ds.users.len())].clone();
            let top = f.ds.tops[rng.random_range(0..f.ds.tops.len())].clone();
            let mut ep = Episode::start(&p, &f.catalog, &f.ds, &user, &top, 10, StopRule::FixedLength).unwrap();
            let mut oracle = f.ds.garments[&top].feature.clone();
            while !ep.is_done() {
                let a = ep.propose(&p, &mut rng).unwrap();
                let s = f.scorer.score(&user, &top, a).unwrap();
                ep.record(&p, &f.catalog, s).unwrap();
                for (o, x) in oracle.iter_mut().zip(f.catalog.feature(a)) {
                    *o += s.normalized * x;
                }
            }
            assert_eq!(ep.context().state.s, oracle);
            let log = ep.log();
            let total: f64 = log.steps.iter().map(|s| s.reward).sum();
            let last = log.steps.last().unwrap().normalized_score;
            assert_eq!(total, last - FIRST_STEP_BASELINE);
        }
    }

    #[test]
    fn jsonl_has_one_line_per_step() {
        let f = fixture(8);
        let p = random_q(&f, 6);
        let mut src = &f.scorer;
        let log = run_episode(&p, &f.catalog, &f.ds, &mut src, "u000", "t000", 3, StopRule::FixedLength, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[log.clone(), log]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["step"], 1);
        assert_eq!(first["policy"], "rl");
        assert!(first["raw_score"].is_number());
    }
}
