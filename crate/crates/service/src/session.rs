//! Live recommendation sessions on top of the episode driver.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use iterec_core::agent::{
    ActionCatalog, DqnPolicy, Episode, Policy, PolicyKind, ProxyScorer, Scored, StepRecord, StopRule,
};
use iterec_core::data::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{self, Workdir};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("unknown top {0:?}")]
    UnknownTop(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session capacity of {0} reached")]
    Capacity(usize),
    #[error("{0}")]
    InvalidScore(String),
    #[error("no pending recommendation in session {0:?}")]
    NoPending(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownTop(_) => "unknown_top",
            Self::UnknownSession(_) => "unknown_session",
            Self::Capacity(_) => "capacity",
            Self::InvalidScore(_) => "invalid_score",
            Self::NoPending(_) => "no_pending",
            Self::BadRequest(_) => "bad_request",
            Self::Internal(_) => "internal",
        }
    }
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;

fn internal(e: impl ToString) -> SessionError {
    SessionError::Internal(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The server scores each proposal with the proxy for `user_tag`.
    Proxy,
    /// The client supplies every score.
    Human,
}

/// Frozen models shared by all sessions.
pub struct Engine {
    pub dataset: Dataset,
    pub catalog: ActionCatalog,
    pub policy: DqnPolicy,
    pub scorer: Option<ProxyScorer>,
}

impl Engine {
    /// Loads the trained agent; the proxy is optional and only needed for
    /// proxy-mode sessions.
    pub fn from_workdir(wd: &Workdir, with_proxy: bool) -> artifacts::Result<Self> {
        let dataset = wd.dataset()?;
        let (catalog, _) = wd.catalog(&dataset)?;
        let (q, _) = wd.agent(PolicyKind::Rl, &catalog)?;
        let scorer = if with_proxy { Some(wd.scorer(&dataset, &catalog)?) } else { None };
        Ok(Self {
            policy: DqnPolicy::greedy(q, PolicyKind::Rl),
            dataset,
            catalog,
            scorer,
        })
    }

    pub fn bottom_view(&self, action: usize) -> BottomView {
        let id = self.catalog.bottom_id(action);
        BottomView {
            id: id.to_owned(),
            cluster: self.catalog.cluster(action),
            image_url: self.dataset.garment(id).and_then(|g| g.image_url.clone()),
            swatch: swatch(self.catalog.feature(action)),
        }
    }
}

/// Display colour for garments without images, from the first feature
/// dimensions.
pub fn swatch(feature: &[f64]) -> String {
    let channel = |i: usize| {
        let v = feature.get(i).copied().unwrap_or(0.0);
        (255.0 / (1.0 + (-3.0 * v).exp())).round() as u8
    };
    format!("#{:02x}{:02x}{:02x}", channel(0), channel(1), channel(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottomView {
    pub id: String,
    pub cluster: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    pub swatch: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub top_id: String,
    pub mode: Mode,
    #[serde(default)]
    pub user_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateReply {
    pub session_id: String,
    /// 1-based index of the recommendation in `bottom`.
    pub step: usize,
    pub bottom: BottomView,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FeedbackRequest {
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub steps: usize,
    pub satisfied: bool,
    pub last_score: Option<f64>,
    pub best_score: Option<f64>,
    pub best_bottom: Option<String>,
    pub total_reward: f64,
}

impl HistorySummary {
    fn of(steps: &[StepRecord], satisfied: bool) -> Self {
        let best = steps
            .iter()
            .fold(None::<&StepRecord>, |b, s| match b {
                Some(b) if b.normalized_score >= s.normalized_score => Some(b),
                _ => Some(s),
            });
        Self {
            steps: steps.len(),
            satisfied,
            last_score: steps.last().map(|s| s.normalized_score),
            best_score: best.map(|s| s.normalized_score),
            best_bottom: best.map(|s| s.bottom_id.clone()),
            total_reward: steps.iter().map(|s| s.reward).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReply {
    pub done: bool,
    /// Index of `bottom` when one is pending, else the number of steps taken.
    pub step: usize,
    /// Next recommendation; absent once the session is done.
    pub bottom: Option<BottomView>,
    /// The feedback as recorded (server-computed in proxy mode).
    pub feedback: Scored,
    pub history_summary: HistorySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub top_id: String,
    pub mode: Mode,
    pub user_tag: Option<String>,
    pub policy: PolicyKind,
    pub step: usize,
    pub done: bool,
    pub pending: Option<BottomView>,
    pub history: Vec<StepRecord>,
    pub history_summary: HistorySummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    /// Most concurrently active (unfinished) sessions.
    pub capacity: usize,
    /// Idle time after which a session is dropped.
    pub ttl: Duration,
    pub max_steps: usize,
    pub stop: StopRule,
}

impl SessionConfig {
    pub fn new(max_steps: usize) -> Self {
        Self {
            capacity: 1024,
            ttl: Duration::from_secs(30 * 60),
            max_steps,
            stop: StopRule::interactive(),
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent<'a> {
    Created {
        session_id: &'a str,
        top_id: &'a str,
        mode: Mode,
        user_tag: Option<&'a str>,
    },
    Proposed {
        session_id: &'a str,
        step: usize,
        bottom_id: &'a str,
    },
    Feedback {
        session_id: &'a str,
        #[serde(flatten)]
        record: &'a StepRecord,
        done: bool,
    },
    Evicted {
        session_id: &'a str,
        steps: usize,
    },
}

#[derive(Serialize)]
struct JournalLine<'a> {
    ts_ms: u128,
    #[serde(flatten)]
    event: JournalEvent<'a>,
}

/// Append-only JSONL log of session events.
pub struct Journal {
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn append(&self, event: JournalEvent<'_>) -> Result<()> {
        let line = JournalLine {
            ts_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            event,
        };
        let mut bytes = serde_json::to_vec(&line).map_err(internal)?;
        bytes.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(&bytes).and_then(|_| f.flush()).map_err(internal)
    }
}

pub type Clock = Arc<dyn Fn() -> Instant + Send + Sync>;

struct Session {
    id: String,
    top: String,
    mode: Mode,
    user_tag: Option<String>,
    episode: Episode,
    rng: ChaCha8Rng,
    last_seen: Instant,
    replies: HashMap<String, FeedbackReply>,
}

pub struct SessionManager {
    engine: Arc<Engine>,
    cfg: SessionConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    journal: Option<Journal>,
    clock: Clock,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl SessionManager {
    pub fn new(engine: Arc<Engine>, cfg: SessionConfig, journal: Option<Journal>) -> Self {
        Self::with_clock(engine, cfg, journal, Arc::new(Instant::now))
    }

    pub fn with_clock(engine: Arc<Engine>, cfg: SessionConfig, journal: Option<Journal>, clock: Clock) -> Self {
        Self {
            engine,
            cfg,
            sessions: Mutex::new(HashMap::new()),
            journal,
            clock,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    fn log(&self, event: JournalEvent<'_>) -> Result<()> {
        self.journal.as_ref().map_or(Ok(()), |j| j.append(event))
    }

    /// Drops idle sessions; returns how many were removed.
    pub fn evict_expired(&self) -> Result<usize> {
        let now = (self.clock)();
        let expired: Vec<(String, Arc<Mutex<Session>>)> = {
            let mut map = lock(&self.sessions);
            let ids: Vec<String> = map
                .iter()
                .filter(|(_, s)| now.duration_since(lock(s).last_seen) >= self.cfg.ttl)
                .map(|(id, _)| id.clone())
                .collect();
            ids.into_iter().filter_map(|id| map.remove(&id).map(|s| (id, s))).collect()
        };
        for (id, s) in &expired {
            let steps = lock(s).episode.log().steps.len();
            self.log(JournalEvent::Evicted { session_id: id, steps })?;
        }
        Ok(expired.len())
    }

    /// Sessions that still expect feedback.
    pub fn active(&self) -> usize {
        lock(&self.sessions).values().filter(|s| !lock(s).episode.is_done()).count()
    }

    pub fn len(&self) -> usize {
        lock(&self.sessions).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, req: CreateRequest) -> Result<CreateReply> {
        let engine = &self.engine;
        if engine.dataset.top(&req.top_id).is_none() {
            return Err(SessionError::UnknownTop(req.top_id));
        }
        let user = match (req.mode, &req.user_tag) {
            (Mode::Proxy, None) => return Err(SessionError::BadRequest("proxy mode needs a user_tag".into())),
            (Mode::Proxy, Some(_)) if engine.scorer.is_none() => {
                return Err(SessionError::BadRequest("proxy mode is not enabled on this server".into()))
            }
            (_, tag) => tag.clone().unwrap_or_default(),
        };
        self.evict_expired()?;
        if self.active() >= self.cfg.capacity {
            return Err(SessionError::Capacity(self.cfg.capacity));
        }
        let policy: &dyn Policy = &engine.policy;
        let mut episode = Episode::start(
            policy,
            &engine.catalog,
            &engine.dataset,
            &user,
            &req.top_id,
            self.cfg.max_steps,
            self.cfg.stop,
        )
        .map_err(internal)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let action = episode.propose(policy, &mut rng).map_err(internal)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.log(JournalEvent::Created {
            session_id: &id,
            top_id: &req.top_id,
            mode: req.mode,
            user_tag: req.user_tag.as_deref(),
        })?;
        self.log(JournalEvent::Proposed {
            session_id: &id,
            step: 1,
            bottom_id: engine.catalog.bottom_id(action),
        })?;
        let session = Session {
            id: id.clone(),
            top: req.top_id,
            mode: req.mode,
            user_tag: req.user_tag,
            episode,
            rng,
            last_seen: (self.clock)(),
            replies: HashMap::new(),
        };
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(CreateReply {
            session_id: id,
            step: 1,
            bottom: engine.bottom_view(action),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        let s = lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))?;
        if (self.clock)().duration_since(lock(&s).last_seen) >= self.cfg.ttl {
            self.evict_expired()?;
            return Err(SessionError::UnknownSession(id.to_owned()));
        }
        Ok(s)
    }

    pub fn feedback(&self, id: &str, req: FeedbackRequest) -> Result<FeedbackReply> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        s.last_seen = (self.clock)();
        if let Some(reply) = req.idempotency_key.as_ref().and_then(|k| s.replies.get(k)) {
            return Ok(reply.clone());
        }
        let Some(action) = s.episode.pending() else {
            return Err(SessionError::NoPending(id.to_owned()));
        };
        let engine = &self.engine;
        let scored = match (s.mode, req.score) {
            (Mode::Proxy, Some(_)) => {
                return Err(SessionError::BadRequest("proxy sessions are scored by the server; omit score".into()))
            }
            (Mode::Proxy, None) => {
                let scorer = engine.scorer.as_ref().ok_or_else(|| internal("proxy scorer unavailable"))?;
                scorer
                    .score(s.user_tag.as_deref().unwrap_or_default(), &s.top, action)
                    .map_err(internal)?
            }
            (Mode::Human, None) => return Err(SessionError::InvalidScore("score is required".into())),
            (Mode::Human, Some(p)) if !(0.0..=1.0).contains(&p) => {
                return Err(SessionError::InvalidScore(format!("score must lie in [0, 1], got {p}")))
            }
            (Mode::Human, Some(p)) => Scored { raw: p, normalized: p },
        };
        let policy: &dyn Policy = &engine.policy;
        let s = &mut *s;
        let done = s.episode.record(policy, &engine.catalog, scored).map_err(internal)?;
        let record = s.episode.log().steps.last().cloned().ok_or_else(|| internal("step not recorded"))?;
        self.log(JournalEvent::Feedback {
            session_id: &s.id,
            record: &record,
            done,
        })?;
        let (step, bottom) = if done {
            (record.step, None)
        } else {
            let next = s.episode.propose(policy, &mut s.rng).map_err(internal)?;
            self.log(JournalEvent::Proposed {
                session_id: &s.id,
                step: record.step + 1,
                bottom_id: engine.catalog.bottom_id(next),
            })?;
            (record.step + 1, Some(engine.bottom_view(next)))
        };
        let log = s.episode.log();
        let reply = FeedbackReply {
            done,
            step,
            bottom,
            feedback: Scored {
                raw: record.raw_score,
                normalized: record.normalized_score,
            },
            history_summary: HistorySummary::of(&log.steps, log.satisfied),
        };
        if let Some(k) = req.idempotency_key {
            s.replies.insert(k, reply.clone());
        }
        Ok(reply)
    }

    pub fn get(&self, id: &str) -> Result<SessionView> {
        let handle = self.session(id)?;
        let s = lock(&handle);
        let log = s.episode.log();
        let pending = s.episode.pending();
        Ok(SessionView {
            session_id: s.id.clone(),
            top_id: s.top.clone(),
            mode: s.mode,
            user_tag: s.user_tag.clone(),
            policy: log.policy,
            step: pending.map_or(log.steps.len(), |_| log.steps.len() + 1),
            done: s.episode.is_done(),
            pending: pending.map(|a| self.engine.bottom_view(a)),
            history: log.steps.clone(),
            history_summary: HistorySummary::of(&log.steps, log.satisfied),
        })
    }
}
