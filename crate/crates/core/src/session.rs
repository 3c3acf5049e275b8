//! Sessions: a project, an append-only event log, and at most one request
//! in flight, run on a worker thread against a working copy of the state.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assets::AssetStore;
use crate::board::{BoardError, Placement};
use crate::cancel::{CancelToken, FaultPlan};
use crate::clock::{Clock, LogicalClock};
use crate::config::{CoreConfig, IntentMode};
use crate::core_agent::{refresh_status, IntentSource, KeywordIntents, ProviderIntents, UserMessage};
use crate::event::{EventKind, EventPayload, Outcome, SessionEvent, Speaker};
use crate::model::{AgentRole, AssetRef, Block, BlockId, Element, RequestId, SessionId, Timestamp, VersionOrigin};
use crate::pipeline::{handle_request, EventSink, MemoryBackends, Resources, SessionState};
use crate::project::{load_project, project_json, save_project, Project, ProjectError};
use crate::prompts::PromptLibrary;
use crate::provider::{Providers, ScriptedProgram, ScriptedProvider};

pub const PROJECT_FILE: &str = "project.json";
pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("a request is already in flight")]
    Busy,
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("unknown upload `{0}`")]
    InvalidUpload(String),
    #[error("no such request")]
    NoSuchRequest,
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("the project brief is empty")]
    BadBrief,
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Listener = Box<dyn Fn(&SessionEvent) -> bool + Send + Sync>;

/// Append-only, broadcast event log. Sequence numbers start at 1.
#[derive(Default)]
pub struct EventLog {
    inner: Mutex<LogInner>,
    grew: Condvar,
}

#[derive(Default)]
struct LogInner {
    events: Vec<SessionEvent>,
    listeners: Vec<Listener>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &self,
        session_id: &SessionId,
        request_id: Option<&RequestId>,
        agent: AgentRole,
        timestamp: Timestamp,
        payload: EventPayload,
    ) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        let event = SessionEvent {
            event_seq: inner.events.len() as u64 + 1,
            session_id: session_id.clone(),
            request_id: request_id.cloned(),
            agent,
            timestamp,
            payload,
        };
        inner.listeners.retain(|l| l(&event));
        let seq = event.event_seq;
        inner.events.push(event);
        self.grew.notify_all();
        seq
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_seq(&self) -> u64 {
        self.len() as u64
    }

    /// Events with `event_seq >= from_seq`.
    pub fn since(&self, from_seq: u64) -> Vec<SessionEvent> {
        let inner = self.inner.lock().unwrap();
        inner.events[Self::index(from_seq).min(inner.events.len())..].to_vec()
    }

    pub fn all(&self) -> Vec<SessionEvent> {
        self.since(1)
    }

    fn index(from_seq: u64) -> usize {
        from_seq.saturating_sub(1) as usize
    }

    /// Backlog from `from_seq` and a listener for everything after it,
    /// taken atomically so nothing is missed or repeated. The listener is
    /// dropped once it returns `false`.
    pub fn subscribe_with(&self, from_seq: u64, listener: Listener) -> Vec<SessionEvent> {
        let mut inner = self.inner.lock().unwrap();
        let backlog = inner.events[Self::index(from_seq).min(inner.events.len())..].to_vec();
        inner.listeners.push(listener);
        backlog
    }

    /// Blocking cursor over the log.
    pub fn subscribe(self: &Arc<Self>, from_seq: u64) -> Subscription {
        Subscription {
            log: self.clone(),
            next: from_seq.max(1),
        }
    }

    fn wait_beyond(&self, seq: u64, timeout: Duration) -> Vec<SessionEvent> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.inner.lock().unwrap();
        while (inner.events.len() as u64) < seq {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return vec![];
            }
            inner = self.grew.wait_timeout(inner, left).unwrap().0;
        }
        inner.events[Self::index(seq)..].to_vec()
    }
}

/// Pull-style subscriber; each call returns the events it has not seen.
pub struct Subscription {
    log: Arc<EventLog>,
    next: u64,
}

impl Subscription {
    pub fn next_seq(&self) -> u64 {
        self.next
    }

    /// Waits up to `timeout` for at least one new event.
    pub fn poll(&mut self, timeout: Duration) -> Vec<SessionEvent> {
        let evs = self.log.wait_beyond(self.next, timeout);
        if let Some(last) = evs.last() {
            self.next = last.event_seq + 1;
        }
        evs
    }
}

struct LogSink<'a> {
    log: &'a EventLog,
    session: &'a SessionId,
    request: &'a RequestId,
    clock: &'a dyn Clock,
}

impl EventSink for LogSink<'_> {
    fn emit(&mut self, agent: AgentRole, payload: EventPayload) {
        self.log
            .append(self.session, Some(self.request), agent, self.clock.now(), payload);
    }
}

/// Read-only parts shared by every session of an engine.
pub struct EngineParts {
    pub config: CoreConfig,
    pub providers: Providers,
    pub prompts: PromptLibrary,
    pub clock: Arc<dyn Clock>,
    pub memory: MemoryBackends,
    pub intents: Arc<dyn IntentSource>,
}

impl EngineParts {
    /// Intent source chosen by `config.intent`.
    pub fn new(config: CoreConfig, providers: Providers, prompts: PromptLibrary, clock: Arc<dyn Clock>) -> Self {
        let prompts_arc = Arc::new(prompts.clone());
        let intents: Arc<dyn IntentSource> = match config.intent {
            IntentMode::Keyword => Arc::new(KeywordIntents),
            IntentMode::Provider => Arc::new(ProviderIntents {
                provider: providers.text.clone(),
                prompts: prompts_arc,
            }),
        };
        let memory = match config.intent {
            IntentMode::Keyword => MemoryBackends::deterministic(),
            IntentMode::Provider => MemoryBackends::with_provider(providers.light.clone()),
        };
        Self {
            config,
            providers,
            prompts,
            clock,
            memory,
            intents,
        }
    }

    /// Fully deterministic parts over a scripted program.
    pub fn scripted(program: ScriptedProgram, config: CoreConfig) -> (Self, Arc<ScriptedProvider>) {
        let provider = Arc::new(ScriptedProvider::new(program));
        let parts = Self::new(
            CoreConfig {
                intent: IntentMode::Keyword,
                ..config
            },
            Providers::scripted(provider.clone()),
            PromptLibrary::builtin(),
            Arc::new(LogicalClock::new()),
        );
        (parts, provider)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum CreateSession {
    /// A new project. Its files go in `dir`, or a fresh directory under the
    /// engine root.
    New {
        brief: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
    },
    /// An existing project file.
    Load { path: PathBuf },
}

pub struct Engine {
    parts: Arc<EngineParts>,
    root: PathBuf,
    sessions: Mutex<BTreeMap<SessionId, Arc<Session>>>,
    next_session: AtomicU64,
}

impl Engine {
    pub fn new(parts: EngineParts, root: impl Into<PathBuf>) -> Self {
        Self {
            parts: Arc::new(parts),
            root: root.into(),
            sessions: Mutex::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn parts(&self) -> &EngineParts {
        &self.parts
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_session(&self, how: CreateSession) -> Result<Arc<Session>, SessionError> {
        let id = SessionId::new(format!("session-{:06}", self.next_session.fetch_add(1, Ordering::SeqCst)));
        let (project, dir) = match how {
            CreateSession::New { brief, dir } => {
                if brief.trim().is_empty() {
                    return Err(SessionError::BadBrief);
                }
                let dir = dir.unwrap_or_else(|| self.root.join(id.as_str()));
                std::fs::create_dir_all(&dir)?;
                let mut project = Project::new(&brief, self.parts.config.window);
                refresh_status(&mut project, &self.parts.config);
                (project, dir)
            }
            CreateSession::Load { path } => {
                let project = load_project(&path)?;
                let dir = path
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(Path::new("."))
                    .to_path_buf();
                (project, dir)
            }
        };
        let brief = project.progress.project_brief.clone();
        let session = Arc::new(Session {
            id: id.clone(),
            parts: self.parts.clone(),
            assets: AssetStore::new(&dir),
            dir,
            created_at: self.parts.clock.now(),
            brief,
            state: Mutex::new(SessionState::new(project)),
            inflight: Mutex::new(None),
            idle: Condvar::new(),
            log: Arc::new(EventLog::new()),
            next_request: AtomicU64::new(1),
            fault_plan: Mutex::new(None),
            safe_points: Mutex::new(Vec::new()),
        });
        self.sessions.lock().unwrap().insert(id, session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .lock()
            .unwrap()
            .get(&SessionId::new(id))
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        self.sessions.lock().unwrap().keys().cloned().collect()
    }
}

struct Inflight {
    request_id: RequestId,
    cancel: CancelToken,
}

/// User-side changes to a block's presentation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockEdit {
    pub active_version: Option<usize>,
    pub pinned: Option<bool>,
    pub collapsed: Option<bool>,
    pub placement: Option<Placement>,
    /// Replaces the content with a new user-authored version.
    pub elements: Option<Vec<Element>>,
}

pub struct Session {
    pub id: SessionId,
    parts: Arc<EngineParts>,
    dir: PathBuf,
    assets: AssetStore,
    created_at: Timestamp,
    brief: String,
    state: Mutex<SessionState>,
    inflight: Mutex<Option<Inflight>>,
    idle: Condvar,
    log: Arc<EventLog>,
    next_request: AtomicU64,
    fault_plan: Mutex<Option<FaultPlan>>,
    safe_points: Mutex<Vec<(RequestId, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub format_version: u32,
    pub session_id: SessionId,
    pub created_at: Timestamp,
    pub brief: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMessage {
    pub event_seq: u64,
    pub timestamp: Timestamp,
    pub from: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<crate::model::Selection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uploads: Vec<AssetRef>,
}

/// Exported interaction log: every chat message plus the full event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub messages: Vec<TranscriptMessage>,
    pub events: Vec<SessionEvent>,
}

impl Session {
    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }

    pub fn config(&self) -> &CoreConfig {
        &self.parts.config
    }

    /// Committed state; never shows a request's partial work.
    pub fn snapshot(&self) -> SessionState {
        self.state.lock().unwrap().clone()
    }

    pub fn project(&self) -> Project {
        self.state.lock().unwrap().project.clone()
    }

    pub fn with_project<R>(&self, f: impl FnOnce(&Project) -> R) -> R {
        f(&self.state.lock().unwrap().project)
    }

    pub fn block(&self, id: &BlockId) -> Option<Block> {
        self.with_project(|p| p.boards.block(id).cloned())
    }

    pub fn in_flight(&self) -> Option<RequestId> {
        self.inflight.lock().unwrap().as_ref().map(|f| f.request_id.clone())
    }

    /// Safe-points each finished request passed, in request order.
    pub fn safe_points(&self) -> Vec<(RequestId, usize)> {
        self.safe_points.lock().unwrap().clone()
    }

    /// Fault to inject into the next request only.
    pub fn inject_fault(&self, plan: FaultPlan) {
        *self.fault_plan.lock().unwrap() = Some(plan);
    }

    /// Starts processing `msg` on a worker thread.
    pub fn post_message(self: &Arc<Self>, msg: UserMessage) -> Result<RequestId, SessionError> {
        let mut inflight = self.inflight.lock().unwrap();
        if inflight.is_some() {
            return Err(SessionError::Busy);
        }
        let working = {
            let state = self.state.lock().unwrap();
            if let Some(sel) = &msg.selection {
                state
                    .project
                    .boards
                    .resolve_selection(sel)
                    .map_err(|e| SessionError::InvalidSelection(e.to_string()))?;
            }
            if let Some(bad) = msg.uploads.iter().find(|a| !self.assets.exists(a)) {
                return Err(SessionError::InvalidUpload(bad.to_string()));
            }
            state.clone()
        };
        let request_id = RequestId::new(format!("req-{:06}", self.next_request.fetch_add(1, Ordering::SeqCst)));
        let cancel = CancelToken::with_plan(self.fault_plan.lock().unwrap().take());
        *inflight = Some(Inflight {
            request_id: request_id.clone(),
            cancel: cancel.clone(),
        });
        let me = self.clone();
        let rid = request_id.clone();
        std::thread::Builder::new()
            .name(format!("{}-{}", self.id, rid))
            .spawn(move || me.run(rid, msg, working, cancel))?;
        Ok(request_id)
    }

    fn run(&self, request_id: RequestId, msg: UserMessage, mut working: SessionState, cancel: CancelToken) {
        let parts = &*self.parts;
        let res = Resources {
            config: &parts.config,
            providers: &parts.providers,
            prompts: &parts.prompts,
            assets: &self.assets,
            intents: &*parts.intents,
            memory: &parts.memory,
            clock: &*parts.clock,
            cancel: &cancel,
        };
        let mut sink = LogSink {
            log: &self.log,
            session: &self.id,
            request: &request_id,
            clock: &*parts.clock,
        };
        let first = self.log.last_seq();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            handle_request(&res, &mut working, &msg, &mut sink)
        }));
        let outcome = match result {
            Ok(Ok(outcome)) => {
                *self.state.lock().unwrap() = working;
                outcome
            }
            Ok(Err(failure)) => {
                tracing::warn!(session = %self.id, request = %request_id, reason = ?failure.reason, "request rolled back");
                sink.emit(
                    AgentRole::Core,
                    EventPayload::Error {
                        reason: failure.reason,
                        detail: failure.detail.clone(),
                        task_id: failure.task_id.clone(),
                    },
                );
                failure.outcome()
            }
            Err(_) => {
                sink.emit(
                    AgentRole::Core,
                    EventPayload::Error {
                        reason: crate::event::ErrorReason::Internal,
                        detail: "internal error; request rolled back".into(),
                        task_id: None,
                    },
                );
                Outcome::Failed
            }
        };
        let emitted = self.log.last_seq() - first;
        if emitted as usize >= parts.config.event_ceiling {
            tracing::warn!(session = %self.id, emitted, "request exceeded the event ceiling");
        }
        self.safe_points
            .lock()
            .unwrap()
            .push((request_id.clone(), cancel.checkpoints()));
        // done and idleness become visible together
        let mut inflight = self.inflight.lock().unwrap();
        self.log.append(
            &self.id,
            Some(&request_id),
            AgentRole::Core,
            parts.clock.now(),
            EventPayload::Done { outcome },
        );
        *inflight = None;
        self.idle.notify_all();
    }

    /// Cancels the in-flight request if its id is `request_id`.
    pub fn cancel(&self, request_id: &RequestId) -> Result<(), SessionError> {
        match &*self.inflight.lock().unwrap() {
            Some(f) if &f.request_id == request_id => {
                f.cancel.cancel();
                Ok(())
            }
            _ => Err(SessionError::NoSuchRequest),
        }
    }

    /// Blocks until no request is in flight; `false` on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let guard = self.inflight.lock().unwrap();
        let (guard, res) = self
            .idle
            .wait_timeout_while(guard, timeout, |f| f.is_some())
            .unwrap();
        drop(guard);
        !res.timed_out()
    }

    /// Posts and waits for the request to finish. Returns its outcome.
    pub fn send(self: &Arc<Self>, msg: UserMessage, timeout: Duration) -> Result<Option<Outcome>, SessionError> {
        let rid = self.post_message(msg)?;
        if !self.wait_idle(timeout) {
            return Ok(None);
        }
        Ok(self.log.all().iter().rev().find_map(|e| match &e.payload {
            EventPayload::Done { outcome } if e.request_id.as_ref() == Some(&rid) => Some(*outcome),
            _ => None,
        }))
    }

    /// Applies a user edit to a block. Only allowed while idle.
    pub fn update_block(&self, id: &BlockId, edit: BlockEdit) -> Result<SessionEvent, SessionError> {
        let inflight = self.inflight.lock().unwrap();
        if inflight.is_some() {
            return Err(SessionError::Busy);
        }
        let mut state = self.state.lock().unwrap();
        let mut next = state.project.clone();
        let boards = &mut next.boards;
        if let Some(elements) = edit.elements {
            boards.add_version(id, elements, VersionOrigin::UserEdit, self.parts.clock.now())?;
        }
        if let Some(v) = edit.active_version {
            boards.set_active_version(id, v)?;
        }
        if let Some(p) = edit.pinned {
            boards.set_pinned(id, p)?;
        }
        if let Some(c) = edit.collapsed {
            boards.set_collapsed(id, c)?;
        }
        if let Some(pl) = edit.placement {
            boards.set_placement(id, pl)?;
        }
        let block = boards.block(id).ok_or_else(|| BoardError::UnknownBlock(id.clone()))?.clone();
        let placement = boards.placement(id).unwrap_or_default();
        state.project = next;
        let seq = self.log.append(
            &self.id,
            None,
            AgentRole::Core,
            self.parts.clock.now(),
            EventPayload::BlockUpdated {
                block_id: block.block_id.clone(),
                stage: block.stage,
                active_version: block.active_version,
                pinned: block.pinned,
                collapsed: block.collapsed,
                placement,
            },
        );
        Ok(self.log.since(seq).remove(0))
    }

    /// Writes the committed project to `project.json` in the session
    /// directory (or `path`) and returns where it went.
    pub fn save(&self, path: Option<&Path>) -> Result<PathBuf, SessionError> {
        let path = path.map_or_else(|| self.dir.join(PROJECT_FILE), Path::to_path_buf);
        let project = self.project();
        save_project(&path, &project, &self.assets)?;
        Ok(path)
    }

    pub fn project_json(&self) -> String {
        project_json(&self.project())
    }

    pub fn transcript(&self) -> Transcript {
        let events = self.log.all();
        let messages = events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::ChatMessage {
                    from,
                    text,
                    selection,
                    uploads,
                } => Some(TranscriptMessage {
                    event_seq: e.event_seq,
                    timestamp: e.timestamp,
                    from: *from,
                    text: text.clone(),
                    selection: selection.clone(),
                    uploads: uploads.clone(),
                }),
                _ => None,
            })
            .collect();
        Transcript {
            header: TranscriptHeader {
                format_version: TRANSCRIPT_VERSION,
                session_id: self.id.clone(),
                created_at: self.created_at,
                brief: self.brief.clone(),
            },
            messages,
            events,
        }
    }

    pub fn export_transcript(&self, path: &Path) -> Result<(), SessionError> {
        let json = serde_json::to_string_pretty(&self.transcript()).expect("transcript serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Kinds of all logged events, in order.
    pub fn event_kinds(&self) -> Vec<EventKind> {
        self.log.all().iter().map(|e| e.kind()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArtifactKind, Selection, TaskKind};
    use crate::provider::ScriptedRule;
    use serde_json::json;

    const WAIT: Duration = Duration::from_secs(10);

    fn engine(rules: Vec<ScriptedRule>) -> (Engine, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let (parts, _) = EngineParts::scripted(ScriptedProgram::new(rules), CoreConfig::default());
        (Engine::new(parts, dir.path()), dir)
    }

    fn text(t: &str) -> UserMessage {
        UserMessage {
            text: t.into(),
            ..UserMessage::default()
        }
    }

    fn concepts() -> ScriptedRule {
        ScriptedRule::text(
            AgentRole::Ideation,
            TaskKind::Artifact(ArtifactKind::StoryConcept),
            json!({"elements":[
                {"kind":"concept-option","text":"An architect of dreams loses her blueprint.","attributes":{"title":"Concept 1"}},
                {"kind":"concept-option","text":"A city built each night from sleepers' memories.","attributes":{"title":"Concept 2"}},
                {"kind":"concept-option","text":"The last dream before the city wakes.","attributes":{"title":"Concept 3"}}
            ]}),
        )
    }

    #[test]
    fn new_session_is_quiet_and_records_the_brief() {
        let (e, _d) = engine(vec![]);
        let s = e
            .create_session(CreateSession::New {
                brief: "a 5-minute 2D animation about a dream architect".into(),
                dir: None,
            })
            .unwrap();
        assert!(s.log().is_empty());
        let p = s.project();
        assert_eq!(p.current_stage, crate::model::Stage::Planning);
        assert_eq!(p.progress.project_brief, "a 5-minute 2D animation about a dream architect");
        let t = s.transcript();
        assert!(t.messages.is_empty() && t.events.is_empty());
        assert!(matches!(
            e.create_session(CreateSession::New { brief: "  ".into(), dir: None }),
            Err(SessionError::BadBrief)
        ));
        assert!(matches!(
            e.create_session(CreateSession::Load { path: "/nonexistent/p.json".into() }),
            Err(SessionError::Project(ProjectError::Io { .. }))
        ));
    }

    #[test]
    fn approval_then_publication() {
        let (e, _d) = engine(vec![concepts()]);
        let s = e
            .create_session(CreateSession::New { brief: "a dream architect".into(), dir: None })
            .unwrap();
        assert_eq!(s.send(text("give me three story concepts"), WAIT).unwrap(), Some(Outcome::Completed));
        let kinds = s.event_kinds();
        assert_eq!(kinds[0], EventKind::AgentStatus);
        assert!(kinds.contains(&EventKind::ApprovalRequest));
        assert!(!kinds.contains(&EventKind::StageChanged));
        s.send(text("yes, go ahead"), WAIT).unwrap();
        let p = s.project();
        assert_eq!(p.current_stage, crate::model::Stage::Ideation);
        assert!(p.progress.has(ArtifactKind::StoryConcept));
        let seqs: Vec<u64> = s.log().all().iter().map(|e| e.event_seq).collect();
        assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
        assert_eq!(s.log().all().last().unwrap().kind(), EventKind::Done);
    }

    #[test]
    fn busy_and_cancel_restore_state() {
        let (e, _d) = engine(vec![concepts().delay(5_000)]);
        let s = e
            .create_session(CreateSession::New { brief: "a dream architect".into(), dir: None })
            .unwrap();
        s.send(text("give me three story concepts"), WAIT).unwrap();
        let before = s.snapshot();
        let rid = s.post_message(text("yes")).unwrap();
        assert!(matches!(s.post_message(text("again")), Err(SessionError::Busy)));
        assert!(matches!(s.cancel(&RequestId::new("req-999999")), Err(SessionError::NoSuchRequest)));
        // let the request reach the provider before cancelling
        std::thread::sleep(Duration::from_millis(50));
        s.cancel(&rid).unwrap();
        assert!(s.wait_idle(WAIT));
        let after = s.snapshot();
        assert_eq!(project_json(&after.project), project_json(&before.project));
        assert_eq!(after, before);
        let evs = s.log().all();
        let n = evs.len();
        assert!(matches!(evs[n - 1].payload, EventPayload::Done { outcome: Outcome::Cancelled }));
        assert!(matches!(
            evs[n - 2].payload,
            EventPayload::Error { reason: crate::event::ErrorReason::Cancelled, .. }
        ));
        assert!(matches!(s.cancel(&rid), Err(SessionError::NoSuchRequest)));
    }

    #[test]
    fn selection_is_validated_and_echoed() {
        let (e, _d) = engine(vec![concepts()]);
        let s = e
            .create_session(CreateSession::New { brief: "a dream architect".into(), dir: None })
            .unwrap();
        let bad = UserMessage {
            text: "make it darker".into(),
            selection: Some(Selection::whole(BlockId::new("blk-424242"), 0)),
            uploads: vec![],
        };
        assert!(matches!(s.post_message(bad), Err(SessionError::InvalidSelection(_))));
        assert!(s.log().is_empty());
        s.send(text("three story concepts"), WAIT).unwrap();
        s.send(text("yes"), WAIT).unwrap();
        let block = s.project().boards.blocks().next().unwrap().block_id.clone();
        let sel = Selection::whole(block, 0);
        let msg = UserMessage {
            text: "tell me more".into(),
            selection: Some(sel.clone()),
            uploads: vec![],
        };
        s.send(msg, WAIT).unwrap();
        let echoed = s.log().all().into_iter().rev().find_map(|e| match e.payload {
            EventPayload::ChatMessage { from: Speaker::User, selection, .. } => selection,
            _ => None,
        });
        assert_eq!(echoed, Some(sel));
    }

    #[test]
    fn subscribers_see_the_same_gapless_sequence() {
        let (e, _d) = engine(vec![concepts()]);
        let s = e
            .create_session(CreateSession::New { brief: "a dream architect".into(), dir: None })
            .unwrap();
        let mut a = s.log().subscribe(1);
        s.send(text("three story concepts"), WAIT).unwrap();
        let mut b = s.log().subscribe(1);
        s.send(text("yes"), WAIT).unwrap();
        let mut seen_a = Vec::new();
        let mut seen_b = Vec::new();
        loop {
            let got = a.poll(Duration::from_millis(20));
            if got.is_empty() {
                break;
            }
            seen_a.extend(got);
        }
        loop {
            let got = b.poll(Duration::from_millis(20));
            if got.is_empty() {
                break;
            }
            seen_b.extend(got);
        }
        assert_eq!(seen_a, seen_b);
        assert_eq!(seen_a, s.log().all());
    }

    #[test]
    fn save_load_resumes() {
        let (e, d) = engine(vec![concepts()]);
        let s = e
            .create_session(CreateSession::New { brief: "a dream architect".into(), dir: None })
            .unwrap();
        s.send(text("three story concepts"), WAIT).unwrap();
        s.send(text("yes"), WAIT).unwrap();
        let path = s.save(None).unwrap();
        let t = s.transcript();
        s.export_transcript(&d.path().join("t1.json")).unwrap();
        s.export_transcript(&d.path().join("t2.json")).unwrap();
        assert_eq!(
            std::fs::read(d.path().join("t1.json")).unwrap(),
            std::fs::read(d.path().join("t2.json")).unwrap()
        );
        let chat = t.events.iter().filter(|e| e.kind() == EventKind::ChatMessage).count();
        assert_eq!(t.messages.len(), chat);
        let loaded = e.create_session(CreateSession::Load { path }).unwrap();
        assert_eq!(loaded.project(), s.project());
    }
}
