//! One user request, end to end: intent, decision, delegation rounds,
//! validation and publication, reported through an [`EventSink`].
//!
//! The pipeline mutates a working copy of the session state. The caller
//! commits the copy on `Ok` and drops it on `Err`, which is the whole of
//! rollback.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::agents::{chat_direct, parallel_execute, AgentContext, AgentError};
use crate::assets::AssetStore;
use crate::board::block_items;
use crate::cancel::{CancelToken, Interrupt};
use crate::clock::Clock;
use crate::config::CoreConfig;
use crate::core_agent::{
    build_task_spec, interpret_request, next_task_id, publish_result, refresh_status, suggest_next,
    summarize_publication, validate_result, Decision, IntentContext, IntentError, IntentSource, Judge,
    Proposal, SpecError, SpecRequest, UserMessage,
};
use crate::event::{Activity, ErrorReason, EventPayload, Outcome, Speaker};
use crate::memory::{
    Embedder, EntryKind, HashEmbedder, IdentityExpander, MemoryEntry, PrefixSummarizer, ProviderExpander,
    ProviderSummarizer, QueryExpander, Summarizer,
};
use crate::model::{
    AgentRole, ContextItem, Element, PublicationIntent, Stage, TaskId, TaskKind, TaskSpec,
};
use crate::project::Project;
use crate::prompts::PromptLibrary;
use crate::provider::{Providers, TextProvider};

pub trait EventSink {
    fn emit(&mut self, agent: AgentRole, payload: EventPayload);
}

impl EventSink for Vec<(AgentRole, EventPayload)> {
    fn emit(&mut self, agent: AgentRole, payload: EventPayload) {
        self.push((agent, payload));
    }
}

/// An open direct conversation with one specialist.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectChannel {
    pub role: AgentRole,
    /// Project context forwarded once, when the channel opened.
    pub context: Vec<ContextItem>,
}

/// Everything a request may change. Cloned at request start, restored
/// wholesale on failure.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub project: Project,
    pub pending: Option<Proposal>,
    pub direct: Option<DirectChannel>,
}

impl SessionState {
    pub fn new(project: Project) -> Self {
        Self {
            project,
            pending: None,
            direct: None,
        }
    }
}

#[derive(Clone)]
pub struct MemoryBackends {
    pub summarizer: Arc<dyn Summarizer>,
    pub expander: Arc<dyn QueryExpander>,
    pub embedder: Arc<dyn Embedder>,
}

impl MemoryBackends {
    /// Provider-free backends; fully deterministic.
    pub fn deterministic() -> Self {
        Self {
            summarizer: Arc::new(PrefixSummarizer::default()),
            expander: Arc::new(IdentityExpander),
            embedder: Arc::new(HashEmbedder::default()),
        }
    }

    /// Summaries and query expansion through the lightweight text tier.
    pub fn with_provider(light: Arc<dyn TextProvider>) -> Self {
        Self {
            summarizer: Arc::new(ProviderSummarizer { provider: light.clone() }),
            expander: Arc::new(ProviderExpander { provider: light }),
            embedder: Arc::new(HashEmbedder::default()),
        }
    }
}

/// Shared, read-only resources for one request.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub config: &'a CoreConfig,
    pub providers: &'a Providers,
    pub prompts: &'a PromptLibrary,
    pub assets: &'a AssetStore,
    pub intents: &'a dyn IntentSource,
    pub memory: &'a MemoryBackends,
    pub clock: &'a dyn Clock,
    pub cancel: &'a CancelToken,
}

impl Resources<'_> {
    fn agents(&self) -> AgentContext<'_> {
        AgentContext {
            providers: self.providers,
            prompts: self.prompts,
            assets: self.assets,
            cancel: self.cancel,
        }
    }
}

/// Why a request was abandoned. Its state changes are discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestFailure {
    pub reason: ErrorReason,
    pub detail: String,
    pub task_id: Option<TaskId>,
}

impl RequestFailure {
    fn agent(e: AgentError, task: &TaskId) -> Self {
        Self {
            reason: e.reason(),
            detail: e.to_string(),
            task_id: Some(task.clone()),
        }
    }

    fn interrupt(i: Interrupt, task: Option<&TaskId>) -> Self {
        Self::agent_opt(AgentError::Interrupted(i), task)
    }

    fn agent_opt(e: AgentError, task: Option<&TaskId>) -> Self {
        Self {
            reason: e.reason(),
            detail: e.to_string(),
            task_id: task.cloned(),
        }
    }

    pub fn outcome(&self) -> Outcome {
        if self.reason == ErrorReason::Cancelled {
            Outcome::Cancelled
        } else {
            Outcome::Failed
        }
    }
}

impl From<IntentError> for RequestFailure {
    fn from(e: IntentError) -> Self {
        match e {
            IntentError::Provider(p) => Self::agent_opt(AgentError::Provider(p), None),
            IntentError::Interrupted(i) => Self::interrupt(i, None),
            IntentError::Malformed(m) => Self {
                reason: ErrorReason::MalformedOutput,
                detail: m,
                task_id: None,
            },
        }
    }
}

struct Run<'r, 'a> {
    res: &'r Resources<'a>,
    state: &'r mut SessionState,
    sink: &'r mut dyn EventSink,
}

impl Run<'_, '_> {
    fn project(&mut self) -> &mut Project {
        &mut self.state.project
    }

    fn remember(&mut self, role: AgentRole, kind: EntryKind, text: String, pair: Option<u64>) {
        if text.trim().is_empty() {
            return;
        }
        let mut entry = MemoryEntry::new(kind, text, self.res.clock.now());
        if let Some(p) = pair {
            entry = entry.paired(p);
        }
        let budget = self.res.config.window;
        let project = self.project();
        let _ = project.window_mut(role, budget).append_entry(entry.clone());
        // the long-term transcript is the core agent's view
        if role == AgentRole::Core {
            let _ = project.memory.record(entry);
        }
    }

    fn status(&mut self, agent: AgentRole, status: Activity, target: Option<AgentRole>, task: Option<&TaskId>, round: Option<u32>) {
        self.sink.emit(
            agent,
            EventPayload::AgentStatus {
                status,
                target,
                task_id: task.cloned(),
                round,
                report: None,
            },
        );
    }

    fn say(&mut self, role: AgentRole, text: String) {
        self.remember(role, EntryKind::Message, format!("{}: {text}", role.name()), None);
        if role != AgentRole::Core {
            self.remember(AgentRole::Core, EntryKind::Message, format!("{}: {text}", role.name()), None);
        }
        self.sink.emit(
            role,
            EventPayload::ChatMessage {
                from: Speaker::from(role),
                text,
                selection: None,
                uploads: vec![],
            },
        );
    }

    fn switch_stage(&mut self, to: Stage, reason: &str) {
        let from = self.state.project.current_stage;
        if from == to {
            return;
        }
        self.state.project.current_stage = to;
        refresh_status(&mut self.state.project, self.res.config);
        self.sink.emit(
            AgentRole::Core,
            EventPayload::StageChanged {
                from: Some(from),
                to,
                reason: reason.to_string(),
                progress: self.state.project.progress.clone(),
            },
        );
    }

    fn handle(&mut self, msg: &UserMessage) -> Result<Outcome, RequestFailure> {
        let res = *self.res;
        self.status(AgentRole::Core, Activity::Thinking, None, None, None);
        self.sink.emit(
            AgentRole::Core,
            EventPayload::ChatMessage {
                from: Speaker::User,
                text: msg.text.clone(),
                selection: msg.selection.clone(),
                uploads: msg.uploads.clone(),
            },
        );
        self.remember(AgentRole::Core, EntryKind::Message, format!("user: {}", msg.text), None);

        let memory_hits = {
            let mem = &self.state.project.memory;
            match mem.retrieve(&msg.text, res.config.retrieval_k, &*res.memory.expander, &*res.memory.embedder) {
                Ok(trace) => {
                    let hits: Vec<String> = trace
                        .hits
                        .iter()
                        .filter_map(|h| mem.chunk(&h.chunk_id))
                        .map(|c| c.summary.clone())
                        .collect();
                    self.state.project.memory.traces.push(trace);
                    hits
                }
                Err(_) => vec![],
            }
        };

        let outcome = match self.state.direct.clone() {
            Some(channel) => self.handle_direct(msg, channel, memory_hits)?,
            None => self.handle_core(msg, memory_hits)?,
        };

        // deferred on failure; the transcript keeps everything for next time
        let _ = self.state.project.memory.chunk_and_index(
            res.config.chunking,
            &*res.memory.summarizer,
            &*res.memory.embedder,
        );
        Ok(outcome)
    }

    fn intent_context(&self, msg: &UserMessage, memory: Vec<String>) -> IntentContext {
        let p = &self.state.project;
        IntentContext {
            stage: p.current_stage,
            pending: self.state.pending.is_some(),
            direct: self.state.direct.as_ref().map(|d| d.role),
            selection_kind: msg
                .selection
                .as_ref()
                .and_then(|s| p.boards.block(&s.block_id))
                .map(|b| b.kind),
            brief: p.progress.project_brief.clone(),
            memory,
        }
    }

    fn handle_core(&mut self, msg: &UserMessage, memory: Vec<String>) -> Result<Outcome, RequestFailure> {
        let res = *self.res;
        let ctx = self.intent_context(msg, memory);
        let intent = res.intents.parse(&msg.text, &ctx, res.cancel)?;
        let pending = self.state.pending.take();
        let decision = interpret_request(msg, &intent, &mut self.state.project, pending.as_ref(), res.config);
        match decision {
            Decision::RespondDirectly { text } => {
                refresh_status(&mut self.state.project, res.config);
                self.say(AgentRole::Core, text);
                Ok(Outcome::Completed)
            }
            Decision::SwitchStage { stage, reason } => {
                self.switch_stage(stage, &reason);
                let s = suggest_next(&self.state.project.progress, stage, res.config);
                self.say(AgentRole::Core, format!("We're in {} now. {}", stage.title(), s.text));
                Ok(Outcome::Completed)
            }
            Decision::OpenDirectChannel { role } => {
                if role == AgentRole::Core {
                    self.say(
                        AgentRole::Core,
                        "You're already talking to me. Name a specialist (ideation, scripting, design or art) to chat with directly.".into(),
                    );
                } else {
                    let context = direct_context(&self.state.project);
                    self.state.direct = Some(DirectChannel { role, context });
                    self.say(
                        AgentRole::Core,
                        format!(
                            "Opening a direct chat with the {}. Say \"back to core\" when you're done.",
                            role.title()
                        ),
                    );
                }
                Ok(Outcome::Completed)
            }
            Decision::AskApproval(proposal) => {
                self.remember(AgentRole::Core, EntryKind::Message, format!("core: {}", proposal.text), None);
                self.state.pending = Some(proposal.clone());
                self.sink.emit(
                    AgentRole::Core,
                    EventPayload::ApprovalRequest {
                        text: proposal.text.clone(),
                        proposal,
                    },
                );
                Ok(Outcome::Completed)
            }
            Decision::Delegate { tasks, switch_to, note } => {
                if let Some(n) = note {
                    self.say(AgentRole::Core, n);
                }
                if let Some(stage) = switch_to {
                    let reason = if pending.is_some() {
                        "approved by the user"
                    } else {
                        "requested by the user"
                    };
                    self.switch_stage(stage, reason);
                }
                self.run_tasks(tasks)
            }
        }
    }

    fn handle_direct(&mut self, msg: &UserMessage, channel: DirectChannel, memory: Vec<String>) -> Result<Outcome, RequestFailure> {
        let res = *self.res;
        let ctx = self.intent_context(msg, memory);
        let intent = res.intents.parse(&msg.text, &ctx, res.cancel)?;
        if intent.close_channel {
            self.state.direct = None;
            let s = suggest_next(&self.state.project.progress, self.state.project.current_stage, res.config);
            self.say(AgentRole::Core, format!("Back with the core agent. {}", s.text));
            return Ok(Outcome::Completed);
        }
        let role = channel.role;
        let mut payload = channel.context;
        if let Some(sel) = &msg.selection {
            payload.extend(
                self.state
                    .project
                    .boards
                    .resolve_selection(sel)
                    .map_err(|e| internal(e.to_string()))?,
            );
        }
        payload.extend(
            msg.uploads
                .iter()
                .enumerate()
                .map(|(i, a)| ContextItem::image(format!("upload:{}", i + 1), a.clone())),
        );
        let spec = TaskSpec {
            task_id: next_task_id(&mut self.state.project),
            target_role: role,
            task_kind: TaskKind::DirectChat,
            instruction: msg.text.trim().to_string(),
            context_payload: payload,
            publication_intent: PublicationIntent::NewRoot,
            stage: self.state.project.current_stage,
            requested_count: None,
            required_terms: vec![],
        };
        self.remember(role, EntryKind::Message, format!("user: {}", msg.text), None);
        let reply = chat_direct(&spec, res.agents()).map_err(|e| RequestFailure::agent(e, &spec.task_id))?;
        self.say(role, reply.reply);

        let Some((kind, instruction)) = reply.tool_call else {
            return Ok(Outcome::Completed);
        };
        if kind.owner() != role {
            self.say(
                AgentRole::Core,
                format!("The {} can't make a {}; ask the core agent instead.", role.title(), kind.title()),
            );
            return Ok(Outcome::Completed);
        }
        if kind.stage() != self.state.project.current_stage {
            self.say(
                AgentRole::Core,
                format!(
                    "A {} belongs to the {} stage. Switch there first, then ask again.",
                    kind.title(),
                    kind.stage().title()
                ),
            );
            return Ok(Outcome::Completed);
        }
        let req = SpecRequest {
            instruction: &instruction,
            selection: msg.selection.as_ref(),
            uploads: &msg.uploads,
            ..SpecRequest::default()
        };
        match build_task_spec(&mut self.state.project, res.config, kind, &req) {
            Ok(spec) => self.run_tasks(vec![spec]),
            Err(SpecError::MissingDependency { missing, .. }) => {
                let names: Vec<&str> = missing.iter().map(|k| k.title()).collect();
                self.say(
                    AgentRole::Core,
                    format!("A {} needs {} first.", kind.title(), names.join(" and ")),
                );
                Ok(Outcome::Completed)
            }
            Err(SpecError::Stale(e)) => Err(internal(e)),
        }
    }

    /// Delegation rounds, then publication of approved results in task order.
    fn run_tasks(&mut self, mut tasks: Vec<TaskSpec>) -> Result<Outcome, RequestFailure> {
        let res = *self.res;
        let cfg = res.config;
        let mut pairs = Vec::with_capacity(tasks.len());
        for t in &tasks {
            self.status(AgentRole::Core, Activity::Delegating, Some(t.target_role), Some(&t.task_id), None);
            let pair = self.state.project.counters.next_pair();
            pairs.push(pair);
            let kind = t.task_kind.name();
            self.remember(
                AgentRole::Core,
                EntryKind::ToolCall,
                format!("delegate {} ({kind}) to {}: {}", t.task_id, t.target_role.name(), t.instruction),
                Some(pair),
            );
            self.remember(t.target_role, EntryKind::InterAgent, format!("core: {}", t.instruction), None);
        }

        let mut approved: BTreeMap<usize, Vec<Element>> = BTreeMap::new();
        let mut exhausted = false;
        let mut active: Vec<usize> = (0..tasks.len()).collect();
        let max_rounds = cfg.max_rounds.max(1);
        for round in 1..=max_rounds {
            if active.is_empty() {
                break;
            }
            for &i in &active {
                let t = &tasks[i];
                let (role, id) = (t.target_role, t.task_id.clone());
                self.status(role, Activity::Executing, None, Some(&id), Some(round));
            }
            let batch: Vec<TaskSpec> = active.iter().map(|&i| tasks[i].clone()).collect();
            let results = parallel_execute(&batch, res.agents(), cfg.fan_out);
            let mut retry = Vec::new();
            for (&i, result) in active.iter().zip(results) {
                let id = tasks[i].task_id.clone();
                let out = result.map_err(|e| RequestFailure::agent(e, &id))?;
                self.status(AgentRole::Core, Activity::Validating, None, Some(&id), Some(round));
                let judge = cfg.judge.then(|| Judge {
                    provider: &*res.providers.text,
                    prompts: res.prompts,
                });
                let report = validate_result(&out.elements, &tasks[i], &self.state.project, res.assets, judge.as_ref(), res.cancel)
                    .map_err(|e| RequestFailure::interrupt(e, Some(&id)))?;
                let ok = report.approved();
                let feedback: Vec<String> = report
                    .messages
                    .iter()
                    .filter(|m| m.severity == crate::model::Severity::Error)
                    .map(|m| m.text.clone())
                    .collect();
                self.sink.emit(
                    AgentRole::Core,
                    EventPayload::AgentStatus {
                        status: if ok { Activity::Approved } else { Activity::RevisionRequested },
                        target: Some(tasks[i].target_role),
                        task_id: Some(id.clone()),
                        round: Some(round),
                        report: Some(report),
                    },
                );
                if ok {
                    approved.insert(i, out.elements);
                } else if round < max_rounds {
                    let t = &mut tasks[i];
                    t.instruction = format!(
                        "{}\n\nRevision feedback (round {round}): {}",
                        t.instruction,
                        feedback.join("; ")
                    );
                    retry.push(i);
                } else {
                    exhausted = true;
                    self.sink.emit(
                        AgentRole::Core,
                        EventPayload::Error {
                            reason: ErrorReason::ExhaustedRevisions,
                            detail: format!(
                                "{} was not approved after {max_rounds} rounds: {}",
                                tasks[i].task_kind.name(),
                                feedback.join("; ")
                            ),
                            task_id: Some(id),
                        },
                    );
                }
            }
            active = retry;
        }

        for (i, elements) in approved {
            let spec = &tasks[i];
            res.cancel
                .checkpoint("before publication")
                .map_err(|e| RequestFailure::interrupt(e, Some(&spec.task_id)))?;
            let now = res.clock.now();
            let published = publish_result(&mut self.state.project, spec, elements.clone(), now)
                .map_err(|e| internal(e.to_string()))?;
            let project = &self.state.project;
            let block = project.boards.block(&published.block_id).expect("just published").clone();
            let size = serde_json::to_vec(&block).map_or(usize::MAX, |b| b.len());
            self.sink.emit(
                AgentRole::Core,
                EventPayload::BlockPublished {
                    block_id: published.block_id.clone(),
                    stage: block.stage,
                    kind: block.kind,
                    task_id: spec.task_id.clone(),
                    effect: published.effect,
                    version_index: published.version_index,
                    canonical: published.canonical,
                    placement: project.boards.placement(&published.block_id),
                    block: (size <= cfg.payload_cap_bytes).then_some(block),
                },
            );
            let summary = summarize_publication(spec, &published, &elements);
            let (role, id) = (spec.target_role, spec.task_id.clone());
            self.remember(role, EntryKind::Output, format!("{id}: {summary}"), None);
            self.remember(AgentRole::Core, EntryKind::Output, format!("{id} done: {}", published.block_id), Some(pairs[i]));
            self.say(AgentRole::Core, summary);
        }

        refresh_status(&mut self.state.project, cfg);
        let stage = self.state.project.current_stage;
        if !exhausted && cfg.stage_complete(stage, &self.state.project.progress) {
            let s = suggest_next(&self.state.project.progress, stage, cfg);
            if !s.kinds.is_empty() {
                self.say(AgentRole::Core, format!("{} has what it needs. {}", stage.title(), s.text));
            }
        }
        Ok(if exhausted { Outcome::Failed } else { Outcome::Completed })
    }
}

fn internal(detail: String) -> RequestFailure {
    RequestFailure {
        reason: ErrorReason::Internal,
        detail,
        task_id: None,
    }
}

/// Brief plus every canonical artifact, forwarded when a direct channel opens.
pub fn direct_context(project: &Project) -> Vec<ContextItem> {
    let mut items = Vec::new();
    if !project.progress.project_brief.is_empty() {
        items.push(ContextItem::text("brief", project.progress.project_brief.clone()));
    }
    for (kind, id) in project.progress.all_canonical() {
        if let Some(block) = project.boards.block(id) {
            items.extend(block_items(&format!("canonical:{}", kind.name()), block));
        }
    }
    items
}

/// Runs one request against `state`. On `Err` the caller must discard
/// `state`; events already emitted stay in the log.
pub fn handle_request(
    res: &Resources<'_>,
    state: &mut SessionState,
    msg: &UserMessage,
    sink: &mut dyn EventSink,
) -> Result<Outcome, RequestFailure> {
    Run { res, state, sink }.handle(msg)
}
