//! Scenario harness: replays a scripted user transcript against a scripted
//! provider on a fresh session and checks board and event outcomes.
//!
//! Scenarios are JSON data files. Actions refer to earlier publications by
//! label only: every published block is labelled with its kind name (the
//! latest publication wins), and an action may add its own labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cancel::{FaultAction, FaultPlan};
use crate::config::CoreConfig;
use crate::core_agent::UserMessage;
use crate::event::{EventKind, EventPayload, Outcome, SessionEvent};
use crate::model::{AgentRole, ArtifactKind, AssetRef, BlockId, ElementId, Selection, Stage};
use crate::provider::{placeholder_digest, placeholder_file_name, placeholder_png, ScriptedProgram, ScriptedProvider};
use crate::session::{CreateSession, Engine, EngineParts, Session, SessionError};

/// Upper bound on a single action; a scenario that exceeds it diverges.
pub const ACTION_TIMEOUT: Duration = Duration::from_secs(30);

const REFERENCE_PROGRAM: &str = include_str!("../scenarios/reference_program.json");
const GOLDEN_WORKFLOW: &str = include_str!("../scenarios/golden_workflow.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub brief: String,
    #[serde(default)]
    pub program: ScriptedProgram,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Action {
    Message {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        select: Option<SelectRef>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        uploads: Vec<String>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        labels: BTreeMap<ArtifactKind, String>,
        /// Fault or cancellation at the given safe-point of this request.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inject: Option<FaultPlan>,
    },
    Approve {
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        labels: BTreeMap<ArtifactKind, String>,
    },
    Reject,
    OpenDirect {
        role: AgentRole,
    },
    CloseDirect,
    /// Sends `text` and cancels it at safe-point `at`.
    Cancel {
        text: String,
        #[serde(default)]
        at: usize,
    },
}

/// A selection of a labelled block; empty `elements` selects it whole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectRef {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elements: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Expectations {
    /// Initial stage followed by the target of every stage change.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_sequence: Option<Vec<Stage>>,
    /// The exact sequence of event kinds over the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_kinds: Option<Vec<EventKind>>,
    /// One outcome per request, in order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<Outcome>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub canonical: Vec<ArtifactKind>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub min_blocks: BTreeMap<Stage, usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub min_kind_count: BTreeMap<ArtifactKind, usize>,
    /// Boards that must hold a block whose parent is on the same board.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub branch_child_on: Vec<Stage>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lineage: Vec<LineageExpect>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub no_errors: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageExpect {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub check: String,
    /// Position in the compared sequence, when the check is a sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    /// The first event that disagrees with the expectation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub stages: Vec<Stage>,
    pub actions_run: usize,
    pub event_count: usize,
    pub checks: Vec<CheckResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<Divergence>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finished run, with the live session for further inspection.
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub engine: Engine,
    pub session: Arc<Session>,
    pub provider: Arc<ScriptedProvider>,
    pub labels: BTreeMap<String, BlockId>,
    pub elapsed: Duration,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Static well-formedness: a brief, and selections that only name labels
    /// an earlier action can have produced.
    pub fn check(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(ScenarioError::Malformed("empty name".into()));
        }
        if self.brief.trim().is_empty() {
            return Err(ScenarioError::Malformed("empty brief".into()));
        }
        let mut known: BTreeSet<String> = ArtifactKind::ALL.iter().map(|k| k.name().to_string()).collect();
        for (i, action) in self.actions.iter().enumerate() {
            if let Action::Message { select: Some(sel), .. } = action {
                if !known.contains(&sel.label) {
                    return Err(ScenarioError::Malformed(format!(
                        "action {i} selects unknown label `{}`",
                        sel.label
                    )));
                }
            }
            if let Action::Message { text, .. } | Action::Cancel { text, .. } = action {
                if text.trim().is_empty() {
                    return Err(ScenarioError::Malformed(format!("action {i} has no text")));
                }
            }
            known.extend(action.labels().values().cloned());
        }
        for l in &self.expect.lineage {
            for label in [&l.parent, &l.child] {
                if !known.contains(label) {
                    return Err(ScenarioError::Malformed(format!("lineage names unknown label `{label}`")));
                }
            }
        }
        Ok(())
    }

    fn assertion_count(&self) -> usize {
        let e = &self.expect;
        e.stage_sequence.is_some() as usize
            + e.event_kinds.is_some() as usize
            + e.outcomes.is_some() as usize
            + e.canonical.len()
            + e.min_blocks.len()
            + e.min_kind_count.len()
            + e.branch_child_on.len()
            + e.lineage.len()
            + e.no_errors as usize
    }
}

impl Action {
    fn labels(&self) -> BTreeMap<ArtifactKind, String> {
        match self {
            Action::Message { labels, .. } | Action::Approve { labels } => labels.clone(),
            _ => BTreeMap::new(),
        }
    }
}

/// Valid outputs for every artifact kind with a consistent cast and scene
/// numbering.
pub fn reference_program() -> ScriptedProgram {
    serde_json::from_str(REFERENCE_PROGRAM).expect("reference program parses")
}

/// The shipped six-stage workflow scenario.
pub fn golden_workflow() -> Scenario {
    Scenario::from_json(GOLDEN_WORKFLOW).expect("golden workflow parses")
}

/// Drives a fresh session through `scenario` under `root`.
pub fn run_scenario(scenario: &Scenario, config: CoreConfig, root: &Path) -> Result<ScenarioRun, ScenarioError> {
    let mut driver = ScenarioDriver::start(scenario, config, root)?;
    while driver.step()? {}
    Ok(driver.finish())
}

/// Step-wise execution of a scenario on a fresh session, for callers that
/// need to act between actions.
pub struct ScenarioDriver {
    scenario: Scenario,
    engine: Engine,
    session: Arc<Session>,
    provider: Arc<ScriptedProvider>,
    initial: Stage,
    labels: BTreeMap<String, BlockId>,
    next: usize,
    halted: Option<Divergence>,
    started: Instant,
}

impl ScenarioDriver {
    pub fn start(scenario: &Scenario, config: CoreConfig, root: &Path) -> Result<Self, ScenarioError> {
        scenario.check()?;
        let started = Instant::now();
        let (parts, provider) = EngineParts::scripted(scenario.program.clone(), config);
        let engine = Engine::new(parts, root);
        let session = engine.create_session(CreateSession::New {
            brief: scenario.brief.clone(),
            dir: None,
        })?;
        let initial = session.with_project(|p| p.current_stage);
        Ok(Self {
            scenario: scenario.clone(),
            engine,
            session,
            provider,
            initial,
            labels: BTreeMap::new(),
            next: 0,
            halted: None,
            started,
        })
    }

    pub fn session(&self) -> &Arc<Session> {
        &self.session
    }

    /// Index of the action the next `step` runs.
    pub fn next_action(&self) -> usize {
        self.next
    }

    /// Runs the next action. `false` once every action ran or the run halted.
    pub fn step(&mut self) -> Result<bool, ScenarioError> {
        if self.halted.is_some() || self.next >= self.scenario.actions.len() {
            return Ok(false);
        }
        let i = self.next;
        let action = &self.scenario.actions[i];
        match step(&self.session, action, &self.labels) {
            Ok(from_seq) => {
                self.next += 1;
                collect_labels(&self.session.log().since(from_seq), &action.labels(), &mut self.labels);
                Ok(true)
            }
            Err(StepError::Halt(detail)) => {
                self.halted = Some(Divergence {
                    check: format!("action {i}"),
                    index: Some(i),
                    event_seq: Some(self.session.log().last_seq()),
                    expected: "action completes".into(),
                    actual: detail,
                });
                Ok(false)
            }
            Err(StepError::Session(e)) => Err(e.into()),
            Err(StepError::Io(e)) => Err(e.into()),
        }
    }

    /// Evaluates every expectation against the session as it stands.
    pub fn finish(self) -> ScenarioRun {
        let ScenarioDriver {
            scenario,
            engine,
            session,
            provider,
            initial,
            labels,
            next: actions_run,
            halted,
            started,
        } = self;
        let report = evaluate(&scenario, &session, initial, &labels, actions_run, halted);
        ScenarioRun {
            report,
            engine,
            session,
            provider,
            labels,
            elapsed: started.elapsed(),
        }
    }
}

fn evaluate(
    scenario: &Scenario,
    session: &Session,
    initial: Stage,
    labels: &BTreeMap<String, BlockId>,
    actions_run: usize,
    halted: Option<Divergence>,
) -> ScenarioReport {
    let events = session.log().all();
    let stages = stage_sequence(initial, &events);
    let mut checks = Vec::new();
    let mut first_divergence = halted;
    let mut note = |check: CheckResult, divergence: Option<Divergence>| {
        if !check.passed && first_divergence.is_none() {
            first_divergence = divergence;
        }
        checks.push(check);
    };

    let e = &scenario.expect;
    if let Some(expected) = &e.stage_sequence {
        let changes: Vec<u64> = events
            .iter()
            .filter(|ev| ev.kind() == EventKind::StageChanged)
            .map(|ev| ev.event_seq)
            .collect();
        let (check, div) = compare_sequence("stage_sequence", expected, &stages, |i| {
            // position 0 is the initial stage; later positions map to events
            i.checked_sub(1).and_then(|j| changes.get(j).copied())
        });
        note(check, div);
    }
    if let Some(expected) = &e.event_kinds {
        let kinds: Vec<EventKind> = events.iter().map(|ev| ev.kind()).collect();
        let (check, div) = compare_sequence("event_kinds", expected, &kinds, |i| events.get(i).map(|ev| ev.event_seq));
        note(check, div);
    }
    if let Some(expected) = &e.outcomes {
        let done: Vec<(u64, Outcome)> = events
            .iter()
            .filter_map(|ev| match ev.payload {
                EventPayload::Done { outcome } => Some((ev.event_seq, outcome)),
                _ => None,
            })
            .collect();
        let outcomes: Vec<Outcome> = done.iter().map(|d| d.1).collect();
        let (check, div) = compare_sequence("outcomes", expected, &outcomes, |i| done.get(i).map(|d| d.0));
        note(check, div);
    }

    let project = session.project();
    for kind in &e.canonical {
        let got = project.progress.canonical(*kind).cloned();
        let name = format!("canonical:{}", kind.name());
        let passed = got.is_some();
        note(
            CheckResult {
                name: name.clone(),
                passed,
                detail: got.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
            },
            Some(Divergence {
                check: name,
                index: None,
                event_seq: None,
                expected: "a canonical block".into(),
                actual: "none".into(),
            }),
        );
    }
    for (stage, min) in &e.min_blocks {
        let n = project.boards.board(*stage).map_or(0, |b| b.len());
        let name = format!("min_blocks:{}", stage.name());
        note(
            count_check(&name, n, *min),
            Some(count_divergence(&name, n, *min)),
        );
    }
    for (kind, min) in &e.min_kind_count {
        let n = project.boards.blocks().filter(|b| b.kind == *kind).count();
        let name = format!("min_kind_count:{}", kind.name());
        note(
            count_check(&name, n, *min),
            Some(count_divergence(&name, n, *min)),
        );
    }
    for stage in &e.branch_child_on {
        let found = project.boards.blocks().find(|b| {
            b.stage == *stage
                && b.parent_id
                    .as_ref()
                    .and_then(|p| project.boards.block(p))
                    .is_some_and(|p| p.stage == *stage)
        });
        let name = format!("branch_child_on:{}", stage.name());
        note(
            CheckResult {
                name: name.clone(),
                passed: found.is_some(),
                detail: found.map(|b| b.block_id.to_string()).unwrap_or_default(),
            },
            Some(Divergence {
                check: name,
                index: None,
                event_seq: None,
                expected: "a child block whose parent is on the same board".into(),
                actual: "none".into(),
            }),
        );
    }
    for l in &e.lineage {
        let name = format!("lineage:{}->{}", l.parent, l.child);
        let parent = labels.get(&l.parent);
        let child = labels.get(&l.child).and_then(|c| project.boards.block(c));
        let actual = child.and_then(|c| c.parent_id.clone());
        let passed = parent.is_some() && actual.as_ref() == parent;
        note(
            CheckResult {
                name: name.clone(),
                passed,
                detail: String::new(),
            },
            Some(Divergence {
                check: name,
                index: None,
                event_seq: None,
                expected: parent.map(|p| p.to_string()).unwrap_or_else(|| format!("block labelled `{}`", l.parent)),
                actual: actual.map(|p| p.to_string()).unwrap_or_else(|| "no parent".into()),
            }),
        );
    }
    if e.no_errors {
        let first_error = events.iter().find(|ev| ev.kind() == EventKind::Error);
        note(
            CheckResult {
                name: "no_errors".into(),
                passed: first_error.is_none(),
                detail: String::new(),
            },
            first_error.map(|ev| Divergence {
                check: "no_errors".into(),
                index: None,
                event_seq: Some(ev.event_seq),
                expected: "no error events".into(),
                actual: match &ev.payload {
                    EventPayload::Error { reason, detail, .. } => format!("{reason:?}: {detail}"),
                    _ => String::new(),
                },
            }),
        );
    }

    let mut warnings = Vec::new();
    if scenario.actions.is_empty() {
        warnings.push("scenario has no actions".to_string());
    }
    if scenario.assertion_count() == 0 {
        warnings.push("scenario has no assertions; it passes vacuously".to_string());
    }
    ScenarioReport {
        name: scenario.name.clone(),
        passed: first_divergence.is_none() && checks.iter().all(|c| c.passed),
        stages,
        actions_run,
        event_count: events.len(),
        checks,
        first_divergence,
        warnings,
    }
}

enum StepError {
    Halt(String),
    Session(SessionError),
    Io(std::io::Error),
}

/// Runs one action to completion. Returns the first event sequence number
/// the action produced.
fn step(session: &Arc<Session>, action: &Action, labels: &BTreeMap<String, BlockId>) -> Result<u64, StepError> {
    let from_seq = session.log().last_seq() + 1;
    let (msg, plan) = match action {
        Action::Message {
            text,
            select,
            uploads,
            inject,
            ..
        } => {
            let selection = select.as_ref().map(|s| resolve(session, s, labels)).transpose()?;
            let uploads = uploads
                .iter()
                .map(|name| upload(session, name))
                .collect::<Result<Vec<_>, _>>()
                .map_err(StepError::Io)?;
            (
                UserMessage {
                    text: text.clone(),
                    selection,
                    uploads,
                },
                *inject,
            )
        }
        Action::Approve { .. } => (plain("Yes, go ahead."), None),
        Action::Reject => (plain("No, not now."), None),
        Action::OpenDirect { role } => (plain(&format!("I want to talk to the {} agent directly.", role.name())), None),
        Action::CloseDirect => (plain("That's all, back to the core agent."), None),
        Action::Cancel { text, at } => (
            plain(text),
            Some(FaultPlan {
                at: *at,
                action: FaultAction::Cancel,
            }),
        ),
    };
    if let Some(plan) = plan {
        session.inject_fault(plan);
    }
    match session.send(msg, ACTION_TIMEOUT) {
        Ok(Some(_)) => Ok(from_seq),
        Ok(None) => Err(StepError::Halt(format!("no result within {ACTION_TIMEOUT:?}"))),
        Err(e @ (SessionError::InvalidSelection(_) | SessionError::InvalidUpload(_))) => {
            Err(StepError::Halt(e.to_string()))
        }
        Err(e) => Err(StepError::Session(e)),
    }
}

fn plain(text: &str) -> UserMessage {
    UserMessage {
        text: text.to_string(),
        selection: None,
        uploads: Vec::new(),
    }
}

fn resolve(session: &Session, sel: &SelectRef, labels: &BTreeMap<String, BlockId>) -> Result<Selection, StepError> {
    let id = labels
        .get(&sel.label)
        .ok_or_else(|| StepError::Halt(format!("label `{}` names no published block", sel.label)))?;
    let block = session
        .block(id)
        .ok_or_else(|| StepError::Halt(format!("label `{}` names a missing block", sel.label)))?;
    Ok(Selection {
        block_id: id.clone(),
        version_index: sel.version.unwrap_or(block.active_version),
        element_ids: sel.elements.iter().map(ElementId::new).collect(),
    })
}

/// Stores a deterministic placeholder image standing in for a user upload.
fn upload(session: &Session, name: &str) -> std::io::Result<AssetRef> {
    let digest = placeholder_digest(&format!("upload:{name}"), &[]);
    let bytes = placeholder_png(&digest).map_err(std::io::Error::other)?;
    session.assets().write(&placeholder_file_name(&digest), &bytes)
}

fn collect_labels(events: &[SessionEvent], custom: &BTreeMap<ArtifactKind, String>, labels: &mut BTreeMap<String, BlockId>) {
    for ev in events {
        if let EventPayload::BlockPublished { block_id, kind, .. } = &ev.payload {
            labels.insert(kind.name().to_string(), block_id.clone());
            if let Some(label) = custom.get(kind) {
                labels.insert(label.clone(), block_id.clone());
            }
        }
    }
}

/// The initial stage followed by the target of every stage change.
pub fn stage_sequence(initial: Stage, events: &[SessionEvent]) -> Vec<Stage> {
    std::iter::once(initial)
        .chain(events.iter().filter_map(|ev| match &ev.payload {
            EventPayload::StageChanged { to, .. } => Some(*to),
            _ => None,
        }))
        .collect()
}

fn compare_sequence<T: PartialEq + Serialize>(
    name: &str,
    expected: &[T],
    actual: &[T],
    seq_at: impl Fn(usize) -> Option<u64>,
) -> (CheckResult, Option<Divergence>) {
    let diverge = expected
        .iter()
        .zip(actual)
        .position(|(a, b)| a != b)
        .or_else(|| (expected.len() != actual.len()).then(|| expected.len().min(actual.len())));
    let show = |v: Option<&T>| match v.map(serde_json::to_value) {
        Some(Ok(serde_json::Value::String(s))) => s,
        Some(Ok(other)) => other.to_string(),
        _ => "end of sequence".into(),
    };
    match diverge {
        None => (
            CheckResult {
                name: name.to_string(),
                passed: true,
                detail: String::new(),
            },
            None,
        ),
        Some(i) => (
            CheckResult {
                name: name.to_string(),
                passed: false,
                detail: format!("diverges at position {i}"),
            },
            Some(Divergence {
                check: name.to_string(),
                index: Some(i),
                event_seq: seq_at(i),
                expected: show(expected.get(i)),
                actual: show(actual.get(i)),
            }),
        ),
    }
}

fn count_check(name: &str, n: usize, min: usize) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: n >= min,
        detail: format!("{n} (at least {min})"),
    }
}

fn count_divergence(name: &str, n: usize, min: usize) -> Divergence {
    Divergence {
        check: name.to_string(),
        index: None,
        event_seq: None,
        expected: format!("at least {min}"),
        actual: n.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(s: &Scenario) -> ScenarioRun {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.keep();
        run_scenario(s, CoreConfig::default(), &root).unwrap()
    }

    #[test]
    fn reference_program_covers_every_kind() {
        let program = reference_program();
        for kind in ArtifactKind::ALL {
            assert!(
                program
                    .rules
                    .iter()
                    .any(|r| r.task_kind == Some(crate::model::TaskKind::Artifact(kind))),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn golden_workflow_reproduces_the_stage_path() {
        let r = run(&golden_workflow());
        assert!(r.report.passed, "{:#?}", r.report);
        assert_eq!(
            r.report.stages,
            vec![
                Stage::Planning,
                Stage::Ideation,
                Stage::Design,
                Stage::Ideation,
                Stage::Scripting,
                Stage::Storyboard
            ]
        );
    }

    #[test]
    fn empty_scenario_passes_with_a_warning() {
        let s = Scenario {
            name: "empty".into(),
            description: String::new(),
            brief: "anything".into(),
            program: ScriptedProgram::default(),
            actions: Vec::new(),
            expect: Expectations::default(),
        };
        let r = run(&s);
        assert!(r.report.passed);
        assert!(r.report.checks.is_empty());
        assert!(!r.report.warnings.is_empty());
    }

    #[test]
    fn unknown_label_is_malformed() {
        let text = r#"{"name":"x","brief":"b","actions":[{"type":"message","text":"go","select":{"label":"nope"}}]}"#;
        assert!(matches!(Scenario::from_json(text), Err(ScenarioError::Malformed(_))));
        assert!(matches!(
            Scenario::from_json(r#"{"name":"x","brief":" "}"#),
            Err(ScenarioError::Malformed(_))
        ));
        assert!(matches!(Scenario::from_json("{"), Err(ScenarioError::Malformed(_))));
    }

    #[test]
    fn sequence_divergence_points_at_first_mismatch() {
        let (c, d) = compare_sequence("s", &[1, 2, 3], &[1, 9, 3], |i| Some(i as u64 * 10));
        assert!(!c.passed);
        let d = d.unwrap();
        assert_eq!((d.index, d.event_seq), (Some(1), Some(10)));
        let (_, d) = compare_sequence("s", &[1, 2], &[1, 2, 3], |_| None);
        assert_eq!(d.unwrap().index, Some(2));
        let (c, d) = compare_sequence("s", &[1], &[1], |_| None);
        assert!(c.passed && d.is_none());
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let g = golden_workflow();
        assert_eq!(Scenario::from_json(&g.to_json()).unwrap(), g);
    }
}
