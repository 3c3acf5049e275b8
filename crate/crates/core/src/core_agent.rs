//! The coordinating agent's decision logic: reading a request, choosing the
//! stage, writing task specs, checking results and publishing them.
//!
//! Everything here is synchronous and free of event plumbing; the request
//! pipeline in [`crate::pipeline`] sequences these steps and emits events.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assets::AssetStore;
use crate::board::{block_items, BoardError};
use crate::cancel::{CancelToken, Interrupt};
use crate::config::CoreConfig;
use crate::event::PublishEffect;
use crate::model::{
    AgentRole, ArtifactKind, AssetRef, BlockId, Check, Content, ContextItem, Element, ElementKind,
    ProgressRecord, PublicationIntent, Selection, Severity, Stage, StageStatus, TaskId, TaskKind,
    TaskSpec, Timestamp, ValidationMessage, ValidationReport, VersionOrigin,
};
use crate::project::Project;
use crate::prompts::PromptLibrary;
use crate::provider::{GenerationParams, ProviderError, ProviderRequest, TextProvider};
use crate::schema::check_elements;

/// An action held back until the user approves it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_to: Option<Stage>,
    pub tasks: Vec<TaskSpec>,
    /// Prerequisites found missing, nearest first, when the proposal stands
    /// in for a request that could not run yet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<ArtifactKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    RespondDirectly {
        text: String,
    },
    Delegate {
        tasks: Vec<TaskSpec>,
        switch_to: Option<Stage>,
        /// Said to the user before delegating (ambiguity, soft warnings).
        note: Option<String>,
    },
    SwitchStage {
        stage: Stage,
        reason: String,
    },
    OpenDirectChannel {
        role: AgentRole,
    },
    AskApproval(Proposal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindRequest {
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

/// What a user message asks for, before any state is consulted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intent {
    /// `Some(true)` for yes, `Some(false)` for no.
    pub approval: Option<bool>,
    pub direct_role: Option<AgentRole>,
    pub close_channel: bool,
    pub explicit_stage: Option<Stage>,
    pub kinds: Vec<KindRequest>,
    pub refine: bool,
    /// Quoted phrases the result must contain.
    pub terms: Vec<String>,
    pub ask_next: bool,
    /// The vague word a kind was guessed from, if any.
    pub ambiguous: Option<String>,
    /// Reply text written by a provider-backed parser.
    pub reply: Option<String>,
}

/// State visible to intent parsing.
#[derive(Debug, Clone)]
pub struct IntentContext {
    pub stage: Stage,
    pub pending: bool,
    pub direct: Option<AgentRole>,
    pub selection_kind: Option<ArtifactKind>,
    pub brief: String,
    /// Summaries of retrieved memory chunks.
    pub memory: Vec<String>,
}

pub trait IntentSource: Send + Sync {
    fn parse(&self, message: &str, ctx: &IntentContext, cancel: &CancelToken) -> Result<Intent, IntentError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntentError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Interrupted(#[from] Interrupt),
    #[error("unreadable intent: {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// Keyword intent table

const KIND_PHRASES: &[(&str, ArtifactKind)] = {
    use ArtifactKind::*;
    &[
        ("logline", Logline),
        ("story concept", StoryConcept),
        ("story idea", StoryConcept),
        ("story pitch", StoryConcept),
        ("concept", StoryConcept),
        ("world concept", WorldConcept),
        ("world building", WorldConcept),
        ("worldbuilding", WorldConcept),
        ("world", WorldConcept),
        ("setting", WorldConcept),
        ("style description", StyleDescription),
        ("art direction", StyleDescription),
        ("look and feel", StyleDescription),
        ("style", StyleDescription),
        ("character concept", CharacterConcept),
        ("cast", CharacterConcept),
        ("character", CharacterConcept),
        ("three-act structure", ThreeActStructure),
        ("three act structure", ThreeActStructure),
        ("act structure", ThreeActStructure),
        ("three acts", ThreeActStructure),
        ("story outline", StoryOutline),
        ("outline", StoryOutline),
        ("scene list", SceneList),
        ("scene breakdown", SceneList),
        ("list of scenes", SceneList),
        ("into scenes", SceneList),
        ("screenplay", Script),
        ("script", Script),
        ("character sheet", CharacterSheet),
        ("character design", CharacterSheet),
        ("design these characters", CharacterSheet),
        ("design the characters", CharacterSheet),
        ("design characters", CharacterSheet),
        ("environment design", EnvironmentDesign),
        ("environment", EnvironmentDesign),
        ("location design", EnvironmentDesign),
        ("hero image", HeroImage),
        ("key art", HeroImage),
        ("poster", HeroImage),
        ("style frame", Styleframe),
        ("styleframe", Styleframe),
        ("storyboard", StoryboardSequence),
        ("shot panels", StoryboardSequence),
    ]
};

/// Vague nouns and the kinds they may mean, most likely first.
const VAGUE_WORDS: &[(&str, &[ArtifactKind])] = {
    use ArtifactKind::*;
    &[
        ("story", &[StoryConcept, StoryOutline, Script, Logline]),
        ("image", &[HeroImage, Styleframe, CharacterSheet, EnvironmentDesign]),
        ("picture", &[HeroImage, Styleframe, CharacterSheet, EnvironmentDesign]),
        ("visual", &[HeroImage, Styleframe, CharacterSheet, EnvironmentDesign]),
    ]
};

const YES: &[&str] = &[
    "yes", "yeah", "yep", "sure", "ok", "okay", "go ahead", "sounds good", "approve", "approved",
    "do it", "please do", "let's do it", "alright", "great, go",
];
const NO: &[&str] = &["no", "nope", "not now", "don't", "do not", "cancel that", "never mind", "nevermind", "skip it"];

const REFINE: &[&str] = &[
    "redo", "revise", "refine", "rewrite", "regenerate", "again", "darker", "lighter", "brighter",
    "tweak", "improve", "update", "change", "adjust", "polish", "modify", "instead", "funnier",
    "shorter", "longer", "simpler",
];

const STAGE_VERBS: &[&str] = &[
    "move on to", "move to", "go to", "go back to", "switch to", "back to", "proceed to",
    "jump to", "return to", "continue to", "let's do", "start", "begin",
];

const STAGE_WORDS: &[(&str, Stage)] = &[
    ("planning", Stage::Planning),
    ("ideation", Stage::Ideation),
    ("scripting", Stage::Scripting),
    ("script writing", Stage::Scripting),
    ("design", Stage::Design),
    ("storyboarding", Stage::Storyboard),
    ("storyboard", Stage::Storyboard),
];

const DIRECT_CUES: &[&str] = &[
    "directly", "direct chat", "direct channel", "talk to", "chat with", "speak to", "speak with",
];
const CLOSE_CUES: &[&str] = &[
    "back to the core", "back to core", "close the chat", "close the channel", "close direct",
    "end the chat", "end direct", "exit direct", "that's all",
];
const NEXT_CUES: &[&str] = &["what next", "what's next", "next step", "what should", "what now", "suggest"];

const NUMBERS: &[(&str, usize)] = &[
    ("one", 1), ("two", 2), ("three", 3), ("four", 4), ("five", 5), ("six", 6), ("seven", 7),
    ("eight", 8), ("nine", 9), ("ten", 10), ("single", 1), ("a couple of", 2), ("couple", 2),
];

/// Deterministic phrase-table parser, used with the scripted provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordIntents;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Byte offsets where `phrase` occurs as whole words, allowing a plural `s`.
fn find_phrase(hay: &str, phrase: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = hay[from..].find(phrase) {
        let start = from + i;
        let mut end = start + phrase.len();
        let before_ok = hay[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        if hay[end..].starts_with('s') {
            let after_s = hay[end + 1..].chars().next();
            if after_s.is_none_or(|c| !is_word_char(c)) {
                end += 1;
            }
        }
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push((start, end));
        }
        from = start + phrase.len().max(1);
    }
    out
}

fn contains_phrase(hay: &str, phrase: &str) -> bool {
    !find_phrase(hay, phrase).is_empty()
}

fn starts_with_phrase(hay: &str, phrase: &str) -> bool {
    hay.starts_with(phrase)
        && hay[phrase.len()..]
            .chars()
            .next()
            .is_none_or(|c| !is_word_char(c))
}

fn number_word(tok: &str) -> Option<usize> {
    tok.parse::<usize>()
        .ok()
        .filter(|n| (1..=50).contains(n))
        .or_else(|| NUMBERS.iter().find(|(w, _)| *w == tok).map(|(_, n)| *n))
}

/// A number among the two words before `pos`.
fn count_before(text: &str, pos: usize) -> Option<usize> {
    let toks: Vec<&str> = text[..pos]
        .split(|c: char| !is_word_char(c))
        .filter(|t| !t.is_empty())
        .collect();
    toks.iter().rev().take(2).find_map(|t| number_word(t))
}

fn quoted_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let Some(open) = rest.find(['"', '“']) else {
            break;
        };
        let after = &rest[open + rest[open..].chars().next().unwrap().len_utf8()..];
        let Some(close) = after.find(['"', '”']) else {
            break;
        };
        let term = after[..close].trim();
        if !term.is_empty() {
            out.push(term.to_string());
        }
        rest = &after[close + after[close..].chars().next().unwrap().len_utf8()..];
    }
    out
}

fn role_named(text: &str) -> Option<AgentRole> {
    AgentRole::ALL
        .iter()
        .copied()
        .find(|r| contains_phrase(text, &format!("{} agent", r.name())))
        .or_else(|| {
            AgentRole::ALL
                .iter()
                .copied()
                .find(|r| contains_phrase(text, r.name()))
        })
}

impl KeywordIntents {
    pub fn parse_text(&self, message: &str, ctx: &IntentContext) -> Intent {
        let text = message.trim().to_lowercase();
        let mut intent = Intent {
            terms: quoted_terms(message),
            ..Intent::default()
        };

        if YES.iter().any(|w| starts_with_phrase(&text, w)) {
            intent.approval = Some(true);
        } else if NO.iter().any(|w| starts_with_phrase(&text, w)) {
            intent.approval = Some(false);
        }

        intent.close_channel = CLOSE_CUES.iter().any(|c| text.contains(c));
        if ctx.direct.is_none() && DIRECT_CUES.iter().any(|c| contains_phrase(&text, c)) {
            intent.direct_role = role_named(&text);
        }

        for verb in STAGE_VERBS {
            for (vs, ve) in find_phrase(&text, verb) {
                let _ = vs;
                let tail = text[ve..].trim_start();
                let tail = tail.strip_prefix("the ").unwrap_or(tail);
                if let Some((_, stage)) = STAGE_WORDS.iter().find(|(w, _)| starts_with_phrase(tail, w)) {
                    intent.explicit_stage.get_or_insert(*stage);
                }
            }
        }
        if intent.explicit_stage.is_none() {
            for (w, stage) in STAGE_WORDS {
                if contains_phrase(&text, &format!("{w} stage")) || contains_phrase(&text, &format!("{w} board")) {
                    intent.explicit_stage = Some(*stage);
                    break;
                }
            }
        }

        // longest phrases first; matched spans are blanked so "character
        // sheet" does not also count as "character"
        let mut phrases: Vec<&(&str, ArtifactKind)> = KIND_PHRASES.iter().collect();
        phrases.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
        let mut masked = text.clone();
        let mut found: Vec<(usize, KindRequest)> = Vec::new();
        for (phrase, kind) in phrases {
            for (s, e) in find_phrase(&masked, phrase) {
                found.push((
                    s,
                    KindRequest {
                        kind: *kind,
                        count: count_before(&text, s),
                    },
                ));
                masked.replace_range(s..e, &" ".repeat(e - s));
            }
        }
        // a stage named in a "move to X" phrase is not an artifact request
        if let Some(stage) = intent.explicit_stage {
            if stage == Stage::Storyboard {
                found.retain(|(s, k)| {
                    k.kind != ArtifactKind::StoryboardSequence
                        || !STAGE_VERBS.iter().any(|v| text[..*s].trim_end().ends_with(v))
                });
            }
        }
        found.sort_by_key(|(s, _)| *s);
        for (_, k) in found {
            match intent.kinds.iter_mut().find(|x| x.kind == k.kind) {
                Some(existing) => existing.count = existing.count.or(k.count),
                None => intent.kinds.push(k),
            }
        }

        if intent.kinds.is_empty() && intent.approval.is_none() && intent.direct_role.is_none() {
            for (word, candidates) in VAGUE_WORDS {
                if let Some((s, _)) = find_phrase(&masked, word).first() {
                    let kind = candidates
                        .iter()
                        .copied()
                        .find(|k| k.stage() == ctx.stage)
                        .unwrap_or(candidates[0]);
                    intent.kinds.push(KindRequest {
                        kind,
                        count: count_before(&text, *s),
                    });
                    intent.ambiguous = Some(word.to_string());
                    break;
                }
            }
        }

        intent.refine = REFINE.iter().any(|w| contains_phrase(&text, w));
        intent.ask_next = NEXT_CUES.iter().any(|c| text.contains(c));
        intent
    }
}

impl IntentSource for KeywordIntents {
    fn parse(&self, message: &str, ctx: &IntentContext, _: &CancelToken) -> Result<Intent, IntentError> {
        Ok(self.parse_text(message, ctx))
    }
}

/// Intent parsing through the text provider, constrained to a JSON object
/// with the fields of [`Intent`].
pub struct ProviderIntents {
    pub provider: Arc<dyn TextProvider>,
    pub prompts: Arc<PromptLibrary>,
}

pub const INTENT_CONTRACT: &str = r#"Reply with one JSON object and nothing else:
{"approval": true|false|null, "direct_role": "ideation"|"scripting"|"design"|"art"|null,
 "close_channel": bool, "explicit_stage": "planning"|"ideation"|"scripting"|"design"|"storyboard"|null,
 "kinds": [{"kind": "<artifact kind>", "count": int|null}], "refine": bool, "terms": [string],
 "ask_next": bool, "ambiguous": string|null, "reply": string|null}
Artifact kinds: logline, story-concept, world-concept, style-description, character-concept,
three-act-structure, story-outline, scene-list, script, character-sheet, environment-design,
hero-image, styleframe, storyboard-sequence.
Set explicit_stage only when the user names a stage to move to. Set approval only when the
message answers a pending proposal. Put a short reply to the user in "reply"."#;

impl IntentSource for ProviderIntents {
    fn parse(&self, message: &str, ctx: &IntentContext, cancel: &CancelToken) -> Result<Intent, IntentError> {
        let stage_text = self.prompts.stage(ctx.stage).map_err(|e| IntentError::Malformed(e.to_string()))?;
        let role_text = self.prompts.role(AgentRole::Core).map_err(|e| IntentError::Malformed(e.to_string()))?;
        let mut prompt = format!(
            "{}\n\n# Role: Core\n{}\n\n# Stage: {}\n{}\n\n# Situation\nProject brief: {}\nPending proposal: {}\nSelected block kind: {}\n",
            self.prompts.base.trim_end(),
            role_text.trim_end(),
            ctx.stage.title(),
            stage_text.trim_end(),
            if ctx.brief.is_empty() { "(none yet)" } else { &ctx.brief },
            if ctx.pending { "yes" } else { "no" },
            ctx.selection_kind.map_or("none", |k| k.name()),
        );
        if !ctx.memory.is_empty() {
            prompt.push_str("\n# Relevant history\n");
            for m in &ctx.memory {
                prompt.push_str(&format!("- {m}\n"));
            }
        }
        prompt.push_str(&format!("\n# User message\n{}\n\n# Output\n{INTENT_CONTRACT}\n", message.trim()));
        let req = ProviderRequest {
            role: AgentRole::Core,
            stage: ctx.stage,
            task_kind: None,
            instruction: message.to_string(),
            prompt,
            reference_images: vec![],
            params: GenerationParams {
                temperature: 0.0,
                ..GenerationParams::default()
            },
        };
        cancel.checkpoint("before intent call")?;
        let out = self.provider.complete(&req, cancel)?;
        cancel.checkpoint("after intent call")?;
        let json = extract_json(&out).ok_or_else(|| IntentError::Malformed("no JSON object".into()))?;
        serde_json::from_str(json).map_err(|e| IntentError::Malformed(e.to_string()))
    }
}

/// The outermost `{...}` span of a reply, ignoring code fences.
pub fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

// ---------------------------------------------------------------------------
// Stage selection

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageChoice {
    pub stage: Stage,
    pub explicit: bool,
    /// Set when a forward move leaves the current stage incomplete.
    pub gate_warning: Option<String>,
}

/// Stage a request belongs to. An explicitly named stage always wins;
/// otherwise the stage of the first requested kind; otherwise the current
/// stage. Forward moves past an incomplete stage carry a warning instead of
/// being refused, since the user's approval overrides the completion rule.
pub fn determine_stage(intent: &Intent, current: Stage, progress: &ProgressRecord, config: &CoreConfig) -> StageChoice {
    if let Some(stage) = intent.explicit_stage {
        return StageChoice {
            stage,
            explicit: true,
            gate_warning: None,
        };
    }
    let stage = intent.kinds.first().map_or(current, |k| k.kind.stage());
    let gate_warning = (stage > current && !config.stage_complete(current, progress)).then(|| {
        let missing: Vec<&str> = config
            .completion
            .get(&current)
            .into_iter()
            .flatten()
            .filter(|k| !progress.has(**k))
            .map(|k| k.title())
            .collect();
        if missing.is_empty() {
            format!("{} is not complete yet.", current.title())
        } else {
            format!("{} is not complete yet (missing {}).", current.title(), missing.join(", "))
        }
    });
    StageChoice {
        stage,
        explicit: false,
        gate_warning,
    }
}

/// Position of `stage` in the workflow, for forward/backward comparisons.
pub fn is_forward(from: Stage, to: Stage) -> bool {
    to > from
}

// ---------------------------------------------------------------------------
// Task specs

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("{kind} needs {} first", missing.iter().map(|k| k.title()).collect::<Vec<_>>().join(", "))]
    MissingDependency {
        kind: ArtifactKind,
        missing: Vec<ArtifactKind>,
    },
    #[error("{0}")]
    Stale(String),
}

/// Inputs to [`build_task_spec`] besides the project.
#[derive(Debug, Clone, Default)]
pub struct SpecRequest<'a> {
    pub instruction: &'a str,
    pub count: Option<usize>,
    pub terms: &'a [String],
    pub selection: Option<&'a Selection>,
    pub uploads: &'a [AssetRef],
    pub refine: bool,
}

/// Publication intent for a new result of `kind`: a refinement of the
/// selected block becomes its child; a redo with nothing selected overwrites
/// the canonical artifact; anything else is a new root.
pub fn publication_intent(
    kind: ArtifactKind,
    selected: Option<(&BlockId, ArtifactKind)>,
    progress: &ProgressRecord,
    refine: bool,
) -> PublicationIntent {
    match selected {
        Some((block, sel_kind)) if sel_kind == kind => PublicationIntent::ChildOf {
            block_id: block.clone(),
        },
        None if refine && progress.has(kind) => PublicationIntent::OverwriteArtifact { kind },
        _ => PublicationIntent::NewRoot,
    }
}

/// Kinds whose canonical artifacts are packaged for `kind`, in order.
pub fn context_kinds(kind: ArtifactKind, config: &CoreConfig) -> Vec<ArtifactKind> {
    let mut out: Vec<ArtifactKind> = Vec::new();
    if let Some(dep) = config.dependency(kind) {
        for k in dep.requires.iter().flatten().chain(&dep.soft).chain(&dep.context) {
            if !out.contains(k) && *k != kind {
                out.push(*k);
            }
        }
    }
    out
}

pub fn next_task_id(project: &mut Project) -> TaskId {
    TaskId::new(format!("task-{:06}", project.counters.next_task()))
}

/// Writes a task spec. The payload holds, in order: the brief, canonical
/// upstream artifacts, the selection, the most recent result (only when
/// nothing is selected), and uploads.
pub fn build_task_spec(
    project: &mut Project,
    config: &CoreConfig,
    kind: ArtifactKind,
    req: &SpecRequest<'_>,
) -> Result<TaskSpec, SpecError> {
    let missing = config.missing_prerequisites(kind, &project.progress);
    if !missing.is_empty() {
        return Err(SpecError::MissingDependency { kind, missing });
    }
    let mut payload = Vec::new();
    if !project.progress.project_brief.is_empty() {
        payload.push(ContextItem::text("brief", project.progress.project_brief.clone()));
    }
    for k in context_kinds(kind, config) {
        if let Some(block) = project.progress.canonical(k).and_then(|id| project.boards.block(id)) {
            payload.extend(block_items(&format!("canonical:{}", k.name()), block));
        }
    }
    let mut selected = None;
    if let Some(sel) = req.selection {
        let items = project
            .boards
            .resolve_selection(sel)
            .map_err(|e| SpecError::Stale(e.to_string()))?;
        payload.extend(items);
        let block = project.boards.block(&sel.block_id).expect("resolved above");
        selected = Some((block.block_id.clone(), block.kind));
    } else if let Some(block) = project.last_published.as_ref().and_then(|id| project.boards.block(id)) {
        payload.extend(block_items("recent", block));
    }
    payload.extend(
        req.uploads
            .iter()
            .enumerate()
            .map(|(i, a)| ContextItem::image(format!("upload:{}", i + 1), a.clone())),
    );
    let intent = publication_intent(
        kind,
        selected.as_ref().map(|(b, k)| (b, *k)),
        &project.progress,
        req.refine,
    );
    Ok(TaskSpec {
        task_id: next_task_id(project),
        target_role: kind.owner(),
        task_kind: TaskKind::Artifact(kind),
        instruction: req.instruction.trim().to_string(),
        context_payload: payload,
        publication_intent: intent,
        stage: kind.stage(),
        requested_count: req.count,
        required_terms: req.terms.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Suggestions

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suggestion {
    pub text: String,
    /// Kinds to produce next, all in `stage`.
    pub kinds: Vec<ArtifactKind>,
    pub stage: Option<Stage>,
}

fn titles(kinds: &[ArtifactKind]) -> String {
    let t: Vec<&str> = kinds.iter().map(|k| k.title()).collect();
    match t.len() {
        0 => String::new(),
        1 => t[0].to_string(),
        _ => format!("{} and {}", t[..t.len() - 1].join(", "), t[t.len() - 1]),
    }
}

/// Next steps: missing completion artifacts of the current stage, else of
/// the first incomplete later stage. Only kinds whose prerequisites are met
/// are proposed.
pub fn suggest_next(progress: &ProgressRecord, current: Stage, config: &CoreConfig) -> Suggestion {
    if progress.project_brief.trim().is_empty() {
        return Suggestion {
            text: "Let's start with the project: what are you making, how long is it, and what is it about?".into(),
            kinds: vec![],
            stage: Some(Stage::Planning),
        };
    }
    let ready = |stage: Stage| -> Vec<ArtifactKind> {
        config
            .completion
            .get(&stage)
            .into_iter()
            .flatten()
            .copied()
            .filter(|k| !progress.has(*k) && config.missing_prerequisites(*k, progress).is_empty())
            .collect()
    };
    if current != Stage::Planning && !config.stage_complete(current, progress) {
        let kinds = ready(current);
        if !kinds.is_empty() {
            return Suggestion {
                text: format!("To finish {}, I suggest a {} next.", current.title(), titles(&kinds)),
                kinds,
                stage: Some(current),
            };
        }
    }
    let later: Vec<Stage> = Stage::BOARDS
        .iter()
        .copied()
        .filter(|s| !config.stage_complete(*s, progress))
        .collect();
    let Some(first) = later.iter().copied().find(|s| !ready(*s).is_empty()) else {
        return Suggestion {
            text: if later.is_empty() {
                "Every stage has its key artifacts. Review the boards and refine anything you want to revisit.".into()
            } else {
                format!(
                    "{} still needs work, but its prerequisites are missing.",
                    later.iter().map(|s| s.title()).collect::<Vec<_>>().join(", ")
                )
            },
            kinds: vec![],
            stage: None,
        };
    };
    let kinds = ready(first);
    let others: Vec<&str> = later
        .iter()
        .filter(|s| **s != first && !ready(**s).is_empty())
        .map(|s| s.title())
        .take(1)
        .collect();
    let alt = others.first().map(|o| format!(" (or {o})")).unwrap_or_default();
    Suggestion {
        text: format!("Next, we could move to {}{alt}: a {}.", first.title(), titles(&kinds)),
        kinds,
        stage: Some(first),
    }
}

// ---------------------------------------------------------------------------
// Interpreting a request

/// A user message with its selection and uploads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserMessage {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub uploads: Vec<AssetRef>,
}

fn missing_chain(kind: ArtifactKind, progress: &ProgressRecord, config: &CoreConfig) -> Vec<ArtifactKind> {
    let mut chain = Vec::new();
    let mut cursor = kind;
    while let Some(first) = config.missing_prerequisites(cursor, progress).first().copied() {
        if chain.contains(&first) {
            break;
        }
        chain.push(first);
        cursor = first;
    }
    chain
}

/// Turns a parsed intent into one decision. May record the brief and
/// allocates task ids; never touches the boards.
pub fn interpret_request(
    msg: &UserMessage,
    intent: &Intent,
    project: &mut Project,
    pending: Option<&Proposal>,
    config: &CoreConfig,
) -> Decision {
    let current = project.current_stage;

    if let (Some(p), Some(yes)) = (pending, intent.approval) {
        return if yes {
            Decision::Delegate {
                tasks: p.tasks.clone(),
                switch_to: p.switch_to.filter(|s| *s != current),
                note: None,
            }
        } else {
            Decision::RespondDirectly {
                text: "Understood, I'll hold off. Tell me what you'd like instead.".into(),
            }
        };
    }

    if let Some(role) = intent.direct_role {
        return Decision::OpenDirectChannel { role };
    }

    let mut kinds = intent.kinds.clone();
    let selected_kind = msg
        .selection
        .as_ref()
        .and_then(|s| project.boards.block(&s.block_id))
        .map(|b| b.kind);
    if kinds.is_empty() && intent.explicit_stage.is_none() {
        if let (Some(k), true) = (selected_kind, intent.refine) {
            kinds.push(KindRequest { kind: k, count: None });
        }
    }

    if kinds.is_empty() {
        if let Some(stage) = intent.explicit_stage {
            return Decision::SwitchStage {
                stage,
                reason: "requested by the user".into(),
            };
        }
        if current == Stage::Planning && project.progress.project_brief.trim().is_empty() {
            project.progress.project_brief = msg.text.trim().to_string();
            let s = suggest_next(&project.progress, current, config);
            return Decision::RespondDirectly {
                text: format!("Got it, I've recorded the project brief. {}", s.text),
            };
        }
        let s = suggest_next(&project.progress, current, config);
        if intent.ask_next && !s.kinds.is_empty() {
            return propose_suggestion(project, config, s, current);
        }
        let text = intent.reply.clone().unwrap_or_else(|| {
            format!("I'm not sure which artifact you mean. {}", s.text)
        });
        return Decision::RespondDirectly { text };
    }

    let choice = determine_stage(
        &Intent {
            kinds: kinds.clone(),
            ..intent.clone()
        },
        current,
        &project.progress,
        config,
    );
    let (in_stage, dropped): (Vec<KindRequest>, Vec<KindRequest>) =
        kinds.into_iter().partition(|k| k.kind.stage() == choice.stage);
    if in_stage.is_empty() {
        // stage named explicitly, artifacts belong elsewhere: just switch
        return Decision::SwitchStage {
            stage: choice.stage,
            reason: "requested by the user".into(),
        };
    }

    for k in &in_stage {
        let chain = missing_chain(k.kind, &project.progress, config);
        if let Some(&first) = chain.first() {
            let target = *chain.last().unwrap();
            let spec = build_task_spec(
                project,
                config,
                target,
                &SpecRequest {
                    instruction: &format!("Create a {} for the project.", target.title()),
                    ..SpecRequest::default()
                },
            );
            let tasks = spec.into_iter().collect();
            let text = if target == first {
                format!(
                    "A {} needs a {} first. Shall I have the {} make one?",
                    k.kind.title(),
                    first.title(),
                    target.owner().title()
                )
            } else {
                format!(
                    "A {} needs a {} first, which in turn needs a {}. Shall I start with the {}?",
                    k.kind.title(),
                    first.title(),
                    target.title(),
                    target.title()
                )
            };
            return Decision::AskApproval(Proposal {
                text,
                switch_to: Some(target.stage()).filter(|s| *s != current),
                tasks,
                missing: chain,
            });
        }
    }

    let mut notes = Vec::new();
    if let Some(word) = &intent.ambiguous {
        notes.push(format!(
            "I read \"{word}\" as a request for a {}; tell me if you meant something else.",
            in_stage[0].kind.title()
        ));
    }
    for k in &in_stage {
        let soft = config.missing_soft(k.kind, &project.progress);
        if !soft.is_empty() {
            notes.push(format!(
                "There is no {} yet, so the {} will be made without it.",
                titles(&soft),
                k.kind.title()
            ));
        }
    }
    if !dropped.is_empty() {
        notes.push(format!(
            "{} belongs to another stage; ask again once we're there.",
            titles(&dropped.iter().map(|k| k.kind).collect::<Vec<_>>())
        ));
    }

    let mut tasks = Vec::new();
    for k in &in_stage {
        let req = SpecRequest {
            instruction: &msg.text,
            count: k.count,
            terms: &intent.terms,
            selection: msg.selection.as_ref(),
            uploads: &msg.uploads,
            refine: intent.refine,
        };
        match build_task_spec(project, config, k.kind, &req) {
            Ok(spec) => tasks.push(spec),
            Err(e) => {
                return Decision::RespondDirectly {
                    text: format!("I can't start that: {e}."),
                }
            }
        }
    }

    let switch_to = (choice.stage != current).then_some(choice.stage);
    let needs_approval = (switch_to.is_some() && !choice.explicit) || tasks.len() > 1;
    if needs_approval {
        let mut text = String::new();
        if let Some(to) = switch_to {
            text.push_str(&format!("I'd move us to {} ", to.title()));
            text.push_str(&format!(
                "and ask the {} for {}.",
                role_list(&tasks),
                titles(&tasks.iter().filter_map(|t| t.task_kind.artifact()).collect::<Vec<_>>())
            ));
        } else {
            text.push_str(&format!(
                "I'd ask the {} for {}.",
                role_list(&tasks),
                titles(&tasks.iter().filter_map(|t| t.task_kind.artifact()).collect::<Vec<_>>())
            ));
        }
        if let Some(w) = choice.gate_warning {
            text.push(' ');
            text.push_str(&w);
        }
        for n in notes {
            text.push(' ');
            text.push_str(&n);
        }
        text.push_str(" Shall I go ahead?");
        return Decision::AskApproval(Proposal {
            text,
            switch_to,
            tasks,
            missing: vec![],
        });
    }
    Decision::Delegate {
        tasks,
        switch_to,
        note: (!notes.is_empty()).then(|| notes.join(" ")),
    }
}

fn role_list(tasks: &[TaskSpec]) -> String {
    let mut roles: Vec<AgentRole> = tasks.iter().map(|t| t.target_role).collect();
    roles.dedup();
    let names: Vec<String> = roles.iter().map(|r| r.title().to_string()).collect();
    names.join(" and ")
}

fn propose_suggestion(project: &mut Project, config: &CoreConfig, s: Suggestion, current: Stage) -> Decision {
    let mut tasks = Vec::new();
    for k in &s.kinds {
        let instruction = format!("Create a {} for the project.", k.title());
        if let Ok(spec) = build_task_spec(
            project,
            config,
            *k,
            &SpecRequest {
                instruction: &instruction,
                ..SpecRequest::default()
            },
        ) {
            tasks.push(spec);
        }
    }
    Decision::AskApproval(Proposal {
        text: format!("{} Shall I go ahead?", s.text),
        switch_to: s.stage.filter(|st| *st != current && *st != Stage::Planning),
        tasks,
        missing: vec![],
    })
}

// ---------------------------------------------------------------------------
// Validation

fn normalize_name(name: &str) -> String {
    let n = name.trim().to_lowercase();
    let n = n.trim_matches(|c: char| !c.is_alphanumeric());
    for article in ["the ", "a ", "an "] {
        if let Some(rest) = n.strip_prefix(article) {
            return rest.trim().to_string();
        }
    }
    n.to_string()
}

/// Character names from the canonical concept and sheet, normalized.
pub fn character_roster(project: &Project) -> BTreeSet<String> {
    let mut roster = BTreeSet::new();
    for (kind, ek) in [
        (ArtifactKind::CharacterConcept, ElementKind::CharacterEntry),
        (ArtifactKind::CharacterSheet, ElementKind::CharacterDesign),
    ] {
        if let Some(block) = project.progress.canonical(kind).and_then(|id| project.boards.block(id)) {
            for el in block.active().elements.iter().filter(|e| e.kind == ek) {
                if let Some(name) = el.attr("name").filter(|n| !n.trim().is_empty()) {
                    roster.insert(normalize_name(name));
                }
            }
        }
    }
    roster
}

pub fn split_names(list: &str) -> Vec<String> {
    list.split([',', ';', '&', '/'])
        .flat_map(|part| part.split(" and "))
        .map(normalize_name)
        .filter(|n| !n.is_empty())
        .collect()
}

fn in_roster(name: &str, roster: &BTreeSet<String>) -> bool {
    roster.contains(name)
        || roster
            .iter()
            .any(|r| r.split_whitespace().next() == Some(name) || name.split_whitespace().next() == Some(r.as_str()))
}

fn canonical_scene_numbers(project: &Project) -> Option<BTreeSet<String>> {
    let block = project
        .progress
        .canonical(ArtifactKind::SceneList)
        .and_then(|id| project.boards.block(id))?;
    Some(
        block
            .active()
            .elements
            .iter()
            .filter_map(|e| e.attr("scene_number"))
            .map(|s| s.trim().to_string())
            .collect(),
    )
}

fn element_haystack(el: &Element) -> String {
    let mut s = match &el.content {
        Content::Text(t) => t.to_lowercase(),
        Content::Image(_) => String::new(),
    };
    for v in el.attributes.values() {
        s.push(' ');
        s.push_str(&v.to_lowercase());
    }
    s
}

fn msg(check: Check, severity: Severity, text: impl Into<String>) -> ValidationMessage {
    ValidationMessage {
        check,
        severity,
        text: text.into(),
    }
}

/// Optional provider-backed review on top of the rule checks.
pub struct Judge<'a> {
    pub provider: &'a dyn TextProvider,
    pub prompts: &'a PromptLibrary,
}

#[derive(Deserialize)]
struct JudgeReply {
    ok: bool,
    #[serde(default)]
    issues: Vec<String>,
}

/// Reviews a result: schema and asset checks (format), requested count and
/// quoted terms (spec), roster and scene references (consistency), then the
/// judge if one is given. A failing judge only adds a degraded-mode warning.
pub fn validate_result(
    elements: &[Element],
    spec: &TaskSpec,
    project: &Project,
    assets: &AssetStore,
    judge: Option<&Judge<'_>>,
    cancel: &CancelToken,
) -> Result<ValidationReport, Interrupt> {
    let mut messages = Vec::new();
    let Some(kind) = spec.task_kind.artifact() else {
        return Ok(ValidationReport::from_messages(messages));
    };

    for v in check_elements(kind, elements) {
        messages.push(msg(Check::Format, Severity::Error, v.to_string()));
    }
    for el in elements {
        if let Content::Image(a) = &el.content {
            if !assets.exists(a) {
                messages.push(msg(
                    Check::Format,
                    Severity::Error,
                    format!("element {} references missing image `{a}`", el.element_id),
                ));
            }
        }
    }

    let primary = crate::schema::element_schema(kind).primary().kind;
    if let Some(n) = spec.requested_count {
        let got = elements.iter().filter(|e| e.kind == primary).count();
        if got != n {
            messages.push(msg(
                Check::Spec,
                Severity::Error,
                format!("asked for {n} {primary} elements, got {got}"),
            ));
        }
    }
    let hay: String = elements.iter().map(element_haystack).collect::<Vec<_>>().join("\n");
    for term in &spec.required_terms {
        if !hay.contains(&term.to_lowercase()) {
            messages.push(msg(
                Check::Spec,
                Severity::Error,
                format!("required term \"{term}\" does not appear in the result"),
            ));
        }
    }

    match kind {
        ArtifactKind::SceneList | ArtifactKind::Script => {
            let roster = character_roster(project);
            let named: Vec<(String, String)> = elements
                .iter()
                .filter_map(|e| e.attr("characters").map(|c| (e.attr("scene_number").unwrap_or("?").to_string(), c)))
                .flat_map(|(scene, list)| split_names(list).into_iter().map(move |n| (scene.clone(), n)))
                .collect();
            if roster.is_empty() {
                if !named.is_empty() {
                    messages.push(msg(
                        Check::Consistency,
                        Severity::Warning,
                        "no canonical character roster yet; character names were not checked",
                    ));
                }
            } else {
                for (scene, name) in named {
                    if !in_roster(&name, &roster) {
                        messages.push(msg(
                            Check::Consistency,
                            Severity::Error,
                            format!("scene {scene}: character `{name}` is not in the canonical roster"),
                        ));
                    }
                }
            }
        }
        ArtifactKind::StoryboardSequence | ArtifactKind::Styleframe => {
            let refs: Vec<&str> = elements
                .iter()
                .filter_map(|e| e.attr("scene_number"))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect();
            match canonical_scene_numbers(project) {
                Some(known) => {
                    for s in refs {
                        if !known.contains(s) {
                            messages.push(msg(
                                Check::Consistency,
                                Severity::Error,
                                format!("scene {s} does not exist in the canonical scene list"),
                            ));
                        }
                    }
                }
                None if !refs.is_empty() => messages.push(msg(
                    Check::Consistency,
                    Severity::Warning,
                    "no canonical scene list; scene numbers were not checked",
                )),
                None => {}
            }
        }
        _ => {}
    }

    if let Some(judge) = judge {
        let rendered = serde_json::to_string(elements).expect("elements serialize");
        let prompt = format!(
            "{}\n\n# Review\nInstruction: {}\nArtifact: {}\nResult: {}\n\nDoes the result satisfy the instruction and stay consistent with the project? \
             Reply with JSON {{\"ok\": bool, \"issues\": [string]}}.",
            judge.prompts.base.trim_end(),
            spec.instruction,
            kind.title(),
            rendered
        );
        let req = ProviderRequest {
            role: AgentRole::Core,
            stage: spec.stage,
            task_kind: None,
            instruction: format!("judge {}", kind.name()),
            prompt,
            reference_images: vec![],
            params: GenerationParams {
                temperature: 0.0,
                ..GenerationParams::default()
            },
        };
        cancel.checkpoint("before judge call")?;
        let reply = judge.provider.complete(&req, cancel);
        cancel.checkpoint("after judge call")?;
        let parsed = reply.map_err(|e| e.to_string()).and_then(|text| {
            extract_json(&text)
                .ok_or_else(|| "judge reply has no JSON".to_string())
                .and_then(|j| serde_json::from_str::<JudgeReply>(j).map_err(|e| e.to_string()))
        });
        match parsed {
            Ok(r) if r.ok => {}
            Ok(r) => {
                let issues = if r.issues.is_empty() { vec!["judge rejected the result".to_string()] } else { r.issues };
                for i in issues {
                    messages.push(msg(Check::Spec, Severity::Error, i));
                }
            }
            Err(e) => messages.push(msg(
                Check::Spec,
                Severity::Warning,
                format!("degraded mode: judged check skipped ({e})"),
            )),
        }
    }

    Ok(ValidationReport::from_messages(messages))
}

// ---------------------------------------------------------------------------
// Publication

/// Structural outcome of publishing under a given intent and registry state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedEffect {
    pub effect: PublishEffect,
    /// Block receiving the new version, or the new block's parent.
    pub target: Option<BlockId>,
    pub becomes_canonical: bool,
}

/// The replace-vs-add table as a pure function of the intent and the
/// current canonical block of the kind.
pub fn publication_effect(intent: &PublicationIntent, canonical: Option<&BlockId>) -> PlannedEffect {
    match (intent, canonical) {
        (PublicationIntent::ChildOf { block_id }, c) => PlannedEffect {
            effect: PublishEffect::Child,
            target: Some(block_id.clone()),
            becomes_canonical: c.is_none_or(|c| c == block_id),
        },
        (PublicationIntent::OverwriteArtifact { .. }, Some(c)) => PlannedEffect {
            effect: PublishEffect::NewVersion,
            target: Some(c.clone()),
            becomes_canonical: true,
        },
        (PublicationIntent::OverwriteArtifact { .. }, None) | (PublicationIntent::NewRoot, _) => PlannedEffect {
            effect: PublishEffect::NewRoot,
            target: None,
            becomes_canonical: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Published {
    pub block_id: BlockId,
    pub effect: PublishEffect,
    pub version_index: usize,
    pub canonical: bool,
}

/// Applies an approved result to the boards and the registry. Operates on
/// the request's working copy, so a failure leaves nothing behind once the
/// copy is discarded.
pub fn publish_result(
    project: &mut Project,
    spec: &TaskSpec,
    elements: Vec<Element>,
    now: Timestamp,
) -> Result<Published, BoardError> {
    let kind = spec
        .task_kind
        .artifact()
        .expect("only artifact tasks are published");
    let plan = publication_effect(&spec.publication_intent, project.progress.canonical(kind));
    let origin = VersionOrigin::Task {
        task_id: spec.task_id.clone(),
    };
    let (block_id, version_index) = match plan.effect {
        PublishEffect::NewVersion => {
            let id = plan.target.clone().expect("overwrite has a target");
            let v = project.boards.add_version(&id, elements, origin, now)?;
            (id, v)
        }
        PublishEffect::Child | PublishEffect::NewRoot => {
            let block = project.boards.create_block(
                kind.stage(),
                kind,
                plan.target.as_ref(),
                elements,
                origin,
                now,
            )?;
            (block.block_id.clone(), 0)
        }
    };
    if plan.becomes_canonical {
        project.progress.set_canonical(kind, block_id.clone());
    }
    project.last_published = Some(block_id.clone());
    Ok(Published {
        block_id,
        effect: plan.effect,
        version_index,
        canonical: project.progress.canonical(kind) == Some(&project.last_published.clone().unwrap()),
    })
}

/// Recomputes every stage's status from the registry and the current stage.
pub fn refresh_status(project: &mut Project, config: &CoreConfig) {
    for stage in Stage::ALL {
        let status = if config.stage_complete(stage, &project.progress) {
            StageStatus::Complete
        } else if stage == project.current_stage
            || project.progress.canonical.get(&stage).is_some_and(|m| !m.is_empty())
        {
            StageStatus::InProgress
        } else {
            StageStatus::NotStarted
        };
        project.progress.stage_status.insert(stage, status);
    }
}

/// One-line summary of a published result for the chat.
pub fn summarize_publication(spec: &TaskSpec, p: &Published, elements: &[Element]) -> String {
    let kind = spec.task_kind.artifact().map_or("result", |k| k.title());
    let what = match p.effect {
        PublishEffect::NewRoot => "as a new block".to_string(),
        PublishEffect::Child => "as a new branch".to_string(),
        PublishEffect::NewVersion => format!("as version {}", p.version_index + 1),
    };
    let first = elements
        .iter()
        .find_map(|e| e.content.as_text())
        .map(|t| {
            let short: String = t.chars().take(80).collect();
            if t.chars().count() > 80 {
                format!(" First item: {short}…")
            } else {
                format!(" First item: {short}")
            }
        })
        .unwrap_or_default();
    format!(
        "{}'s {} is on the {} board {} with {} item{}.{}",
        spec.target_role.title(),
        kind,
        spec.stage.title(),
        what,
        elements.len(),
        if elements.len() == 1 { "" } else { "s" },
        first
    )
}
