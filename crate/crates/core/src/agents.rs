//! Specialist agents: one tool per artifact kind, executed against the
//! text and image providers.
//!
//! Agents only check that provider output parses; schema and consistency
//! checks belong to the core agent.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::Value;

use crate::assets::AssetStore;
use crate::cancel::{CancelToken, Interrupt};
use crate::core_agent::extract_json;
use crate::event::ErrorReason;
use crate::model::{AgentRole, ArtifactKind, Element, ElementKind, TaskId, TaskKind, TaskSpec};
use crate::prompts::{assemble_prompt, tool_name, PromptError, PromptLibrary};
use crate::provider::{GenerationParams, ImageRequest, ProviderError, ProviderRequest, Providers};
use crate::schema::{element_schema, ContentType};

/// A callable tool: produces one artifact kind, owned by one role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolDef {
    pub name: String,
    pub owner: AgentRole,
    pub output: ArtifactKind,
}

pub fn tool_registry() -> Vec<ToolDef> {
    ArtifactKind::ALL
        .iter()
        .map(|k| ToolDef {
            name: tool_name(*k),
            owner: k.owner(),
            output: *k,
        })
        .collect()
}

/// Tools available to `role`.
pub fn tools_for(role: AgentRole) -> Vec<ToolDef> {
    tool_registry().into_iter().filter(|t| t.owner == role).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("{role} agent has no tool for {kind}")]
    NoSuchTool { role: AgentRole, kind: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error(transparent)]
    Interrupted(#[from] Interrupt),
    #[error("prompt unavailable: {0}")]
    Prompt(String),
}

impl From<PromptError> for AgentError {
    fn from(e: PromptError) -> Self {
        AgentError::Prompt(e.to_string())
    }
}

impl AgentError {
    pub fn reason(&self) -> ErrorReason {
        match self {
            AgentError::Provider(ProviderError::Cancelled) | AgentError::Interrupted(Interrupt::Cancelled) => {
                ErrorReason::Cancelled
            }
            AgentError::Provider(ProviderError::Exception(_)) | AgentError::Interrupted(Interrupt::Fault { .. }) => {
                ErrorReason::ToolException
            }
            AgentError::Provider(_) => ErrorReason::ProviderFailure,
            AgentError::Malformed(_) => ErrorReason::MalformedOutput,
            AgentError::NoSuchTool { .. } | AgentError::Prompt(_) => ErrorReason::Internal,
        }
    }
}

/// Shared resources for running agents.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub providers: &'a Providers,
    pub prompts: &'a PromptLibrary,
    pub assets: &'a AssetStore,
    pub cancel: &'a CancelToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentResult {
    pub task_id: TaskId,
    pub role: AgentRole,
    pub kind: TaskKind,
    pub elements: Vec<Element>,
    /// Text completions requested, re-prompts included.
    pub attempts: u32,
    /// Number of images generated.
    pub images: usize,
}

/// An element as a provider describes it, before images exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedElement {
    pub kind: ElementKind,
    pub body: ParsedBody,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedBody {
    Text(String),
    ImagePrompt(String),
}

#[derive(Deserialize)]
struct RawOutput {
    elements: Vec<RawElement>,
}

#[derive(Deserialize)]
struct RawElement {
    kind: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    image_prompt: Option<String>,
    #[serde(default)]
    attributes: BTreeMap<String, Value>,
}

fn attr_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(items) => items.iter().map(attr_string).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// Parses a tool reply of the form `{"elements": [...]}`. Code fences and
/// prose around the object are ignored.
pub fn parse_output(text: &str) -> Result<Vec<ParsedElement>, String> {
    let json = extract_json(text).ok_or("no JSON object in reply")?;
    let raw: RawOutput = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if raw.elements.is_empty() {
        return Err("reply has no elements".into());
    }
    raw.elements
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let kind: ElementKind = serde_json::from_value(Value::String(e.kind.clone()))
                .map_err(|_| format!("element {i}: unknown kind `{}`", e.kind))?;
            let body = match (e.text, e.image_prompt) {
                (_, Some(p)) => ParsedBody::ImagePrompt(p),
                (Some(t), None) => ParsedBody::Text(t),
                (None, None) => return Err(format!("element {i}: neither text nor image_prompt")),
            };
            Ok(ParsedElement {
                kind,
                body,
                attributes: e.attributes.iter().map(|(k, v)| (k.clone(), attr_string(v))).collect(),
            })
        })
        .collect()
}

fn wants_image(artifact: ArtifactKind, el: ElementKind) -> bool {
    element_schema(artifact)
        .requirement(el)
        .is_some_and(|r| r.content == ContentType::Image)
}

fn text_request(spec: &TaskSpec, prompt: String) -> ProviderRequest {
    ProviderRequest {
        role: spec.target_role,
        stage: spec.stage,
        task_kind: Some(spec.task_kind),
        instruction: spec.instruction.clone(),
        prompt,
        reference_images: spec.image_refs().into_iter().cloned().collect(),
        params: GenerationParams::default(),
    }
}

/// Runs one artifact task: prompt, parse (one re-prompt on a parse failure),
/// then one image per image element for visual kinds. Every provider call is
/// bracketed by safe-points.
pub fn execute_task(spec: &TaskSpec, ctx: AgentContext<'_>) -> Result<AgentResult, AgentError> {
    let TaskKind::Artifact(kind) = spec.task_kind else {
        return Err(AgentError::NoSuchTool {
            role: spec.target_role,
            kind: spec.task_kind.name().to_string(),
        });
    };
    if kind.owner() != spec.target_role {
        return Err(AgentError::NoSuchTool {
            role: spec.target_role,
            kind: kind.name().to_string(),
        });
    }
    let base_prompt = assemble_prompt(spec.target_role, spec.stage, spec, ctx.prompts)?;
    let mut prompt = base_prompt.clone();
    let mut attempts = 0;
    let parsed = loop {
        attempts += 1;
        ctx.cancel.checkpoint("before text call")?;
        let reply = ctx.providers.text.complete(&text_request(spec, prompt.clone()), ctx.cancel)?;
        ctx.cancel.checkpoint("after text call")?;
        match parse_output(&reply) {
            Ok(p) => break p,
            Err(e) if attempts == 1 => {
                prompt = format!(
                    "{base_prompt}\n# Correction\nYour previous reply could not be read ({e}). Reply with the JSON object only.\n"
                );
            }
            Err(e) => return Err(AgentError::Malformed(e)),
        }
    };

    let refs: Vec<_> = spec.image_refs().into_iter().cloned().collect();
    let mut elements = Vec::with_capacity(parsed.len());
    let mut images = 0;
    for (i, p) in parsed.into_iter().enumerate() {
        let id = format!("e{i}");
        let mut el = match p.body {
            ParsedBody::ImagePrompt(prompt) if wants_image(kind, p.kind) => {
                let req = ImageRequest {
                    role: spec.target_role,
                    stage: spec.stage,
                    task_kind: Some(spec.task_kind),
                    prompt,
                    references: refs.clone(),
                };
                ctx.cancel.checkpoint("before image call")?;
                let asset = ctx.providers.image.generate_image(&req, ctx.assets, ctx.cancel)?;
                ctx.cancel.checkpoint("after image call")?;
                images += 1;
                Element::image(id, p.kind, asset)
            }
            // an image prompt where text belongs is kept as text; the
            // schema check reports the mismatch
            ParsedBody::ImagePrompt(t) | ParsedBody::Text(t) => Element::text(id, p.kind, t),
        };
        el.attributes = p.attributes;
        elements.push(el);
    }
    Ok(AgentResult {
        task_id: spec.task_id.clone(),
        role: spec.target_role,
        kind: spec.task_kind,
        elements,
        attempts,
        images,
    })
}

/// Runs independent tasks on up to `fan_out` threads. Results come back in
/// input order whatever the completion order.
pub fn parallel_execute(
    specs: &[TaskSpec],
    ctx: AgentContext<'_>,
    fan_out: usize,
) -> Vec<Result<AgentResult, AgentError>> {
    if specs.len() <= 1 || fan_out <= 1 {
        return specs.iter().map(|s| execute_task(s, ctx)).collect();
    }
    let slots: Vec<Mutex<Option<Result<AgentResult, AgentError>>>> =
        specs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..fan_out.min(specs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = specs.get(i) else { break };
                let r = execute_task(spec, ctx);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// A specialist's reply on a direct channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectReply {
    pub reply: String,
    /// A tool call the specialist chose to make.
    pub tool_call: Option<(ArtifactKind, String)>,
}

#[derive(Deserialize)]
struct RawDirect {
    reply: String,
    #[serde(default)]
    tool_call: Option<RawToolCall>,
}

#[derive(Deserialize)]
struct RawToolCall {
    kind: ArtifactKind,
    instruction: String,
}

/// Plain text is a reply; a JSON object may add a tool call.
pub fn parse_direct(text: &str) -> DirectReply {
    let structured = extract_json(text).and_then(|j| serde_json::from_str::<RawDirect>(j).ok());
    match structured {
        Some(r) => DirectReply {
            reply: r.reply,
            tool_call: r.tool_call.map(|t| (t.kind, t.instruction)),
        },
        None => DirectReply {
            reply: text.trim().to_string(),
            tool_call: None,
        },
    }
}

pub const DIRECT_CONTRACT: &str = "Reply in plain text, or with JSON {\"reply\": string, \"tool_call\": {\"kind\": <artifact kind>, \"instruction\": string}} to produce an artifact with one of your tools.";

/// One turn of a direct conversation with a specialist.
pub fn chat_direct(spec: &TaskSpec, ctx: AgentContext<'_>) -> Result<DirectReply, AgentError> {
    let mut prompt = assemble_prompt(spec.target_role, spec.stage, spec, ctx.prompts)?;
    let tools: Vec<String> = tools_for(spec.target_role)
        .iter()
        .map(|t| format!("{} ({})", t.name, t.output.name()))
        .collect();
    prompt.push_str(&format!("\n# Tools\n{}\n{DIRECT_CONTRACT}\n", tools.join(", ")));
    ctx.cancel.checkpoint("before text call")?;
    let reply = ctx.providers.text.complete(&text_request(spec, prompt), ctx.cancel)?;
    ctx.cancel.checkpoint("after text call")?;
    Ok(parse_direct(&reply))
}
