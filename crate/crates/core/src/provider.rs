//! Text completion and image generation behind one interface.
//!
//! [`ScriptedProvider`] is the deterministic implementation used by tests and
//! scenarios: an ordered rule table matched first-hit on role, task kind and
//! an optional instruction substring. Live providers talk to HTTP endpoints
//! configured through environment variables; this module is the only place
//! in the crate that performs network I/O.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assets::AssetStore;
use crate::cancel::CancelToken;
use crate::model::{AgentRole, AssetRef, Stage, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Timeout,
    Transport,
    Refusal,
    NoRule,
    BadResponse,
}

impl FailureReason {
    pub fn code(self) -> &'static str {
        match self {
            FailureReason::Timeout => "timeout",
            FailureReason::Transport => "transport",
            FailureReason::Refusal => "refusal",
            FailureReason::NoRule => "no-rule",
            FailureReason::BadResponse => "bad-response",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider failure ({}): {detail}", reason.code())]
    Failure {
        reason: FailureReason,
        detail: String,
    },
    /// An unhandled exception inside a tool.
    #[error("tool exception: {0}")]
    Exception(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("cancelled")]
    Cancelled,
    #[error("asset write failed: {0}")]
    AssetWrite(String),
}

impl ProviderError {
    pub fn failure(reason: FailureReason, detail: impl Into<String>) -> Self {
        ProviderError::Failure {
            reason,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_length: u32,
    /// Only meaningful to the scripted provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_length: 4096,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub role: AgentRole,
    pub stage: Stage,
    /// `None` for core-internal calls (intent, judging, memory).
    pub task_kind: Option<TaskKind>,
    /// Raw instruction, used for rule matching; the prompt already embeds it.
    pub instruction: String,
    pub prompt: String,
    #[serde(default)]
    pub reference_images: Vec<AssetRef>,
    #[serde(default)]
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub role: AgentRole,
    pub stage: Stage,
    pub task_kind: Option<TaskKind>,
    pub prompt: String,
    pub references: Vec<AssetRef>,
}

pub trait TextProvider: Send + Sync {
    fn complete(&self, req: &ProviderRequest, cancel: &CancelToken) -> Result<String, ProviderError>;
}

pub trait ImageProvider: Send + Sync {
    /// Generates an image, stores it in `assets`, and returns its reference.
    fn generate_image(
        &self,
        req: &ImageRequest,
        assets: &AssetStore,
        cancel: &CancelToken,
    ) -> Result<AssetRef, ProviderError>;
}

/// Shared precondition of every image provider.
pub fn check_image_request(req: &ImageRequest, assets: &AssetStore) -> Result<(), ProviderError> {
    if req.prompt.trim().is_empty() {
        return Err(ProviderError::Precondition("empty image prompt".into()));
    }
    if let Some(bad) = req.references.iter().find(|r| !assets.exists(r)) {
        return Err(ProviderError::Precondition(format!(
            "unresolvable reference `{bad}`"
        )));
    }
    Ok(())
}

/// Text and image providers used by an engine. `light` serves lightweight
/// calls such as memory query expansion.
#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn TextProvider>,
    pub light: Arc<dyn TextProvider>,
    pub image: Arc<dyn ImageProvider>,
}

impl Providers {
    pub fn scripted(provider: Arc<ScriptedProvider>) -> Self {
        Self {
            text: provider.clone(),
            light: provider.clone(),
            image: provider,
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted provider

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    #[default]
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedFaultKind {
    Failure,
    Timeout,
    Refusal,
    Exception,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFault {
    pub kind: ScriptedFaultKind,
    #[serde(default)]
    pub detail: String,
}

/// One rule of a scripted program. Exactly one of `output` or `fault` should
/// be set; an image-channel rule without a fault yields the placeholder image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(default)]
    pub channel: Channel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_kind: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_contains: Option<String>,
    /// Strings are returned verbatim; other JSON values are returned compact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<ScriptedFault>,
    /// How many times the rule may fire; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl ScriptedRule {
    pub fn text(role: AgentRole, task_kind: TaskKind, output: serde_json::Value) -> Self {
        Self {
            channel: Channel::Text,
            role: Some(role),
            task_kind: Some(task_kind),
            instruction_contains: None,
            output: Some(output),
            fault: None,
            times: None,
            delay_ms: 0,
        }
    }

    pub fn fault(role: AgentRole, task_kind: TaskKind, kind: ScriptedFaultKind) -> Self {
        Self {
            output: None,
            fault: Some(ScriptedFault {
                kind,
                detail: "scripted fault".into(),
            }),
            ..Self::text(role, task_kind, serde_json::Value::Null)
        }
    }

    pub fn times(mut self, n: u32) -> Self {
        self.times = Some(n);
        self
    }

    pub fn when_instruction(mut self, needle: &str) -> Self {
        self.instruction_contains = Some(needle.to_string());
        self
    }

    pub fn delay(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }

    fn matches(&self, channel: Channel, role: AgentRole, kind: Option<TaskKind>, instruction: &str) -> bool {
        self.channel == channel
            && self.role.is_none_or(|r| r == role)
            && self.task_kind.is_none_or(|k| Some(k) == kind)
            && self.instruction_contains.as_ref().is_none_or(|needle| {
                instruction.to_lowercase().contains(&needle.to_lowercase())
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProgram {
    pub rules: Vec<ScriptedRule>,
}

impl ScriptedProgram {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self { rules }
    }

    pub fn push(&mut self, rule: ScriptedRule) -> &mut Self {
        self.rules.push(rule);
        self
    }
}

/// Record of one call made to a scripted provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub channel: Channel,
    pub role: AgentRole,
    pub task_kind: Option<TaskKind>,
    pub rule: Option<usize>,
}

#[derive(Debug)]
pub struct ScriptedProvider {
    program: ScriptedProgram,
    consumed: Vec<AtomicU32>,
    calls: Mutex<Vec<CallRecord>>,
}

impl ScriptedProvider {
    pub fn new(program: ScriptedProgram) -> Self {
        let consumed = program.rules.iter().map(|_| AtomicU32::new(0)).collect();
        Self {
            program,
            consumed,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn program(&self) -> &ScriptedProgram {
        &self.program
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    /// How often each rule has fired.
    pub fn consumed(&self) -> Vec<u32> {
        self.consumed.iter().map(|c| c.load(Ordering::SeqCst)).collect()
    }

    /// First matching rule with uses left; claims one use atomically.
    fn claim(&self, channel: Channel, role: AgentRole, kind: Option<TaskKind>, instruction: &str) -> Option<usize> {
        for (i, rule) in self.program.rules.iter().enumerate() {
            if !rule.matches(channel, role, kind, instruction) {
                continue;
            }
            let claimed = self.consumed[i]
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| match rule.times {
                    Some(limit) if used >= limit => None,
                    _ => Some(used + 1),
                })
                .is_ok();
            if claimed {
                return Some(i);
            }
        }
        None
    }

    fn record(&self, channel: Channel, role: AgentRole, task_kind: Option<TaskKind>, rule: Option<usize>) {
        self.calls.lock().unwrap().push(CallRecord {
            channel,
            role,
            task_kind,
            rule,
        });
    }

    fn wait(&self, ms: u64, cancel: &CancelToken) -> Result<(), ProviderError> {
        let step = Duration::from_millis(2);
        let mut waited = 0;
        while waited < ms {
            if cancel.is_cancelled() {
                return Err(ProviderError::Cancelled);
            }
            std::thread::sleep(step.min(Duration::from_millis(ms - waited)));
            waited += 2;
        }
        Ok(())
    }

    fn fault_error(fault: &ScriptedFault) -> ProviderError {
        let detail = if fault.detail.is_empty() {
            "scripted fault".to_string()
        } else {
            fault.detail.clone()
        };
        match fault.kind {
            ScriptedFaultKind::Failure => ProviderError::failure(FailureReason::Transport, detail),
            ScriptedFaultKind::Timeout => ProviderError::failure(FailureReason::Timeout, detail),
            ScriptedFaultKind::Refusal => ProviderError::failure(FailureReason::Refusal, detail),
            ScriptedFaultKind::Exception => ProviderError::Exception(detail),
        }
    }
}

impl TextProvider for ScriptedProvider {
    fn complete(&self, req: &ProviderRequest, cancel: &CancelToken) -> Result<String, ProviderError> {
        if req.prompt.trim().is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        let hit = self.claim(Channel::Text, req.role, req.task_kind, &req.instruction);
        self.record(Channel::Text, req.role, req.task_kind, hit);
        let Some(i) = hit else {
            return Err(ProviderError::failure(
                FailureReason::NoRule,
                format!(
                    "no scripted rule for {} / {}",
                    req.role.name(),
                    req.task_kind.map(|k| k.name()).unwrap_or("-")
                ),
            ));
        };
        let rule = &self.program.rules[i];
        self.wait(rule.delay_ms, cancel)?;
        if let Some(fault) = &rule.fault {
            return Err(Self::fault_error(fault));
        }
        Ok(match &rule.output {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => String::new(),
        })
    }
}

impl ImageProvider for ScriptedProvider {
    fn generate_image(
        &self,
        req: &ImageRequest,
        assets: &AssetStore,
        cancel: &CancelToken,
    ) -> Result<AssetRef, ProviderError> {
        check_image_request(req, assets)?;
        let hit = self.claim(Channel::Image, req.role, req.task_kind, &req.prompt);
        self.record(Channel::Image, req.role, req.task_kind, hit);
        if let Some(i) = hit {
            let rule = &self.program.rules[i];
            self.wait(rule.delay_ms, cancel)?;
            if let Some(fault) = &rule.fault {
                return Err(Self::fault_error(fault));
            }
        }
        let digest = placeholder_digest(&req.prompt, &req.references);
        let png = placeholder_png(&digest).map_err(|e| ProviderError::AssetWrite(e.to_string()))?;
        assets
            .write(&placeholder_file_name(&digest), &png)
            .map_err(|e| ProviderError::AssetWrite(e.to_string()))
    }
}

/// Digest a placeholder image encodes: SHA-256 over the prompt bytes, then
/// for each reference a 0x1F separator followed by the reference path.
pub fn placeholder_digest(prompt: &str, references: &[AssetRef]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    for r in references {
        h.update([0x1f]);
        h.update(r.as_str().as_bytes());
    }
    h.finalize().into()
}

pub fn placeholder_file_name(digest: &[u8; 32]) -> String {
    format!("img-{}.png", hex::encode(&digest[..8]))
}

/// Side length of placeholder images, in pixels.
pub const PLACEHOLDER_SIZE: u32 = 8;

/// An 8x8 RGB PNG whose pixel bytes are the digest repeated, with the full
/// hex digest in a `digest` text chunk.
pub fn placeholder_png(digest: &[u8; 32]) -> Result<Vec<u8>, png::EncodingError> {
    let n = (PLACEHOLDER_SIZE * PLACEHOLDER_SIZE * 3) as usize;
    let pixels: Vec<u8> = digest.iter().copied().cycle().take(n).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, PLACEHOLDER_SIZE, PLACEHOLDER_SIZE);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk("digest".to_string(), hex::encode(digest))?;
        let mut writer = enc.write_header()?;
        writer.write_image_data(&pixels)?;
    }
    Ok(out)
}

/// Reads back the digest from a placeholder's pixel data.
pub fn decode_placeholder_digest(bytes: &[u8]) -> Option<[u8; 32]> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().ok()?;
    let mut buf = vec![0; reader.output_buffer_size()?];
    let info = reader.next_frame(&mut buf).ok()?;
    buf.get(..32)?.try_into().ok().filter(|_| info.width == PLACEHOLDER_SIZE)
}

// ---------------------------------------------------------------------------
// Live providers

/// Endpoint settings for one live service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
}

impl EndpointConfig {
    /// Reads `<PREFIX>_URL`, `<PREFIX>_KEY`, `<PREFIX>_MODEL` and
    /// `<PREFIX>_TIMEOUT_SECS`. Returns `None` when the URL is unset.
    pub fn from_env(prefix: &str) -> Option<Self> {
        let var = |s: &str| std::env::var(format!("{prefix}_{s}")).ok().filter(|v| !v.is_empty());
        Some(Self {
            url: var("URL")?,
            api_key: var("KEY"),
            model: var("MODEL"),
            timeout: Duration::from_secs(
                var("TIMEOUT_SECS").and_then(|s| s.parse().ok()).unwrap_or(120),
            ),
        })
    }
}

fn client(cfg: &EndpointConfig) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| ProviderError::failure(FailureReason::Transport, e.to_string()))
}

fn send_json(cfg: &EndpointConfig, body: &serde_json::Value) -> Result<reqwest::blocking::Response, ProviderError> {
    let mut rb = client(cfg)?.post(&cfg.url).json(body);
    if let Some(key) = &cfg.api_key {
        rb = rb.bearer_auth(key);
    }
    let resp = rb.send().map_err(|e| {
        let reason = if e.is_timeout() {
            FailureReason::Timeout
        } else {
            FailureReason::Transport
        };
        ProviderError::failure(reason, e.to_string())
    })?;
    if !resp.status().is_success() {
        return Err(ProviderError::failure(
            FailureReason::Transport,
            format!("HTTP {}", resp.status()),
        ));
    }
    Ok(resp)
}

/// Chat-completions style text endpoint.
#[derive(Debug, Clone)]
pub struct HttpTextProvider {
    cfg: EndpointConfig,
}

impl HttpTextProvider {
    pub fn new(cfg: EndpointConfig) -> Self {
        Self { cfg }
    }
}

impl TextProvider for HttpTextProvider {
    fn complete(&self, req: &ProviderRequest, cancel: &CancelToken) -> Result<String, ProviderError> {
        if req.prompt.trim().is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": [{"role": "system", "content": req.prompt}],
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_length,
        });
        let v: serde_json::Value = send_json(&self.cfg, &body)?
            .json()
            .map_err(|e| ProviderError::failure(FailureReason::BadResponse, e.to_string()))?;
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        let choice = &v["choices"][0];
        if choice["finish_reason"] == "content_filter" {
            return Err(ProviderError::failure(FailureReason::Refusal, "content filtered"));
        }
        choice["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::failure(FailureReason::BadResponse, "no message content"))
    }
}

/// Image endpoint taking `{prompt, reference_images: [base64]}` and returning
/// `{image_base64}` or raw image bytes.
#[derive(Debug, Clone)]
pub struct HttpImageProvider {
    cfg: EndpointConfig,
}

impl HttpImageProvider {
    pub fn new(cfg: EndpointConfig) -> Self {
        Self { cfg }
    }
}

impl ImageProvider for HttpImageProvider {
    fn generate_image(
        &self,
        req: &ImageRequest,
        assets: &AssetStore,
        cancel: &CancelToken,
    ) -> Result<AssetRef, ProviderError> {
        use base64::Engine as _;
        check_image_request(req, assets)?;
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        let refs = req
            .references
            .iter()
            .map(|r| {
                assets
                    .read(r)
                    .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
                    .map_err(|e| ProviderError::Precondition(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let body = serde_json::json!({
            "model": self.cfg.model,
            "prompt": req.prompt,
            "reference_images": refs,
        });
        let resp = send_json(&self.cfg, &body)?;
        let is_json = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("application/json"));
        let bytes = if is_json {
            let v: serde_json::Value = resp
                .json()
                .map_err(|e| ProviderError::failure(FailureReason::BadResponse, e.to_string()))?;
            let b64 = v["image_base64"].as_str().ok_or_else(|| {
                ProviderError::failure(FailureReason::BadResponse, "missing image_base64")
            })?;
            base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| ProviderError::failure(FailureReason::BadResponse, e.to_string()))?
        } else {
            resp.bytes()
                .map_err(|e| ProviderError::failure(FailureReason::Transport, e.to_string()))?
                .to_vec()
        };
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        let digest: [u8; 32] = Sha256::digest(&bytes).into();
        assets
            .write(&format!("gen-{}.png", hex::encode(&digest[..8])), &bytes)
            .map_err(|e| ProviderError::AssetWrite(e.to_string()))
    }
}

/// Live providers from the environment: `PREPROD_TEXT_*` for the main model,
/// `PREPROD_LIGHT_*` for lightweight calls (falls back to the main model),
/// `PREPROD_IMAGE_*` for images. Returns `None` unless text and image URLs
/// are both set.
pub fn providers_from_env() -> Option<Providers> {
    let text = EndpointConfig::from_env("PREPROD_TEXT")?;
    let image = EndpointConfig::from_env("PREPROD_IMAGE")?;
    let light = EndpointConfig::from_env("PREPROD_LIGHT").unwrap_or_else(|| text.clone());
    Some(Providers {
        text: Arc::new(HttpTextProvider::new(text)),
        light: Arc::new(HttpTextProvider::new(light)),
        image: Arc::new(HttpImageProvider::new(image)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArtifactKind;
    use serde_json::json;

    fn req(role: AgentRole, kind: ArtifactKind, instruction: &str) -> ProviderRequest {
        ProviderRequest {
            role,
            stage: kind.stage(),
            task_kind: Some(TaskKind::Artifact(kind)),
            instruction: instruction.into(),
            prompt: format!("prompt for {instruction}"),
            reference_images: vec![],
            params: GenerationParams::default(),
        }
    }

    #[test]
    fn scripted_output_is_verbatim_and_repeatable() {
        let out = json!({"elements": [{"kind": "concept-option", "text": "a"}]});
        let p = ScriptedProvider::new(ScriptedProgram::new(vec![ScriptedRule::text(
            AgentRole::Ideation,
            TaskKind::Artifact(ArtifactKind::StoryConcept),
            out.clone(),
        )]));
        let r = req(AgentRole::Ideation, ArtifactKind::StoryConcept, "three concepts");
        let a = p.complete(&r, &CancelToken::new()).unwrap();
        let b = p.complete(&r, &CancelToken::new()).unwrap();
        assert_eq!(a, out.to_string());
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_eq!(p.consumed(), vec![2]);
    }

    #[test]
    fn no_matching_rule_is_a_machine_readable_failure() {
        let p = ScriptedProvider::new(ScriptedProgram::default());
        let err = p
            .complete(&req(AgentRole::Art, ArtifactKind::HeroImage, "x"), &CancelToken::new())
            .unwrap_err();
        assert!(matches!(
            err,
            ProviderError::Failure {
                reason: FailureReason::NoRule,
                ..
            }
        ));
    }

    #[test]
    fn first_match_with_use_limits() {
        let kind = TaskKind::Artifact(ArtifactKind::SceneList);
        let p = ScriptedProvider::new(ScriptedProgram::new(vec![
            ScriptedRule::text(AgentRole::Scripting, kind, json!("first")).times(1),
            ScriptedRule::text(AgentRole::Scripting, kind, json!("special")).when_instruction("NOIR"),
            ScriptedRule::text(AgentRole::Scripting, kind, json!("fallback")),
        ]));
        let t = CancelToken::new();
        let plain = req(AgentRole::Scripting, ArtifactKind::SceneList, "scenes");
        let noir = req(AgentRole::Scripting, ArtifactKind::SceneList, "make it noir");
        assert_eq!(p.complete(&noir, &t).unwrap(), "first");
        assert_eq!(p.complete(&noir, &t).unwrap(), "special");
        assert_eq!(p.complete(&plain, &t).unwrap(), "fallback");
    }

    #[test]
    fn faults_and_delays_observe_cancellation() {
        let kind = TaskKind::Artifact(ArtifactKind::Script);
        let p = ScriptedProvider::new(ScriptedProgram::new(vec![
            ScriptedRule::fault(AgentRole::Scripting, kind, ScriptedFaultKind::Exception).times(1),
            ScriptedRule::text(AgentRole::Scripting, kind, json!("ok")).delay(10_000),
        ]));
        let r = req(AgentRole::Scripting, ArtifactKind::Script, "x");
        assert!(matches!(
            p.complete(&r, &CancelToken::new()),
            Err(ProviderError::Exception(_))
        ));
        let t = CancelToken::new();
        let t2 = t.clone();
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            t2.cancel();
        });
        let started = std::time::Instant::now();
        assert_eq!(p.complete(&r, &t), Err(ProviderError::Cancelled));
        assert!(started.elapsed() < Duration::from_secs(5));
        h.join().unwrap();
    }

    #[test]
    fn empty_prompt_rejected_before_any_call() {
        let p = ScriptedProvider::new(ScriptedProgram::default());
        let mut r = req(AgentRole::Ideation, ArtifactKind::Logline, "x");
        r.prompt = "  ".into();
        assert!(matches!(
            p.complete(&r, &CancelToken::new()),
            Err(ProviderError::Precondition(_))
        ));
        assert!(p.calls().is_empty());

        // the live provider guards the same way and never touches the network
        let live = HttpTextProvider::new(EndpointConfig {
            url: "http://127.0.0.1:9/unreachable".into(),
            api_key: None,
            model: None,
            timeout: Duration::from_millis(10),
        });
        assert!(matches!(
            live.complete(&r, &CancelToken::new()),
            Err(ProviderError::Precondition(_))
        ));
    }

    #[test]
    fn placeholder_encodes_prompt_and_references() {
        let dir = tempfile::tempdir().unwrap();
        let assets = AssetStore::new(dir.path());
        let p = ScriptedProvider::new(ScriptedProgram::default());
        let t = CancelToken::new();
        let sheet = assets.write("sheet.png", b"sheet").unwrap();

        let unconditional = ImageRequest {
            role: AgentRole::Art,
            stage: Stage::Storyboard,
            task_kind: Some(TaskKind::Artifact(ArtifactKind::Styleframe)),
            prompt: "scene 1 at dusk".into(),
            references: vec![],
        };
        let conditional = ImageRequest {
            references: vec![sheet.clone()],
            ..unconditional.clone()
        };
        let a = p.generate_image(&unconditional, &assets, &t).unwrap();
        let b = p.generate_image(&conditional, &assets, &t).unwrap();
        assert_ne!(a, b);

        // independent recomputation of the documented digest
        let mut h = Sha256::new();
        h.update(b"scene 1 at dusk");
        h.update([0x1f]);
        h.update(sheet.as_str().as_bytes());
        let expected: [u8; 32] = h.finalize().into();
        let bytes = assets.read(&b).unwrap();
        assert_eq!(decode_placeholder_digest(&bytes), Some(expected));
        assert!(b.as_str().contains(&hex::encode(&expected[..8])));

        let plain: [u8; 32] = Sha256::digest(b"scene 1 at dusk").into();
        assert_eq!(decode_placeholder_digest(&assets.read(&a).unwrap()), Some(plain));

        let missing = ImageRequest {
            references: vec![AssetRef::new("assets/nope.png")],
            ..unconditional
        };
        assert!(matches!(
            p.generate_image(&missing, &assets, &t),
            Err(ProviderError::Precondition(_))
        ));
        assert_eq!(p.calls().len(), 2);
    }

    #[test]
    fn program_file_format_round_trips() {
        let text = r#"{"rules": [
            {"role": "scripting", "task_kind": "scene-list", "output": {"elements": []}, "times": 1},
            {"channel": "image", "role": "art", "fault": {"kind": "exception", "detail": "boom"}},
            {"role": "scripting", "task_kind": "direct-chat", "output": "Sure."}
        ]}"#;
        let prog: ScriptedProgram = serde_json::from_str(text).unwrap();
        assert_eq!(prog.rules.len(), 3);
        assert_eq!(prog.rules[2].task_kind, Some(TaskKind::DirectChat));
        let back: ScriptedProgram =
            serde_json::from_str(&serde_json::to_string(&prog).unwrap()).unwrap();
        assert_eq!(back, prog);
    }
}
