//! Editable prompt texts and stage-aware prompt assembly.
//!
//! A prompt directory has this layout (the shipped defaults are compiled in):
//!
//! ```text
//! base.txt
//! stages/{planning,ideation,scripting,design,storyboard}.txt
//! roles/{core,ideation,scripting,design,art}.txt
//! tools/default.txt            generic tool template
//! tools/make_<kind>.txt        optional per-tool override
//! ```
//!
//! Tool templates use the slots `{tool}`, `{kind}`, `{task}`,
//! `{prior_stage_input}`, `{context}` and `{format}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{AgentRole, ArtifactKind, Content, ContextItem, Stage, TaskKind, TaskSpec};
use crate::schema::{element_schema, ContentType};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing prompt file {0}")]
    MissingPromptFile(PathBuf),
    #[error("no prompt for {0}")]
    MissingPrompt(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    pub base: String,
    pub stages: BTreeMap<Stage, String>,
    pub roles: BTreeMap<AgentRole, String>,
    pub default_tool: String,
    pub tools: BTreeMap<ArtifactKind, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        let stages = [
            (Stage::Planning, include_str!("../prompts/stages/planning.txt")),
            (Stage::Ideation, include_str!("../prompts/stages/ideation.txt")),
            (Stage::Scripting, include_str!("../prompts/stages/scripting.txt")),
            (Stage::Design, include_str!("../prompts/stages/design.txt")),
            (Stage::Storyboard, include_str!("../prompts/stages/storyboard.txt")),
        ];
        let roles = [
            (AgentRole::Core, include_str!("../prompts/roles/core.txt")),
            (AgentRole::Ideation, include_str!("../prompts/roles/ideation.txt")),
            (AgentRole::Scripting, include_str!("../prompts/roles/scripting.txt")),
            (AgentRole::Design, include_str!("../prompts/roles/design.txt")),
            (AgentRole::Art, include_str!("../prompts/roles/art.txt")),
        ];
        Self {
            base: include_str!("../prompts/base.txt").to_string(),
            stages: stages.iter().map(|(s, t)| (*s, t.to_string())).collect(),
            roles: roles.iter().map(|(r, t)| (*r, t.to_string())).collect(),
            default_tool: include_str!("../prompts/tools/default.txt").to_string(),
            tools: [(
                ArtifactKind::SceneList,
                include_str!("../prompts/tools/make_scene_list.txt").to_string(),
            )]
            .into_iter()
            .collect(),
        }
    }

    /// Loads a prompt directory. Base, stage, role and default tool files
    /// are required; per-tool overrides are optional.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |rel: &str| -> Result<String, PromptError> {
            let p = dir.join(rel);
            fs::read_to_string(&p).map_err(|_| PromptError::MissingPromptFile(p))
        };
        let mut stages = BTreeMap::new();
        for s in Stage::ALL {
            stages.insert(s, read(&format!("stages/{}.txt", s.name()))?);
        }
        let mut roles = BTreeMap::new();
        for r in AgentRole::ALL {
            roles.insert(r, read(&format!("roles/{}.txt", r.name()))?);
        }
        let mut tools = BTreeMap::new();
        for k in ArtifactKind::ALL {
            if let Ok(t) = fs::read_to_string(dir.join(format!("tools/make_{}.txt", k.snake()))) {
                tools.insert(k, t);
            }
        }
        Ok(Self {
            base: read("base.txt")?,
            stages,
            roles,
            default_tool: read("tools/default.txt")?,
            tools,
        })
    }

    pub fn stage(&self, stage: Stage) -> Result<&str, PromptError> {
        self.stages
            .get(&stage)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingPrompt(format!("stage {}", stage.name())))
    }

    pub fn role(&self, role: AgentRole) -> Result<&str, PromptError> {
        self.roles
            .get(&role)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingPrompt(format!("role {}", role.name())))
    }

    pub fn tool_template(&self, kind: ArtifactKind) -> &str {
        self.tools.get(&kind).unwrap_or(&self.default_tool)
    }
}

/// Name of the tool that produces `kind`.
pub fn tool_name(kind: ArtifactKind) -> String {
    format!("make_{}", kind.snake())
}

/// One payload item as a prompt line.
pub fn render_item(item: &ContextItem) -> String {
    match &item.content {
        Content::Text(t) => format!("[{}] {}", item.label, t),
        Content::Image(a) => format!("[{}] image: {}", item.label, a),
    }
}

fn render_items<'a>(items: impl Iterator<Item = &'a ContextItem>) -> String {
    let lines: Vec<String> = items.map(render_item).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Payload items that carry canonical artifacts from earlier stages.
pub fn is_prior_stage_item(item: &ContextItem) -> bool {
    item.label.starts_with("canonical:")
}

/// JSON output contract for a tool, derived from the element schema.
pub fn output_format(kind: ArtifactKind) -> String {
    let schema = element_schema(kind);
    let mut lines = vec![
        "Respond with a single JSON object: {\"elements\": [ ... ]}.".to_string(),
        "Each element is {\"kind\": ..., \"text\": ..., \"attributes\": {...}}; image elements use \"image_prompt\" instead of \"text\".".to_string(),
    ];
    for r in &schema.elements {
        let count = match r.max {
            Some(max) if max == r.min => format!("exactly {}", r.min),
            Some(max) => format!("{}..{}", r.min, max),
            None => format!("at least {}", r.min),
        };
        let content = match r.content {
            ContentType::Text => "text",
            ContentType::Image => "image_prompt",
        };
        let attrs = if r.attributes.is_empty() {
            "no attributes".to_string()
        } else {
            format!("attributes {}", r.attributes.join(", "))
        };
        lines.push(format!("- kind \"{}\": {count}, {content}, {attrs}", r.kind));
    }
    lines.join("\n")
}

/// Builds the full prompt for a specialist. Section order is fixed: role,
/// stage, then the task (tool template with instruction, prior-stage input and
/// context, each payload item on its own labelled line in payload order).
pub fn assemble_prompt(
    role: AgentRole,
    stage: Stage,
    spec: &TaskSpec,
    prompts: &PromptLibrary,
) -> Result<String, PromptError> {
    let role_text = prompts.role(role)?;
    let stage_text = prompts.stage(stage)?;
    let mut out = String::new();
    out.push_str(&format!("# Role: {}\n{}\n", role.title(), role_text.trim_end()));
    out.push_str(&format!("\n# Stage: {}\n{}\n", stage.title(), stage_text.trim_end()));
    match spec.task_kind {
        TaskKind::Artifact(kind) => {
            let prior = render_items(spec.context_payload.iter().filter(|i| is_prior_stage_item(i)));
            let context =
                render_items(spec.context_payload.iter().filter(|i| !is_prior_stage_item(i)));
            let body = prompts
                .tool_template(kind)
                .replace("{tool}", &tool_name(kind))
                .replace("{kind}", kind.title())
                .replace("{prior_stage_input}", &prior)
                .replace("{context}", &context)
                .replace("{format}", &output_format(kind))
                // last, so instruction text containing slot names is left alone
                .replace("{task}", spec.instruction.trim());
            out.push_str(&format!("\n# Task\n{}\n", body.trim_end()));
        }
        TaskKind::DirectChat => {
            out.push_str(&format!("\n# Conversation\n{}\n", spec.instruction.trim()));
            out.push_str(&format!(
                "\n# Context\n{}\n",
                render_items(spec.context_payload.iter())
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssetRef, PublicationIntent, TaskId};

    fn spec(kind: ArtifactKind, payload: Vec<ContextItem>) -> TaskSpec {
        TaskSpec {
            task_id: TaskId::new("task-000001"),
            target_role: kind.owner(),
            task_kind: TaskKind::Artifact(kind),
            instruction: "Make a scene list from the outline".into(),
            context_payload: payload,
            publication_intent: PublicationIntent::NewRoot,
            stage: kind.stage(),
            requested_count: None,
            required_terms: vec![],
        }
    }

    #[test]
    fn sections_in_documented_order() {
        let lib = PromptLibrary::builtin();
        let s = spec(
            ArtifactKind::SceneList,
            vec![
                ContextItem::text("brief", "a short film"),
                ContextItem::text("canonical:story-outline:blk-000003@v0#e0", "(outline-beat) Kai builds"),
            ],
        );
        let p = assemble_prompt(AgentRole::Scripting, Stage::Scripting, &s, &lib).unwrap();
        let role = p.find("# Role: Scripting Agent").unwrap();
        let stage = p.find("# Stage: Scripting").unwrap();
        let task = p.find("Make a scene list from the outline").unwrap();
        let outline = p.find("[canonical:story-outline:blk-000003@v0#e0]").unwrap();
        let brief = p.find("[brief] a short film").unwrap();
        assert!(role < stage && stage < task && task < outline && outline < brief);
        assert!(p.contains("Tool: make_scene_list"));
        assert!(p.contains("styleframe_slot"));
    }

    #[test]
    fn assembly_is_pure() {
        let lib = PromptLibrary::builtin();
        let s = spec(ArtifactKind::StoryConcept, vec![ContextItem::text("brief", "x")]);
        let a = assemble_prompt(AgentRole::Ideation, Stage::Ideation, &s, &lib).unwrap();
        let b = assemble_prompt(AgentRole::Ideation, Stage::Ideation, &s, &lib).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn image_refs_listed_by_label_in_payload_order() {
        let lib = PromptLibrary::builtin();
        let s = spec(
            ArtifactKind::Styleframe,
            vec![
                ContextItem::image("upload:1", AssetRef::new("assets/b.png")),
                ContextItem::image("upload:2", AssetRef::new("assets/a.png")),
            ],
        );
        let p = assemble_prompt(AgentRole::Art, Stage::Storyboard, &s, &lib).unwrap();
        // independently constructed expected context section
        let expected = "Context:\n[upload:1] image: assets/b.png\n[upload:2] image: assets/a.png\n";
        assert!(p.contains(expected), "{p}");
    }

    #[test]
    fn missing_prompt_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.txt"), "b").unwrap();
        let err = PromptLibrary::load_dir(dir.path()).unwrap_err();
        assert!(matches!(err, PromptError::MissingPromptFile(p) if p.ends_with("stages/planning.txt")));
    }

    #[test]
    fn load_dir_reads_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["stages", "roles", "tools"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        std::fs::write(root.join("base.txt"), "base").unwrap();
        for s in Stage::ALL {
            std::fs::write(root.join(format!("stages/{}.txt", s.name())), s.name()).unwrap();
        }
        for r in AgentRole::ALL {
            std::fs::write(root.join(format!("roles/{}.txt", r.name())), r.name()).unwrap();
        }
        std::fs::write(root.join("tools/default.txt"), "generic {task}").unwrap();
        std::fs::write(root.join("tools/make_logline.txt"), "logline {task}").unwrap();
        let lib = PromptLibrary::load_dir(root).unwrap();
        assert_eq!(lib.tool_template(ArtifactKind::Logline), "logline {task}");
        assert_eq!(lib.tool_template(ArtifactKind::Script), "generic {task}");
        assert_eq!(lib.stage(Stage::Design).unwrap(), "design");
    }
}
