//! Shared domain types: stages, roles, artifact kinds, blocks, task specs,
//! validation reports and progress records.
//!
//! Everything here is a plain value type. The JSON produced by serde for
//! these types is both the persistence format and the wire format.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Opaque block identifier.
    BlockId
);
string_id!(
    /// Element identifier, unique within its owning version.
    ElementId
);
string_id!(TaskId);
string_id!(SessionId);
string_id!(RequestId);
string_id!(
    /// Path of a stored image, relative to the project directory.
    AssetRef
);

/// UTC milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

/// Workflow stage. Declaration order is the nominal pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Planning,
    Ideation,
    Scripting,
    Design,
    Storyboard,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Planning,
        Stage::Ideation,
        Stage::Scripting,
        Stage::Design,
        Stage::Storyboard,
    ];

    /// Stages that own a board. Planning is handled by the core agent alone.
    pub const BOARDS: [Stage; 4] = [
        Stage::Ideation,
        Stage::Scripting,
        Stage::Design,
        Stage::Storyboard,
    ];

    pub fn has_board(self) -> bool {
        self != Stage::Planning
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Planning => "planning",
            Stage::Ideation => "ideation",
            Stage::Scripting => "scripting",
            Stage::Design => "design",
            Stage::Storyboard => "storyboard",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::Planning => "Planning",
            Stage::Ideation => "Ideation",
            Stage::Scripting => "Scripting",
            Stage::Design => "Design",
            Stage::Storyboard => "Storyboard",
        }
    }

    /// Artifact kinds published on this stage's board.
    pub fn kinds(self) -> Vec<ArtifactKind> {
        ArtifactKind::ALL
            .iter()
            .copied()
            .filter(|k| k.stage() == self)
            .collect()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

impl FromStr for Stage {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentRole {
    Core,
    Ideation,
    Scripting,
    Design,
    Art,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::Core,
        AgentRole::Ideation,
        AgentRole::Scripting,
        AgentRole::Design,
        AgentRole::Art,
    ];

    /// Roles that may receive delegated work.
    pub const SPECIALISTS: [AgentRole; 4] = [
        AgentRole::Ideation,
        AgentRole::Scripting,
        AgentRole::Design,
        AgentRole::Art,
    ];

    pub fn is_specialist(self) -> bool {
        self != AgentRole::Core
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Core => "core",
            AgentRole::Ideation => "ideation",
            AgentRole::Scripting => "scripting",
            AgentRole::Design => "design",
            AgentRole::Art => "art",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AgentRole::Core => "Core Agent",
            AgentRole::Ideation => "Ideation Agent",
            AgentRole::Scripting => "Scripting Agent",
            AgentRole::Design => "Design Agent",
            AgentRole::Art => "Art Agent",
        }
    }

    pub fn kinds(self) -> Vec<ArtifactKind> {
        ArtifactKind::ALL
            .iter()
            .copied()
            .filter(|k| k.owner() == self)
            .collect()
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

impl FromStr for AgentRole {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Kinds of artifact an agent can produce. New kinds may be appended
/// without breaking existing project files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Logline,
    StoryConcept,
    WorldConcept,
    StyleDescription,
    CharacterConcept,
    ThreeActStructure,
    StoryOutline,
    SceneList,
    Script,
    CharacterSheet,
    EnvironmentDesign,
    HeroImage,
    Styleframe,
    StoryboardSequence,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 14] = [
        ArtifactKind::Logline,
        ArtifactKind::StoryConcept,
        ArtifactKind::WorldConcept,
        ArtifactKind::StyleDescription,
        ArtifactKind::CharacterConcept,
        ArtifactKind::ThreeActStructure,
        ArtifactKind::StoryOutline,
        ArtifactKind::SceneList,
        ArtifactKind::Script,
        ArtifactKind::CharacterSheet,
        ArtifactKind::EnvironmentDesign,
        ArtifactKind::HeroImage,
        ArtifactKind::Styleframe,
        ArtifactKind::StoryboardSequence,
    ];

    /// Board this kind is published on.
    pub fn stage(self) -> Stage {
        use ArtifactKind::*;
        match self {
            Logline | StoryConcept | WorldConcept | StyleDescription | CharacterConcept => {
                Stage::Ideation
            }
            ThreeActStructure | StoryOutline | SceneList | Script => Stage::Scripting,
            CharacterSheet | EnvironmentDesign | HeroImage => Stage::Design,
            Styleframe | StoryboardSequence => Stage::Storyboard,
        }
    }

    /// Specialist that owns the tool producing this kind.
    pub fn owner(self) -> AgentRole {
        use ArtifactKind::*;
        match self {
            Logline | StoryConcept | WorldConcept | StyleDescription | CharacterConcept => {
                AgentRole::Ideation
            }
            ThreeActStructure | StoryOutline | SceneList | Script => AgentRole::Scripting,
            CharacterSheet | EnvironmentDesign => AgentRole::Design,
            HeroImage | Styleframe | StoryboardSequence => AgentRole::Art,
        }
    }

    pub fn name(self) -> &'static str {
        use ArtifactKind::*;
        match self {
            Logline => "logline",
            StoryConcept => "story-concept",
            WorldConcept => "world-concept",
            StyleDescription => "style-description",
            CharacterConcept => "character-concept",
            ThreeActStructure => "three-act-structure",
            StoryOutline => "story-outline",
            SceneList => "scene-list",
            Script => "script",
            CharacterSheet => "character-sheet",
            EnvironmentDesign => "environment-design",
            HeroImage => "hero-image",
            Styleframe => "styleframe",
            StoryboardSequence => "storyboard-sequence",
        }
    }

    pub fn title(self) -> &'static str {
        use ArtifactKind::*;
        match self {
            Logline => "logline",
            StoryConcept => "story concept",
            WorldConcept => "world concept",
            StyleDescription => "style description",
            CharacterConcept => "character concept",
            ThreeActStructure => "three act structure",
            StoryOutline => "story outline",
            SceneList => "scene list",
            Script => "script",
            CharacterSheet => "character sheet",
            EnvironmentDesign => "environment design",
            HeroImage => "hero image",
            Styleframe => "styleframe",
            StoryboardSequence => "storyboard",
        }
    }

    /// Snake-case form used for tool names (`make_scene_list`).
    pub fn snake(self) -> String {
        self.name().replace('-', "_")
    }

    /// Whether the producing tool ends in image generation.
    pub fn is_visual(self) -> bool {
        use ArtifactKind::*;
        matches!(
            self,
            CharacterSheet | EnvironmentDesign | HeroImage | Styleframe | StoryboardSequence
        )
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArtifactKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Semantic tag of an element inside a block version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    LoglineOption,
    ConceptOption,
    WorldOption,
    StyleOption,
    CharacterEntry,
    ActSection,
    OutlineBeat,
    SceneEntry,
    ScriptSection,
    CharacterDesign,
    EnvironmentView,
    ImageAsset,
    TextField,
    ShotPanel,
}

impl ElementKind {
    pub fn name(self) -> &'static str {
        use ElementKind::*;
        match self {
            LoglineOption => "logline-option",
            ConceptOption => "concept-option",
            WorldOption => "world-option",
            StyleOption => "style-option",
            CharacterEntry => "character-entry",
            ActSection => "act-section",
            OutlineBeat => "outline-beat",
            SceneEntry => "scene-entry",
            ScriptSection => "script-section",
            CharacterDesign => "character-design",
            EnvironmentView => "environment-view",
            ImageAsset => "image-asset",
            TextField => "text-field",
            ShotPanel => "shot-panel",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Text or a stored image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "kebab-case")]
pub enum Content {
    Text(String),
    Image(AssetRef),
}

impl Content {
    pub fn text(s: impl Into<String>) -> Self {
        Content::Text(s.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Content::Text(t) => Some(t),
            Content::Image(_) => None,
        }
    }

    pub fn as_image(&self) -> Option<&AssetRef> {
        match self {
            Content::Image(a) => Some(a),
            Content::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub element_id: ElementId,
    pub kind: ElementKind,
    pub content: Content,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl Element {
    pub fn text(id: impl Into<String>, kind: ElementKind, text: impl Into<String>) -> Self {
        Self {
            element_id: ElementId::new(id),
            kind,
            content: Content::Text(text.into()),
            attributes: BTreeMap::new(),
        }
    }

    pub fn image(id: impl Into<String>, kind: ElementKind, asset: AssetRef) -> Self {
        Self {
            element_id: ElementId::new(id),
            kind,
            content: Content::Image(asset),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

/// Where a version came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum VersionOrigin {
    Task { task_id: TaskId },
    UserEdit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockVersion {
    pub version_index: usize,
    pub elements: Vec<Element>,
    pub created_at: Timestamp,
    pub origin: VersionOrigin,
}

impl BlockVersion {
    pub fn element(&self, id: &ElementId) -> Option<&Element> {
        self.elements.iter().find(|e| &e.element_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub block_id: BlockId,
    pub stage: Stage,
    pub kind: ArtifactKind,
    pub parent_id: Option<BlockId>,
    pub versions: Vec<BlockVersion>,
    pub active_version: usize,
    #[serde(default)]
    pub pinned: bool,
    #[serde(default)]
    pub collapsed: bool,
}

impl Block {
    pub fn active(&self) -> &BlockVersion {
        &self.versions[self.active_version]
    }

    pub fn latest(&self) -> &BlockVersion {
        self.versions.last().expect("block has at least one version")
    }

    pub fn version(&self, index: usize) -> Option<&BlockVersion> {
        self.versions.get(index)
    }
}

/// A block, or a subset of one version's elements, picked as context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub block_id: BlockId,
    pub version_index: usize,
    /// Empty means the whole block.
    #[serde(default)]
    pub element_ids: Vec<ElementId>,
}

impl Selection {
    pub fn whole(block_id: BlockId, version_index: usize) -> Self {
        Self {
            block_id,
            version_index,
            element_ids: Vec::new(),
        }
    }

    pub fn is_whole_block(&self) -> bool {
        self.element_ids.is_empty()
    }
}

/// What a task produces: an artifact, or free conversation in a direct channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Artifact(ArtifactKind),
    DirectChat,
}

impl TaskKind {
    pub fn artifact(self) -> Option<ArtifactKind> {
        match self {
            TaskKind::Artifact(k) => Some(k),
            TaskKind::DirectChat => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Artifact(k) => k.name(),
            TaskKind::DirectChat => "direct-chat",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("direct-chat") {
            Ok(TaskKind::DirectChat)
        } else {
            s.parse().map(TaskKind::Artifact)
        }
    }
}

impl Serialize for TaskKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Provenance of a context item, when it came from a board.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSource {
    pub block_id: BlockId,
    pub version_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<ElementId>,
}

/// One labelled entry of a task's context payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub label: String,
    pub content: Content,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ContextSource>,
}

impl ContextItem {
    pub fn text(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            content: Content::Text(text.into()),
            source: None,
        }
    }

    pub fn image(label: impl Into<String>, asset: AssetRef) -> Self {
        Self {
            label: label.into(),
            content: Content::Image(asset),
            source: None,
        }
    }

    pub fn with_source(mut self, source: ContextSource) -> Self {
        self.source = Some(source);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PublicationIntent {
    NewRoot,
    ChildOf { block_id: BlockId },
    OverwriteArtifact { kind: ArtifactKind },
}

/// A work order authored by the core agent for one specialist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub target_role: AgentRole,
    pub task_kind: TaskKind,
    pub instruction: String,
    pub context_payload: Vec<ContextItem>,
    pub publication_intent: PublicationIntent,
    pub stage: Stage,
    /// Number of options or entries asked for, when the request named one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_count: Option<usize>,
    /// Quoted phrases from the request that the result must mention.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required_terms: Vec<String>,
}

impl TaskSpec {
    /// Image references carried by the context payload, in payload order.
    pub fn image_refs(&self) -> Vec<&AssetRef> {
        self.context_payload
            .iter()
            .filter_map(|c| c.content.as_image())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Format,
    Spec,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationMessage {
    pub check: Check,
    pub severity: Severity,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Verdict {
    Approve,
    RequestRevision { feedback: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub format_ok: bool,
    pub spec_ok: bool,
    pub consistency_ok: bool,
    pub messages: Vec<ValidationMessage>,
    pub verdict: Verdict,
}

impl ValidationReport {
    /// Builds a report whose flags are derived from error-severity messages,
    /// so the verdict is approve exactly when all three checks passed.
    pub fn from_messages(messages: Vec<ValidationMessage>) -> Self {
        let failed = |check: Check| {
            messages
                .iter()
                .any(|m| m.check == check && m.severity == Severity::Error)
        };
        let format_ok = !failed(Check::Format);
        let spec_ok = !failed(Check::Spec);
        let consistency_ok = !failed(Check::Consistency);
        let verdict = if format_ok && spec_ok && consistency_ok {
            Verdict::Approve
        } else {
            let feedback = messages
                .iter()
                .filter(|m| m.severity == Severity::Error)
                .map(|m| format!("[{}] {}", check_name(m.check), m.text))
                .collect::<Vec<_>>()
                .join("\n");
            Verdict::RequestRevision { feedback }
        };
        Self {
            format_ok,
            spec_ok,
            consistency_ok,
            messages,
            verdict,
        }
    }

    pub fn approved(&self) -> bool {
        matches!(self.verdict, Verdict::Approve)
    }
}

fn check_name(check: Check) -> &'static str {
    match check {
        Check::Format => "format",
        Check::Spec => "spec",
        Check::Consistency => "consistency",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    NotStarted,
    InProgress,
    Complete,
}

/// Canonical artifacts per stage plus stage status and the project brief.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub canonical: BTreeMap<Stage, BTreeMap<ArtifactKind, BlockId>>,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    pub project_brief: String,
}

impl Default for ProgressRecord {
    fn default() -> Self {
        Self {
            canonical: BTreeMap::new(),
            stage_status: Stage::ALL
                .iter()
                .map(|s| (*s, StageStatus::NotStarted))
                .collect(),
            project_brief: String::new(),
        }
    }
}

impl ProgressRecord {
    pub fn canonical(&self, kind: ArtifactKind) -> Option<&BlockId> {
        self.canonical.get(&kind.stage()).and_then(|m| m.get(&kind))
    }

    pub fn has(&self, kind: ArtifactKind) -> bool {
        self.canonical(kind).is_some()
    }

    pub fn set_canonical(&mut self, kind: ArtifactKind, block: BlockId) {
        self.canonical
            .entry(kind.stage())
            .or_default()
            .insert(kind, block);
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stage_status
            .get(&stage)
            .copied()
            .unwrap_or(StageStatus::NotStarted)
    }

    /// All canonical (kind, block) pairs in stage then kind order.
    pub fn all_canonical(&self) -> impl Iterator<Item = (ArtifactKind, &BlockId)> {
        self.canonical
            .values()
            .flat_map(|m| m.iter().map(|(k, b)| (*k, b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_maps_to_a_board_stage_and_specialist() {
        for kind in ArtifactKind::ALL {
            assert!(kind.stage().has_board(), "{kind}");
            assert!(kind.owner().is_specialist(), "{kind}");
        }
        assert!(Stage::Planning.kinds().is_empty());
        for stage in Stage::BOARDS {
            assert!(!stage.kinds().is_empty());
        }
    }

    #[test]
    fn role_kind_partition_matches_responsibilities() {
        use ArtifactKind::*;
        assert_eq!(
            AgentRole::Ideation.kinds(),
            vec![Logline, StoryConcept, WorldConcept, StyleDescription, CharacterConcept]
        );
        assert_eq!(
            AgentRole::Scripting.kinds(),
            vec![ThreeActStructure, StoryOutline, SceneList, Script]
        );
        assert_eq!(AgentRole::Design.kinds(), vec![CharacterSheet, EnvironmentDesign]);
        assert_eq!(
            AgentRole::Art.kinds(),
            vec![HeroImage, Styleframe, StoryboardSequence]
        );
        assert!(AgentRole::Core.kinds().is_empty());
    }

    #[test]
    fn names_parse_back() {
        for kind in ArtifactKind::ALL {
            assert_eq!(kind.name().parse::<ArtifactKind>().unwrap(), kind);
        }
        for stage in Stage::ALL {
            assert_eq!(stage.name().parse::<Stage>().unwrap(), stage);
        }
        assert_eq!("direct-chat".parse::<TaskKind>().unwrap(), TaskKind::DirectChat);
        assert!("animatic".parse::<ArtifactKind>().is_err());
    }

    #[test]
    fn verdict_is_approve_iff_all_flags_true() {
        let ok = ValidationReport::from_messages(vec![ValidationMessage {
            check: Check::Spec,
            severity: Severity::Warning,
            text: "judge skipped".into(),
        }]);
        assert!(ok.approved());
        assert!(ok.format_ok && ok.spec_ok && ok.consistency_ok);

        let bad = ValidationReport::from_messages(vec![ValidationMessage {
            check: Check::Consistency,
            severity: Severity::Error,
            text: "unknown character `Kira`".into(),
        }]);
        assert!(!bad.approved());
        assert!(!bad.consistency_ok);
        match bad.verdict {
            Verdict::RequestRevision { feedback } => assert!(feedback.contains("Kira")),
            Verdict::Approve => unreachable!(),
        }
    }

    #[test]
    fn stage_map_keys_serialize_as_names() {
        let mut p = ProgressRecord::default();
        p.set_canonical(ArtifactKind::SceneList, BlockId::new("blk-1"));
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains(r#""scripting":{"scene-list":"blk-1"}"#), "{json}");
        let back: ProgressRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
