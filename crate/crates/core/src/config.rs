//! Engine configuration, loaded from a TOML file. Every field has a default,
//! so an empty file is a valid configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::memory::{Budget, ChunkPolicy};
use crate::model::{ArtifactKind, ProgressRecord, Stage};

/// Prerequisites of one artifact kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub kind: ArtifactKind,
    /// Each group must have at least one canonical member.
    #[serde(default)]
    pub requires: Vec<Vec<ArtifactKind>>,
    /// Missing soft prerequisites only produce a warning.
    #[serde(default)]
    pub soft: Vec<ArtifactKind>,
    /// Packaged as context when canonical, never required.
    #[serde(default)]
    pub context: Vec<ArtifactKind>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentMode {
    /// Deterministic phrase table.
    #[default]
    Keyword,
    /// JSON-constrained provider call.
    Provider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    pub max_rounds: u32,
    pub fan_out: usize,
    pub retrieval_k: usize,
    /// Upper bound on events emitted by one request.
    pub event_ceiling: usize,
    /// Serialized blocks above this size are sent by reference only.
    pub payload_cap_bytes: usize,
    /// Ask the text provider to judge results on top of the rule checks.
    pub judge: bool,
    pub intent: IntentMode,
    pub chunking: ChunkPolicy,
    pub window: Budget,
    pub dependencies: Vec<Dependency>,
    /// Kinds that must be canonical for a stage to count as complete.
    /// Planning is complete once the brief is recorded.
    pub completion: BTreeMap<Stage, Vec<ArtifactKind>>,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            max_rounds: 2,
            fan_out: 4,
            retrieval_k: 3,
            event_ceiling: 1000,
            payload_cap_bytes: 256 * 1024,
            judge: false,
            intent: IntentMode::Keyword,
            chunking: ChunkPolicy::default(),
            window: Budget::default(),
            dependencies: default_dependencies(),
            completion: default_completion(),
        }
    }
}

pub fn default_dependencies() -> Vec<Dependency> {
    use ArtifactKind::*;
    let dep = |kind, requires: Vec<Vec<ArtifactKind>>, soft: Vec<ArtifactKind>, context: Vec<ArtifactKind>| {
        Dependency {
            kind,
            requires,
            soft,
            context,
        }
    };
    vec![
        dep(StoryOutline, vec![vec![StoryConcept]], vec![], vec![Logline, WorldConcept]),
        dep(SceneList, vec![vec![StoryOutline]], vec![], vec![CharacterConcept]),
        dep(Script, vec![], vec![], vec![SceneList, CharacterConcept]),
        dep(
            Styleframe,
            vec![vec![SceneList], vec![StyleDescription, CharacterSheet]],
            vec![],
            vec![StyleDescription, CharacterSheet],
        ),
        dep(StoryboardSequence, vec![vec![SceneList]], vec![], vec![CharacterSheet]),
        dep(CharacterSheet, vec![], vec![CharacterConcept], vec![StyleDescription]),
        dep(EnvironmentDesign, vec![], vec![], vec![WorldConcept, StyleDescription]),
        dep(HeroImage, vec![], vec![], vec![StyleDescription, CharacterSheet]),
    ]
}

pub fn default_completion() -> BTreeMap<Stage, Vec<ArtifactKind>> {
    use ArtifactKind::*;
    BTreeMap::from([
        (Stage::Planning, vec![]),
        (Stage::Ideation, vec![StoryConcept, StyleDescription]),
        (Stage::Scripting, vec![StoryOutline, SceneList]),
        (Stage::Design, vec![CharacterSheet]),
        (Stage::Storyboard, vec![StoryboardSequence]),
    ])
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl CoreConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: CoreConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        if self.fan_out == 0 || self.retrieval_k == 0 || self.chunking.chunk_size == 0 {
            return Err(ConfigError::Invalid(
                "fan_out, retrieval_k and chunk_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dependency(&self, kind: ArtifactKind) -> Option<&Dependency> {
        self.dependencies.iter().find(|d| d.kind == kind)
    }

    /// Hard prerequisite groups of `kind` with no canonical member, each as
    /// the kind to propose first (the group's first member).
    pub fn missing_prerequisites(&self, kind: ArtifactKind, progress: &ProgressRecord) -> Vec<ArtifactKind> {
        self.dependency(kind)
            .map(|d| {
                d.requires
                    .iter()
                    .filter(|group| !group.iter().any(|k| progress.has(*k)))
                    .filter_map(|group| group.first().copied())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn missing_soft(&self, kind: ArtifactKind, progress: &ProgressRecord) -> Vec<ArtifactKind> {
        self.dependency(kind)
            .map(|d| d.soft.iter().copied().filter(|k| !progress.has(*k)).collect())
            .unwrap_or_default()
    }

    pub fn stage_complete(&self, stage: Stage, progress: &ProgressRecord) -> bool {
        if stage == Stage::Planning {
            return !progress.project_brief.trim().is_empty();
        }
        self.completion
            .get(&stage)
            .is_some_and(|kinds| kinds.iter().all(|k| progress.has(*k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockId;

    #[test]
    fn empty_file_gives_defaults_and_round_trips() {
        let cfg = CoreConfig::from_toml("").unwrap();
        assert_eq!(cfg, CoreConfig::default());
        assert_eq!(cfg.max_rounds, 2);
        assert_eq!(cfg.fan_out, 4);
        assert_eq!(cfg.retrieval_k, 3);
        assert_eq!(CoreConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = CoreConfig::from_toml("max_rounds = 4\n[chunking]\nchunk_size = 5\nhorizon = 0\n").unwrap();
        assert_eq!(cfg.max_rounds, 4);
        assert_eq!(cfg.chunking.horizon, 0);
        assert!(CoreConfig::from_toml("max_rounds = 0").is_err());
        assert!(CoreConfig::from_toml("fan_out = \"many\"").is_err());
    }

    #[test]
    fn prerequisite_walk() {
        let cfg = CoreConfig::default();
        let mut p = ProgressRecord::default();
        assert_eq!(
            cfg.missing_prerequisites(ArtifactKind::StoryboardSequence, &p),
            vec![ArtifactKind::SceneList]
        );
        assert_eq!(
            cfg.missing_prerequisites(ArtifactKind::Styleframe, &p),
            vec![ArtifactKind::SceneList, ArtifactKind::StyleDescription]
        );
        p.set_canonical(ArtifactKind::CharacterSheet, BlockId::new("b1"));
        assert_eq!(
            cfg.missing_prerequisites(ArtifactKind::Styleframe, &p),
            vec![ArtifactKind::SceneList]
        );
        assert!(cfg.missing_prerequisites(ArtifactKind::CharacterSheet, &p).is_empty());
        assert_eq!(
            cfg.missing_soft(ArtifactKind::CharacterSheet, &p),
            vec![ArtifactKind::CharacterConcept]
        );
        assert!(cfg.stage_complete(Stage::Design, &p));
        assert!(!cfg.stage_complete(Stage::Planning, &p));
    }
}
