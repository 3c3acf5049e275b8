//! Project state and its on-disk form: one JSON document next to an
//! `assets/` directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assets::AssetStore;
use crate::board::BoardStore;
use crate::memory::{Budget, ContextWindow, MemoryStore};
use crate::model::{AgentRole, AssetRef, BlockId, Content, ProgressRecord, Stage};

pub const PROJECT_SCHEMA_VERSION: u32 = 1;

/// Id counters, kept with the project so ids never repeat across reloads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub task: u64,
    pub pair: u64,
}

impl Counters {
    pub fn next_task(&mut self) -> u64 {
        self.task += 1;
        self.task
    }

    pub fn next_pair(&mut self) -> u64 {
        self.pair += 1;
        self.pair
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub boards: BoardStore,
    pub progress: ProgressRecord,
    pub current_stage: Stage,
    #[serde(default)]
    pub memory: MemoryStore,
    /// Per-agent short-term context.
    #[serde(default)]
    pub windows: BTreeMap<AgentRole, ContextWindow>,
    /// Most recently published block, the default context for refinements.
    #[serde(default)]
    pub last_published: Option<BlockId>,
    #[serde(default)]
    pub counters: Counters,
}

impl Project {
    pub fn new(brief: &str, window: Budget) -> Self {
        let mut progress = ProgressRecord::default();
        progress.project_brief = brief.trim().to_string();
        Self {
            schema_version: PROJECT_SCHEMA_VERSION,
            boards: BoardStore::new(),
            progress,
            current_stage: Stage::Planning,
            memory: MemoryStore::default(),
            windows: AgentRole::ALL
                .iter()
                .map(|r| (*r, ContextWindow::new(*r, window)))
                .collect(),
            last_published: None,
            counters: Counters::default(),
        }
    }

    /// Every asset referenced from any block version.
    pub fn asset_refs(&self) -> Vec<AssetRef> {
        let mut refs: Vec<AssetRef> = self
            .boards
            .blocks()
            .flat_map(|b| b.versions.iter())
            .flat_map(|v| v.elements.iter())
            .filter_map(|e| match &e.content {
                Content::Image(a) => Some(a.clone()),
                Content::Text(_) => None,
            })
            .collect();
        refs.sort();
        refs.dedup();
        refs
    }

    pub fn window_mut(&mut self, role: AgentRole, budget: Budget) -> &mut ContextWindow {
        self.windows
            .entry(role)
            .or_insert_with(|| ContextWindow::new(role, budget))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("project io failure at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("project file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("project format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Canonical serialized form; identical state gives identical bytes.
pub fn project_json(project: &Project) -> String {
    serde_json::to_string_pretty(project).expect("project serializes")
}

/// Writes the project to `path` and copies its assets from `assets` into the
/// `assets/` directory next to it.
pub fn save_project(path: &Path, project: &Project, assets: &AssetStore) -> Result<(), ProjectError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let target = AssetStore::new(dir);
    assets
        .copy_into(&target, project.asset_refs().iter())
        .map_err(io_err(dir))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, project_json(project)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_project(path: &Path) -> Result<Project, ProjectError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != PROJECT_SCHEMA_VERSION {
        return Err(ProjectError::FormatVersionMismatch {
            found,
            expected: PROJECT_SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(raw)?)
}
