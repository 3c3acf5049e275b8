//! Orchestration engine for animation pre-production.

pub mod assets;
pub mod agents;
pub mod board;
pub mod cancel;
pub mod clock;
pub mod config;
pub mod core_agent;
pub mod event;
pub mod memory;
pub mod pipeline;
pub mod model;
pub mod project;
pub mod prompts;
pub mod provider;
pub mod scenario;
pub mod schema;
pub mod session;

pub use board::{Board, BoardError, BoardStore, Placement};
pub use cancel::{CancelToken, FaultAction, FaultPlan, Interrupt};
pub use config::CoreConfig;
pub use core_agent::{Proposal, UserMessage};
pub use event::{EventKind, EventPayload, Outcome, PublishEffect, SessionEvent};
pub use model::{
    AgentRole, ArtifactKind, AssetRef, Block, BlockId, BlockVersion, Element, ElementId, ProgressRecord, RequestId,
    Selection, SessionId, Stage, TaskId,
};
pub use project::Project;
pub use provider::{ScriptedProgram, ScriptedProvider, ScriptedRule};
pub use scenario::{run_scenario, Scenario, ScenarioReport};
pub use session::{BlockEdit, CreateSession, Engine, EngineParts, EventLog, Session, SessionError};
