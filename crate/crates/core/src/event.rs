//! Typed session events streamed to clients.

use serde::{Deserialize, Serialize};

use crate::board::Placement;
use crate::core_agent::Proposal;
use crate::model::{
    AgentRole, ArtifactKind, AssetRef, Block, BlockId, ProgressRecord, RequestId, Selection,
    SessionId, Stage, TaskId, Timestamp, ValidationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    AgentStatus,
    ChatMessage,
    BlockPublished,
    BlockUpdated,
    StageChanged,
    ApprovalRequest,
    Error,
    Done,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::AgentStatus => "agent-status",
            EventKind::ChatMessage => "chat-message",
            EventKind::BlockPublished => "block-published",
            EventKind::BlockUpdated => "block-updated",
            EventKind::StageChanged => "stage-changed",
            EventKind::ApprovalRequest => "approval-request",
            EventKind::Error => "error",
            EventKind::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    Thinking,
    Delegating,
    Executing,
    Validating,
    Approved,
    RevisionRequested,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Speaker {
    User,
    Core,
    Ideation,
    Scripting,
    Design,
    Art,
}

impl From<AgentRole> for Speaker {
    fn from(role: AgentRole) -> Self {
        match role {
            AgentRole::Core => Speaker::Core,
            AgentRole::Ideation => Speaker::Ideation,
            AgentRole::Scripting => Speaker::Scripting,
            AgentRole::Design => Speaker::Design,
            AgentRole::Art => Speaker::Art,
        }
    }
}

/// Structural effect of a publication on the board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PublishEffect {
    NewRoot,
    Child,
    NewVersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorReason {
    Cancelled,
    ProviderFailure,
    ToolException,
    MalformedOutput,
    ExhaustedRevisions,
    MissingDependency,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_kind", content = "payload", rename_all = "kebab-case")]
pub enum EventPayload {
    AgentStatus {
        status: Activity,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<AgentRole>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<TaskId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        round: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        report: Option<ValidationReport>,
    },
    ChatMessage {
        from: Speaker,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selection: Option<Selection>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        uploads: Vec<AssetRef>,
    },
    BlockPublished {
        block_id: BlockId,
        stage: Stage,
        kind: ArtifactKind,
        task_id: TaskId,
        effect: PublishEffect,
        version_index: usize,
        canonical: bool,
        /// Full block content, or `None` when it exceeded the payload cap and
        /// must be fetched by id.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<Block>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        placement: Option<Placement>,
    },
    BlockUpdated {
        block_id: BlockId,
        stage: Stage,
        active_version: usize,
        pinned: bool,
        collapsed: bool,
        placement: Placement,
    },
    StageChanged {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Stage>,
        to: Stage,
        reason: String,
        progress: ProgressRecord,
    },
    ApprovalRequest {
        text: String,
        proposal: Proposal,
    },
    Error {
        reason: ErrorReason,
        detail: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<TaskId>,
    },
    Done {
        outcome: Outcome,
    },
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::AgentStatus { .. } => EventKind::AgentStatus,
            EventPayload::ChatMessage { .. } => EventKind::ChatMessage,
            EventPayload::BlockPublished { .. } => EventKind::BlockPublished,
            EventPayload::BlockUpdated { .. } => EventKind::BlockUpdated,
            EventPayload::StageChanged { .. } => EventKind::StageChanged,
            EventPayload::ApprovalRequest { .. } => EventKind::ApprovalRequest,
            EventPayload::Error { .. } => EventKind::Error,
            EventPayload::Done { .. } => EventKind::Done,
        }
    }

    pub fn status(status: Activity) -> Self {
        EventPayload::AgentStatus {
            status,
            target: None,
            task_id: None,
            round: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub event_seq: u64,
    pub session_id: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<RequestId>,
    pub agent: AgentRole,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }

    /// The event with its timestamp zeroed, for determinism comparisons.
    pub fn masked(&self) -> SessionEvent {
        SessionEvent {
            timestamp: Timestamp(0),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape_is_flat_with_kind_and_payload() {
        let ev = SessionEvent {
            event_seq: 3,
            session_id: SessionId::new("session-1"),
            request_id: Some(RequestId::new("req-1")),
            agent: AgentRole::Core,
            timestamp: Timestamp(5),
            payload: EventPayload::status(Activity::Thinking),
        };
        let v = serde_json::to_value(&ev).unwrap();
        assert_eq!(v["event_kind"], "agent-status");
        assert_eq!(v["payload"]["status"], "thinking");
        assert_eq!(v["event_seq"], 3);
        let back: SessionEvent = serde_json::from_value(v).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn unit_like_payloads_round_trip() {
        let ev = SessionEvent {
            event_seq: 0,
            session_id: SessionId::new("s"),
            request_id: None,
            agent: AgentRole::Core,
            timestamp: Timestamp(0),
            payload: EventPayload::Done {
                outcome: Outcome::Cancelled,
            },
        };
        let json = serde_json::to_string(&ev).unwrap();
        let back: SessionEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back.kind(), EventKind::Done);
        assert_eq!(back, ev);
    }
}
