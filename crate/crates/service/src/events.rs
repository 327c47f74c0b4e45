//! Envelopes broadcast on `/events`. One channel serves the wall and the
//! operator console; `audience` says who a message is for.

use airays_core::compositor::PanelEntry;
use airays_core::installation::{InstallationState, Transition};
use airays_core::pipeline::{KeywordStage, RunStatus};
use serde::{Deserialize, Serialize};

pub const EVENTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Audience {
    Wall,
    Operator,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Body {
    /// Sent once to each new subscriber.
    Snapshot(StateSnapshot),
    State(Transition),
    Keyword {
        run_id: String,
        text: String,
        stage: KeywordStage,
        offset_ms: u64,
    },
    Reveal {
        run_id: String,
        status: RunStatus,
        composite_url: String,
        record_url: String,
        panel_meta: Vec<PanelEntry>,
    },
    Run {
        run_id: String,
        status: RunStatus,
        degradations: Vec<String>,
        error_detail: Option<String>,
    },
    Notice {
        message: String,
    },
}

impl Body {
    pub fn audience(&self) -> Audience {
        match self {
            Body::Snapshot(_) | Body::State(_) => Audience::All,
            Body::Keyword { .. } | Body::Reveal { .. } => Audience::Wall,
            Body::Run { .. } | Body::Notice { .. } => Audience::Operator,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Body::Snapshot(_) => "snapshot",
            Body::State(_) => "state",
            Body::Keyword { .. } => "keyword",
            Body::Reveal { .. } => "reveal",
            Body::Run { .. } => "run",
            Body::Notice { .. } => "notice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    /// Emission order; strictly increasing across the stream.
    pub seq: u64,
    pub audience: Audience,
    pub at_ms: u64,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub state: InstallationState,
    pub entered_ms: u64,
    pub deadline_ms: Option<u64>,
    pub now_ms: u64,
    /// Seq of the last broadcast envelope.
    pub seq: u64,
    pub last_run_id: Option<String>,
    pub presence_faults: u64,
    pub virtual_clock: bool,
}
