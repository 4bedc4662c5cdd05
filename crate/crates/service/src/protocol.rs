//! Wire messages. Each WebSocket text message carries one JSON document.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vguide_core::session::{GuideSnapshot, ReplanTrigger};
use vguide_core::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    ScenarioSync,
    PoseUpdate,
    GuidanceFrame,
    EnvEdit,
    ReplanNotice,
    Error,
}

/// Envelope shared by both directions. `seq` increases by one per message
/// within each direction of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub session: String,
    pub seq: u64,
    pub kind: Kind,
    #[serde(default)]
    pub payload: Value,
    /// Sequence number of the client message this one answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<u64>,
}

impl WireMessage {
    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    pub pose: Vec<f64>,
    /// Zero when omitted.
    #[serde(default)]
    pub velocity: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSync {
    pub scenario: Scenario,
    pub guide: GuideSnapshot,
    pub control_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanNotice {
    pub trigger: ReplanTrigger,
    pub job: u64,
    pub added: Vec<u64>,
    pub removed: Vec<u64>,
    pub guide: GuideSnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub message: String,
}
