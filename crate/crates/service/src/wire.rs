//! Control commands and replies. Every message carries `v`.

use cogload_core::config::ConfigDocument;
use cogload_core::instructions::InstructionEventKind;
use cogload_core::kinematics::Hand;
use cogload_core::scoring::ScoreFrame;
use cogload_core::types::WorkstationLayout;
use cogload_replay::simulator::{Agitation, GazeTarget, StationRef};
use serde::{Deserialize, Serialize};

use crate::feedback::WIRE_VERSION;

/// Body of a `POST /control` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRequest {
    #[serde(default = "wire_version")]
    pub v: u32,
    #[serde(flatten)]
    pub command: ControlCommand,
}

fn wire_version() -> u32 {
    WIRE_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ControlCommand {
    /// Fresh session with the current config.
    Start {
        #[serde(default)]
        session_id: Option<String>,
    },
    /// Flushes the reorder buffer and ends the session.
    Stop,
    /// Replaces the config (and optionally the layout), restarting the session.
    Config {
        config: Box<ConfigDocument>,
        #[serde(default)]
        layout: Option<WorkstationLayout>,
    },
    /// Restarts the session fed by the built-in operator simulator.
    SimStart {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        frame_rate: Option<f64>,
        #[serde(default)]
        calibration: Option<f64>,
    },
    SimStop,
    /// Steers the running simulator. Omitted fields keep their value.
    Sim {
        #[serde(default)]
        gaze: Option<GazeTarget>,
        #[serde(default)]
        proximity: Option<StationRef>,
        #[serde(default)]
        agitation: Option<Agitation>,
        #[serde(default)]
        noise_dba: Option<f64>,
        #[serde(default)]
        self_touch: Option<Hand>,
    },
    /// Instruction GUI event at the current session time.
    Instruction {
        #[serde(flatten)]
        event: InstructionEventKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReply {
    pub v: u32,
    pub ok: bool,
    pub session: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Sequence number of a record the command ingested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Last score of a stopped session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_score: Option<ScoreFrame>,
}

impl ControlReply {
    pub fn ok(session: impl Into<String>) -> Self {
        Self {
            v: WIRE_VERSION,
            ok: true,
            session: session.into(),
            error: None,
            seq: None,
            final_score: None,
        }
    }

    pub fn error(session: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(error.into()),
            ..Self::ok(session)
        }
    }
}

/// Reply to one `/ingest` frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReply {
    pub v: u32,
    #[serde(flatten)]
    pub body: IngestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestOutcome {
    Ack {
        seq: u64,
    },
    /// A header frame restarted the session.
    Session {
        session: String,
    },
    /// Unknown record kind, ignored.
    Skipped {
        record_kind: String,
    },
    /// Valid frame refused by the reorder or stream rules.
    Rejected {
        reason: String,
    },
    /// Malformed frame, or an engine failure on an acknowledged record.
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        reason: String,
    },
    SessionError {
        reason: String,
    },
}

impl From<IngestOutcome> for IngestReply {
    fn from(body: IngestOutcome) -> Self {
        Self {
            v: WIRE_VERSION,
            body,
        }
    }
}
