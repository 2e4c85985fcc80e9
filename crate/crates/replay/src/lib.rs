//! Session logs, deterministic replay, the scenario simulator and CSV inputs.

pub mod csvio;
pub mod log;
pub mod replay;
pub mod simulator;

pub use log::{parse_log, serialize_log, LogError, LogHeader, SessionLog, StreamParser};
pub use replay::{
    replay, replay_many, replay_with_config, ReplayError, ReplayOutput, ReplayReport,
};
pub use simulator::{synthesize, LiveSimulator, LiveState, Scenario, ScenarioError};
