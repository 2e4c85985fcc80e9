#![allow(dead_code)]

use std::path::PathBuf;

use cogload_core::config::SessionConfig;
use cogload_core::types::WorkstationLayout;
use cogload_replay::simulator::{synthesize, Scenario};
use cogload_replay::SessionLog;

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(rel: &str) -> Scenario {
    let text = std::fs::read_to_string(workspace().join(rel)).unwrap();
    Scenario::from_yaml(&text).unwrap()
}

pub fn simulate(rel: &str) -> SessionLog {
    synthesize(
        &scenario(rel),
        &WorkstationLayout::desk(),
        &SessionConfig::default(),
    )
    .unwrap()
}
