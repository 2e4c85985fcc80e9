//! Deterministic batch replay of a parsed session log.

use std::collections::BTreeMap;

use cogload_core::config::SessionConfig;
use cogload_core::config::{Factor, Threshold};
use cogload_core::engine::{Engine, EngineError, EngineStats, InstructionCounters, Tick};
use cogload_core::factors::FactorVector;
use cogload_core::kinematics::ActivityBaseline;
use cogload_core::par::{self, Execution};
use cogload_core::scoring::{thresholds_from_calibration, ColorBand, ScoreFrame, ScoringError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::SessionLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("session {session}: record {index}: {source}")]
    Engine {
        session: String,
        index: usize,
        #[source]
        source: EngineError,
    },
    #[error("session {session}: {source}")]
    Finish {
        session: String,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Calibration(#[from] ScoringError),
}

/// End-of-session summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub records: usize,
    pub skipped: BTreeMap<String, usize>,
    pub ticks: usize,
    pub scored_frames: usize,
    pub duration: f64,
    pub task_time: f64,
    pub mean_mental_effort_instantaneous: f64,
    pub mean_mental_effort_overall: f64,
    pub mean_stress_level: f64,
    pub peak_band: Option<ColorBand>,
    /// Fraction of scored frames per band.
    pub band_share: BTreeMap<ColorBand, f64>,
    pub attention_time: Vec<f64>,
    pub instructions: InstructionCounters,
    pub self_touches: usize,
    pub hyperactivity_available: bool,
    pub baseline: Option<ActivityBaseline>,
    pub stats: EngineStats,
    pub final_score: Option<ScoreFrame>,
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub ticks: Vec<Tick>,
    pub report: ReplayReport,
}

impl ReplayOutput {
    pub fn scores(&self) -> impl Iterator<Item = &ScoreFrame> {
        self.ticks.iter().filter_map(|t| t.score.as_ref())
    }

    pub fn factors(&self) -> Vec<FactorVector> {
        self.ticks
            .iter()
            .filter_map(|t| t.factors.clone())
            .collect()
    }

    /// One `t, me_inst, me_overall, stress, band` line per scored tick.
    pub fn trace(&self) -> String {
        trace(&self.ticks)
    }
}

pub fn trace(ticks: &[Tick]) -> String {
    let mut out = String::new();
    for s in ticks.iter().filter_map(|t| t.score.as_ref()) {
        out.push_str(&s.trace_line());
        out.push('\n');
    }
    out
}

/// Replays with the config stored in the log header.
pub fn replay(log: &SessionLog) -> Result<ReplayOutput, ReplayError> {
    replay_with_config(log, log.header.config.to_session_config())
}

pub fn replay_with_config(
    log: &SessionLog,
    config: SessionConfig,
) -> Result<ReplayOutput, ReplayError> {
    let session = log.header.session_id.clone();
    let mut engine = Engine::new(config, log.header.layout.clone());
    let mut ticks = Vec::new();
    for (index, r) in log.records.iter().enumerate() {
        let closed = engine.push(r).map_err(|source| ReplayError::Engine {
            session: session.clone(),
            index,
            source,
        })?;
        ticks.extend(closed);
    }
    let last = engine.finish().map_err(|source| ReplayError::Finish {
        session: session.clone(),
        source,
    })?;
    ticks.extend(last);
    let report = report(log, &ticks, &engine);
    Ok(ReplayOutput { ticks, report })
}

fn report(log: &SessionLog, ticks: &[Tick], engine: &Engine) -> ReplayReport {
    let scores: Vec<&ScoreFrame> = ticks.iter().filter_map(|t| t.score.as_ref()).collect();
    let n = scores.len();
    let mean = |f: &dyn Fn(&ScoreFrame) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(|s| f(s)).sum::<f64>() / n as f64
        }
    };
    let mut band_counts: BTreeMap<ColorBand, usize> = BTreeMap::new();
    for s in &scores {
        *band_counts.entry(s.color_band).or_default() += 1;
    }
    let band_share = band_counts
        .into_iter()
        .map(|(b, c)| (b, c as f64 / n as f64))
        .collect();
    ReplayReport {
        session_id: log.header.session_id.clone(),
        records: log.records.len(),
        skipped: log.skipped.clone(),
        ticks: ticks.len(),
        scored_frames: n,
        duration: log.duration(),
        task_time: engine.ledger().task_time(),
        mean_mental_effort_instantaneous: mean(&|s| s.mental_effort_instantaneous),
        mean_mental_effort_overall: mean(&|s| s.mental_effort_overall),
        mean_stress_level: mean(&|s| s.stress_level),
        peak_band: scores.iter().map(|s| s.color_band).max(),
        band_share,
        attention_time: engine.ledger().attention_times().to_vec(),
        instructions: InstructionCounters::from(engine.instructions()),
        self_touches: ticks.iter().map(|t| t.self_touches.len()).sum(),
        hyperactivity_available: scores.iter().any(|s| s.hyperactivity_available),
        baseline: engine.baseline().cloned(),
        stats: engine.stats().clone(),
        final_score: scores.last().map(|s| (*s).clone()),
    }
}

/// Replays independent sessions, in parallel when `exec` allows.
pub fn replay_many(logs: &[SessionLog], exec: Execution) -> Vec<Result<ReplayOutput, ReplayError>> {
    par::map(exec, logs, replay)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub thresholds: BTreeMap<Factor, Threshold>,
    /// Activity baseline from the first log with a calibration segment.
    pub baseline: Option<ActivityBaseline>,
    pub sessions: usize,
}

/// Normalization thresholds (max over all calibration runs) and activity baseline.
pub fn calibrate(logs: &[SessionLog], exec: Execution) -> Result<CalibrationResult, ReplayError> {
    let outputs = replay_many(logs, exec)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let traces: Vec<Vec<FactorVector>> = outputs.iter().map(ReplayOutput::factors).collect();
    let thresholds = thresholds_from_calibration(&traces, exec)?;
    let baseline = outputs.iter().find_map(|o| o.report.baseline.clone());
    Ok(CalibrationResult {
        thresholds,
        baseline,
        sessions: logs.len(),
    })
}
