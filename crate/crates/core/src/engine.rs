//! The per-session pipeline: records in, one [`Tick`] per distinct timestamp out.
//!
//! A tick closes when a record with a later timestamp arrives or on
//! [`Engine::finish`]. Closing a tick resolves attention, updates the factor
//! ledger and scores the session at that instant. Replay and the live service
//! drive the same engine, so their outputs agree bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{self, AttentionState, SphericalDirection};
use crate::config::SessionConfig;
use crate::factors::{evaluate_factors, AttentionLedger, FactorVector};
use crate::headpose::{self, FaceModel, PoseFilterState};
use crate::instructions::{InstructionError, InstructionEvent, InstructionState};
use crate::kinematics::{
    calibrate_baseline, ActivityBaseline, ActivityMonitor, KinematicsError, ProximityState,
    ProximityTracker, SelfTouchDetector, SelfTouchEvent, SelfTouchParams,
};
use crate::record::{labels, Marker, Record};
use crate::scoring::{self, ScoreFrame, ScoringError};
use crate::types::{
    FaceFrame, Joint, RigidTransform, SkeletonFrame, Timestamp, Vec3, WorkstationId,
    WorkstationKind, WorkstationLayout,
};

/// A head pose older than this is treated as lost (face out of view).
pub const POSE_TIMEOUT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("record at {got} precedes the current tick at {current}")]
    Ordering { current: Timestamp, got: Timestamp },
    #[error("session has ended")]
    Ended,
    #[error(transparent)]
    Instruction(#[from] InstructionError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibrating,
    Running,
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstructionCounters {
    pub index: u32,
    pub shown: u32,
    pub checks: u32,
    pub check_backs: u32,
    pub mistakes: u32,
}

impl From<&InstructionState> for InstructionCounters {
    fn from(s: &InstructionState) -> Self {
        Self {
            index: s.current_index,
            shown: s.instructions_shown,
            checks: s.instruction_checks,
            check_backs: s.check_backs,
            mistakes: s.mistakes.len() as u32,
        }
    }
}

/// Facing direction of the head, relative to looking straight at the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Facing {
    pub azimuth: f64,
    pub elevation: f64,
}

impl From<SphericalDirection> for Facing {
    fn from(d: SphericalDirection) -> Self {
        Self {
            azimuth: d.azimuth,
            elevation: d.elevation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub t: Timestamp,
    pub phase: Phase,
    pub attention: AttentionState,
    pub facing: Option<Facing>,
    pub proximity: Option<ProximityState>,
    pub self_touches: Vec<SelfTouchEvent>,
    pub activity: Option<f64>,
    pub instructions: InstructionCounters,
    /// Absent while calibrating.
    pub factors: Option<FactorVector>,
    pub score: Option<ScoreFrame>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub records: usize,
    pub ticks: usize,
    pub pnp_solved: usize,
    pub pnp_failed: usize,
    pub incomplete_faces: usize,
    pub skeleton_gaps: usize,
    pub calibration_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: SessionConfig,
    layout: WorkstationLayout,
    gate: Vec<WorkstationId>,
    model: FaceModel,
    phase: Phase,
    current: Option<Timestamp>,
    filter: Option<PoseFilterState>,
    last_measurement: Option<Timestamp>,
    proximity: ProximityTracker,
    self_touch: SelfTouchDetector,
    activity: ActivityMonitor,
    calibration_frames: Vec<SkeletonFrame>,
    baseline: Option<ActivityBaseline>,
    instructions: InstructionState,
    ledger: AttentionLedger,
    pending_touches: Vec<SelfTouchEvent>,
    stats: EngineStats,
}

impl Engine {
    pub fn new(config: SessionConfig, layout: WorkstationLayout) -> Self {
        Self::with_model(config, layout, FaceModel::canonical())
    }

    pub fn with_model(config: SessionConfig, layout: WorkstationLayout, model: FaceModel) -> Self {
        let gate = layout
            .workstations
            .iter()
            .filter(|w| config.attention_gate.contains(&w.label))
            .map(|w| w.id)
            .collect();
        let ledger = AttentionLedger::new(
            layout.len(),
            layout.find_kind(WorkstationKind::Assembly),
            layout.find_kind(WorkstationKind::Storage),
        );
        Self {
            gate,
            model,
            phase: Phase::Running,
            current: None,
            filter: None,
            last_measurement: None,
            proximity: ProximityTracker::default(),
            self_touch: SelfTouchDetector::new(SelfTouchParams::from(&config)),
            activity: ActivityMonitor::new(config.activity_window_tau),
            calibration_frames: Vec::new(),
            baseline: config.baseline.clone(),
            instructions: InstructionState::default(),
            ledger,
            pending_touches: Vec::new(),
            stats: EngineStats::default(),
            config,
            layout,
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn layout(&self) -> &WorkstationLayout {
        &self.layout
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn baseline(&self) -> Option<&ActivityBaseline> {
        self.baseline.as_ref()
    }

    pub fn instructions(&self) -> &InstructionState {
        &self.instructions
    }

    pub fn ledger(&self) -> &AttentionLedger {
        &self.ledger
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    /// Timestamp of the tick still collecting records.
    pub fn current_time(&self) -> Option<Timestamp> {
        self.current
    }

    /// Feeds one record. Returns the previous tick if this record opened a new one.
    pub fn push(&mut self, record: &Record) -> Result<Option<Tick>, EngineError> {
        if self.phase == Phase::Ended {
            return Err(EngineError::Ended);
        }
        let t = record.t();
        let closed = match self.current {
            Some(current) if t < current => return Err(EngineError::Ordering { current, got: t }),
            Some(current) if t > current => {
                let tick = self.close_tick(current)?;
                self.open_tick(t);
                Some(tick)
            }
            Some(_) => None,
            None => {
                self.open_tick(t);
                None
            }
        };
        self.stats.records += 1;
        self.apply(record)?;
        Ok(closed)
    }

    /// Closes the open tick and ends the session.
    pub fn finish(&mut self) -> Result<Option<Tick>, EngineError> {
        if self.phase == Phase::Ended {
            return Ok(None);
        }
        let tick = match self.current {
            Some(t) => Some(self.close_tick(t)?),
            None => None,
        };
        self.phase = Phase::Ended;
        Ok(tick)
    }

    fn open_tick(&mut self, t: Timestamp) {
        self.current = Some(t);
        if self.phase == Phase::Running {
            self.ledger.advance(t);
        }
    }

    fn apply(&mut self, record: &Record) -> Result<(), EngineError> {
        match record {
            Record::Skeleton(frame) => self.apply_skeleton(frame),
            Record::Face(frame) => self.apply_face(frame),
            Record::HeadPose(r) => self.update_filter(&r.pose(), r.t),
            Record::Instruction(ev) => self.apply_instruction(ev)?,
            Record::Noise(n) => {
                if self.phase == Phase::Running {
                    self.ledger.record_noise(n.dba);
                }
            }
            Record::Marker(m) => self.apply_marker(m),
        }
        Ok(())
    }

    fn apply_skeleton(&mut self, frame: &SkeletonFrame) {
        let gaps = self.proximity.gaps();
        self.proximity.update(frame, &self.layout);
        self.stats.skeleton_gaps += self.proximity.gaps() - gaps;
        for ev in self.self_touch.update(frame) {
            if self.phase == Phase::Running {
                self.ledger.record_self_touch(ev.t);
            }
            self.pending_touches.push(ev);
        }
        self.activity.push(frame);
        if self.phase == Phase::Calibrating {
            self.calibration_frames.push(frame.clone());
        }
    }

    fn apply_face(&mut self, frame: &FaceFrame) {
        if !frame.is_complete() {
            self.stats.incomplete_faces += 1;
            return;
        }
        let initial = match &self.filter {
            Some(f) => f.pose(),
            None => headpose::default_initial_pose(),
        };
        let solved = headpose::solve_pnp(
            &self.model,
            frame,
            &self.config.camera,
            &initial,
            &self.config.lm,
        )
        .or_else(|_| {
            // a stale warm start can sit behind the camera; retry cold
            headpose::solve_pnp(
                &self.model,
                frame,
                &self.config.camera,
                &headpose::default_initial_pose(),
                &self.config.lm,
            )
        });
        match solved {
            Ok(sol) => {
                self.stats.pnp_solved += 1;
                self.update_filter(&sol.pose, frame.t);
            }
            Err(_) => self.stats.pnp_failed += 1,
        }
    }

    fn update_filter(&mut self, measurement: &RigidTransform, t: Timestamp) {
        let next = match &self.filter {
            None => Some(PoseFilterState::new(measurement, t, self.config.filter)),
            Some(state) => headpose::filter_pose(state, measurement, t)
                .ok()
                .map(|(s, _)| s),
        };
        if let Some(state) = next {
            self.filter = Some(state);
            self.last_measurement = Some(t);
        }
    }

    fn apply_instruction(&mut self, ev: &InstructionEvent) -> Result<(), EngineError> {
        self.instructions.apply(ev)?;
        if self.phase == Phase::Running {
            self.ledger.record_instruction(ev.kind);
        }
        Ok(())
    }

    fn apply_marker(&mut self, m: &Marker) {
        match m.label.as_str() {
            labels::CALIBRATION_START => {
                self.phase = Phase::Calibrating;
                self.calibration_frames.clear();
            }
            labels::CALIBRATION_END if self.phase == Phase::Calibrating => {
                match calibrate_baseline(
                    &self.calibration_frames,
                    self.config.activity_window_tau,
                    &Joint::UPPER_BODY,
                ) {
                    Ok(b) => self.baseline = Some(b),
                    Err(e) => self.stats.calibration_error = Some(e.to_string()),
                }
                self.calibration_frames.clear();
                self.phase = Phase::Running;
            }
            _ => {}
        }
    }

    /// Current head pose, unless the last measurement is too old.
    pub fn head_pose(&self, t: Timestamp) -> Option<RigidTransform> {
        let last = self.last_measurement?;
        if t - last > POSE_TIMEOUT {
            return None;
        }
        self.filter.as_ref().map(PoseFilterState::pose)
    }

    fn close_tick(&mut self, t: Timestamp) -> Result<Tick, EngineError> {
        let pose = self.head_pose(t);
        let levels = match &pose {
            Some(p) => attention::workstation_levels(p, &self.layout, &self.config)
                .map_err(|e| EngineError::Scoring(ScoringError::Calibration(e.to_string())))?,
            None => vec![0.0; self.layout.len()],
        };
        let proximity = self.proximity.state();
        let in_reach = proximity
            .filter(|p| p.horizontal_distance <= self.config.proximity_gate_radius)
            .map(|p| p.nearest);
        let attention = attention::resolve_focus(
            t,
            &levels,
            self.config.attention_threshold,
            in_reach,
            &self.gate,
        );
        let facing = pose
            .and_then(|p| {
                attention::cartesian_to_spherical(&(p.rotation * Vec3::new(0.0, 0.0, -1.0))).ok()
            })
            .map(Facing::from);
        let activity = match &self.baseline {
            Some(b) => self.activity.level(Some(b), self.config.sigma_floor)?,
            None => None,
        };

        let (factors, score) = if self.phase == Phase::Running {
            self.ledger.advance(t);
            self.ledger.observe(
                &attention,
                proximity.map(|p| p.nearest),
                self.instructions.current_index,
            );
            let factors = evaluate_factors(
                &self.ledger,
                &self.instructions,
                activity,
                &self.config.workstation_factors,
                t,
            );
            let score = scoring::score(&factors, &self.config)?;
            (Some(factors), Some(score))
        } else {
            (None, None)
        };

        self.stats.ticks += 1;
        Ok(Tick {
            t,
            phase: self.phase,
            attention,
            facing,
            proximity,
            self_touches: std::mem::take(&mut self.pending_touches),
            activity,
            instructions: InstructionCounters::from(&self.instructions),
            factors,
            score,
        })
    }
}

/// Runs a whole record sequence through a fresh engine.
pub fn run_records<'a>(
    config: SessionConfig,
    layout: WorkstationLayout,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(Vec<Tick>, Engine), EngineError> {
    let mut engine = Engine::new(config, layout);
    let mut ticks = Vec::new();
    for r in records {
        if let Some(tick) = engine.push(r)? {
            ticks.push(tick);
        }
    }
    if let Some(tick) = engine.finish()? {
        ticks.push(tick);
    }
    Ok((ticks, engine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Focus;
    use crate::instructions::InstructionEventKind;
    use crate::record::HeadPoseRecord;
    use crate::types::Keypoint;

    fn skeleton(t: f64, neck: Vec3) -> Record {
        let mut joints = std::collections::BTreeMap::new();
        joints.insert(Joint::Neck, Keypoint::new(neck, 1.0));
        joints.insert(
            Joint::Head,
            Keypoint::new(neck + Vec3::new(0.0, -0.2, 0.0), 1.0),
        );
        Record::Skeleton(SkeletonFrame {
            t: Timestamp(t),
            joints,
        })
    }

    /// Head at `head` looking at `target`, both in the camera frame.
    fn looking_at(t: f64, head: Vec3, target: Vec3) -> Record {
        let d = (target - head).normalize();
        let pitch = d.y.asin();
        let yaw = (-d.x).atan2(-d.z);
        let r = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), yaw)
            * nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), pitch);
        let pose = RigidTransform::new(r.into_inner(), head);
        Record::HeadPose(HeadPoseRecord::from_pose(Timestamp(t), &pose))
    }

    #[test]
    fn looking_at_helper_faces_target() {
        let head = Vec3::new(0.1, -0.2, 1.0);
        let target = Vec3::new(0.45, 0.15, 0.3);
        let Record::HeadPose(r) = looking_at(0.0, head, target) else {
            unreachable!()
        };
        let local = r.pose().inverse().apply(&target);
        let dir = attention::cartesian_to_spherical(&local).unwrap();
        assert!(dir.azimuth.abs() < 1e-9 && dir.elevation.abs() < 1e-9);
    }

    fn desk_session(seconds: usize) -> Vec<Record> {
        let layout = WorkstationLayout::desk();
        let w1 = layout.get(WorkstationId(1)).unwrap().position();
        let head = Vec3::new(0.0, 0.0, 0.9);
        let mut out = Vec::new();
        for k in 0..seconds * 10 {
            let t = k as f64 / 10.0;
            out.push(skeleton(t, head + Vec3::new(0.0, 0.2, 0.0)));
            out.push(looking_at(t, head, w1));
        }
        out
    }

    #[test]
    fn attentive_operator_has_no_concentration_loss() {
        let records = desk_session(20);
        let (ticks, engine) = run_records(
            SessionConfig::default(),
            WorkstationLayout::desk(),
            &records,
        )
        .unwrap();
        assert_eq!(ticks.len(), 200);
        for tick in &ticks {
            assert_eq!(tick.attention.focus, Focus::Workstation(WorkstationId(1)));
            let f = tick.factors.as_ref().unwrap();
            assert_eq!(
                f.get(
                    crate::config::Factor::ConcentrationLoss,
                    crate::config::Variant::Overall
                ),
                0.0
            );
        }
        assert!((engine.ledger().task_time() - 19.9).abs() < 1e-9);
        assert!(!ticks[0].score.as_ref().unwrap().hyperactivity_available);
    }

    #[test]
    fn ticks_close_on_later_timestamps() {
        let mut e = Engine::new(SessionConfig::default(), WorkstationLayout::desk());
        assert!(e.push(&skeleton(0.0, Vec3::zeros())).unwrap().is_none());
        assert!(e.push(&skeleton(0.0, Vec3::zeros())).is_ok());
        let tick = e.push(&skeleton(0.1, Vec3::zeros())).unwrap().unwrap();
        assert_eq!(tick.t, Timestamp(0.0));
        let err = e.push(&skeleton(0.05, Vec3::zeros())).unwrap_err();
        assert!(matches!(err, EngineError::Ordering { .. }));
        assert_eq!(e.finish().unwrap().unwrap().t, Timestamp(0.1));
        assert_eq!(
            e.push(&skeleton(0.2, Vec3::zeros())),
            Err(EngineError::Ended)
        );
    }

    #[test]
    fn calibration_segment_sets_baseline_and_suppresses_scores() {
        let mut records = vec![Record::Marker(Marker {
            t: Timestamp(0.0),
            label: labels::CALIBRATION_START.into(),
            value: None,
        })];
        for k in 0..=250 {
            records.push(skeleton(k as f64 / 10.0, Vec3::new(0.0, 0.2, 0.9)));
        }
        records.push(Record::Marker(Marker {
            t: Timestamp(25.0),
            label: labels::CALIBRATION_END.into(),
            value: None,
        }));
        for k in 251..300 {
            records.push(skeleton(k as f64 / 10.0, Vec3::new(0.0, 0.2, 0.9)));
        }
        let (ticks, engine) = run_records(
            SessionConfig::default(),
            WorkstationLayout::desk(),
            &records,
        )
        .unwrap();
        assert!(engine.baseline().is_some());
        assert!(ticks[..250]
            .iter()
            .all(|t| t.score.is_none() && t.phase == Phase::Calibrating));
        let last = ticks.last().unwrap();
        assert_eq!(last.activity, Some(0.0));
        assert!(last.score.as_ref().unwrap().hyperactivity_available);
    }

    #[test]
    fn instruction_events_reach_counters() {
        let mut records = desk_session(3);
        let t = Timestamp(1.05);
        let pos = records.iter().position(|r| r.t() > t).unwrap();
        for (i, kind) in [InstructionEventKind::Next, InstructionEventKind::CheckBack]
            .into_iter()
            .enumerate()
        {
            records.insert(pos + i, Record::Instruction(InstructionEvent { t, kind }));
        }
        let (ticks, _) = run_records(
            SessionConfig::default(),
            WorkstationLayout::desk(),
            &records,
        )
        .unwrap();
        let last = ticks.last().unwrap();
        assert_eq!(
            last.instructions,
            InstructionCounters {
                index: 2,
                shown: 1,
                checks: 2,
                check_backs: 1,
                mistakes: 0
            }
        );
    }

    #[test]
    fn stale_pose_means_distracted() {
        let mut records = desk_session(2);
        // skeleton keeps coming, head poses stop
        for k in 20..40 {
            records.push(skeleton(k as f64 / 10.0, Vec3::new(0.0, 0.2, 0.9)));
        }
        let (ticks, _) = run_records(
            SessionConfig::default(),
            WorkstationLayout::desk(),
            &records,
        )
        .unwrap();
        assert_eq!(ticks.last().unwrap().attention.focus, Focus::Distracted);
        assert!(ticks.last().unwrap().attention.gated);
    }
}
