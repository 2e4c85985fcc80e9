//! Scripted session generator.
//!
//! A scenario is a calibration lead-in followed by segments. Each segment
//! fixes where the operator stands, what they look at, how agitated their
//! upper body is and the ambient noise, and scripts instruction presses and
//! self-touch gestures at offsets from the segment start. Face frames are the
//! face model projected through the scripted head pose.
//!
//! ```yaml
//! seed: 7
//! frame_rate: 30
//! calibration: 20
//! segments:
//!   - span: 30
//!     gaze: W1
//!     proximity: W1
//!     agitation: calm
//!     noise_dba: 45
//!     events:
//!       - { at: 5, kind: next }
//!       - { at: 9, kind: back, steps: 2 }
//!       - { at: 12, kind: self_touch, hand: right }
//! ```

use std::fmt;
use std::str::FromStr;

use cogload_core::config::{ConfigDocument, SessionConfig};
use cogload_core::headpose::{project_model, FaceModel};
use cogload_core::instructions::{InstructionEvent, InstructionEventKind};
use cogload_core::kinematics::Hand;
use cogload_core::record::{labels, HeadPoseRecord, Marker, NoiseSample, Record};
use cogload_core::types::{
    FaceFrame, Joint, Keypoint, Pixel, RigidTransform, SkeletonFrame, Timestamp, Vec3,
    WorkstationId, WorkstationLayout,
};
use nalgebra::{Rotation3, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogHeader, SessionLog};

/// Head-pose blend time between consecutive segments.
pub const TRANSITION: f64 = 0.5;
const DIP_APPROACH: f64 = 0.4;
const DIP_HOLD: f64 = 0.1;
/// Skeleton coordinates are quantized like a depth sensor's output.
const SKELETON_SCALE: f64 = 1e5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("segment {segment}: {reason}")]
    Segment { segment: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Where the operator looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GazeTarget {
    Workstation(WorkstationId),
    Away,
}

impl fmt::Display for GazeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GazeTarget::Workstation(id) => write!(f, "{id}"),
            GazeTarget::Away => f.write_str("away"),
        }
    }
}

fn parse_workstation(s: &str) -> Result<WorkstationId, String> {
    let digits = s.strip_prefix(['W', 'w']).unwrap_or(s);
    digits
        .parse::<u32>()
        .map(WorkstationId)
        .map_err(|_| format!("expected a workstation like W2, got {s:?}"))
}

impl FromStr for GazeTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("away") {
            Ok(GazeTarget::Away)
        } else {
            parse_workstation(s).map(GazeTarget::Workstation)
        }
    }
}

impl TryFrom<String> for GazeTarget {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GazeTarget> for String {
    fn from(g: GazeTarget) -> String {
        g.to_string()
    }
}

/// Workstation reference written as `W1` (or a bare id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StationRef(pub WorkstationId);

impl TryFrom<String> for StationRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        parse_workstation(&s).map(StationRef)
    }
}

impl From<StationRef> for String {
    fn from(s: StationRef) -> String {
        s.0.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agitation {
    #[default]
    Calm,
    Elevated,
    High,
}

impl Agitation {
    /// Per-frame wrist jitter, meters.
    pub fn jitter(self) -> f64 {
        match self {
            Agitation::Calm => 0.002,
            Agitation::Elevated => 0.008,
            Agitation::High => 0.02,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Agitation::Calm => "calm",
            Agitation::Elevated => "elevated",
            Agitation::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptedKind {
    Next,
    CheckBack,
    Back { steps: u32 },
    SelfTouch { hand: Hand },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    /// Seconds from the segment start.
    pub at: f64,
    #[serde(flatten)]
    pub kind: ScriptedKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub span: f64,
    pub gaze: GazeTarget,
    pub proximity: StationRef,
    #[serde(default)]
    pub agitation: Agitation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dba: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<ScriptedEvent>,
}

/// How head pose reaches the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// Projected landmarks; the engine runs PnP.
    #[default]
    Face,
    /// Ground-truth poses as external-tracker records.
    HeadPose,
}

fn default_frame_rate() -> f64 {
    30.0
}

fn default_noise_px() -> f64 {
    0.5
}

fn default_wall_clock() -> String {
    "2024-01-01T09:00:00Z".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub session_id: Option<String>,
    pub seed: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_noise_px")]
    pub landmark_noise_px: f64,
    /// Calm lead-in at the assembly station bracketed by calibration markers.
    #[serde(default)]
    pub calibration: f64,
    #[serde(default)]
    pub pose_source: PoseSource,
    #[serde(default = "default_wall_clock")]
    pub start_wall_clock: String,
    /// Optional; when given it must equal calibration plus the segment spans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub segments: Vec<Segment>,
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_yaml::from_str(text)?)
    }

    pub fn to_yaml(&self) -> Result<String, ScenarioError> {
        Ok(serde_yaml::to_string(self)?)
    }

    pub fn total_duration(&self) -> f64 {
        self.calibration + self.segments.iter().map(|s| s.span).sum::<f64>()
    }

    /// Segment start times, after the calibration lead-in.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut t = self.calibration;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.span;
                start
            })
            .collect()
    }

    pub fn validate(&self, layout: &WorkstationLayout) -> Result<(), ScenarioError> {
        if !(self.frame_rate > 0.0) {
            return Err(ScenarioError::Invalid(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            )));
        }
        if !(self.landmark_noise_px >= 0.0) {
            return Err(ScenarioError::Invalid(
                "landmark_noise_px must be non-negative".into(),
            ));
        }
        if !(self.calibration >= 0.0) {
            return Err(ScenarioError::Invalid(
                "calibration must be non-negative".into(),
            ));
        }
        if self.segments.is_empty() {
            return Err(ScenarioError::Invalid("no segments".into()));
        }
        if let Some(d) = self.duration {
            if (d - self.total_duration()).abs() > 1e-9 {
                return Err(ScenarioError::Invalid(format!(
                    "duration {d} does not match calibration plus segment spans {}",
                    self.total_duration()
                )));
            }
        }
        if self.calibration > 0.0
            && layout
                .find_kind(cogload_core::types::WorkstationKind::Assembly)
                .is_none()
        {
            return Err(ScenarioError::Invalid(
                "calibration needs an assembly workstation".into(),
            ));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            let bad = |reason: String| ScenarioError::Segment { segment: i, reason };
            if !(seg.span > 0.0) {
                return Err(bad(format!("span must be positive, got {}", seg.span)));
            }
            if let GazeTarget::Workstation(id) = seg.gaze {
                if layout.get(id).is_none() {
                    return Err(bad(format!("gaze target {id} is not in the layout")));
                }
            }
            if layout.get(seg.proximity.0).is_none() {
                return Err(bad(format!(
                    "proximity {} is not in the layout",
                    seg.proximity.0
                )));
            }
            if seg.noise_dba.is_some_and(|n| !n.is_finite()) {
                return Err(bad("noise_dba must be finite".into()));
            }
            for ev in &seg.events {
                if !(0.0..seg.span).contains(&ev.at) {
                    return Err(bad(format!("event at {} outside the span", ev.at)));
                }
                if let ScriptedKind::Back { steps: 0 } = ev.kind {
                    return Err(bad("back needs at least one step".into()));
                }
            }
        }
        Ok(())
    }
}

/// Where the operator's neck sits when working at a station: 0.3 m beyond it,
/// on the side away from the camera.
pub fn operator_neck(layout: &WorkstationLayout, id: WorkstationId) -> Vec3 {
    let p = layout
        .get(id)
        .map(|w| w.position())
        .unwrap_or_else(Vec3::zeros);
    Vec3::new(p.x, 0.0, p.z + 0.3)
}

pub fn head_offset() -> Vec3 {
    Vec3::new(0.0, -0.2, 0.0)
}

/// Fixed look-away direction (up and to the camera's left).
pub fn away_direction() -> Vec3 {
    Vec3::new(-0.6, -0.5, -0.6).normalize()
}

/// Rotation turning the face (which looks along -z) towards `dir`, with no roll.
pub fn look_rotation(dir: &Vec3) -> Rotation3<f64> {
    let d = dir.normalize();
    let pitch = d.y.clamp(-1.0, 1.0).asin();
    let yaw = (-d.x).atan2(-d.z);
    Rotation3::from_axis_angle(&Vec3::y_axis(), yaw)
        * Rotation3::from_axis_angle(&Vec3::x_axis(), pitch)
}

fn segment_pose(seg: &Segment, layout: &WorkstationLayout) -> RigidTransform {
    let head = operator_neck(layout, seg.proximity.0) + head_offset();
    let dir = match seg.gaze {
        GazeTarget::Workstation(id) => {
            layout
                .get(id)
                .map(|w| w.position())
                .unwrap_or_else(Vec3::zeros)
                - head
        }
        GazeTarget::Away => away_direction(),
    };
    RigidTransform::new(look_rotation(&dir).into_inner(), head)
}

fn quantize(x: f64) -> f64 {
    (x * SKELETON_SCALE).round() / SKELETON_SCALE
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn blend(a: &RigidTransform, b: &RigidTransform, s: f64) -> RigidTransform {
    let qa = UnitQuaternion::from_matrix(&a.rotation);
    let qb = UnitQuaternion::from_matrix(&b.rotation);
    let q = qa.slerp(&qb, s);
    RigidTransform::new(
        q.to_rotation_matrix().into_inner(),
        a.translation.lerp(&b.translation, s),
    )
}

/// Rest pose of the 25 joints relative to the neck.
fn rest_offsets() -> Vec<(Joint, Vec3)> {
    use Joint::*;
    vec![
        (Head, head_offset()),
        (Neck, Vec3::zeros()),
        (RightShoulder, Vec3::new(-0.18, 0.02, 0.0)),
        (LeftShoulder, Vec3::new(0.18, 0.02, 0.0)),
        (RightElbow, Vec3::new(-0.22, 0.3, -0.1)),
        (LeftElbow, Vec3::new(0.22, 0.3, -0.1)),
        (RightWrist, Vec3::new(-0.2, 0.45, -0.3)),
        (LeftWrist, Vec3::new(0.2, 0.45, -0.3)),
        (MidHip, Vec3::new(0.0, 0.55, 0.05)),
        (RightHip, Vec3::new(-0.1, 0.55, 0.05)),
        (LeftHip, Vec3::new(0.1, 0.55, 0.05)),
        (RightKnee, Vec3::new(-0.1, 0.95, -0.05)),
        (LeftKnee, Vec3::new(0.1, 0.95, -0.05)),
        (RightAnkle, Vec3::new(-0.1, 1.4, 0.0)),
        (LeftAnkle, Vec3::new(0.1, 1.4, 0.0)),
        (RightEye, Vec3::new(-0.03, -0.23, -0.08)),
        (LeftEye, Vec3::new(0.03, -0.23, -0.08)),
        (RightEar, Vec3::new(-0.07, -0.21, 0.0)),
        (LeftEar, Vec3::new(0.07, -0.21, 0.0)),
        (LeftBigToe, Vec3::new(0.1, 1.45, -0.12)),
        (LeftSmallToe, Vec3::new(0.14, 1.45, -0.1)),
        (LeftHeel, Vec3::new(0.1, 1.45, 0.04)),
        (RightBigToe, Vec3::new(-0.1, 1.45, -0.12)),
        (RightSmallToe, Vec3::new(-0.14, 1.45, -0.1)),
        (RightHeel, Vec3::new(-0.1, 1.45, 0.04)),
    ]
}

/// Relative jitter scale per joint; the wrists move most.
fn jitter_scale(j: Joint) -> f64 {
    match j {
        Joint::RightWrist | Joint::LeftWrist => 1.0,
        Joint::RightElbow | Joint::LeftElbow => 0.6,
        Joint::Head | Joint::Neck | Joint::RightShoulder | Joint::LeftShoulder => 0.3,
        _ => 0.0,
    }
}

/// Wrist blend towards the face for a self-touch centred on `at`.
fn dip_weight(t: f64, at: f64) -> f64 {
    let d = (t - at).abs();
    if d <= DIP_HOLD {
        1.0
    } else if d < DIP_HOLD + DIP_APPROACH {
        smoothstep(1.0 - (d - DIP_HOLD) / DIP_APPROACH)
    } else {
        0.0
    }
}

struct Timeline<'a> {
    scenario: &'a Scenario,
    layout: &'a WorkstationLayout,
    starts: Vec<f64>,
    calibration_segment: Segment,
}

impl<'a> Timeline<'a> {
    fn new(scenario: &'a Scenario, layout: &'a WorkstationLayout) -> Self {
        let w1 = layout
            .find_kind(cogload_core::types::WorkstationKind::Assembly)
            .unwrap_or(WorkstationId(1));
        Self {
            scenario,
            layout,
            starts: scenario.segment_starts(),
            calibration_segment: Segment {
                span: scenario.calibration,
                gaze: GazeTarget::Workstation(w1),
                proximity: StationRef(w1),
                agitation: Agitation::Calm,
                noise_dba: None,
                events: Vec::new(),
            },
        }
    }

    /// Index into the segments, `None` during calibration.
    fn segment_index(&self, t: f64) -> Option<usize> {
        self.starts.iter().rposition(|&s| s <= t)
    }

    fn segment(&self, index: Option<usize>) -> &Segment {
        match index {
            Some(i) => &self.scenario.segments[i],
            None => &self.calibration_segment,
        }
    }

    fn head_pose(&self, t: f64) -> RigidTransform {
        let idx = self.segment_index(t);
        let target = segment_pose(self.segment(idx), self.layout);
        let (start, prev) = match idx {
            Some(0) if self.scenario.calibration > 0.0 => (self.starts[0], Some(None)),
            Some(0) | None => (0.0, None),
            Some(i) => (self.starts[i], Some(Some(i - 1))),
        };
        match prev {
            Some(p) if t - start < TRANSITION => {
                let from = segment_pose(self.segment(p), self.layout);
                blend(&from, &target, smoothstep((t - start) / TRANSITION))
            }
            _ => target,
        }
    }

    /// Absolute self-touch instants with their hands.
    fn touches(&self) -> Vec<(f64, Hand)> {
        let mut out = Vec::new();
        for (seg, start) in self.scenario.segments.iter().zip(&self.starts) {
            for ev in &seg.events {
                if let ScriptedKind::SelfTouch { hand } = ev.kind {
                    out.push((start + ev.at, hand));
                }
            }
        }
        out
    }
}

/// Per-frame sensor output for a head pose: skeleton plus face or pose record.
struct Body<'a> {
    model: &'a FaceModel,
    config: &'a SessionConfig,
    offsets: Vec<(Joint, Vec3)>,
    unit: Normal<f64>,
    landmark_noise_px: f64,
    pose_source: PoseSource,
}

impl<'a> Body<'a> {
    fn new(
        model: &'a FaceModel,
        config: &'a SessionConfig,
        landmark_noise_px: f64,
        pose_source: PoseSource,
    ) -> Self {
        Self {
            model,
            config,
            offsets: rest_offsets(),
            unit: Normal::new(0.0, 1.0).expect("unit normal"),
            landmark_noise_px,
            pose_source,
        }
    }

    fn frame(
        &self,
        t: f64,
        pose: &RigidTransform,
        agitation: Agitation,
        touches: &[(f64, Hand)],
        rng: &mut ChaCha8Rng,
    ) -> Vec<Record> {
        let mut out = Vec::with_capacity(2);
        let neck = pose.translation - head_offset();
        let sigma = agitation.jitter();
        let mut joints = std::collections::BTreeMap::new();
        for &(j, off) in &self.offsets {
            let s = sigma * jitter_scale(j);
            let jitter = Vec3::new(
                self.unit.sample(rng),
                self.unit.sample(rng),
                self.unit.sample(rng),
            ) * s;
            joints.insert(j, neck + off + jitter);
        }
        for &(at, hand) in touches {
            let w = dip_weight(t, at);
            if w > 0.0 {
                let side = if hand == Hand::Left { 1.0 } else { -1.0 };
                let contact = joints[&Joint::Head] + Vec3::new(0.04 * side, 0.06, -0.06);
                let wrist = joints[&hand.wrist()];
                joints.insert(hand.wrist(), wrist.lerp(&contact, w));
                let elbow = if hand == Hand::Left {
                    Joint::LeftElbow
                } else {
                    Joint::RightElbow
                };
                let e = joints[&elbow];
                joints.insert(
                    elbow,
                    e.lerp(&(contact + Vec3::new(0.1 * side, 0.2, 0.0)), w * 0.5),
                );
            }
        }
        out.push(Record::Skeleton(SkeletonFrame {
            t: Timestamp(t),
            joints: joints
                .into_iter()
                .map(|(j, p)| (j, Keypoint::new(p.map(quantize), 1.0)))
                .collect(),
        }));
        match self.pose_source {
            PoseSource::HeadPose => out.push(Record::HeadPose(HeadPoseRecord::from_pose(
                Timestamp(t),
                pose,
            ))),
            PoseSource::Face => {
                if let Some(face) = face_frame(
                    self.model,
                    pose,
                    self.config,
                    t,
                    self.landmark_noise_px,
                    &self.unit,
                    rng,
                ) {
                    out.push(Record::Face(face));
                }
            }
        }
        out
    }
}

fn marker(t: f64, label: &str, value: Option<String>) -> Record {
    Record::Marker(Marker {
        t: Timestamp(t),
        label: label.into(),
        value,
    })
}

/// Order within one timestamp. Calibration ends after that instant's frames so
/// the resting recording spans the full lead-in.
fn stream_rank(r: &Record) -> u8 {
    match r {
        Record::Marker(m) if m.label == labels::CALIBRATION_END => 5,
        Record::Marker(_) => 0,
        Record::Instruction(_) => 1,
        Record::Noise(_) => 2,
        Record::Skeleton(_) => 3,
        Record::HeadPose(_) | Record::Face(_) => 4,
    }
}

/// Generates the session log. Same scenario, layout and config give the same log.
pub fn synthesize(
    scenario: &Scenario,
    layout: &WorkstationLayout,
    config: &SessionConfig,
) -> Result<SessionLog, ScenarioError> {
    synthesize_with_model(scenario, layout, config, &FaceModel::canonical())
}

pub fn synthesize_with_model(
    scenario: &Scenario,
    layout: &WorkstationLayout,
    config: &SessionConfig,
    model: &FaceModel,
) -> Result<SessionLog, ScenarioError> {
    scenario.validate(layout)?;
    let timeline = Timeline::new(scenario, layout);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut records = Vec::new();

    // scripted and ground-truth records
    if scenario.calibration > 0.0 {
        records.push(marker(0.0, labels::CALIBRATION_START, None));
        records.push(marker(scenario.calibration, labels::CALIBRATION_END, None));
    }
    for (i, (seg, &start)) in scenario.segments.iter().zip(&timeline.starts).enumerate() {
        records.push(marker(start, labels::SEGMENT, Some(i.to_string())));
        records.push(marker(start, labels::GAZE, Some(seg.gaze.to_string())));
        records.push(marker(
            start,
            labels::PROXIMITY,
            Some(seg.proximity.0.to_string()),
        ));
        records.push(marker(
            start,
            labels::AGITATION,
            Some(seg.agitation.label().into()),
        ));
        let mut instruction_times = Vec::new();
        for ev in &seg.events {
            let t = start + ev.at;
            let kind = match ev.kind {
                ScriptedKind::Next => InstructionEventKind::Next,
                ScriptedKind::CheckBack => InstructionEventKind::CheckBack,
                ScriptedKind::Back { steps } => InstructionEventKind::Back { steps },
                ScriptedKind::SelfTouch { hand } => {
                    let label = match hand {
                        Hand::Left => "left",
                        Hand::Right => "right",
                    };
                    records.push(marker(t, labels::SELF_TOUCH, Some(label.into())));
                    continue;
                }
            };
            if instruction_times.contains(&t.to_bits()) {
                return Err(ScenarioError::Segment {
                    segment: i,
                    reason: format!("two instruction events at {t}"),
                });
            }
            instruction_times.push(t.to_bits());
            records.push(Record::Instruction(InstructionEvent {
                t: Timestamp(t),
                kind,
            }));
        }
    }

    // sampled streams
    let frames = (scenario.total_duration() * scenario.frame_rate).floor() as usize;
    let noise_every = scenario.frame_rate.round().max(1.0) as usize;
    let touches = timeline.touches();
    let body = Body::new(
        model,
        config,
        scenario.landmark_noise_px,
        scenario.pose_source,
    );
    for k in 0..=frames {
        let t = k as f64 / scenario.frame_rate;
        if t > scenario.total_duration() {
            break;
        }
        let idx = timeline.segment_index(t);
        let seg = timeline.segment(idx);

        if k % noise_every == 0 {
            if let Some(dba) = seg.noise_dba {
                records.push(Record::Noise(NoiseSample {
                    t: Timestamp(t),
                    dba,
                }));
            }
        }

        let pose = timeline.head_pose(t);
        records.extend(body.frame(t, &pose, seg.agitation, &touches, &mut rng));
    }

    records.sort_by(|a, b| {
        a.t()
            .secs()
            .total_cmp(&b.t().secs())
            .then(stream_rank(a).cmp(&stream_rank(b)))
    });

    let session_id = scenario
        .session_id
        .clone()
        .unwrap_or_else(|| format!("sim-{}", scenario.seed));
    let header = LogHeader::new(
        session_id,
        scenario.start_wall_clock.clone(),
        scenario.frame_rate,
        layout.clone(),
        ConfigDocument::from(config),
    );
    Ok(SessionLog::new(header, records))
}

/// Projected, noise-perturbed landmarks; `None` if any falls outside the image.
fn face_frame(
    model: &FaceModel,
    pose: &RigidTransform,
    config: &SessionConfig,
    t: f64,
    sigma: f64,
    unit: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<FaceFrame> {
    let exact = project_model(model, pose, &config.camera).ok()?;
    let landmarks: Vec<Pixel> = exact
        .iter()
        .map(|p| {
            if sigma > 0.0 {
                Pixel::new(
                    p.u + sigma * unit.sample(rng),
                    p.v + sigma * unit.sample(rng),
                )
            } else {
                *p
            }
        })
        .collect();
    landmarks
        .iter()
        .all(|p| config.camera.contains(p))
        .then_some(FaceFrame {
            t: Timestamp(t),
            landmarks,
        })
}

/// Operator state the live simulator is currently acting out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveState {
    pub gaze: GazeTarget,
    pub proximity: StationRef,
    pub agitation: Agitation,
    pub noise_dba: Option<f64>,
}

/// Frame-by-frame generator steered by commands, for the live service.
/// Changes blend in over [`TRANSITION`] like scripted segment boundaries.
pub struct LiveSimulator {
    layout: WorkstationLayout,
    config: SessionConfig,
    model: FaceModel,
    rng: ChaCha8Rng,
    frame_rate: f64,
    landmark_noise_px: f64,
    pose_source: PoseSource,
    frame: u64,
    state: LiveState,
    from: RigidTransform,
    change_at: f64,
    touches: Vec<(f64, Hand)>,
    pending: Vec<Record>,
}

impl LiveSimulator {
    pub fn new(
        layout: WorkstationLayout,
        config: SessionConfig,
        seed: u64,
        frame_rate: f64,
    ) -> Self {
        let w1 = layout
            .find_kind(cogload_core::types::WorkstationKind::Assembly)
            .unwrap_or(WorkstationId(1));
        let state = LiveState {
            gaze: GazeTarget::Workstation(w1),
            proximity: StationRef(w1),
            agitation: Agitation::Calm,
            noise_dba: None,
        };
        let from = segment_pose(&live_segment(&state), &layout);
        Self {
            layout,
            config,
            model: FaceModel::canonical(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            frame_rate,
            landmark_noise_px: default_noise_px(),
            pose_source: PoseSource::Face,
            frame: 0,
            state,
            from,
            change_at: f64::NEG_INFINITY,
            touches: Vec::new(),
            pending: Vec::new(),
        }
    }

    pub fn with_pose_source(mut self, source: PoseSource) -> Self {
        self.pose_source = source;
        self
    }

    /// Opens with a resting calibration of `secs` at the assembly station.
    pub fn with_calibration(mut self, secs: f64) -> Self {
        if secs > 0.0 {
            self.pending
                .push(marker(0.0, labels::CALIBRATION_START, None));
            self.pending
                .push(marker(secs, labels::CALIBRATION_END, None));
        }
        self
    }

    pub fn with_landmark_noise(mut self, px: f64) -> Self {
        self.landmark_noise_px = px;
        self
    }

    pub fn state(&self) -> &LiveState {
        &self.state
    }

    /// Timestamp of the next frame.
    pub fn time(&self) -> f64 {
        self.frame as f64 / self.frame_rate
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    fn current_pose(&self, t: f64) -> RigidTransform {
        let target = segment_pose(&live_segment(&self.state), &self.layout);
        if t - self.change_at < TRANSITION {
            blend(
                &self.from,
                &target,
                smoothstep((t - self.change_at) / TRANSITION),
            )
        } else {
            target
        }
    }

    /// Applies a new operator state from the next frame on.
    pub fn set_state(&mut self, next: LiveState) -> Result<(), ScenarioError> {
        let bad = |reason: String| ScenarioError::Invalid(reason);
        if let GazeTarget::Workstation(id) = next.gaze {
            if self.layout.get(id).is_none() {
                return Err(bad(format!("gaze target {id} is not in the layout")));
            }
        }
        if self.layout.get(next.proximity.0).is_none() {
            return Err(bad(format!(
                "proximity {} is not in the layout",
                next.proximity.0
            )));
        }
        let t = self.time();
        self.from = self.current_pose(t);
        self.change_at = t;
        for (label, old, new) in [
            (
                labels::GAZE,
                self.state.gaze.to_string(),
                next.gaze.to_string(),
            ),
            (
                labels::PROXIMITY,
                self.state.proximity.0.to_string(),
                next.proximity.0.to_string(),
            ),
            (
                labels::AGITATION,
                self.state.agitation.label().to_string(),
                next.agitation.label().to_string(),
            ),
        ] {
            if old != new {
                self.pending.push(marker(t, label, Some(new)));
            }
        }
        self.state = next;
        Ok(())
    }

    /// Starts a hand-to-face gesture; contact happens half a second from now.
    pub fn self_touch(&mut self, hand: Hand) {
        let at = self.time() + DIP_APPROACH + DIP_HOLD;
        let label = match hand {
            Hand::Left => "left",
            Hand::Right => "right",
        };
        self.pending
            .push(marker(at, labels::SELF_TOUCH, Some(label.into())));
        self.touches.push((at, hand));
    }

    /// Queues an instruction event for the next frame.
    pub fn instruction(&mut self, kind: InstructionEventKind) {
        self.pending.push(Record::Instruction(InstructionEvent {
            t: Timestamp(self.time()),
            kind,
        }));
    }

    /// Records of the next frame, time ordered. Instruction events are
    /// released one per frame since the stream needs increasing times.
    pub fn next_frame(&mut self) -> Vec<Record> {
        let t = self.time();
        let mut out = Vec::new();
        let mut instruction_sent = false;
        let mut rest = Vec::new();
        for mut r in std::mem::take(&mut self.pending) {
            let due = r.t().secs() <= t;
            match &mut r {
                Record::Instruction(ev) if !instruction_sent => {
                    ev.t = Timestamp(t);
                    instruction_sent = true;
                    out.push(r);
                }
                Record::Instruction(_) => rest.push(r),
                _ if due => out.push(r),
                _ => rest.push(r),
            }
        }
        self.pending = rest;
        let noise_every = self.frame_rate.round().max(1.0) as u64;
        if self.frame.is_multiple_of(noise_every) {
            if let Some(dba) = self.state.noise_dba {
                out.push(Record::Noise(NoiseSample {
                    t: Timestamp(t),
                    dba,
                }));
            }
        }
        let pose = self.current_pose(t);
        self.touches
            .retain(|&(at, _)| t - at <= DIP_HOLD + DIP_APPROACH);
        let body = Body::new(
            &self.model,
            &self.config,
            self.landmark_noise_px,
            self.pose_source,
        );
        let frame = body.frame(t, &pose, self.state.agitation, &self.touches, &mut self.rng);
        out.extend(frame);
        out.sort_by(|a, b| {
            a.t()
                .secs()
                .total_cmp(&b.t().secs())
                .then(stream_rank(a).cmp(&stream_rank(b)))
        });
        self.frame += 1;
        out
    }
}

fn live_segment(state: &LiveState) -> Segment {
    Segment {
        span: 1.0,
        gaze: state.gaze,
        proximity: state.proximity,
        agitation: state.agitation,
        noise_dba: state.noise_dba,
        events: Vec::new(),
    }
}

/// Scripted gaze target and operator station of each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSpan {
    pub start: f64,
    pub end: f64,
    pub target: GazeTarget,
    pub proximity: WorkstationId,
}

pub fn gaze_spans(scenario: &Scenario) -> Vec<GazeSpan> {
    scenario
        .segments
        .iter()
        .zip(scenario.segment_starts())
        .map(|(s, start)| GazeSpan {
            start,
            end: start + s.span,
            target: s.gaze,
            proximity: s.proximity.0,
        })
        .collect()
}
