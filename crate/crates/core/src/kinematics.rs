//! Skeleton consumers: workstation proximity, self-touch episodes and the
//! hyperactivity descriptor against a resting baseline.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::types::{Joint, SkeletonFrame, Timestamp, Vec3, WorkstationId, WorkstationLayout};

/// Slack for comparing accumulated frame times against window edges.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error(
        "resting recording spans {actual:.3} s but calibration needs at least {required:.3} s"
    )]
    ShortRecording { required: f64, actual: f64 },
    #[error("hyperactivity needs a resting baseline; run calibration first")]
    MissingBaseline,
    #[error("baseline has no statistics for joint {0:?}")]
    UnknownJoint(Joint),
    #[error("window length must be positive, got {0}")]
    Window(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityState {
    pub t: Timestamp,
    pub nearest: WorkstationId,
    pub horizontal_distance: f64,
}

fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a.x - b.x).hypot(a.z - b.z)
}

/// Nearest workstation to the neck in the x/z plane. `None` when the neck is
/// not tracked or the layout is empty.
pub fn classify_proximity(
    frame: &SkeletonFrame,
    layout: &WorkstationLayout,
) -> Option<ProximityState> {
    let neck = frame.joint(Joint::Neck)?;
    let mut best: Option<ProximityState> = None;
    let mut sorted: Vec<_> = layout.workstations.iter().collect();
    sorted.sort_by_key(|w| w.id);
    for ws in sorted {
        let d = horizontal_distance(&neck, &ws.position());
        if best.is_none_or(|b| d < b.horizontal_distance) {
            best = Some(ProximityState {
                t: frame.t,
                nearest: ws.id,
                horizontal_distance: d,
            });
        }
    }
    best
}

/// Holds the last proximity through neck dropouts and counts the gaps.
#[derive(Debug, Clone, Default)]
pub struct ProximityTracker {
    state: Option<ProximityState>,
    gaps: usize,
}

impl ProximityTracker {
    pub fn update(
        &mut self,
        frame: &SkeletonFrame,
        layout: &WorkstationLayout,
    ) -> Option<ProximityState> {
        match classify_proximity(frame, layout) {
            Some(s) => self.state = Some(s),
            None => self.gaps += 1,
        }
        self.state
    }

    pub fn state(&self) -> Option<ProximityState> {
        self.state
    }

    pub fn gaps(&self) -> usize {
        self.gaps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn wrist(self) -> Joint {
        match self {
            Hand::Left => Joint::LeftWrist,
            Hand::Right => Joint::RightWrist,
        }
    }

    fn slot(self) -> usize {
        match self {
            Hand::Left => 0,
            Hand::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTouchEvent {
    pub t: Timestamp,
    pub hand: Hand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTouchParams {
    pub distance: f64,
    pub hysteresis: f64,
    pub refractory: f64,
}

impl From<&SessionConfig> for SelfTouchParams {
    fn from(c: &SessionConfig) -> Self {
        Self {
            distance: c.self_touch_distance,
            hysteresis: c.self_touch_hysteresis,
            refractory: c.self_touch_refractory,
        }
    }
}

/// Per-hand episode tracker. An episode opens when the wrist comes closer to
/// the head than `distance` and closes once it is `distance + hysteresis` away.
#[derive(Debug, Clone)]
pub struct SelfTouchDetector {
    params: SelfTouchParams,
    open: [bool; 2],
    last_event: [Option<Timestamp>; 2],
}

impl SelfTouchDetector {
    pub fn new(params: SelfTouchParams) -> Self {
        Self {
            params,
            open: [false; 2],
            last_event: [None; 2],
        }
    }

    pub fn is_open(&self, hand: Hand) -> bool {
        self.open[hand.slot()]
    }

    pub fn update(&mut self, frame: &SkeletonFrame) -> Vec<SelfTouchEvent> {
        let mut out = Vec::new();
        let Some(head) = frame.joint(Joint::Head) else {
            return out;
        };
        for hand in Hand::BOTH {
            let Some(wrist) = frame.joint(hand.wrist()) else {
                continue;
            };
            let d = (wrist - head).norm();
            let i = hand.slot();
            if self.open[i] {
                if d >= self.params.distance + self.params.hysteresis {
                    self.open[i] = false;
                }
            } else if d < self.params.distance {
                self.open[i] = true;
                let rested = self.last_event[i]
                    .is_none_or(|last| frame.t - last >= self.params.refractory - TIME_EPS);
                if rested {
                    self.last_event[i] = Some(frame.t);
                    out.push(SelfTouchEvent { t: frame.t, hand });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointStats {
    pub mean: f64,
    pub std: f64,
}

/// Resting statistics of windowed displacement sums, meters per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityBaseline {
    pub tau: f64,
    pub joints: BTreeMap<Joint, JointStats>,
}

/// Sliding per-joint sums of inter-frame displacement over the last `tau` seconds.
#[derive(Debug, Clone)]
pub struct DisplacementWindow {
    tau: f64,
    joints: Vec<Joint>,
    first_t: Option<Timestamp>,
    previous: Vec<Option<Vec3>>,
    // (frame time, displacement per joint), oldest first
    steps: VecDeque<(Timestamp, Vec<f64>)>,
}

impl DisplacementWindow {
    pub fn new(tau: f64, joints: &[Joint]) -> Self {
        Self {
            tau,
            joints: joints.to_vec(),
            first_t: None,
            previous: vec![None; joints.len()],
            steps: VecDeque::new(),
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Adds a frame; returns the window sums once the window spans `tau`.
    pub fn push(&mut self, frame: &SkeletonFrame) -> Option<BTreeMap<Joint, f64>> {
        let first = *self.first_t.get_or_insert(frame.t);
        let mut displacement = Vec::with_capacity(self.joints.len());
        for (slot, &joint) in self.previous.iter_mut().zip(&self.joints) {
            let current = frame.joint(joint);
            displacement.push(match (*slot, current) {
                (Some(a), Some(b)) => (b - a).norm(),
                _ => 0.0,
            });
            *slot = current;
        }
        if frame.t != first {
            self.steps.push_back((frame.t, displacement));
        }
        let edge = frame.t.secs() - self.tau + TIME_EPS;
        while self.steps.front().is_some_and(|(t, _)| t.secs() <= edge) {
            self.steps.pop_front();
        }
        if frame.t - first < self.tau - TIME_EPS {
            return None;
        }
        Some(self.sums())
    }

    fn sums(&self) -> BTreeMap<Joint, f64> {
        self.joints
            .iter()
            .enumerate()
            .map(|(i, &j)| (j, self.steps.iter().map(|(_, d)| d[i]).sum()))
            .collect()
    }
}

/// Mean and sample standard deviation of every full window in a resting recording.
pub fn calibrate_baseline(
    resting: &[SkeletonFrame],
    tau: f64,
    joints: &[Joint],
) -> Result<ActivityBaseline, KinematicsError> {
    if !(tau > 0.0) {
        return Err(KinematicsError::Window(tau));
    }
    let required = 10.0 * tau;
    let actual = match (resting.first(), resting.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    if actual < required - TIME_EPS {
        return Err(KinematicsError::ShortRecording { required, actual });
    }
    let mut window = DisplacementWindow::new(tau, joints);
    let mut samples: BTreeMap<Joint, Vec<f64>> = joints.iter().map(|&j| (j, Vec::new())).collect();
    for frame in resting {
        if let Some(sums) = window.push(frame) {
            for (j, s) in sums {
                samples.entry(j).or_default().push(s);
            }
        }
    }
    let joints = samples
        .into_iter()
        .map(|(j, xs)| (j, mean_std(&xs)))
        .collect();
    Ok(ActivityBaseline { tau, joints })
}

fn mean_std(xs: &[f64]) -> JointStats {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return JointStats {
            mean: 0.0,
            std: 0.0,
        };
    }
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    JointStats { mean, std }
}

/// Mean over baseline joints of Δ/σ where the window sum exceeds μ by more than σ.
pub fn activity_level(
    window_sums: &BTreeMap<Joint, f64>,
    baseline: &ActivityBaseline,
    sigma_floor: f64,
) -> Result<f64, KinematicsError> {
    if baseline.joints.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&joint, stats) in &baseline.joints {
        let sum = *window_sums
            .get(&joint)
            .ok_or(KinematicsError::UnknownJoint(joint))?;
        let sigma = stats.std.max(sigma_floor);
        let delta = sum - stats.mean;
        if delta > sigma {
            total += delta / sigma;
        }
    }
    Ok(total / baseline.joints.len() as f64)
}

/// Streams skeleton frames into the hyperactivity descriptor.
#[derive(Debug, Clone)]
pub struct ActivityMonitor {
    window: DisplacementWindow,
    latest: Option<BTreeMap<Joint, f64>>,
}

impl ActivityMonitor {
    pub fn new(tau: f64) -> Self {
        Self {
            window: DisplacementWindow::new(tau, &Joint::UPPER_BODY),
            latest: None,
        }
    }

    pub fn push(&mut self, frame: &SkeletonFrame) {
        if let Some(sums) = self.window.push(frame) {
            self.latest = Some(sums);
        }
    }

    pub fn window_sums(&self) -> Option<&BTreeMap<Joint, f64>> {
        self.latest.as_ref()
    }

    /// `Ok(None)` until the first full window.
    pub fn level(
        &self,
        baseline: Option<&ActivityBaseline>,
        sigma_floor: f64,
    ) -> Result<Option<f64>, KinematicsError> {
        let baseline = baseline.ok_or(KinematicsError::MissingBaseline)?;
        self.latest
            .as_ref()
            .map(|sums| activity_level(sums, baseline, sigma_floor))
            .transpose()
    }
}
