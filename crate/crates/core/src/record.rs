//! Session log body records, shared by batch replay and the live service.

use serde::{Deserialize, Serialize};

use crate::instructions::InstructionEvent;
use crate::types::{FaceFrame, RigidTransform, SkeletonFrame, Timestamp, Vec3};

/// Head pose from an external tracker, head frame to camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPoseRecord {
    pub t: Timestamp,
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
}

impl HeadPoseRecord {
    pub fn from_pose(t: Timestamp, pose: &RigidTransform) -> Self {
        Self {
            t,
            rotation_vector: pose.rotation_vector().into(),
            translation: pose.translation.into(),
        }
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_rotation_vector(
            Vec3::from(self.rotation_vector),
            Vec3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub t: Timestamp,
    pub dba: f64,
}

/// Free-form annotation. A few labels drive the engine (see [`labels`]); the
/// rest are ground truth for offline checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub t: Timestamp,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

pub mod labels {
    pub const CALIBRATION_START: &str = "calibration_start";
    pub const CALIBRATION_END: &str = "calibration_end";
    /// Simulator ground truth: scripted gaze target (`W2`, `away`).
    pub const GAZE: &str = "gaze";
    pub const PROXIMITY: &str = "proximity";
    pub const AGITATION: &str = "agitation";
    /// Simulator ground truth: scripted self-touch, value is the hand.
    pub const SELF_TOUCH: &str = "self_touch";
    pub const SEGMENT: &str = "segment";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Skeleton(SkeletonFrame),
    Face(FaceFrame),
    HeadPose(HeadPoseRecord),
    Instruction(InstructionEvent),
    Noise(NoiseSample),
    Marker(Marker),
}

/// Stream a record belongs to, for per-stream ordering checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stream {
    Skeleton,
    Face,
    HeadPose,
    Instruction,
    Noise,
    Marker,
}

impl Record {
    pub const KINDS: [&'static str; 6] = [
        "skeleton",
        "face",
        "head_pose",
        "instruction",
        "noise",
        "marker",
    ];

    pub fn t(&self) -> Timestamp {
        match self {
            Record::Skeleton(r) => r.t,
            Record::Face(r) => r.t,
            Record::HeadPose(r) => r.t,
            Record::Instruction(r) => r.t,
            Record::Noise(r) => r.t,
            Record::Marker(r) => r.t,
        }
    }

    pub fn stream(&self) -> Stream {
        match self {
            Record::Skeleton(_) => Stream::Skeleton,
            Record::Face(_) => Stream::Face,
            Record::HeadPose(_) => Stream::HeadPose,
            Record::Instruction(_) => Stream::Instruction,
            Record::Noise(_) => Stream::Noise,
            Record::Marker(_) => Stream::Marker,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.stream() {
            Stream::Skeleton => "skeleton",
            Stream::Face => "face",
            Stream::HeadPose => "head_pose",
            Stream::Instruction => "instruction",
            Stream::Noise => "noise",
            Stream::Marker => "marker",
        }
    }
}
