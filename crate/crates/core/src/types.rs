//! Shared domain types: time, geometry, workstation layout and sensor frames.
//!
//! Frames of reference:
//! - camera: x right, y down, z forward out of the lens (pinhole convention).
//! - head: origin at the head centre, axes aligned with the camera axes when the
//!   face looks straight at the camera. The face looks along -z.
//!
//! The horizontal plane of the camera frame is x/z (the camera is mounted level).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Sub;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Seconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);

    pub fn secs(self) -> f64 {
        self.0
    }
}

impl Sub for Timestamp {
    type Output = f64;

    fn sub(self, rhs: Timestamp) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.0)
    }
}

/// Image-plane coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance_squared(&self, other: &Pixel) -> f64 {
        let du = self.u - other.u;
        let dv = self.v - other.v;
        du * du + dv * dv
    }
}

/// Pinhole intrinsics. `width`/`height` bound observed pixels. The default is a
/// wide-angle stereo camera's left sensor at 1280x720.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 530.0,
            fy: 530.0,
            cx: 640.0,
            cy: 360.0,
            width: 1280.0,
            height: 720.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u <= self.width && px.v <= self.height
    }
}

/// Rotation plus translation mapping points of one frame into another.
///
/// For the head pose, `apply` maps head-frame points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a transform from an axis-angle rotation vector and a translation.
    pub fn from_rotation_vector(rotation_vector: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(rotation_vector).into_inner(),
            translation,
        }
    }

    /// Axis-angle vector of the rotation, angle in [0, π].
    pub fn rotation_vector(&self) -> Vec3 {
        // via the quaternion: stays finite when rounding pushes the trace past 3
        let q =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let (w, v) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        let s = v.norm();
        if s == 0.0 {
            return Vec3::zeros();
        }
        v * (2.0 * s.atan2(w) / s)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        (should_be_identity - Matrix3::identity()).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Projects the rotation onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        RigidTransform::new(r, self.translation)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// 1-based workstation id. W1 is the assembly table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkstationId(pub u32);

impl WorkstationId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for WorkstationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkstationKind {
    Assembly,
    Instructions,
    Storage,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workstation {
    pub id: WorkstationId,
    pub label: WorkstationKind,
    /// Position in the camera frame, meters.
    pub position: [f64; 3],
}

impl Workstation {
    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkstationLayout {
    pub workstations: Vec<Workstation>,
}

impl WorkstationLayout {
    pub fn new(workstations: Vec<Workstation>) -> Self {
        Self { workstations }
    }

    pub fn len(&self) -> usize {
        self.workstations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workstations.is_empty()
    }

    pub fn get(&self, id: WorkstationId) -> Option<&Workstation> {
        self.workstations.iter().find(|w| w.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = WorkstationId> + '_ {
        self.workstations.iter().map(|w| w.id)
    }

    pub fn find_kind(&self, kind: WorkstationKind) -> Option<WorkstationId> {
        self.workstations
            .iter()
            .find(|w| w.label == kind)
            .map(|w| w.id)
    }

    pub fn kind_of(&self, id: WorkstationId) -> Option<WorkstationKind> {
        self.get(id).map(|w| w.label)
    }

    /// Returns one message per broken layout invariant.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.workstations.is_empty() {
            out.push("layout must contain at least one workstation".to_string());
            return out;
        }
        let mut ids: Vec<u32> = self.workstations.iter().map(|w| w.id.0).collect();
        ids.sort_unstable();
        let contiguous = ids.iter().enumerate().all(|(i, &id)| id == i as u32 + 1);
        if !contiguous {
            out.push(format!(
                "workstation ids must be unique and contiguous from 1, got {ids:?}"
            ));
        }
        let count = |kind| self.workstations.iter().filter(|w| w.label == kind).count();
        if count(WorkstationKind::Assembly) != 1 {
            out.push("exactly one workstation must be labeled assembly".to_string());
        }
        for kind in [WorkstationKind::Instructions, WorkstationKind::Storage] {
            if count(kind) > 1 {
                out.push(format!("at most one workstation may be labeled {kind:?}").to_lowercase());
            }
        }
        for w in &self.workstations {
            if w.position.iter().any(|v| !v.is_finite()) {
                out.push(format!("{} position is not finite", w.id));
            }
        }
        out
    }

    /// Desk layout used by the simulator: monitor just below the camera, table
    /// between camera and operator, storage shelf to the operator's right.
    pub fn desk() -> Self {
        Self::new(vec![
            Workstation {
                id: WorkstationId(1),
                label: WorkstationKind::Assembly,
                position: [0.0, 0.5, 0.6],
            },
            Workstation {
                id: WorkstationId(2),
                label: WorkstationKind::Instructions,
                position: [0.45, 0.15, 0.3],
            },
            Workstation {
                id: WorkstationId(3),
                label: WorkstationKind::Storage,
                position: [-0.9, 0.3, 1.2],
            },
        ])
    }
}

/// The 25 tracked skeleton joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Head,
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    MidHip,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightEye,
    LeftEye,
    RightEar,
    LeftEar,
    LeftBigToe,
    LeftSmallToe,
    LeftHeel,
    RightBigToe,
    RightSmallToe,
    RightHeel,
}

impl Joint {
    pub const ALL: [Joint; 25] = [
        Joint::Head,
        Joint::Neck,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::MidHip,
        Joint::RightHip,
        Joint::RightKnee,
        Joint::RightAnkle,
        Joint::LeftHip,
        Joint::LeftKnee,
        Joint::LeftAnkle,
        Joint::RightEye,
        Joint::LeftEye,
        Joint::RightEar,
        Joint::LeftEar,
        Joint::LeftBigToe,
        Joint::LeftSmallToe,
        Joint::LeftHeel,
        Joint::RightBigToe,
        Joint::RightSmallToe,
        Joint::RightHeel,
    ];

    /// Joints whose motion feeds the hyperactivity descriptor.
    pub const UPPER_BODY: [Joint; 8] = [
        Joint::Neck,
        Joint::Head,
        Joint::RightShoulder,
        Joint::LeftShoulder,
        Joint::RightElbow,
        Joint::LeftElbow,
        Joint::RightWrist,
        Joint::LeftWrist,
    ];

    pub fn is_upper_body(self) -> bool {
        Self::UPPER_BODY.contains(&self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: [f64; 3],
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(position: Vec3, confidence: f64) -> Self {
        Self {
            position: position.into(),
            confidence,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub t: Timestamp,
    pub joints: BTreeMap<Joint, Keypoint>,
}

impl SkeletonFrame {
    /// Position of a joint tracked with positive confidence.
    pub fn joint(&self, joint: Joint) -> Option<Vec3> {
        self.joints
            .get(&joint)
            .filter(|k| k.confidence > 0.0)
            .map(Keypoint::position)
    }
}

pub const FACE_LANDMARKS: usize = 68;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceFrame {
    pub t: Timestamp,
    /// 68 landmarks in iBUG ordering.
    pub landmarks: Vec<Pixel>,
}

impl FaceFrame {
    pub fn is_complete(&self) -> bool {
        self.landmarks.len() == FACE_LANDMARKS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_map(|(r, t)| RigidTransform::from_rotation_vector(r.into(), t.into()))
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(a in arb_transform()) {
            let id = a.compose(&a.inverse());
            prop_assert!((id.rotation - Matrix3::identity()).amax() < 1e-9);
            prop_assert!(id.translation.amax() < 1e-9);
            prop_assert!(a.is_valid(1e-9));
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.rotation - right.rotation).amax() < 1e-9);
            prop_assert!((left.translation - right.translation).amax() < 1e-9);
        }
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vec3::new(0.1, -0.4, 0.25);
        let t = RigidTransform::from_rotation_vector(v, Vec3::zeros());
        assert!((t.rotation_vector() - v).amax() < 1e-12);
    }

    #[test]
    fn desk_layout_is_valid() {
        assert!(WorkstationLayout::desk().violations().is_empty());
    }

    #[test]
    fn layout_rejects_gaps_and_duplicate_assembly() {
        let mut layout = WorkstationLayout::desk();
        layout.workstations[1].id = WorkstationId(4);
        layout.workstations[2].label = WorkstationKind::Assembly;
        let v = layout.violations();
        assert_eq!(v.len(), 2, "{v:?}");
    }
}
