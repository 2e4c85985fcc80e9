//! Per-frame attention: workstations seen from the head frame, raised-cosine
//! membership of their azimuth/elevation, and focus resolution.
//!
//! Spherical convention in the head frame: forward is -z (the facing direction),
//! azimuth grows toward +x, elevation grows upward (-y).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AngleBand, ConfigError, SessionConfig};
use crate::types::{RigidTransform, Timestamp, Vec3, WorkstationId, WorkstationLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("cannot take the direction of the zero vector")]
    ZeroVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    /// (-π, π], zero straight ahead.
    pub azimuth: f64,
    /// [-π/2, π/2], positive up.
    pub elevation: f64,
    pub radius: f64,
}

/// Expresses a camera-frame position in the head frame.
pub fn workstation_in_head_frame(head_pose: &RigidTransform, workstation: &Vec3) -> Vec3 {
    head_pose.inverse().apply(workstation)
}

pub fn cartesian_to_spherical(p: &Vec3) -> Result<SphericalDirection, AttentionError> {
    let radius = p.norm();
    if !(radius > 0.0) {
        return Err(AttentionError::ZeroVector);
    }
    let forward = -p.z;
    let lateral = p.x;
    let up = -p.y;
    let mut azimuth = lateral.atan2(forward);
    if azimuth == -std::f64::consts::PI {
        azimuth = std::f64::consts::PI;
    }
    let elevation = (up / radius).clamp(-1.0, 1.0).asin();
    Ok(SphericalDirection {
        azimuth,
        elevation,
        radius,
    })
}

pub fn spherical_to_cartesian(d: &SphericalDirection) -> Vec3 {
    let horizontal = d.radius * d.elevation.cos();
    Vec3::new(
        horizontal * d.azimuth.sin(),
        -d.radius * d.elevation.sin(),
        -horizontal * d.azimuth.cos(),
    )
}

/// Raised-cosine membership: 1 inside `min`, decaying smoothly to 0 at `max`.
pub fn membership(alpha: f64, band: AngleBand) -> Result<f64, ConfigError> {
    if !(band.min > 0.0 && band.min < band.max) {
        return Err(ConfigError::ControlPoints {
            min: band.min,
            max: band.max,
        });
    }
    Ok(membership_unchecked(alpha.abs(), band))
}

fn membership_unchecked(a: f64, band: AngleBand) -> f64 {
    if a <= band.min {
        1.0
    } else if a <= band.max {
        // centred form of 0.5 (1 + cos(pi x)); exactly 0.5 at the midpoint
        let u = (2.0 * a - (band.min + band.max)) / (band.max - band.min);
        0.5 * (1.0 - (std::f64::consts::FRAC_PI_2 * u).sin())
    } else {
        0.0
    }
}

/// Product of azimuth and elevation memberships.
pub fn attention_level(theta: f64, phi: f64, config: &SessionConfig) -> Result<f64, ConfigError> {
    Ok(membership(theta, config.azimuth)? * membership(phi, config.elevation)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Focus {
    Workstation(WorkstationId),
    Distracted,
}

impl Focus {
    pub fn workstation(self) -> Option<WorkstationId> {
        match self {
            Focus::Workstation(w) => Some(w),
            Focus::Distracted => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub t: Timestamp,
    /// Attention level per workstation, indexed by `id - 1`.
    pub levels: Vec<f64>,
    pub focus: Focus,
    /// Whether the operator stood in the attention gate.
    pub gated: bool,
}

impl AttentionState {
    pub fn idle(t: Timestamp, workstations: usize) -> Self {
        Self {
            t,
            levels: vec![0.0; workstations],
            focus: Focus::Distracted,
            gated: false,
        }
    }

    pub fn level(&self, id: WorkstationId) -> f64 {
        self.levels.get(id.index()).copied().unwrap_or(0.0)
    }
}

/// Picks the focused workstation. Outside the gate everything is zeroed; inside,
/// the focus is the highest level at or above `threshold`, lowest id on ties.
pub fn resolve_focus(
    t: Timestamp,
    levels: &[f64],
    threshold: f64,
    proximity: Option<WorkstationId>,
    gate: &[WorkstationId],
) -> AttentionState {
    let gated = proximity.is_some_and(|p| gate.contains(&p));
    if !gated {
        return AttentionState::idle(t, levels.len());
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in levels.iter().enumerate() {
        if a >= threshold && best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    AttentionState {
        t,
        levels: levels.to_vec(),
        focus: best
            .map(|(i, _)| Focus::Workstation(WorkstationId(i as u32 + 1)))
            .unwrap_or(Focus::Distracted),
        gated,
    }
}

/// Attention level toward every workstation for a head pose, in id order.
pub fn workstation_levels(
    head_pose: &RigidTransform,
    layout: &WorkstationLayout,
    config: &SessionConfig,
) -> Result<Vec<f64>, ConfigError> {
    let mut levels = vec![0.0; layout.len()];
    for ws in &layout.workstations {
        let local = workstation_in_head_frame(head_pose, &ws.position());
        let level = match cartesian_to_spherical(&local) {
            Ok(dir) => attention_level(dir.azimuth, dir.elevation, config)?,
            // head centre coincides with the workstation: no direction to score
            Err(AttentionError::ZeroVector) => 0.0,
        };
        if let Some(slot) = levels.get_mut(ws.id.index()) {
            *slot = level;
        }
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn band() -> AngleBand {
        AngleBand::from_degrees(10.0, 40.0)
    }

    #[test]
    fn identity_pose_keeps_position() {
        let p = Vec3::new(0.3, -0.2, 0.5);
        assert_eq!(
            workstation_in_head_frame(&RigidTransform::identity(), &p),
            p
        );
    }

    #[test]
    fn quarter_turn_moves_workstation_to_side() {
        // workstation straight ahead of a camera-facing head
        let head = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1.0));
        let ws = Vec3::new(0.0, 0.0, 0.2);
        let dir = cartesian_to_spherical(&workstation_in_head_frame(&head, &ws)).unwrap();
        assert!(dir.azimuth.abs() < 1e-12);
        let turned =
            RigidTransform::from_rotation_vector(Vec3::new(0.0, FRAC_PI_2, 0.0), head.translation);
        let dir = cartesian_to_spherical(&workstation_in_head_frame(&turned, &ws)).unwrap();
        assert!((dir.azimuth.abs() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn head_frame_matches_matrix_inverse_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let t = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let pose = RigidTransform::from_rotation_vector(w, t);
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let mut m = nalgebra::Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
            let inv = m.try_inverse().unwrap();
            let expected = inv * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let got = workstation_in_head_frame(&pose, &p);
            assert!((got - expected.xyz()).amax() < 1e-12);
        }
    }

    #[test]
    fn spherical_axes() {
        let d = cartesian_to_spherical(&Vec3::new(0.0, 0.0, -2.0)).unwrap();
        assert_eq!((d.azimuth, d.elevation, d.radius), (0.0, 0.0, 2.0));
        let d = cartesian_to_spherical(&Vec3::new(0.0, -0.7, 0.0)).unwrap();
        assert!((d.elevation - FRAC_PI_2).abs() < 1e-15);
        assert!((d.radius - 0.7).abs() < 1e-15);
        let d = cartesian_to_spherical(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(d.azimuth, PI);
        assert_eq!(
            cartesian_to_spherical(&Vec3::zeros()),
            Err(AttentionError::ZeroVector)
        );
    }

    #[test]
    fn spherical_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let d = SphericalDirection {
                azimuth: rng.random_range(-3.1..3.1),
                elevation: rng.random_range(-1.5..1.5),
                radius: rng.random_range(0.1..5.0),
            };
            let back = cartesian_to_spherical(&spherical_to_cartesian(&d)).unwrap();
            assert!((back.azimuth - d.azimuth).abs() < 1e-10);
            assert!((back.elevation - d.elevation).abs() < 1e-10);
            assert!((back.radius - d.radius).abs() < 1e-10);
        }
    }

    #[test]
    fn membership_knots_and_midpoint() {
        let b = band();
        assert_eq!(membership(0.0, b).unwrap(), 1.0);
        assert_eq!(membership(b.min, b).unwrap(), 1.0);
        assert_eq!(membership(-b.max, b).unwrap(), 0.0);
        assert_eq!(membership(b.max, b).unwrap(), 0.0);
        let mid = membership((b.min + b.max) / 2.0, b).unwrap();
        assert!((mid - 0.5).abs() < 1e-15);
        assert!(membership(1.0, AngleBand { min: 0.3, max: 0.3 }).is_err());
        assert!(membership(1.0, AngleBand { min: 0.0, max: 0.3 }).is_err());
    }

    #[test]
    fn attention_level_products() {
        let c = SessionConfig::default();
        assert_eq!(attention_level(0.0, 0.0, &c).unwrap(), 1.0);
        assert_eq!(attention_level(c.azimuth.max + 0.1, 0.0, &c).unwrap(), 0.0);
        let mid_t = (c.azimuth.min + c.azimuth.max) / 2.0;
        let mid_p = (c.elevation.min + c.elevation.max) / 2.0;
        assert!((attention_level(mid_t, mid_p, &c).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn focus_resolution_cases() {
        let gate = [WorkstationId(1), WorkstationId(2)];
        let s = resolve_focus(
            Timestamp(1.0),
            &[0.9, 0.2, 0.0],
            0.5,
            Some(WorkstationId(1)),
            &gate,
        );
        assert_eq!(s.focus, Focus::Workstation(WorkstationId(1)));
        assert!(s.gated);
        let s = resolve_focus(
            Timestamp(1.0),
            &[0.4, 0.4, 0.4],
            0.5,
            Some(WorkstationId(1)),
            &gate,
        );
        assert_eq!(s.focus, Focus::Distracted);
        let s = resolve_focus(
            Timestamp(1.0),
            &[0.9, 0.1, 0.0],
            0.5,
            Some(WorkstationId(3)),
            &gate,
        );
        assert_eq!(s.focus, Focus::Distracted);
        assert!(!s.gated);
        assert!(s.levels.iter().all(|&a| a == 0.0));
        let s = resolve_focus(
            Timestamp(1.0),
            &[0.7, 0.7, 0.0],
            0.5,
            Some(WorkstationId(2)),
            &gate,
        );
        assert_eq!(s.focus, Focus::Workstation(WorkstationId(1)));
    }

    #[test]
    fn small_rotations_keep_full_attention() {
        let c = SessionConfig::default();
        let head_t = Vec3::new(0.0, 0.0, 1.0);
        let ws = Vec3::new(0.0, 0.0, 0.3);
        let layout = WorkstationLayout::new(vec![crate::types::Workstation {
            id: WorkstationId(1),
            label: crate::types::WorkstationKind::Assembly,
            position: ws.into(),
        }]);
        for k in 0..50 {
            let frac = k as f64 / 50.0 * 0.999;
            for axis in [Vec3::x(), Vec3::y()] {
                let limit = if axis.x != 0.0 {
                    c.elevation.min
                } else {
                    c.azimuth.min
                };
                let pose = RigidTransform::from_rotation_vector(axis * (frac * limit), head_t);
                let levels = workstation_levels(&pose, &layout, &c).unwrap();
                assert_eq!(levels[0], 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn membership_even_monotone_bounded(a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let band = band();
            let fa = membership(a, band).unwrap();
            prop_assert_eq!(fa, membership(-a, band).unwrap());
            prop_assert!((0.0..=1.0).contains(&fa));
            let fb = membership(b, band).unwrap();
            if a.abs() <= b.abs() {
                prop_assert!(fa >= fb);
            }
        }

        #[test]
        fn resolved_focus_satisfies_invariants(
            levels in prop::collection::vec(0.0f64..=1.0, 1..6),
            threshold in 0.01f64..0.99,
            near in 1u32..6,
        ) {
            let gate = [WorkstationId(1), WorkstationId(2)];
            let s = resolve_focus(Timestamp(0.0), &levels, threshold, Some(WorkstationId(near)), &gate);
            prop_assert!(s.levels.iter().all(|a| (0.0..=1.0).contains(a)));
            if let Focus::Workstation(w) = s.focus {
                let a = s.level(w);
                prop_assert!(a >= threshold);
                prop_assert!(s.levels.iter().all(|&x| x <= a));
            }
        }
    }
}
