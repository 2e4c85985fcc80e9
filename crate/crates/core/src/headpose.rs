//! Head pose from 68 facial landmarks: pinhole projection, Levenberg-Marquardt
//! PnP on (rotation vector, translation), and constant-velocity Kalman smoothing.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, SVector, Vector6};
use thiserror::Error;

use crate::config::{FilterParams, LmParams};
use crate::par::{self, Execution};
use crate::types::{
    CameraIntrinsics, FaceFrame, Pixel, RigidTransform, Timestamp, Vec3, FACE_LANDMARKS,
};

const CANONICAL_MODEL: &str = include_str!("../data/face_model_68.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadPoseError {
    #[error("point at non-positive depth {depth} cannot be projected")]
    Projection { depth: f64 },
    #[error("initial pose places landmark {index} at non-positive depth {depth}")]
    InitialDepth { index: usize, depth: f64 },
    #[error("degenerate PnP problem: {0}")]
    Singular(String),
    #[error("expected {expected} landmarks, got {got}")]
    LandmarkCount { expected: usize, got: usize },
    #[error("invalid face model: {0}")]
    Model(String),
    #[error("measurement at {got} precedes filter state at {last}")]
    Ordering { last: Timestamp, got: Timestamp },
}

/// 3D landmark model in the head frame, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    points: Vec<Vec3>,
}

impl FaceModel {
    pub fn new(points: Vec<Vec3>) -> Result<Self, HeadPoseError> {
        let model = Self { points };
        model.check()?;
        Ok(model)
    }

    /// The model bundled with the crate (`data/face_model_68.txt`).
    pub fn canonical() -> Self {
        CANONICAL_MODEL
            .parse()
            .expect("bundled face model is valid")
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn transformed(&self, t: &RigidTransform) -> FaceModel {
        FaceModel {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }

    fn check(&self) -> Result<(), HeadPoseError> {
        if self.points.len() != FACE_LANDMARKS {
            return Err(HeadPoseError::Model(format!(
                "expected {FACE_LANDMARKS} points, got {}",
                self.points.len()
            )));
        }
        let n = self.points.len() as f64;
        let centroid = self.points.iter().sum::<Vec3>() / n;
        let mut m = DMatrix::<f64>::zeros(self.points.len(), 3);
        for (i, p) in self.points.iter().enumerate() {
            let c = p - centroid;
            m.set_row(i, &c.transpose());
        }
        let sv = m.singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() / max < 1e-6 {
            return Err(HeadPoseError::Model(
                "points are coplanar (rank < 3)".into(),
            ));
        }
        Ok(())
    }
}

impl FromStr for FaceModel {
    type Err = HeadPoseError;

    /// Parses `index x y z` rows; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut points = vec![None; FACE_LANDMARKS];
        for (lineno, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |why: &str| HeadPoseError::Model(format!("line {}: {why}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad("expected `index x y z`"));
            }
            let index: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
            let mut xyz = [0.0; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                xyz[k] = f.parse().map_err(|_| bad("bad coordinate"))?;
            }
            let slot = points
                .get_mut(index)
                .ok_or_else(|| bad("index out of range"))?;
            if slot.is_some() {
                return Err(bad("duplicate index"));
            }
            *slot = Some(Vec3::from(xyz));
        }
        let points = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| HeadPoseError::Model(format!("missing landmark {i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        FaceModel::new(points)
    }
}

/// Pinhole projection of a camera-frame point.
fn project_camera_point(pc: &Vec3, k: &CameraIntrinsics) -> Result<Pixel, HeadPoseError> {
    if !(pc.z > 0.0) {
        return Err(HeadPoseError::Projection { depth: pc.z });
    }
    Ok(Pixel::new(
        k.fx * pc.x / pc.z + k.cx,
        k.fy * pc.y / pc.z + k.cy,
    ))
}

/// Projects a head-frame point through `pose` onto the image plane.
pub fn project(
    point: &Vec3,
    pose: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<Pixel, HeadPoseError> {
    project_camera_point(&pose.apply(point), intrinsics)
}

pub fn project_model(
    model: &FaceModel,
    pose: &RigidTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<Vec<Pixel>, HeadPoseError> {
    model
        .points
        .iter()
        .map(|p| project(p, pose, intrinsics))
        .collect()
}

fn check_count(observed: &FaceFrame) -> Result<(), HeadPoseError> {
    if observed.landmarks.len() != FACE_LANDMARKS {
        return Err(HeadPoseError::LandmarkCount {
            expected: FACE_LANDMARKS,
            got: observed.landmarks.len(),
        });
    }
    Ok(())
}

/// Sum of squared pixel distances between projected model and observed landmarks.
pub fn reprojection_error(
    pose: &RigidTransform,
    model: &FaceModel,
    observed: &FaceFrame,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, HeadPoseError> {
    check_count(observed)?;
    model
        .points
        .iter()
        .zip(&observed.landmarks)
        .map(|(p, obs)| project(p, pose, intrinsics).map(|px| px.distance_squared(obs)))
        .sum()
}

/// Root-mean-square reprojection error in pixels.
pub fn reprojection_rms(
    pose: &RigidTransform,
    model: &FaceModel,
    observed: &FaceFrame,
    intrinsics: &CameraIntrinsics,
) -> Result<f64, HeadPoseError> {
    let sse = reprojection_error(pose, model, observed, intrinsics)?;
    Ok((sse / FACE_LANDMARKS as f64).sqrt())
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of the SO(3) exponential map.
fn right_jacobian(w: &Vec3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(w);
    Matrix3::identity() - k * a + k * k * b
}

/// Pose parameters: rotation vector then translation.
fn params_of(pose: &RigidTransform) -> Vector6<f64> {
    let w = pose.rotation_vector();
    Vector6::new(
        w.x,
        w.y,
        w.z,
        pose.translation.x,
        pose.translation.y,
        pose.translation.z,
    )
}

fn pose_of(p: &Vector6<f64>) -> RigidTransform {
    RigidTransform::from_rotation_vector(Vec3::new(p[0], p[1], p[2]), Vec3::new(p[3], p[4], p[5]))
}

/// Residual vector `(projected - observed)` stacked as (u0, v0, u1, v1, ...).
pub fn reprojection_residuals(
    pose: &RigidTransform,
    model: &FaceModel,
    observed: &FaceFrame,
    intrinsics: &CameraIntrinsics,
) -> Result<DVector<f64>, HeadPoseError> {
    check_count(observed)?;
    let mut r = DVector::zeros(2 * FACE_LANDMARKS);
    for (i, (p, obs)) in model.points.iter().zip(&observed.landmarks).enumerate() {
        let px = project(p, pose, intrinsics)?;
        r[2 * i] = px.u - obs.u;
        r[2 * i + 1] = px.v - obs.v;
    }
    Ok(r)
}

/// Analytic Jacobian of [`reprojection_residuals`] with respect to
/// (rotation vector, translation) at `pose`.
pub fn reprojection_jacobian(
    pose: &RigidTransform,
    model: &FaceModel,
    intrinsics: &CameraIntrinsics,
) -> Result<DMatrix<f64>, HeadPoseError> {
    jacobian_at(&params_of(pose), model, intrinsics)
}

fn jacobian_at(
    params: &Vector6<f64>,
    model: &FaceModel,
    intrinsics: &CameraIntrinsics,
) -> Result<DMatrix<f64>, HeadPoseError> {
    let pose = pose_of(params);
    let w = Vec3::new(params[0], params[1], params[2]);
    let jr = right_jacobian(&w);
    let r = pose.rotation;
    let mut jac = DMatrix::zeros(2 * model.points.len(), 6);
    for (i, p) in model.points.iter().enumerate() {
        let pc = pose.apply(p);
        if !(pc.z > 0.0) {
            return Err(HeadPoseError::Projection { depth: pc.z });
        }
        let iz = 1.0 / pc.z;
        let du =
            nalgebra::RowVector3::new(intrinsics.fx * iz, 0.0, -intrinsics.fx * pc.x * iz * iz);
        let dv =
            nalgebra::RowVector3::new(0.0, intrinsics.fy * iz, -intrinsics.fy * pc.y * iz * iz);
        // d(R(w) p)/dw = -R [p]x Jr(w)
        let drot = -(r * skew(p) * jr);
        let u_rot = du * drot;
        let v_rot = dv * drot;
        for c in 0..3 {
            jac[(2 * i, c)] = u_rot[c];
            jac[(2 * i + 1, c)] = v_rot[c];
            jac[(2 * i, 3 + c)] = du[c];
            jac[(2 * i + 1, 3 + c)] = dv[c];
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnPSolution {
    /// Head frame to camera frame.
    pub pose: RigidTransform,
    /// RMS reprojection error, pixels.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared errors after each accepted step, starting with the initial pose.
    pub accepted_costs: Vec<f64>,
}

/// Minimizes the reprojection error over the 6-DoF pose with Levenberg-Marquardt,
/// starting from `initial`.
pub fn solve_pnp(
    model: &FaceModel,
    observed: &FaceFrame,
    intrinsics: &CameraIntrinsics,
    initial: &RigidTransform,
    lm: &LmParams,
) -> Result<PnPSolution, HeadPoseError> {
    check_count(observed)?;
    for (index, p) in model.points.iter().enumerate() {
        let depth = initial.apply(p).z;
        if !(depth > 0.0) {
            return Err(HeadPoseError::InitialDepth { index, depth });
        }
    }
    let first = observed.landmarks[0];
    let spread = observed
        .landmarks
        .iter()
        .map(|l| l.distance_squared(&first))
        .fold(0.0, f64::max);
    if spread < 1e-18 {
        return Err(HeadPoseError::Singular(
            "all observed landmarks coincide".into(),
        ));
    }

    let n = FACE_LANDMARKS as f64;
    let mut params = params_of(initial);
    let mut pose = pose_of(&params);
    let mut residuals = reprojection_residuals(&pose, model, observed, intrinsics)?;
    let mut cost = residuals.norm_squared();
    let mut costs = vec![cost];

    let finish = |pose: RigidTransform, cost: f64, iterations, converged, costs| PnPSolution {
        pose: pose.orthonormalized(),
        residual: (cost / n).sqrt(),
        iterations,
        converged,
        accepted_costs: costs,
    };

    if cost <= lm.residual_tolerance {
        return Ok(finish(*initial, cost, 0, true, costs));
    }

    let mut jac = jacobian_at(&params, model, intrinsics)?;
    let normal = jac.transpose() * &jac;
    let eig = nalgebra::SymmetricEigen::new(normal.clone());
    let (emin, emax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(emax > 0.0) || emin / emax < 1e-15 {
        return Err(HeadPoseError::Singular("rank-deficient Jacobian".into()));
    }

    let mut lambda = lm.damping_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < lm.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let h: Matrix6<f64> = Matrix6::from_iterator((&jt * &jac).iter().copied());
        let g: Vector6<f64> = Vector6::from_iterator((&jt * &residuals).iter().copied());
        if g.amax() < 1e-14 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut damped = h;
        for d in 0..6 {
            damped[(d, d)] += lambda * h[(d, d)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= lm.damping_up;
            continue;
        };
        let step = chol.solve(&(-g));
        let trial_params = params + step;
        let trial_pose = pose_of(&trial_params);
        let trial = reprojection_residuals(&trial_pose, model, observed, intrinsics)
            .ok()
            .map(|r| {
                let c = r.norm_squared();
                (r, c)
            });
        match trial {
            Some((r, c)) if c < cost => {
                let improvement = cost - c;
                params = trial_params;
                pose = trial_pose;
                residuals = r;
                cost = c;
                costs.push(cost);
                lambda *= lm.damping_down;
                if step.norm() < lm.step_tolerance
                    || improvement < lm.residual_tolerance * (1.0 + cost)
                {
                    converged = true;
                    break;
                }
                jac = jacobian_at(&params, model, intrinsics)?;
            }
            _ => {
                lambda *= lm.damping_up;
                if step.norm() < lm.step_tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok(finish(pose, cost, iterations, converged, costs))
}

/// Solves independent PnP problems, e.g. Monte-Carlo trials or cold-start frames.
pub fn solve_pnp_batch(
    model: &FaceModel,
    frames: &[FaceFrame],
    intrinsics: &CameraIntrinsics,
    initial: &RigidTransform,
    lm: &LmParams,
    exec: Execution,
) -> Vec<Result<PnPSolution, HeadPoseError>> {
    par::map(exec, frames, |f| {
        solve_pnp(model, f, intrinsics, initial, lm)
    })
}

/// Pose seed used when no earlier estimate exists: one meter in front of the
/// camera, facing it.
pub fn default_initial_pose() -> RigidTransform {
    RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Kalman smoothing

type State = SVector<f64, 12>;
type Cov = SMatrix<f64, 12, 12>;

/// Constant-velocity filter over (translation, rotation vector) and their rates.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFilterState {
    pub state: State,
    pub covariance: Cov,
    pub last: Timestamp,
    pub params: FilterParams,
}

const INITIAL_RATE_VARIANCE: f64 = 1.0;

/// Picks the representation of `w` (rotations are 2π-periodic along the axis)
/// closest to `reference`, so the filter never sees a wrap-around jump.
fn unwrap_rotation_vector(w: Vec3, reference: &Vec3) -> Vec3 {
    let theta = w.norm();
    if theta < 1e-12 {
        return w;
    }
    let axis = w / theta;
    let mut best = w;
    for k in [-1.0, 1.0] {
        let candidate = axis * (theta + k * 2.0 * std::f64::consts::PI);
        if (candidate - reference).norm() < (best - reference).norm() {
            best = candidate;
        }
    }
    best
}

impl PoseFilterState {
    /// Starts the filter at a first measurement with zero velocity.
    pub fn new(pose: &RigidTransform, t: Timestamp, params: FilterParams) -> Self {
        let mut state = State::zeros();
        let w = pose.rotation_vector();
        state.fixed_rows_mut::<3>(0).copy_from(&pose.translation);
        state.fixed_rows_mut::<3>(3).copy_from(&w);
        let mut covariance = Cov::zeros();
        for i in 0..6 {
            covariance[(i, i)] = params.measurement_noise;
            covariance[(i + 6, i + 6)] = INITIAL_RATE_VARIANCE;
        }
        Self {
            state,
            covariance,
            last: t,
            params,
        }
    }

    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_rotation_vector(
            self.state.fixed_rows::<3>(3).into_owned(),
            self.state.fixed_rows::<3>(0).into_owned(),
        )
    }

    /// Pose parameters (translation, rotation vector).
    pub fn pose_params(&self) -> Vector6<f64> {
        self.state.fixed_rows::<6>(0).into_owned()
    }

    /// Largest asymmetry and most negative eigenvalue of the covariance.
    pub fn covariance_health(&self) -> (f64, f64) {
        let asym = (self.covariance - self.covariance.transpose()).amax();
        let eig = nalgebra::SymmetricEigen::new(self.covariance);
        (asym, eig.eigenvalues.min())
    }
}

fn transition(dt: f64) -> Cov {
    let mut f = Cov::identity();
    for i in 0..6 {
        f[(i, i + 6)] = dt;
    }
    f
}

/// Discrete white noise of intensity `q` on every state component per step.
fn process_noise(q: f64) -> Cov {
    Cov::identity() * q
}

/// Predicts to `t`, fuses the 6-DoF measurement, and returns the smoothed pose.
pub fn filter_pose(
    state: &PoseFilterState,
    measurement: &RigidTransform,
    t: Timestamp,
) -> Result<(PoseFilterState, RigidTransform), HeadPoseError> {
    let dt = t - state.last;
    if dt < 0.0 {
        return Err(HeadPoseError::Ordering {
            last: state.last,
            got: t,
        });
    }
    let params = state.params;
    let f = transition(dt);
    let x_pred = f * state.state;
    let p_pred = f * state.covariance * f.transpose() + process_noise(params.process_noise);

    let predicted_w: Vec3 = x_pred.fixed_rows::<3>(3).into_owned();
    let w = unwrap_rotation_vector(measurement.rotation_vector(), &predicted_w);
    let z = Vector6::new(
        measurement.translation.x,
        measurement.translation.y,
        measurement.translation.z,
        w.x,
        w.y,
        w.z,
    );
    let mut h = SMatrix::<f64, 6, 12>::zeros();
    for i in 0..6 {
        h[(i, i)] = 1.0;
    }
    let r = Matrix6::identity() * params.measurement_noise;
    let s = h * p_pred * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| HeadPoseError::Singular("innovation covariance".into()))?;
    let gain = p_pred * h.transpose() * s_inv;
    let innovation = z - h * x_pred;
    let x_new = x_pred + gain * innovation;
    let i_kh = Cov::identity() - gain * h;
    let p_joseph = i_kh * p_pred * i_kh.transpose() + gain * r * gain.transpose();
    let p_new = (p_joseph + p_joseph.transpose()) * 0.5;

    let next = PoseFilterState {
        state: x_new,
        covariance: p_new,
        last: t,
        params,
    };
    let pose = next.pose().orthonormalized();
    Ok((next, pose))
}
