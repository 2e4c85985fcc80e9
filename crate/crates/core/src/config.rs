//! Session configuration, its on-disk document form, and validation.
//!
//! The document (TOML) uses degrees for angles; [`SessionConfig`] holds radians.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::ActivityBaseline;
use crate::types::{CameraIntrinsics, WorkstationKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid control points: need 0 < min ({min}) < max ({max})")]
    ControlPoints { min: f64, max: f64 },
    #[error("no normalization threshold configured for {0}")]
    MissingThreshold(Factor),
}

/// Every factor the engine computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    ConcentrationLoss,
    LearningDelay,
    ConcentrationDemand,
    InstructionsCost,
    TaskDifficulty,
    FrustrationByFailure,
    ToolIdentification,
    SelfTouching,
    Hyperactivity,
    Components,
    Tools,
    PhysicalEffort,
    VariantFlora,
    NoiseLevel,
}

/// How a raw factor value is brought into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Already in [0, 1] by construction.
    Intrinsic,
    /// Divided by a calibrated upper limit, then clamped.
    Threshold,
    /// Stress factors: consumed raw.
    Unbounded,
}

impl Factor {
    /// Mental-effort factors in the order of the calibration table.
    pub const MENTAL_EFFORT: [Factor; 7] = [
        Factor::ConcentrationLoss,
        Factor::LearningDelay,
        Factor::ConcentrationDemand,
        Factor::InstructionsCost,
        Factor::TaskDifficulty,
        Factor::FrustrationByFailure,
        Factor::ToolIdentification,
    ];

    pub const WORKSTATION: [Factor; 5] = [
        Factor::Components,
        Factor::Tools,
        Factor::PhysicalEffort,
        Factor::VariantFlora,
        Factor::NoiseLevel,
    ];

    pub const STRESS: [Factor; 2] = [Factor::Hyperactivity, Factor::SelfTouching];

    pub const ALL: [Factor; 14] = [
        Factor::ConcentrationLoss,
        Factor::LearningDelay,
        Factor::ConcentrationDemand,
        Factor::InstructionsCost,
        Factor::TaskDifficulty,
        Factor::FrustrationByFailure,
        Factor::ToolIdentification,
        Factor::SelfTouching,
        Factor::Hyperactivity,
        Factor::Components,
        Factor::Tools,
        Factor::PhysicalEffort,
        Factor::VariantFlora,
        Factor::NoiseLevel,
    ];

    pub fn normalization(self) -> Normalization {
        match self {
            Factor::ConcentrationDemand
            | Factor::InstructionsCost
            | Factor::TaskDifficulty
            | Factor::FrustrationByFailure => Normalization::Threshold,
            Factor::SelfTouching | Factor::Hyperactivity => Normalization::Unbounded,
            _ => Normalization::Intrinsic,
        }
    }

    /// Factors with distinct per-instruction and per-time definitions.
    pub fn has_variants(self) -> bool {
        self.normalization() == Normalization::Threshold
    }

    pub fn key(self) -> &'static str {
        match self {
            Factor::ConcentrationLoss => "concentration_loss",
            Factor::LearningDelay => "learning_delay",
            Factor::ConcentrationDemand => "concentration_demand",
            Factor::InstructionsCost => "instructions_cost",
            Factor::TaskDifficulty => "task_difficulty",
            Factor::FrustrationByFailure => "frustration_by_failure",
            Factor::ToolIdentification => "tool_identification",
            Factor::SelfTouching => "self_touching",
            Factor::Hyperactivity => "hyperactivity",
            Factor::Components => "components",
            Factor::Tools => "tools",
            Factor::PhysicalEffort => "physical_effort",
            Factor::VariantFlora => "variant_flora",
            Factor::NoiseLevel => "noise_level",
        }
    }

    pub fn from_key(key: &str) -> Option<Factor> {
        Factor::ALL.into_iter().find(|f| f.key() == key)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Instantaneous,
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub instantaneous: f64,
    pub overall: f64,
}

impl Threshold {
    pub fn get(&self, variant: Variant) -> f64 {
        match variant {
            Variant::Instantaneous => self.instantaneous,
            Variant::Overall => self.overall,
        }
    }
}

/// Control points of the raised-cosine membership, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleBand {
    pub min: f64,
    pub max: f64,
}

impl AngleBand {
    pub fn from_degrees(min: f64, max: f64) -> Self {
        Self {
            min: min.to_radians(),
            max: max.to_radians(),
        }
    }
}

/// Levenberg-Marquardt schedule for the PnP solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmParams {
    pub max_iterations: usize,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tolerance: f64,
    pub residual_tolerance: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tolerance: 1e-10,
            residual_tolerance: 1e-12,
        }
    }
}

/// Constant-velocity Kalman filter noise levels (SI / radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub process_noise: f64,
    pub measurement_noise: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            process_noise: 1e-4,
            measurement_noise: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkstationFactors {
    pub n_components: u32,
    pub n_tools: u32,
    pub physical_effort: f64,
    pub variant_flora: f64,
    pub noise_dba: f64,
    pub components_cap: u32,
    pub tools_cap: u32,
}

impl Default for WorkstationFactors {
    fn default() -> Self {
        Self {
            n_components: 0,
            n_tools: 0,
            physical_effort: 0.0,
            variant_flora: 0.0,
            noise_dba: 0.0,
            components_cap: 20,
            tools_cap: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub azimuth: AngleBand,
    pub elevation: AngleBand,
    pub attention_threshold: f64,
    /// Workstation kinds near which attention and mental-effort factors are evaluated.
    pub attention_gate: Vec<WorkstationKind>,
    pub proximity_gate_radius: f64,
    pub self_touch_distance: f64,
    pub self_touch_hysteresis: f64,
    pub self_touch_refractory: f64,
    pub activity_window_tau: f64,
    pub sigma_floor: f64,
    pub factor_thresholds: BTreeMap<Factor, Threshold>,
    pub factor_weights: BTreeMap<Factor, f64>,
    pub self_touch_impact: f64,
    pub color_band_cutpoints: [f64; 3],
    pub stress_band_cutpoints: [f64; 3],
    pub workstation_factors: WorkstationFactors,
    pub camera: CameraIntrinsics,
    pub lm: LmParams,
    pub filter: FilterParams,
    pub baseline: Option<ActivityBaseline>,
}

pub fn table_thresholds() -> BTreeMap<Factor, Threshold> {
    [
        (Factor::ConcentrationDemand, 12.0, 26.0),
        (Factor::InstructionsCost, 13.0, 26.1),
        (Factor::TaskDifficulty, 6.0, 10.7),
        (Factor::FrustrationByFailure, 2.0, 4.7),
    ]
    .into_iter()
    .map(|(f, instantaneous, overall)| {
        (
            f,
            Threshold {
                instantaneous,
                overall,
            },
        )
    })
    .collect()
}

/// Mental-effort weights; workstation factors default to zero weight.
pub fn table_weights() -> BTreeMap<Factor, f64> {
    let mut w: BTreeMap<Factor, f64> = Factor::MENTAL_EFFORT
        .into_iter()
        .zip([1.6, 3.2, 1.6, 4.0, 2.2, 3.0, 1.4])
        .collect();
    for f in Factor::WORKSTATION {
        w.insert(f, 0.0);
    }
    w
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            azimuth: AngleBand::from_degrees(10.0, 40.0),
            elevation: AngleBand::from_degrees(15.0, 45.0),
            attention_threshold: 0.5,
            attention_gate: vec![WorkstationKind::Assembly, WorkstationKind::Instructions],
            proximity_gate_radius: 1.5,
            self_touch_distance: 0.15,
            self_touch_hysteresis: 0.03,
            self_touch_refractory: 2.0,
            activity_window_tau: 2.0,
            sigma_floor: 1e-4,
            factor_thresholds: table_thresholds(),
            factor_weights: table_weights(),
            self_touch_impact: 0.2,
            color_band_cutpoints: [0.25, 0.5, 0.75],
            stress_band_cutpoints: [0.5, 1.0, 1.5],
            workstation_factors: WorkstationFactors::default(),
            camera: CameraIntrinsics::default(),
            lm: LmParams::default(),
            filter: FilterParams::default(),
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn strictly_ascending(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Lists every broken configuration invariant. Empty means valid.
pub fn validate_config(config: &SessionConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: String| {
        out.push(ConfigViolation {
            field: field.to_string(),
            rule,
        })
    };

    for (field, band) in [
        ("attention.azimuth_deg", config.azimuth),
        ("attention.elevation_deg", config.elevation),
    ] {
        if !(band.min > 0.0 && band.min < band.max) {
            push(
                field,
                format!(
                    "need 0 < min < max, got ({}, {}) degrees",
                    band.min.to_degrees(),
                    band.max.to_degrees()
                ),
            );
        }
    }
    if !(config.attention_threshold > 0.0 && config.attention_threshold < 1.0) {
        push(
            "attention.threshold",
            format!("must lie in (0, 1), got {}", config.attention_threshold),
        );
    }
    if !(config.proximity_gate_radius > 0.0) {
        push(
            "attention.proximity_gate_radius_m",
            "must be positive".into(),
        );
    }
    if !(config.self_touch_distance > 0.0) {
        push(
            "kinematics.self_touch_distance_m",
            "must be positive".into(),
        );
    }
    if !(config.self_touch_hysteresis >= 0.0) {
        push(
            "kinematics.self_touch_hysteresis_m",
            "must be non-negative".into(),
        );
    }
    if !(config.self_touch_refractory >= 0.0) {
        push(
            "kinematics.self_touch_refractory_s",
            "must be non-negative".into(),
        );
    }
    if !(config.activity_window_tau > 0.0) {
        push("kinematics.activity_window_s", "must be positive".into());
    }
    if !(config.sigma_floor > 0.0) {
        push("kinematics.sigma_floor_m", "must be positive".into());
    }

    for (factor, weight) in &config.factor_weights {
        let field = format!("weights.{factor}");
        if !(*weight >= 0.0 && weight.is_finite()) {
            push(
                &field,
                format!("must be a non-negative number, got {weight}"),
            );
        }
        match factor.normalization() {
            Normalization::Intrinsic => {}
            Normalization::Threshold => {
                if !config.factor_thresholds.contains_key(factor) {
                    push(&field, format!("{factor} is weighted but has no threshold"));
                }
            }
            Normalization::Unbounded => {
                push(
                    &field,
                    format!("{factor} has no normalization rule and cannot be weighted"),
                );
            }
        }
    }
    for (factor, th) in &config.factor_thresholds {
        if !(th.instantaneous > 0.0 && th.overall > 0.0) {
            push(
                &format!("thresholds.{factor}"),
                format!(
                    "must be positive, got ({}, {})",
                    th.instantaneous, th.overall
                ),
            );
        }
    }

    let c = config.color_band_cutpoints;
    if !(strictly_ascending(&c) && c[0] > 0.0 && c[2] < 1.0) {
        push(
            "scoring.band_cutpoints",
            format!("must be strictly ascending within (0, 1), got {c:?}"),
        );
    }
    let s = config.stress_band_cutpoints;
    if !(strictly_ascending(&s) && s[0] > 0.0) {
        push(
            "scoring.stress_band_cutpoints",
            format!("must be strictly ascending and positive, got {s:?}"),
        );
    }
    if !(config.self_touch_impact >= 0.0) {
        push("scoring.self_touch_impact", "must be non-negative".into());
    }

    let wf = &config.workstation_factors;
    for (field, v) in [
        ("workstation.physical_effort", wf.physical_effort),
        ("workstation.variant_flora", wf.variant_flora),
    ] {
        if !(0.0..=1.0).contains(&v) {
            push(field, format!("must lie in [0, 1], got {v}"));
        }
    }
    if wf.components_cap == 0 {
        push("workstation.components_cap", "must be positive".into());
    }
    if wf.tools_cap == 0 {
        push("workstation.tools_cap", "must be positive".into());
    }
    let cam = &config.camera;
    if !(cam.fx > 0.0 && cam.fy > 0.0 && cam.width > 0.0 && cam.height > 0.0) {
        push(
            "camera",
            "focal lengths and image size must be positive".into(),
        );
    }
    if !(config.filter.process_noise > 0.0 && config.filter.measurement_noise > 0.0) {
        push("headpose.filter", "noise levels must be positive".into());
    }
    if config.lm.max_iterations == 0 {
        push("headpose.lm.max_iterations", "must be at least 1".into());
    }
    out
}

// ---------------------------------------------------------------------------
// Document form

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionSection {
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub threshold: f64,
    pub gate: Vec<WorkstationKind>,
    pub proximity_gate_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicsSection {
    pub self_touch_distance_m: f64,
    pub self_touch_hysteresis_m: f64,
    pub self_touch_refractory_s: f64,
    pub activity_window_s: f64,
    pub sigma_floor_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringSection {
    pub self_touch_impact: f64,
    pub band_cutpoints: [f64; 3],
    pub stress_band_cutpoints: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadposeSection {
    pub filter: FilterParams,
    pub lm: LmParams,
}

/// Human-authored configuration document (degrees, meters, dBA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigDocument {
    pub attention: AttentionSection,
    pub kinematics: KinematicsSection,
    pub scoring: ScoringSection,
    pub headpose: HeadposeSection,
    pub camera: CameraIntrinsics,
    pub workstation: WorkstationFactors,
    pub thresholds: BTreeMap<Factor, Threshold>,
    pub weights: BTreeMap<Factor, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ActivityBaseline>,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        ConfigDocument::from(&SessionConfig::default())
    }
}

/// Degrees for the document, converting back to the same radians where some
/// float allows it; a short decimal is preferred so 15° does not print as
/// 14.999999999999998.
fn degrees(rad: f64) -> f64 {
    let d = rad.to_degrees();
    [(d * 1e9).round() / 1e9, d, d.next_up(), d.next_down()]
        .into_iter()
        .find(|c| c.to_radians() == rad)
        .unwrap_or(d)
}

impl From<&SessionConfig> for ConfigDocument {
    fn from(c: &SessionConfig) -> Self {
        Self {
            attention: AttentionSection {
                azimuth_deg: [degrees(c.azimuth.min), degrees(c.azimuth.max)],
                elevation_deg: [degrees(c.elevation.min), degrees(c.elevation.max)],
                threshold: c.attention_threshold,
                gate: c.attention_gate.clone(),
                proximity_gate_radius_m: c.proximity_gate_radius,
            },
            kinematics: KinematicsSection {
                self_touch_distance_m: c.self_touch_distance,
                self_touch_hysteresis_m: c.self_touch_hysteresis,
                self_touch_refractory_s: c.self_touch_refractory,
                activity_window_s: c.activity_window_tau,
                sigma_floor_m: c.sigma_floor,
            },
            scoring: ScoringSection {
                self_touch_impact: c.self_touch_impact,
                band_cutpoints: c.color_band_cutpoints,
                stress_band_cutpoints: c.stress_band_cutpoints,
            },
            headpose: HeadposeSection {
                filter: c.filter,
                lm: c.lm,
            },
            camera: c.camera,
            workstation: c.workstation_factors,
            thresholds: c.factor_thresholds.clone(),
            weights: c.factor_weights.clone(),
            baseline: c.baseline.clone(),
        }
    }
}

// Section defaults go through SessionConfig so there is one source of truth.
impl Default for AttentionSection {
    fn default() -> Self {
        ConfigDocument::from(&SessionConfig::default()).attention
    }
}

impl Default for KinematicsSection {
    fn default() -> Self {
        ConfigDocument::from(&SessionConfig::default()).kinematics
    }
}

impl Default for ScoringSection {
    fn default() -> Self {
        ConfigDocument::from(&SessionConfig::default()).scoring
    }
}

impl ConfigDocument {
    pub fn to_session_config(&self) -> SessionConfig {
        let a = &self.attention;
        let k = &self.kinematics;
        SessionConfig {
            azimuth: AngleBand::from_degrees(a.azimuth_deg[0], a.azimuth_deg[1]),
            elevation: AngleBand::from_degrees(a.elevation_deg[0], a.elevation_deg[1]),
            attention_threshold: a.threshold,
            attention_gate: a.gate.clone(),
            proximity_gate_radius: a.proximity_gate_radius_m,
            self_touch_distance: k.self_touch_distance_m,
            self_touch_hysteresis: k.self_touch_hysteresis_m,
            self_touch_refractory: k.self_touch_refractory_s,
            activity_window_tau: k.activity_window_s,
            sigma_floor: k.sigma_floor_m,
            factor_thresholds: self.thresholds.clone(),
            factor_weights: self.weights.clone(),
            self_touch_impact: self.scoring.self_touch_impact,
            color_band_cutpoints: self.scoring.band_cutpoints,
            stress_band_cutpoints: self.scoring.stress_band_cutpoints,
            workstation_factors: self.workstation,
            camera: self.camera,
            lm: self.headpose.lm,
            filter: self.headpose.filter,
            baseline: self.baseline.clone(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
