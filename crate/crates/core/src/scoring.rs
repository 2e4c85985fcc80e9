//! Normalization, weighted scores, color bands and calibration of weights and
//! thresholds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Factor, Normalization, SessionConfig, Threshold, Variant};
use crate::factors::FactorVector;
use crate::par::{self, Execution};
use crate::types::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("no normalization threshold configured for {0}")]
    MissingThreshold(Factor),
    #[error("factor {0} is missing from the factor vector")]
    MissingFactor(Factor),
    #[error("{0} has no normalization rule and cannot be weighted")]
    Unweightable(Factor),
    #[error("calibration: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorBand {
    Green,
    Yellow,
    Orange,
    Red,
}

impl fmt::Display for ColorBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorBand::Green => "green",
            ColorBand::Yellow => "yellow",
            ColorBand::Orange => "orange",
            ColorBand::Red => "red",
        })
    }
}

impl std::str::FromStr for ColorBand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "green" => Ok(ColorBand::Green),
            "yellow" => Ok(ColorBand::Yellow),
            "orange" => Ok(ColorBand::Orange),
            "red" => Ok(ColorBand::Red),
            other => Err(format!("unknown band {other:?}")),
        }
    }
}

fn bucket(value: f64, cut: [f64; 3]) -> ColorBand {
    if value >= cut[2] {
        ColorBand::Red
    } else if value >= cut[1] {
        ColorBand::Orange
    } else if value >= cut[0] {
        ColorBand::Yellow
    } else {
        ColorBand::Green
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub normalized: f64,
    /// weight × normalized.
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFrame {
    pub t: Timestamp,
    pub mental_effort_instantaneous: f64,
    pub mental_effort_overall: f64,
    pub stress_level: f64,
    pub color_band: ColorBand,
    pub stress_band: ColorBand,
    pub hyperactivity_available: bool,
    pub instantaneous: BTreeMap<Factor, Contribution>,
    pub overall: BTreeMap<Factor, Contribution>,
}

impl ScoreFrame {
    /// `t, me_inst, me_overall, stress, band` with shortest round-trip floats.
    pub fn trace_line(&self) -> String {
        format!(
            "{}, {}, {}, {}, {}",
            self.t.secs(),
            self.mental_effort_instantaneous,
            self.mental_effort_overall,
            self.stress_level,
            self.color_band
        )
    }
}

/// Brings a raw value into [0, 1]. Stress factors have no normalized form.
pub fn normalize_factor(
    factor: Factor,
    raw: f64,
    variant: Variant,
    config: &SessionConfig,
) -> Result<Option<f64>, ScoringError> {
    match factor.normalization() {
        Normalization::Intrinsic => Ok(Some(raw)),
        Normalization::Unbounded => Ok(None),
        Normalization::Threshold => {
            let th = config
                .factor_thresholds
                .get(&factor)
                .ok_or(ScoringError::MissingThreshold(factor))?;
            Ok(Some((raw / th.get(variant)).clamp(0.0, 1.0)))
        }
    }
}

/// Weighted sum over every weighted factor, in factor order.
pub fn mental_effort(
    normalized: &BTreeMap<Factor, f64>,
    weights: &BTreeMap<Factor, f64>,
) -> Result<f64, ScoringError> {
    for f in Factor::MENTAL_EFFORT {
        if !normalized.contains_key(&f) {
            return Err(ScoringError::MissingFactor(f));
        }
    }
    let mut score = 0.0;
    for (f, w) in weights {
        let v = normalized.get(f).ok_or(ScoringError::MissingFactor(*f))?;
        score += w * v;
    }
    Ok(score)
}

pub fn stress_level(hyperactivity: f64, self_touching: f64, config: &SessionConfig) -> f64 {
    hyperactivity + config.self_touch_impact * self_touching
}

pub fn color_band(mental_effort_instantaneous: f64, config: &SessionConfig) -> ColorBand {
    let total: f64 = config.factor_weights.values().sum();
    let rescaled = if total > 0.0 {
        mental_effort_instantaneous / total
    } else {
        0.0
    };
    bucket(rescaled, config.color_band_cutpoints)
}

pub fn stress_band(stress: f64, config: &SessionConfig) -> ColorBand {
    bucket(stress, config.stress_band_cutpoints)
}

fn variant_scores(
    factors: &FactorVector,
    variant: Variant,
    config: &SessionConfig,
) -> Result<(f64, BTreeMap<Factor, Contribution>), ScoringError> {
    let mut normalized = BTreeMap::new();
    for f in Factor::ALL {
        if let Some(v) = normalize_factor(f, factors.get(f, variant), variant, config)? {
            normalized.insert(f, v);
        }
    }
    for f in config.factor_weights.keys() {
        if f.normalization() == Normalization::Unbounded {
            return Err(ScoringError::Unweightable(*f));
        }
    }
    let score = mental_effort(&normalized, &config.factor_weights)?;
    let contributions = normalized
        .into_iter()
        .map(|(f, v)| {
            let w = config.factor_weights.get(&f).copied().unwrap_or(0.0);
            (
                f,
                Contribution {
                    normalized: v,
                    weighted: w * v,
                },
            )
        })
        .collect();
    Ok((score, contributions))
}

pub fn score(factors: &FactorVector, config: &SessionConfig) -> Result<ScoreFrame, ScoringError> {
    let (me_inst, instantaneous) = variant_scores(factors, Variant::Instantaneous, config)?;
    let (me_overall, overall) = variant_scores(factors, Variant::Overall, config)?;
    let stress = stress_level(
        factors.get(Factor::Hyperactivity, Variant::Instantaneous),
        factors.get(Factor::SelfTouching, Variant::Instantaneous),
        config,
    );
    Ok(ScoreFrame {
        t: factors.t,
        mental_effort_instantaneous: me_inst,
        mental_effort_overall: me_overall,
        stress_level: stress,
        color_band: color_band(me_inst, config),
        stress_band: stress_band(stress, config),
        hyperactivity_available: factors.hyperactivity_available,
        instantaneous,
        overall,
    })
}

/// One answered pair of a subject's questionnaire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseChoice {
    pub subject: String,
    pub factor_a: Factor,
    pub factor_b: Factor,
    pub chosen: Factor,
}

pub const PAIR_COUNT: usize = 21;

/// Per-subject tallies of how often each factor was chosen.
pub fn pairwise_tallies(
    choices: &[PairwiseChoice],
) -> Result<BTreeMap<String, BTreeMap<Factor, u32>>, ScoringError> {
    let mut by_subject: BTreeMap<String, Vec<&PairwiseChoice>> = BTreeMap::new();
    for c in choices {
        by_subject.entry(c.subject.clone()).or_default().push(c);
    }
    if by_subject.is_empty() {
        return Err(ScoringError::Calibration("no pairwise choices".into()));
    }
    let me: BTreeSet<Factor> = Factor::MENTAL_EFFORT.into_iter().collect();
    let mut out = BTreeMap::new();
    for (subject, rows) in by_subject {
        let mut seen = BTreeSet::new();
        let mut tally: BTreeMap<Factor, u32> =
            Factor::MENTAL_EFFORT.iter().map(|&f| (f, 0)).collect();
        for c in rows {
            if !me.contains(&c.factor_a) || !me.contains(&c.factor_b) || c.factor_a == c.factor_b {
                return Err(ScoringError::Calibration(format!(
                    "subject {subject}: pair ({}, {}) is not a pair of distinct mental-effort factors",
                    c.factor_a, c.factor_b
                )));
            }
            if c.chosen != c.factor_a && c.chosen != c.factor_b {
                return Err(ScoringError::Calibration(format!(
                    "subject {subject}: chose {} from pair ({}, {})",
                    c.chosen, c.factor_a, c.factor_b
                )));
            }
            let key = (c.factor_a.min(c.factor_b), c.factor_a.max(c.factor_b));
            if !seen.insert(key) {
                return Err(ScoringError::Calibration(format!(
                    "subject {subject}: pair ({}, {}) answered twice",
                    key.0, key.1
                )));
            }
            *tally.entry(c.chosen).or_default() += 1;
        }
        if seen.len() != PAIR_COUNT {
            return Err(ScoringError::Calibration(format!(
                "subject {subject}: answered {} of {PAIR_COUNT} pairs",
                seen.len()
            )));
        }
        out.insert(subject, tally);
    }
    Ok(out)
}

/// Mean over subjects of the per-subject choice counts.
pub fn weights_from_pairwise(
    choices: &[PairwiseChoice],
) -> Result<BTreeMap<Factor, f64>, ScoringError> {
    let tallies = pairwise_tallies(choices)?;
    let n = tallies.len() as f64;
    let mut weights: BTreeMap<Factor, f64> = BTreeMap::new();
    for tally in tallies.values() {
        for (&f, &count) in tally {
            *weights.entry(f).or_default() += count as f64;
        }
    }
    for w in weights.values_mut() {
        *w /= n;
    }
    Ok(weights)
}

/// Maximum raw value of every threshold-normalized factor over all sessions
/// and instants, per variant.
pub fn thresholds_from_calibration(
    sessions: &[Vec<FactorVector>],
    exec: Execution,
) -> Result<BTreeMap<Factor, Threshold>, ScoringError> {
    if sessions.iter().all(|s| s.is_empty()) {
        return Err(ScoringError::Calibration(
            "no factor traces to calibrate from".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for f in Factor::ALL.into_iter().filter(|f| f.has_variants()) {
        let max_of = |variant: Variant| {
            par::max_by(exec, sessions, |trace: &Vec<FactorVector>| {
                trace.iter().map(|v| v.get(f, variant)).reduce(f64::max)
            })
            .unwrap_or(0.0)
        };
        out.insert(
            f,
            Threshold {
                instantaneous: max_of(Variant::Instantaneous),
                overall: max_of(Variant::Overall),
            },
        );
    }
    Ok(out)
}
