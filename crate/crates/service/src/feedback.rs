//! Feedback messages for dashboard clients.

use std::collections::BTreeMap;

use cogload_core::attention::Focus;
use cogload_core::engine::{InstructionCounters, Phase, Tick};
use cogload_core::scoring::{ColorBand, ScoreFrame};
use cogload_core::types::WorkstationId;
use serde::{Deserialize, Serialize};

/// Version tag carried by every wire message.
pub const WIRE_VERSION: u32 = 1;

/// Default broadcast rate, Hz.
pub const BROADCAST_HZ: f64 = 10.0;

/// Session seconds after a warning before the same score may warn again.
pub const WARNING_REARM: f64 = 10.0;

/// Head facing direction, radians; (0, 0) looks straight into the camera,
/// theta grows toward camera +x and phi upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacingDirection {
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    MentalEffort,
    Stress,
}

/// A band escalation, present only on the first message after it happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub score: ScoreKind,
    pub from: ColorBand,
    pub to: ColorBand,
    /// Session time of the escalating score frame.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub v: u32,
    pub session: String,
    pub seq: u64,
    /// Emission time, seconds since the Unix epoch.
    pub timestamp: f64,
    /// Time of the latest closed tick, session seconds.
    pub session_time: Option<f64>,
    pub phase: Phase,
    /// Attention per workstation in percent, keyed `W1`, `W2`, ...
    pub attention: BTreeMap<String, f64>,
    pub facing: Option<FacingDirection>,
    /// `W1`, `W2`, ... or `distracted`.
    pub focus: Option<String>,
    pub score: Option<ScoreFrame>,
    pub warnings: Vec<Warning>,
    pub instructions: InstructionCounters,
    /// True on the first message a subscriber receives.
    pub snapshot: bool,
}

/// Consistent view of a session taken under its lock.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSnapshot {
    pub session: String,
    pub phase: Phase,
    pub tick: Option<Tick>,
}

fn focus_label(focus: Focus) -> String {
    match focus {
        Focus::Workstation(id) => id.to_string(),
        Focus::Distracted => "distracted".into(),
    }
}

#[derive(Debug, Clone, Copy)]
struct BandTrack {
    band: ColorBand,
    last_warning: Option<f64>,
}

impl Default for BandTrack {
    fn default() -> Self {
        Self {
            band: ColorBand::Green,
            last_warning: None,
        }
    }
}

impl BandTrack {
    fn observe(
        &mut self,
        score: ScoreKind,
        band: ColorBand,
        t: f64,
        rearm: f64,
    ) -> Option<Warning> {
        let from = self.band;
        self.band = band;
        if band <= from {
            return None;
        }
        if self.last_warning.is_some_and(|w| t - w < rearm) {
            return None;
        }
        self.last_warning = Some(t);
        Some(Warning {
            score,
            from,
            to: band,
            t,
        })
    }
}

/// Turns snapshots into feedback messages at the broadcast cadence.
#[derive(Debug, Clone)]
pub struct Broadcaster {
    rearm: f64,
    seq: u64,
    session: Option<String>,
    last_t: Option<f64>,
    tracks: BTreeMap<ScoreKind, BandTrack>,
}

impl Default for Broadcaster {
    fn default() -> Self {
        Self::new(WARNING_REARM)
    }
}

impl Broadcaster {
    pub fn new(rearm: f64) -> Self {
        Self {
            rearm,
            seq: 0,
            session: None,
            last_t: None,
            tracks: BTreeMap::new(),
        }
    }

    /// Message for `snapshot` emitted at wall time `now`.
    pub fn next(&mut self, snapshot: &SessionSnapshot, now: f64) -> FeedbackMessage {
        let t = snapshot.tick.as_ref().map(|tick| tick.t.secs());
        let restarted = self.session.as_deref() != Some(snapshot.session.as_str())
            || matches!((self.last_t, t), (Some(a), Some(b)) if b < a)
            || (self.last_t.is_some() && t.is_none());
        if restarted {
            self.tracks.clear();
            self.session = Some(snapshot.session.clone());
        }
        self.last_t = t;

        let mut warnings = Vec::new();
        let score = snapshot.tick.as_ref().and_then(|tick| tick.score.clone());
        if let Some(s) = &score {
            let t = s.t.secs();
            for (kind, band) in [
                (ScoreKind::MentalEffort, s.color_band),
                (ScoreKind::Stress, s.stress_band),
            ] {
                if let Some(w) = self
                    .tracks
                    .entry(kind)
                    .or_default()
                    .observe(kind, band, t, self.rearm)
                {
                    warnings.push(w);
                }
            }
        }

        let (attention, facing, focus, instructions) = match &snapshot.tick {
            Some(tick) => (
                tick.attention
                    .levels
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (WorkstationId(i as u32 + 1).to_string(), a * 100.0))
                    .collect(),
                tick.facing.map(|f| FacingDirection {
                    theta: f.azimuth,
                    phi: f.elevation,
                }),
                Some(focus_label(tick.attention.focus)),
                tick.instructions,
            ),
            None => (BTreeMap::new(), None, None, InstructionCounters::default()),
        };
        let seq = self.seq;
        self.seq += 1;
        FeedbackMessage {
            v: WIRE_VERSION,
            session: snapshot.session.clone(),
            seq,
            timestamp: now,
            session_time: t,
            phase: snapshot.phase,
            attention,
            facing,
            focus,
            score,
            warnings,
            instructions,
            snapshot: false,
        }
    }
}
