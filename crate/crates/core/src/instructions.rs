//! Event-sourced tracker for the instruction GUI.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstructionError {
    #[error("instruction event at {got} precedes the previous event at {previous}")]
    Ordering { previous: Timestamp, got: Timestamp },
    #[error("back needs at least one step")]
    ZeroSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum InstructionEventKind {
    Next,
    CheckBack,
    Back { steps: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstructionEvent {
    pub t: Timestamp,
    #[serde(flatten)]
    pub kind: InstructionEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstructionTally {
    pub checks: u32,
    pub check_backs: u32,
    pub mistakes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionState {
    pub current_index: u32,
    pub instructions_shown: u32,
    pub instruction_checks: u32,
    pub check_backs: u32,
    pub mistakes: Vec<Timestamp>,
    /// Cumulative per instruction index; the first instruction starts viewed once.
    pub tallies: BTreeMap<u32, InstructionTally>,
    /// Set once a Back tried to go below instruction 1.
    pub clamped: bool,
    pub last_event: Option<Timestamp>,
}

impl Default for InstructionState {
    fn default() -> Self {
        let mut tallies = BTreeMap::new();
        tallies.insert(
            1,
            InstructionTally {
                checks: 1,
                ..InstructionTally::default()
            },
        );
        Self {
            current_index: 1,
            instructions_shown: 0,
            instruction_checks: 0,
            check_backs: 0,
            mistakes: Vec::new(),
            tallies,
            clamped: false,
            last_event: None,
        }
    }
}

impl InstructionState {
    pub fn apply_event(&self, ev: &InstructionEvent) -> Result<InstructionState, InstructionError> {
        let mut next = self.clone();
        next.apply(ev)?;
        Ok(next)
    }

    /// In-place form of [`apply_event`](Self::apply_event). Tallies go to the
    /// instruction on screen after the event.
    pub fn apply(&mut self, ev: &InstructionEvent) -> Result<(), InstructionError> {
        if let Some(previous) = self.last_event {
            if ev.t < previous {
                return Err(InstructionError::Ordering {
                    previous,
                    got: ev.t,
                });
            }
        }
        if let InstructionEventKind::Back { steps: 0 } = ev.kind {
            return Err(InstructionError::ZeroSteps);
        }
        self.last_event = Some(ev.t);
        self.instruction_checks += 1;
        match ev.kind {
            InstructionEventKind::Next => {
                self.current_index += 1;
                self.instructions_shown += 1;
                self.tally_mut().checks += 1;
            }
            InstructionEventKind::CheckBack => {
                self.check_backs += 1;
                let tally = self.tally_mut();
                tally.checks += 1;
                tally.check_backs += 1;
            }
            InstructionEventKind::Back { steps } => {
                if steps >= self.current_index {
                    self.clamped = true;
                    self.current_index = 1;
                } else {
                    self.current_index -= steps;
                }
                let mistake = steps > 1;
                if mistake {
                    self.mistakes.push(ev.t);
                }
                let tally = self.tally_mut();
                tally.checks += 1;
                tally.mistakes += mistake as u32;
            }
        }
        Ok(())
    }

    fn tally_mut(&mut self) -> &mut InstructionTally {
        self.tallies.entry(self.current_index).or_default()
    }

    pub fn tally(&self, index: u32) -> InstructionTally {
        self.tallies.get(&index).copied().unwrap_or_default()
    }

    pub fn current_tally(&self) -> InstructionTally {
        self.tally(self.current_index)
    }

    pub fn not_required_switches(&self) -> u32 {
        self.instruction_checks - self.instructions_shown
    }
}

pub fn fold_events<'a>(
    events: impl IntoIterator<Item = &'a InstructionEvent>,
) -> Result<InstructionState, InstructionError> {
    let mut state = InstructionState::default();
    for ev in events {
        state.apply(ev)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use InstructionEventKind::*;

    fn ev(t: f64, kind: InstructionEventKind) -> InstructionEvent {
        InstructionEvent {
            t: Timestamp(t),
            kind,
        }
    }

    #[test]
    fn next_check_back_and_back_sequence() {
        let mut s = InstructionState::default();
        for t in 1..=3 {
            s.apply(&ev(t as f64, Next)).unwrap();
        }
        assert_eq!(
            (
                s.current_index,
                s.instructions_shown,
                s.instruction_checks,
                s.check_backs,
                s.mistakes.len()
            ),
            (4, 3, 3, 0, 0)
        );
        s.apply(&ev(4.0, CheckBack)).unwrap();
        assert_eq!(
            (s.instruction_checks, s.check_backs, s.current_index),
            (4, 1, 4)
        );
        s.apply(&ev(5.0, Back { steps: 2 })).unwrap();
        assert_eq!(s.current_index, 2);
        assert_eq!(s.mistakes, vec![Timestamp(5.0)]);
        assert_eq!(s.instruction_checks, 5);
    }

    #[test]
    fn not_required_switches_formula() {
        let mut s = InstructionState::default();
        for t in 0..5 {
            s.apply(&ev(t as f64, Next)).unwrap();
        }
        assert_eq!(s.not_required_switches(), 0);
        for t in 5..8 {
            s.apply(&ev(t as f64, CheckBack)).unwrap();
        }
        assert_eq!(s.not_required_switches(), 3);
    }

    #[test]
    fn back_one_step_is_not_a_mistake() {
        let mut s = InstructionState::default();
        s.apply(&ev(0.0, Next)).unwrap();
        s.apply(&ev(1.0, Back { steps: 1 })).unwrap();
        assert!(s.mistakes.is_empty());
        assert_eq!(s.current_index, 1);
        assert!(!s.clamped);
    }

    #[test]
    fn back_below_first_is_clamped() {
        let mut s = InstructionState::default();
        s.apply(&ev(0.0, Next)).unwrap();
        s.apply(&ev(1.0, Back { steps: 5 })).unwrap();
        assert_eq!(s.current_index, 1);
        assert!(s.clamped);
        assert_eq!(s.mistakes.len(), 1);
    }

    #[test]
    fn out_of_order_event_is_rejected() {
        let mut s = InstructionState::default();
        s.apply(&ev(2.0, Next)).unwrap();
        let err = s.apply(&ev(1.0, Next)).unwrap_err();
        assert!(matches!(err, InstructionError::Ordering { .. }));
        assert_eq!(s.instruction_checks, 1);
        assert_eq!(
            s.apply(&ev(3.0, Back { steps: 0 })),
            Err(InstructionError::ZeroSteps)
        );
    }

    #[test]
    fn tallies_follow_displayed_instruction() {
        let mut s = InstructionState::default();
        assert_eq!(s.current_tally().checks, 1);
        s.apply(&ev(0.0, CheckBack)).unwrap();
        s.apply(&ev(1.0, CheckBack)).unwrap();
        assert_eq!(
            s.tally(1),
            InstructionTally {
                checks: 3,
                check_backs: 2,
                mistakes: 0
            }
        );
        s.apply(&ev(2.0, Next)).unwrap();
        assert_eq!(s.current_tally().checks, 1);
    }

    #[test]
    fn event_json_shape() {
        let e = ev(1.5, Back { steps: 2 });
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, r#"{"t":1.5,"event":"back","steps":2}"#);
        assert_eq!(serde_json::from_str::<InstructionEvent>(&json).unwrap(), e);
    }

    fn arb_kind() -> impl Strategy<Value = InstructionEventKind> {
        prop_oneof![
            Just(Next),
            Just(CheckBack),
            (1u32..5).prop_map(|steps| Back { steps })
        ]
    }

    proptest! {
        #[test]
        fn counters_match_event_replay(kinds in prop::collection::vec(arb_kind(), 0..60)) {
            let events: Vec<_> = kinds.iter().enumerate().map(|(i, &k)| ev(i as f64, k)).collect();
            let s = fold_events(&events).unwrap();
            let nexts = kinds.iter().filter(|k| **k == Next).count() as u32;
            let cbs = kinds.iter().filter(|k| **k == CheckBack).count() as u32;
            let backs = kinds.iter().filter(|k| matches!(k, Back { .. })).count() as u32;
            let big_backs = kinds.iter().filter(|k| matches!(k, Back { steps } if *steps > 1)).count();
            prop_assert_eq!(s.instruction_checks, nexts + cbs + backs);
            prop_assert_eq!(s.not_required_switches(), cbs + backs);
            prop_assert_eq!(s.mistakes.len(), big_backs);
            prop_assert!(s.instruction_checks >= s.instructions_shown);
            prop_assert!(s.current_index >= 1);
            // folding a prefix twice is the same fold
            let half = events.len() / 2;
            prop_assert_eq!(fold_events(&events[..half]).unwrap(), fold_events(&events[..half]).unwrap());
        }
    }
}
