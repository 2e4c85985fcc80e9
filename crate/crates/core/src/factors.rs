//! Cognitive-load factors computed from accumulated session evidence.
//!
//! Two clocks are in play. Session time is the log timestamp. Task time only
//! advances while the operator stands inside the attention gate, so attention-
//! and instruction-derived factors hold still while the operator is away.
//! Self-touch and storage visits use session time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionState, Focus};
use crate::config::{Factor, Variant, WorkstationFactors};
use crate::instructions::{InstructionEventKind, InstructionState};
use crate::types::{Timestamp, WorkstationId};

/// Self-touch contributions fade out linearly over this many seconds.
pub const SELF_TOUCH_WINDOW: f64 = 60.0;
/// Storage visits saturate tool identification after this many tenths of a second.
pub const TOOL_SATURATION_TENTHS: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("object {0:?} is not in the catalogue")]
    UnknownObject(String),
    #[error("catalogue row {object_id:?}: {field} must lie in [0, 1], got {value}")]
    CatalogueRange {
        object_id: String,
        field: &'static str,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEvent {
    /// Task time of the transition.
    pub t: f64,
    /// Focus moved straight to another workstation.
    pub switch: bool,
    pub instruction: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageVisit {
    pub start: Timestamp,
    pub end: Option<Timestamp>,
}

/// Single-writer accumulator of everything the factors are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLedger {
    attention_time: Vec<f64>,
    assembly: Option<WorkstationId>,
    storage: Option<WorkstationId>,
    task_time: f64,
    last_t: Option<Timestamp>,
    prev_gated: bool,
    prev_focus: Focus,
    losses: Vec<LossEvent>,
    loss_sum: f64,
    losses_by_instruction: BTreeMap<u32, u32>,
    not_required_switches: Vec<f64>,
    not_required_sum: f64,
    check_backs: Vec<f64>,
    check_back_sum: f64,
    mistakes: Vec<f64>,
    mistake_sum: f64,
    self_touches: Vec<Timestamp>,
    storage_visits: Vec<StorageVisit>,
    noise_sum: f64,
    noise_count: usize,
}

impl AttentionLedger {
    pub fn new(
        workstations: usize,
        assembly: Option<WorkstationId>,
        storage: Option<WorkstationId>,
    ) -> Self {
        Self {
            attention_time: vec![0.0; workstations],
            assembly,
            storage,
            task_time: 0.0,
            last_t: None,
            prev_gated: false,
            prev_focus: Focus::Distracted,
            losses: Vec::new(),
            loss_sum: 0.0,
            losses_by_instruction: BTreeMap::new(),
            not_required_switches: Vec::new(),
            not_required_sum: 0.0,
            check_backs: Vec::new(),
            check_back_sum: 0.0,
            mistakes: Vec::new(),
            mistake_sum: 0.0,
            self_touches: Vec::new(),
            storage_visits: Vec::new(),
            noise_sum: 0.0,
            noise_count: 0,
        }
    }

    /// Moves both clocks to `t`. The elapsed interval is credited to the focus
    /// observed at the previous instant, and to task time only if it was gated.
    pub fn advance(&mut self, t: Timestamp) {
        if let Some(last) = self.last_t {
            let dt = t - last;
            if dt > 0.0 && self.prev_gated {
                self.task_time += dt;
                if let Focus::Workstation(w) = self.prev_focus {
                    if let Some(slot) = self.attention_time.get_mut(w.index()) {
                        *slot += dt;
                    }
                }
            }
        }
        self.last_t = Some(t);
    }

    /// Records the attention state and proximity resolved at the current instant.
    pub fn observe(
        &mut self,
        state: &AttentionState,
        proximity: Option<WorkstationId>,
        instruction: u32,
    ) {
        if state.gated {
            if let Focus::Workstation(from) = self.prev_focus {
                if state.focus != Focus::Workstation(from) {
                    let switch = matches!(state.focus, Focus::Workstation(_));
                    self.losses.push(LossEvent {
                        t: self.task_time,
                        switch,
                        instruction,
                    });
                    if !switch {
                        self.loss_sum += self.task_time;
                        *self.losses_by_instruction.entry(instruction).or_default() += 1;
                    }
                }
            }
        }
        self.prev_gated = state.gated;
        self.prev_focus = state.focus;

        let t = state.t;
        let at_storage = proximity.is_some() && proximity == self.storage;
        let open = self.storage_visits.last().is_some_and(|v| v.end.is_none());
        match (at_storage, open) {
            (true, false) => self.storage_visits.push(StorageVisit {
                start: t,
                end: None,
            }),
            (false, true) => {
                if let Some(v) = self.storage_visits.last_mut() {
                    v.end = Some(t);
                }
            }
            _ => {}
        }
    }

    /// Records an instruction event at the current task time.
    pub fn record_instruction(&mut self, kind: InstructionEventKind) {
        let t = self.task_time;
        match kind {
            InstructionEventKind::Next => {}
            InstructionEventKind::CheckBack => {
                self.not_required_switches.push(t);
                self.not_required_sum += t;
                self.check_backs.push(t);
                self.check_back_sum += t;
            }
            InstructionEventKind::Back { steps } => {
                self.not_required_switches.push(t);
                self.not_required_sum += t;
                if steps > 1 {
                    self.mistakes.push(t);
                    self.mistake_sum += t;
                }
            }
        }
    }

    pub fn record_self_touch(&mut self, t: Timestamp) {
        self.self_touches.push(t);
    }

    pub fn record_noise(&mut self, dba: f64) {
        self.noise_sum += dba;
        self.noise_count += 1;
    }

    pub fn task_time(&self) -> f64 {
        self.task_time
    }

    pub fn session_time(&self) -> Option<Timestamp> {
        self.last_t
    }

    pub fn attention_time(&self, id: WorkstationId) -> f64 {
        self.attention_time.get(id.index()).copied().unwrap_or(0.0)
    }

    pub fn attention_times(&self) -> &[f64] {
        &self.attention_time
    }

    pub fn losses(&self) -> &[LossEvent] {
        &self.losses
    }

    pub fn not_required_switch_instants(&self) -> &[f64] {
        &self.not_required_switches
    }

    pub fn check_back_instants(&self) -> &[f64] {
        &self.check_backs
    }

    pub fn mistake_instants(&self) -> &[f64] {
        &self.mistakes
    }

    pub fn self_touch_instants(&self) -> &[Timestamp] {
        &self.self_touches
    }

    pub fn storage_visits(&self) -> &[StorageVisit] {
        &self.storage_visits
    }

    pub fn mean_noise(&self) -> Option<f64> {
        (self.noise_count > 0).then(|| self.noise_sum / self.noise_count as f64)
    }
}

fn ratio(num: f64, t: f64) -> f64 {
    // undefined at the start of the task; reported as 0
    if t > 0.0 {
        num / t
    } else {
        0.0
    }
}

pub fn concentration_loss(ledger: &AttentionLedger, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let attended: f64 = ledger.attention_time.iter().sum();
    (1.0 - attended / t).clamp(0.0, 1.0)
}

pub fn learning_delay(ledger: &AttentionLedger, t: f64) -> f64 {
    let assembly = ledger.assembly.map_or(0.0, |w| ledger.attention_time(w));
    ratio(assembly, t).clamp(0.0, 1.0)
}

/// Instantaneous: losses that were not workstation switches within the current
/// instruction. Overall: sum of those loss instants over task time.
pub fn concentration_demand(
    ledger: &AttentionLedger,
    state: &InstructionState,
    variant: Variant,
    t: f64,
) -> f64 {
    match variant {
        Variant::Instantaneous => ledger
            .losses_by_instruction
            .get(&state.current_index)
            .copied()
            .unwrap_or(0) as f64,
        Variant::Overall => ratio(ledger.loss_sum, t),
    }
}

pub fn instructions_cost(
    ledger: &AttentionLedger,
    state: &InstructionState,
    variant: Variant,
    t: f64,
) -> f64 {
    match variant {
        Variant::Instantaneous => state.current_tally().checks.saturating_sub(1) as f64,
        Variant::Overall => ratio(ledger.not_required_sum, t),
    }
}

pub fn task_difficulty(
    ledger: &AttentionLedger,
    state: &InstructionState,
    variant: Variant,
    t: f64,
) -> f64 {
    match variant {
        Variant::Instantaneous => state.current_tally().check_backs as f64,
        Variant::Overall => ratio(ledger.check_back_sum, t),
    }
}

pub fn frustration_by_failure(
    ledger: &AttentionLedger,
    state: &InstructionState,
    variant: Variant,
    t: f64,
) -> f64 {
    match variant {
        Variant::Instantaneous => state.current_tally().mistakes as f64,
        Variant::Overall => ratio(ledger.mistake_sum, t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolIdentification {
    /// Duration of the current or most recent storage visit, tenths of a second.
    pub raw: f64,
    pub normalized: f64,
}

pub fn tool_identification(ledger: &AttentionLedger, t: Timestamp) -> ToolIdentification {
    let raw = ledger.storage_visits.last().map_or(0.0, |v| {
        let end = v.end.unwrap_or(t);
        (end - v.start).max(0.0) * 10.0
    });
    ToolIdentification {
        raw,
        normalized: (raw / TOOL_SATURATION_TENTHS).min(1.0),
    }
}

/// Each occurrence within the last minute contributes `(instant + 60 - t) / 60`.
pub fn self_touching(ledger: &AttentionLedger, t: Timestamp) -> f64 {
    let from = t.secs() - SELF_TOUCH_WINDOW;
    let start = ledger.self_touches.partition_point(|s| s.secs() < from);
    ledger.self_touches[start..]
        .iter()
        .filter(|s| s.secs() <= t.secs())
        .map(|s| (s.secs() + SELF_TOUCH_WINDOW - t.secs()) / SELF_TOUCH_WINDOW)
        .fold(0.0, |acc, v| acc + v)
}

/// 0 up to 20 dBA, the parabola through (20, 0) and (70, 1), then 1.
pub fn noise_level(mean_dba: f64) -> f64 {
    if mean_dba <= 20.0 {
        0.0
    } else if mean_dba <= 70.0 {
        ((mean_dba - 20.0) / 50.0).powi(2)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkstationStatics {
    pub components: f64,
    pub tools: f64,
    pub physical_effort: f64,
    pub variant_flora: f64,
}

impl WorkstationStatics {
    pub fn from_config(wf: &WorkstationFactors) -> Self {
        Self {
            components: (wf.n_components as f64 / wf.components_cap.max(1) as f64).min(1.0),
            tools: (wf.n_tools as f64 / wf.tools_cap.max(1) as f64).min(1.0),
            physical_effort: wf.physical_effort.clamp(0.0, 1.0),
            variant_flora: wf.variant_flora.clamp(0.0, 1.0),
        }
    }
}

/// One catalogue line: `object_id, n_components, n_tools, physical_effort, variant_flora`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueRow {
    pub object_id: String,
    pub n_components: u32,
    pub n_tools: u32,
    pub physical_effort: f64,
    pub variant_flora: f64,
}

impl CatalogueRow {
    pub fn check(&self) -> Result<(), FactorError> {
        for (field, value) in [
            ("physical_effort", self.physical_effort),
            ("variant_flora", self.variant_flora),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FactorError::CatalogueRange {
                    object_id: self.object_id.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Folds the catalogue rows of a task's objects into the workstation factors:
/// parts and tools add up, effort and variant flora take the most demanding object.
pub fn task_workstation_factors(
    catalogue: &[CatalogueRow],
    objects: &[String],
    base: &WorkstationFactors,
) -> Result<WorkstationFactors, FactorError> {
    let mut wf = WorkstationFactors {
        n_components: 0,
        n_tools: 0,
        physical_effort: 0.0,
        variant_flora: 0.0,
        ..*base
    };
    for id in objects {
        let row = catalogue
            .iter()
            .find(|r| &r.object_id == id)
            .ok_or_else(|| FactorError::UnknownObject(id.clone()))?;
        row.check()?;
        wf.n_components += row.n_components;
        wf.n_tools += row.n_tools;
        wf.physical_effort = wf.physical_effort.max(row.physical_effort);
        wf.variant_flora = wf.variant_flora.max(row.variant_flora);
    }
    Ok(wf)
}

pub fn workstation_statics(
    catalogue: &[CatalogueRow],
    objects: &[String],
    config: &WorkstationFactors,
) -> Result<WorkstationStatics, FactorError> {
    Ok(WorkstationStatics::from_config(&task_workstation_factors(
        catalogue, objects, config,
    )?))
}

/// Raw factor values at one instant. Factors without variants carry the same
/// value in both maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorVector {
    pub t: Timestamp,
    pub task_time: f64,
    pub instruction: u32,
    pub instantaneous: BTreeMap<Factor, f64>,
    pub overall: BTreeMap<Factor, f64>,
    pub hyperactivity_available: bool,
}

impl FactorVector {
    pub fn get(&self, factor: Factor, variant: Variant) -> f64 {
        let map = match variant {
            Variant::Instantaneous => &self.instantaneous,
            Variant::Overall => &self.overall,
        };
        map.get(&factor).copied().unwrap_or(0.0)
    }
}

/// Evaluates every factor at session time `t`.
pub fn evaluate_factors(
    ledger: &AttentionLedger,
    state: &InstructionState,
    hyperactivity: Option<f64>,
    workstation: &WorkstationFactors,
    t: Timestamp,
) -> FactorVector {
    let task = ledger.task_time();
    let mut inst = BTreeMap::new();
    let mut overall = BTreeMap::new();
    let mut both = |f: Factor, v: f64| {
        inst.insert(f, v);
        overall.insert(f, v);
    };
    both(Factor::ConcentrationLoss, concentration_loss(ledger, task));
    both(Factor::LearningDelay, learning_delay(ledger, task));
    both(
        Factor::ToolIdentification,
        tool_identification(ledger, t).normalized,
    );
    both(Factor::SelfTouching, self_touching(ledger, t));
    both(Factor::Hyperactivity, hyperactivity.unwrap_or(0.0));
    let statics = WorkstationStatics::from_config(workstation);
    both(Factor::Components, statics.components);
    both(Factor::Tools, statics.tools);
    both(Factor::PhysicalEffort, statics.physical_effort);
    both(Factor::VariantFlora, statics.variant_flora);
    both(
        Factor::NoiseLevel,
        noise_level(ledger.mean_noise().unwrap_or(workstation.noise_dba)),
    );
    type Variadic = fn(&AttentionLedger, &InstructionState, Variant, f64) -> f64;
    let variadic: [(Factor, Variadic); 4] = [
        (Factor::ConcentrationDemand, concentration_demand),
        (Factor::InstructionsCost, instructions_cost),
        (Factor::TaskDifficulty, task_difficulty),
        (Factor::FrustrationByFailure, frustration_by_failure),
    ];
    for (f, eval) in variadic {
        inst.insert(f, eval(ledger, state, Variant::Instantaneous, task));
        overall.insert(f, eval(ledger, state, Variant::Overall, task));
    }
    FactorVector {
        t,
        task_time: task,
        instruction: state.current_index,
        instantaneous: inst,
        overall,
        hyperactivity_available: hyperactivity.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructions::InstructionEvent;

    const W1: WorkstationId = WorkstationId(1);
    const W2: WorkstationId = WorkstationId(2);
    const W3: WorkstationId = WorkstationId(3);

    fn ledger() -> AttentionLedger {
        AttentionLedger::new(3, Some(W1), Some(W3))
    }

    fn state(t: f64, focus: Focus, gated: bool) -> AttentionState {
        AttentionState {
            t: Timestamp(t),
            levels: vec![0.0; 3],
            focus,
            gated,
        }
    }

    /// Drives the ledger at 1 Hz with a focus per second.
    fn drive(l: &mut AttentionLedger, focus: &[(f64, Focus)], proximity: Option<WorkstationId>) {
        for &(t, f) in focus {
            l.advance(Timestamp(t));
            l.observe(&state(t, f, true), proximity, 1);
        }
    }

    #[test]
    fn concentration_loss_examples() {
        let mut l = ledger();
        let w1: Vec<_> = (0..=120)
            .map(|t| (t as f64, Focus::Workstation(W1)))
            .collect();
        drive(&mut l, &w1, Some(W1));
        assert_eq!(concentration_loss(&l, l.task_time()), 0.0);

        let mut l = ledger();
        let away: Vec<_> = (0..=120).map(|t| (t as f64, Focus::Distracted)).collect();
        drive(&mut l, &away, Some(W1));
        assert_eq!(concentration_loss(&l, l.task_time()), 1.0);

        let mut l = ledger();
        let mixed: Vec<_> = (0..=120)
            .map(|t| {
                let f = match t {
                    0..30 => Focus::Workstation(W1),
                    30..60 => Focus::Workstation(W2),
                    _ => Focus::Distracted,
                };
                (t as f64, f)
            })
            .collect();
        drive(&mut l, &mixed, Some(W1));
        assert!((concentration_loss(&l, 120.0) - 0.5).abs() < 1e-12);
        assert!((learning_delay(&l, 120.0) - 0.25).abs() < 1e-12);
        assert_eq!(concentration_loss(&l, 0.0), 0.0);
    }

    #[test]
    fn learning_delay_examples() {
        let mut l = ledger();
        let w1: Vec<_> = (0..=180)
            .map(|t| (t as f64, Focus::Workstation(W1)))
            .collect();
        drive(&mut l, &w1, Some(W1));
        assert_eq!(learning_delay(&l, l.task_time()), 1.0);
        let mut l = ledger();
        let w2: Vec<_> = (0..=180)
            .map(|t| (t as f64, Focus::Workstation(W2)))
            .collect();
        drive(&mut l, &w2, Some(W2));
        assert_eq!(learning_delay(&l, 180.0), 0.0);
        let mut l = ledger();
        let part: Vec<_> = (0..=180)
            .map(|t| {
                (
                    t as f64,
                    if t < 45 {
                        Focus::Workstation(W1)
                    } else {
                        Focus::Distracted
                    },
                )
            })
            .collect();
        drive(&mut l, &part, Some(W1));
        assert!((learning_delay(&l, 180.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn concentration_demand_examples() {
        let s = InstructionState::default();
        let l = ledger();
        assert_eq!(
            concentration_demand(&l, &s, Variant::Instantaneous, 10.0),
            0.0
        );
        assert_eq!(concentration_demand(&l, &s, Variant::Overall, 10.0), 0.0);

        // losses at t = 30 and t = 60
        let mut l = ledger();
        let trace: Vec<_> = (0..=120)
            .map(|t| {
                let away = t == 30 || t == 60;
                (
                    t as f64,
                    if away {
                        Focus::Distracted
                    } else {
                        Focus::Workstation(W1)
                    },
                )
            })
            .collect();
        drive(&mut l, &trace, Some(W1));
        assert!((concentration_demand(&l, &s, Variant::Overall, 120.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn switches_do_not_count_as_demand() {
        let mut l = ledger();
        let mut s = InstructionState::default();
        for _ in 0..3 {
            s.apply(&InstructionEvent {
                t: Timestamp(0.0),
                kind: InstructionEventKind::Next,
            })
            .unwrap();
        }
        // in instruction 4: W1 -> W2 -> W1 -> away
        let seq = [
            Focus::Workstation(W1),
            Focus::Workstation(W2),
            Focus::Workstation(W1),
            Focus::Distracted,
        ];
        for (k, f) in seq.into_iter().enumerate() {
            l.advance(Timestamp(k as f64));
            l.observe(&state(k as f64, f, true), Some(W1), 4);
        }
        assert_eq!(l.losses().len(), 3);
        assert_eq!(l.losses().iter().filter(|e| e.switch).count(), 2);
        assert_eq!(
            concentration_demand(&l, &s, Variant::Instantaneous, 4.0),
            1.0
        );
    }

    #[test]
    fn instruction_overall_factors() {
        let mut l = ledger();
        let s = InstructionState::default();
        let at = |l: &mut AttentionLedger, t: f64| {
            l.advance(Timestamp(t));
            l.observe(&state(t, Focus::Workstation(W1), true), Some(W1), 1);
        };
        at(&mut l, 0.0);
        at(&mut l, 100.0);
        l.record_instruction(InstructionEventKind::Back { steps: 1 });
        at(&mut l, 200.0);
        l.record_instruction(InstructionEventKind::CheckBack);
        at(&mut l, 400.0);
        assert!((instructions_cost(&l, &s, Variant::Overall, 400.0) - 0.75).abs() < 1e-12);

        let mut l = ledger();
        at(&mut l, 0.0);
        for t in [60.0, 90.0, 150.0] {
            at(&mut l, t);
            l.record_instruction(InstructionEventKind::CheckBack);
        }
        assert!((task_difficulty(&l, &s, Variant::Overall, 300.0) - 1.0).abs() < 1e-12);

        let mut l = ledger();
        at(&mut l, 0.0);
        at(&mut l, 200.0);
        l.record_instruction(InstructionEventKind::Back { steps: 2 });
        assert!((frustration_by_failure(&l, &s, Variant::Overall, 400.0) - 0.5).abs() < 1e-12);
        assert!((frustration_by_failure(&l, &s, Variant::Overall, 800.0) - 0.25).abs() < 1e-12);
        assert_eq!(
            frustration_by_failure(&ledger(), &s, Variant::Overall, 800.0),
            0.0
        );
    }

    #[test]
    fn instantaneous_instruction_factors() {
        let l = ledger();
        let mut s = InstructionState::default();
        assert_eq!(instructions_cost(&l, &s, Variant::Instantaneous, 1.0), 0.0);
        for t in 0..6 {
            s.apply(&InstructionEvent {
                t: Timestamp(t as f64),
                kind: InstructionEventKind::Next,
            })
            .unwrap();
        }
        assert_eq!(s.current_index, 7);
        for t in 6..8 {
            s.apply(&InstructionEvent {
                t: Timestamp(t as f64),
                kind: InstructionEventKind::CheckBack,
            })
            .unwrap();
        }
        assert_eq!(task_difficulty(&l, &s, Variant::Instantaneous, 1.0), 2.0);
        assert_eq!(instructions_cost(&l, &s, Variant::Instantaneous, 1.0), 2.0);
    }

    #[test]
    fn task_clock_pauses_outside_gate() {
        let mut l = ledger();
        l.advance(Timestamp(0.0));
        l.observe(&state(0.0, Focus::Workstation(W1), true), Some(W1), 1);
        l.advance(Timestamp(10.0));
        l.observe(&AttentionState::idle(Timestamp(10.0), 3), Some(W3), 1);
        l.advance(Timestamp(25.0));
        l.observe(&state(25.0, Focus::Workstation(W1), true), Some(W1), 1);
        assert_eq!(l.task_time(), 10.0);
        assert_eq!(l.attention_time(W1), 10.0);
        // leaving the gate is not a loss of attention
        assert!(l.losses().is_empty());
        let visit = l.storage_visits()[0];
        assert_eq!(
            (visit.start, visit.end),
            (Timestamp(10.0), Some(Timestamp(25.0)))
        );
        assert!((tool_identification(&l, Timestamp(30.0)).raw - 150.0).abs() < 1e-9);
        assert_eq!(tool_identification(&l, Timestamp(30.0)).normalized, 1.0);
    }

    #[test]
    fn tool_identification_examples() {
        assert_eq!(
            tool_identification(&ledger(), Timestamp(5.0)).normalized,
            0.0
        );
        let mut l = ledger();
        l.advance(Timestamp(2.0));
        l.observe(&AttentionState::idle(Timestamp(2.0), 3), Some(W3), 1);
        assert!((tool_identification(&l, Timestamp(7.0)).normalized - 0.5).abs() < 1e-12);
        assert!((tool_identification(&l, Timestamp(12.0)).normalized - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_touching_examples() {
        let mut l = ledger();
        l.record_self_touch(Timestamp(10.0));
        assert_eq!(self_touching(&l, Timestamp(10.0)), 1.0);
        assert_eq!(self_touching(&l, Timestamp(40.0)), 0.5);
        assert_eq!(self_touching(&l, Timestamp(70.0)), 0.0);
        assert_eq!(self_touching(&l, Timestamp(95.0)), 0.0);
        l.record_self_touch(Timestamp(30.0));
        assert!((self_touching(&l, Timestamp(40.0)) - (0.5 + 5.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn noise_knots() {
        assert_eq!(noise_level(20.0), 0.0);
        assert_eq!(noise_level(70.0), 1.0);
        assert_eq!(noise_level(80.0), 1.0);
        assert_eq!(noise_level(45.0), 0.25);
        assert!(noise_level(20.0 + 1e-9) < 1e-12);
        assert!((noise_level(70.0 - 1e-12) - 1.0).abs() < 1e-12);
    }

    fn row(id: &str, parts: u32, tools: u32) -> CatalogueRow {
        CatalogueRow {
            object_id: id.into(),
            n_components: parts,
            n_tools: tools,
            physical_effort: 0.3,
            variant_flora: 0.1,
        }
    }

    #[test]
    fn statics_examples() {
        let base = WorkstationFactors::default();
        let cat = vec![
            row("a", 4, 1),
            row("b", 6, 2),
            row("none", 0, 0),
            row("big", 20, 10),
        ];
        let s = workstation_statics(&cat, &["none".to_string()], &base).unwrap();
        assert_eq!(s.components, 0.0);
        let s = workstation_statics(&cat, &["big".to_string()], &base).unwrap();
        assert_eq!((s.components, s.tools), (1.0, 1.0));
        let s = workstation_statics(&cat, &["a".to_string(), "b".to_string()], &base).unwrap();
        assert_eq!(s.components, 0.5);
        assert_eq!(s.tools, 0.3);
        let err = workstation_statics(&cat, &["x".to_string()], &base).unwrap_err();
        assert_eq!(err, FactorError::UnknownObject("x".into()));
    }

    #[test]
    fn attention_fractions_complement_loss() {
        let mut l = ledger();
        let seq = [W1, W2, W1, W3];
        for k in 0..200 {
            let f = if k % 7 == 0 {
                Focus::Distracted
            } else {
                Focus::Workstation(seq[k % 4])
            };
            l.advance(Timestamp(k as f64 * 0.1));
            l.observe(&state(k as f64 * 0.1, f, true), Some(W1), 1);
        }
        let t = l.task_time();
        let fractions: f64 = l.attention_times().iter().map(|a| a / t).sum();
        assert!((concentration_loss(&l, t) + fractions - 1.0).abs() < 1e-12);
    }
}
