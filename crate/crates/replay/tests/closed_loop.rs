//! Simulator output fed back through the full pipeline.

mod common;

use cogload_core::attention::Focus;
use cogload_core::config::{Factor, Variant};
use cogload_core::record::{labels, Record};
use cogload_replay::replay::replay;
use cogload_replay::simulator::{gaze_spans, GazeTarget};
use common::{scenario, simulate};

#[test]
fn gaze_segments_recover_their_focus() {
    let s = scenario("scenarios/closed_loop.yaml");
    let log = simulate("scenarios/closed_loop.yaml");
    let out = replay(&log).unwrap();
    let gate: Vec<_> = log
        .header
        .layout
        .workstations
        .iter()
        .filter(|w| log.header.config.attention.gate.contains(&w.label))
        .map(|w| w.id)
        .collect();
    let mut checked = 0;
    for span in gaze_spans(&s) {
        let ticks: Vec<_> = out
            .ticks
            .iter()
            .filter(|t| t.t.0 >= span.start && t.t.0 < span.end)
            .collect();
        // focus is only resolved while the operator is at a gated station
        let want = match span.target {
            _ if !gate.contains(&span.proximity) => Focus::Distracted,
            GazeTarget::Away => Focus::Distracted,
            GazeTarget::Workstation(id) => Focus::Workstation(id),
        };
        let hit =
            ticks.iter().filter(|t| t.attention.focus == want).count() as f64 / ticks.len() as f64;
        assert!(hit > 0.95, "{:?} at {}: {hit}", span.target, span.start);
        checked += 1;
    }
    assert_eq!(checked, 6);
}

#[test]
fn scripted_self_touches_are_recovered_exactly() {
    let log = simulate("scenarios/closed_loop.yaml");
    let scripted: Vec<f64> = log
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Marker(m) if m.label == labels::SELF_TOUCH => Some(m.t.0),
            _ => None,
        })
        .collect();
    let detected: Vec<f64> = replay(&log)
        .unwrap()
        .ticks
        .iter()
        .flat_map(|t| t.self_touches.iter().map(|e| e.t.0))
        .collect();
    assert_eq!(scripted.len(), 3);
    assert_eq!(detected.len(), scripted.len(), "{detected:?}");
    for (d, s) in detected.iter().zip(&scripted) {
        assert!((d - s).abs() <= 0.5, "detected {d} for scripted {s}");
    }
}

#[test]
fn agitation_raises_hyperactivity() {
    let s = scenario("scenarios/closed_loop.yaml");
    let out = replay(&simulate("scenarios/closed_loop.yaml")).unwrap();
    let mean_activity = |start: f64, end: f64| {
        let v: Vec<f64> = out
            .ticks
            .iter()
            .filter(|t| t.t.0 >= start + 2.0 && t.t.0 < end)
            .filter_map(|t| t.activity)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let starts = s.segment_starts();
    let calm = mean_activity(starts[0], starts[1]);
    let high = mean_activity(starts[3], starts[4]);
    let elevated = mean_activity(starts[5], s.total_duration());
    assert!(
        high > elevated && elevated > calm,
        "calm {calm} elevated {elevated} high {high}"
    );
}

#[test]
fn perfect_operator_keeps_loss_and_cost_at_zero() {
    let out = replay(&simulate("scenarios/perfect.yaml")).unwrap();
    let factors = out.factors();
    assert!(!factors.is_empty());
    for f in &factors {
        for variant in [Variant::Instantaneous, Variant::Overall] {
            assert!(
                f.get(Factor::ConcentrationLoss, variant) < 1e-3,
                "{:?}",
                f.t
            );
            assert_eq!(f.get(Factor::InstructionsCost, variant), 0.0);
            assert_eq!(f.get(Factor::FrustrationByFailure, variant), 0.0);
        }
    }
}

#[test]
fn overloaded_scores_above_calm() {
    let calm = replay(&simulate("scenarios/calm.yaml")).unwrap().report;
    let over = replay(&simulate("scenarios/overloaded.yaml"))
        .unwrap()
        .report;
    assert!(over.mean_mental_effort_overall > calm.mean_mental_effort_overall);
    assert!(over.mean_stress_level > calm.mean_stress_level);
}
