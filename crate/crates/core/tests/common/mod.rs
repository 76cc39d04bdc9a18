#![allow(dead_code)]

use impact_harness::biped::{FallCriteria, GaitPhase};
use impact_harness::controllers::ControllerKind;
use impact_harness::protocol::TestRecord;
use proptest::prelude::*;

pub fn record(id: String, kind: ControllerKind, velocity: f64, fallover: bool, gap: f64, phase: GaitPhase) -> TestRecord {
    TestRecord {
        test_id: id,
        controller_kind: kind,
        pressure: 50.0,
        peak_velocity: velocity,
        impact_velocity: velocity,
        impact_momentum: 6.4 * velocity,
        peak_to_impact_gap: gap,
        impact_duration: 0.03,
        phase_at_impact: phase,
        fallover,
        seed: 0,
        trajectory_ref: None,
        fall_criteria: FallCriteria::default(),
    }
}

pub fn kind() -> impl Strategy<Value = ControllerKind> {
    prop::sample::select(ControllerKind::ALL.to_vec())
}

pub fn phase() -> impl Strategy<Value = GaitPhase> {
    prop::sample::select(GaitPhase::ALL.to_vec())
}

/// Fully random record, every field exercised.
pub fn any_record() -> impl Strategy<Value = TestRecord> {
    (
        "[A-Z]{2}[0-9]{2}_[0-9]{2}",
        kind(),
        (0.0..200.0f64, 0.0..6.0f64, 0.0..6.0f64, 0.0..1.0f64, 0.0..1.0f64),
        phase(),
        any::<bool>(),
        any::<u64>(),
        prop::option::of("[a-z_]{1,12}\\.traj\\.csv"),
    )
        .prop_map(|(id, kind, (pressure, peak, v, gap, dur), phase, fallover, seed, traj)| TestRecord {
            test_id: id,
            controller_kind: kind,
            pressure,
            peak_velocity: peak,
            impact_velocity: v,
            impact_momentum: 6.4 * v,
            peak_to_impact_gap: gap,
            impact_duration: dur,
            phase_at_impact: phase,
            fallover,
            seed,
            trajectory_ref: traj,
            fall_criteria: FallCriteria::default(),
        })
}

/// Records on a coarse velocity grid so that momentum ties occur.
pub fn outcome_records(max: usize) -> impl Strategy<Value = Vec<TestRecord>> {
    prop::collection::vec((kind(), 0u32..40, any::<bool>(), 0.0..0.2f64, phase()), 0..=max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (k, step, fall, gap, ph))| record(format!("T{i:03}"), k, 2.0 + 0.05 * step as f64, fall, gap, ph))
            .collect()
    })
}

/// Two-pass mean and sample standard deviation.
pub fn two_pass(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || a == b
}

/// All (fall, recovery) index pairs of one controller with strictly higher
/// recovery momentum, by exhaustive enumeration.
pub fn brute_pairs(records: &[TestRecord]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records.iter().enumerate() {
            if a.controller_kind == b.controller_kind && a.fallover && !b.fallover && b.impact_momentum > a.impact_momentum {
                out.push((i, j));
            }
        }
    }
    out
}

/// A 36-test, three-controller data set spanning all phases and outcomes.
pub fn synth_36() -> Vec<TestRecord> {
    (0..36)
        .map(|i| {
            let kind = ControllerKind::ALL[i / 12];
            let v = 2.5 + 0.15 * (i % 12) as f64;
            let fall = (i % 12) >= 9 || i % 7 == 3;
            let id = format!("{}{}_{:02}", kind.short_name(), 50 + 5 * (i % 12), 1);
            record(id, kind, v, fall, 0.005 * (i % 9) as f64, GaitPhase::ALL[i % 5])
        })
        .collect()
}

/// (class, data-test-id) of every scatter marker in an SVG.
pub fn markers(svg: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for part in svg.split("class=\"marker ").skip(1) {
        let class = part.split('"').next().unwrap().to_string();
        let id = part.split("data-test-id=\"").nth(1).and_then(|s| s.split('"').next()).unwrap_or("").to_string();
        out.push((class, id));
    }
    out
}

/// data-t-max and point count of every profile curve.
pub fn curves(svg: &str) -> Vec<(f64, usize)> {
    svg.split("<polyline class=\"curve")
        .skip(1)
        .map(|part| {
            let t_max = part.split("data-t-max=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
            let points = part.split("points=\"").nth(1).unwrap().split('"').next().unwrap().split_whitespace().count();
            (t_max, points)
        })
        .collect()
}
