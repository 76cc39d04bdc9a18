use impact_harness::analysis::{find_anti_monotone_pairs, gap_statistics, max_recovered_momentum, velocity_profiles, RamTrajectory};
use impact_harness::biped::{init_state, phase_label, robot_step, ExternalForce, GaitPhase, RobotSpec, RobotState};
use impact_harness::controllers::{bb_policy, BbParams, ControlCommand, ControllerHandle, ControllerKind, Policy};
use impact_harness::impactor::{ImpactorState, OperatorAction};
use impact_harness::protocol::{run_campaign, run_campaign_observed, run_test, trace_hash, CampaignConfig, Harness, TestOutcome};
use impact_harness::sim::{advance, launch_position, Setup, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const G: f64 = 9.81;

struct FixedVelocity(f64);

impl Policy for FixedVelocity {
    fn command(&mut self, obs: &RobotState, spec: &RobotSpec, gravity: f64, _time: f64) -> ControlCommand {
        bb_policy(obs, self.0, spec, gravity, &BbParams::default())
    }
}

/// Undisturbed walking with the impactor unarmed.
fn free_run<P: Policy>(policy: &mut P, kind: ControllerKind, fraction: f64, seconds: f64, seed: u64) -> Vec<RobotState> {
    let mut setup = Setup::default();
    setup.robot = ControllerHandle::new(kind).robot_spec(&setup.robot);
    let robot = init_state(0.0, fraction, &setup.robot).unwrap();
    let mut w = WorldState::new(robot, ImpactorState::charged(launch_position(&setup)), None, seed);
    let ticks = (seconds / setup.sim.dt).round() as usize;
    let mut out = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        w = advance(&w, &setup, policy, None).unwrap();
        out.push(w.robot);
    }
    out
}

#[test]
fn tm_walks_in_place_without_drift() {
    for (seed, fraction) in [(1, 0.0), (2, 0.3), (3, 0.7)] {
        let mut c = ControllerHandle::new(ControllerKind::TMAnalog);
        let states = free_run(&mut c, ControllerKind::TMAnalog, fraction, 30.0, seed);
        let x0 = states[0].com_x;
        let drift = states.iter().map(|s| (s.com_x - x0).abs()).fold(0.0, f64::max);
        assert!(drift < 0.05, "seed {seed}: drift {drift}");
        assert!(states.last().unwrap().step_count > 30);
    }
}

#[test]
fn bb_tracks_a_commanded_velocity() {
    let states = free_run(&mut FixedVelocity(0.1), ControllerKind::BBAnalog, 0.0, 30.0, 4);
    let tail = &states[states.len() / 2..];
    let mean = tail.iter().map(|s| s.com_vx).sum::<f64>() / tail.len() as f64;
    assert!((mean - 0.1).abs() <= 0.03, "mean velocity {mean}");
}

#[test]
fn bb_stands_still_at_zero_command() {
    for fraction in [0.0, 0.5] {
        let states = free_run(&mut FixedVelocity(0.0), ControllerKind::BBAnalog, fraction, 30.0, 5);
        assert_eq!(states.last().unwrap().step_count, 0, "fraction {fraction}");
    }
    // Started mid-swing, the pending touchdown completes and then it stands.
    let states = free_run(&mut FixedVelocity(0.0), ControllerKind::BBAnalog, 0.25, 30.0, 5);
    assert_eq!(states.last().unwrap().step_count, 1);
    assert!(states[states.len() - 1000..].iter().all(|s| s.gait == GaitPhase::DUAL_NONE));
}

#[test]
fn kinetic_energy_stays_bounded_without_impact() {
    for kind in ControllerKind::ALL {
        let mut c = ControllerHandle::new(kind);
        let spec = c.robot_spec(&RobotSpec::default());
        let states = free_run(&mut c, kind, 0.4, 60.0, 6);
        let peak = states.iter().map(|s| s.kinetic_energy(&spec)).fold(0.0, f64::max);
        assert!(peak < 5.0, "{kind}: peak kinetic energy {peak} J");
        assert!(states.iter().all(|s| !s.falling && !s.collapsed));
    }
}

#[test]
fn phase_labels_stay_legal_while_walking() {
    for kind in ControllerKind::ALL {
        let mut c = ControllerHandle::new(kind);
        for s in free_run(&mut c, kind, 0.1, 10.0, 7) {
            assert!(phase_label(&s).is_legal());
            assert!(s.com_z > 0.0 && s.swing_foot_z >= 0.0);
        }
    }
}

#[test]
fn passive_impulse_response_is_linear() {
    let spec = RobotSpec::default();
    let s = init_state(0.0, 0.0, &spec).unwrap();
    let dt = 1e-3;
    let dv = |j: f64| {
        let ext = ExternalForce { force: j / dt, height: spec.com_height_nominal };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        robot_step(&s, &ControlCommand::default(), ext, &spec, G, dt, &mut rng).unwrap().com_vx - s.com_vx
    };
    let base = dv(1.0);
    for j in [0.5, 2.0, 5.0, 13.0, 26.0] {
        assert!((dv(j) / j - base).abs() <= 1e-6 * base.abs(), "impulse {j}");
    }
}

fn outcome(kind: ControllerKind, pressure: f64, seed: u64) -> TestOutcome {
    let action = OperatorAction { pressure, placement_offset: 0.0, seed };
    run_test(&ControllerHandle::new(kind), &action, &Harness::default(), "t").unwrap()
}

#[test]
fn phase_census_covers_all_labels() {
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..1000 {
        seen.insert(outcome(ControllerKind::TMAnalog, 60.0, seed).record.phase_at_impact.to_string());
    }
    let all: std::collections::BTreeSet<String> = GaitPhase::ALL.iter().map(|p| p.to_string()).collect();
    assert_eq!(seen, all);
}

#[test]
fn tm_recovers_most_moderate_impacts() {
    let n = 100;
    let recovered = (0..n).filter(|&s| !outcome(ControllerKind::TMAnalog, 60.0, s).record.fallover).count();
    assert!(recovered * 100 >= 95 * n as usize, "{recovered}/{n}");
}

#[test]
fn peak_precedes_impact_and_momentum_is_consistent() {
    for kind in ControllerKind::ALL {
        let o = outcome(kind, 80.0, 11);
        assert!(o.event.peak_time <= o.event.impact_time);
        assert!(o.record.peak_to_impact_gap >= 0.0);
        assert_eq!(o.record.impact_momentum, 6.4 * o.record.impact_velocity);
    }
}

fn campaigns(seed: u64) -> Vec<(impact_harness::protocol::CampaignRecord, Vec<TestOutcome>)> {
    let cfg = CampaignConfig { seed_base: seed, ..Default::default() };
    ControllerKind::ALL
        .iter()
        .map(|&k| {
            let mut outs = Vec::new();
            let rec = run_campaign_observed(&ControllerHandle::new(k), &cfg, &Harness::default(), |o| {
                outs.push(o.clone());
                Ok(())
            })
            .unwrap();
            (rec, outs)
        })
        .collect()
}

#[test]
fn fairness_pre_contact_traces_match_across_controllers() {
    let dt = Harness::default().setup.sim.dt;
    let triple = campaigns(3);
    let n = triple.iter().map(|(_, o)| o.len()).min().unwrap();
    assert!(n >= 2);
    for i in 0..n {
        let traces: Vec<_> = triple.iter().map(|(_, o)| o[i].pre_contact_ticks(dt)).collect();
        let len = traces.iter().map(Vec::len).min().unwrap();
        assert!(len > 2000);
        let hashes: Vec<String> = traces.iter().map(|t| trace_hash(&t[..len])).collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]), "test index {i}");
    }
}

// The hardware ordering came from walking-in-place drift under manual
// placement; with matched placement the reduced model gives near-equal gaps.
#[test]
#[ignore = "not reproduced by the reduced model: gaps agree within 2% across controllers"]
fn bb_mean_gap_below_tm() {
    let mut gaps = [Vec::new(), Vec::new()];
    for seed in 0..40 {
        for (i, k) in [ControllerKind::BBAnalog, ControllerKind::TMAnalog].into_iter().enumerate() {
            let action = OperatorAction { pressure: 70.0, placement_offset: impact_harness::protocol::placement_from_seed(seed, 0.02), seed };
            gaps[i].push(run_test(&ControllerHandle::new(k), &action, &Harness::default(), "t").unwrap().record);
        }
    }
    let (bb, tm) = (gap_statistics(&gaps[0]).unwrap(), gap_statistics(&gaps[1]).unwrap());
    assert!(bb.mean < tm.mean, "BB gap {} TM gap {}", bb.mean, tm.mean);
}

#[test]
fn bb_runs_shorter_campaigns_than_tm() {
    let (mut tm_tests, mut bb_tests) = (0, 0);
    for seed in 0..4 {
        let cfg = CampaignConfig { seed_base: seed, ..Default::default() };
        let tm = run_campaign(&ControllerHandle::new(ControllerKind::TMAnalog), &cfg, &Harness::default()).unwrap();
        let bb = run_campaign(&ControllerHandle::new(ControllerKind::BBAnalog), &cfg, &Harness::default()).unwrap();
        tm_tests += tm.tests.len();
        bb_tests += bb.tests.len();
    }
    assert!(bb_tests < tm_tests, "BB {bb_tests} TM {tm_tests}");
}

#[test]
fn tl_falls_at_lower_momentum_than_tm() {
    let (mut tl_sum, mut tm_sum) = (0.0, 0.0);
    for seed in 0..6 {
        let cfg = CampaignConfig { seed_base: seed, ..Default::default() };
        let first_fall = |k| {
            let c = run_campaign(&ControllerHandle::new(k), &cfg, &Harness::default()).unwrap();
            c.tests.iter().find(|t| t.fallover).map_or(f64::INFINITY, |t| t.impact_momentum).min(40.0)
        };
        tl_sum += first_fall(ControllerKind::TLAnalog);
        tm_sum += first_fall(ControllerKind::TMAnalog);
    }
    assert!(tl_sum < tm_sum, "TL {tl_sum} TM {tm_sum}");
}

// Over the 16 ms episode the foam and the total mass dominate; the
// controllers cannot change the effective stiffness the ram sees.
#[test]
#[ignore = "not reproduced by the reduced model: time to zero agrees within 0.2 ms"]
fn bb_ram_reaches_zero_before_tm_at_high_pressure() {
    let mut earlier = 0;
    for seed in 0..5 {
        let profile = |k| {
            let o = outcome(k, 95.0, seed);
            let traj = RamTrajectory { test_id: "t".into(), controller_kind: k, samples: o.ram_trace.clone() };
            velocity_profiles(&[traj], 0.05).unwrap()[0].time_to_zero()
        };
        let (bb, tm) = (profile(ControllerKind::BBAnalog), profile(ControllerKind::TMAnalog));
        if let Some(bb) = bb {
            if tm.is_none_or(|tm| bb < tm) {
                earlier += 1;
            }
        }
    }
    assert!(earlier >= 4, "BB earlier in {earlier}/5");
}

#[test]
fn contact_episodes_conserve_momentum() {
    let mass = Harness::default().setup.impactor.ram_mass;
    for (rec, outs) in campaigns(1) {
        for o in &outs {
            let t = &o.ram_trace;
            let mut i = 0;
            while i < t.len() {
                if t[i].force <= 0.0 {
                    i += 1;
                    continue;
                }
                let start = i;
                let mut impulse = 0.0;
                while i + 1 < t.len() && t[i].force > 0.0 {
                    impulse += t[i].force * (t[i + 1].time - t[i].time);
                    i += 1;
                }
                let dp = mass * (t[i].velocity - t[start].velocity);
                assert!((dp + impulse).abs() < 0.005 * impulse, "{} {}: dp {dp} impulse {impulse}", rec.controller_kind, o.record.test_id);
                i += 1;
            }
        }
    }
}

#[test]
fn anti_monotone_pairs_appear_in_seeded_campaigns() {
    let mut found = false;
    for seed in 0..20 {
        for (rec, _) in campaigns(seed) {
            if !find_anti_monotone_pairs(&rec.tests).is_empty() {
                found = true;
            }
        }
        if found {
            break;
        }
    }
    assert!(found);
}

#[test]
fn tm_outlasts_bb_on_most_seeds() {
    let mut wins = 0;
    for seed in 0..5 {
        let triple = campaigns(seed);
        let tm = max_recovered_momentum(&triple[0].0).unwrap_or(0.0);
        let bb = max_recovered_momentum(&triple[2].0).unwrap_or(0.0);
        if tm > bb {
            wins += 1;
        }
    }
    assert!(wins >= 4, "{wins}/5");
}
