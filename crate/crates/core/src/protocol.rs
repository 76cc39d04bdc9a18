//! Test-campaign engine: the per-test pipeline and pressure escalation with
//! the consecutive-fall stop rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biped::{detect_fallover, init_state, phase_label, FallCriteria, GaitPhase, RobotSample};
use crate::controllers::{ControllerHandle, ControllerKind};
use crate::error::{Error, Result};
use crate::impactor::{
    detect_impact, impact_momentum, peak_velocity_from_pressure, CalibrationMap, ImpactEvent, ImpactorState,
    OperatorAction, RamSample,
};
use crate::sim::{advance, launch_position, Arming, ContactState, Setup, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: String,
    pub controller_kind: ControllerKind,
    pub pressure: f64,
    pub peak_velocity: f64,
    pub impact_velocity: f64,
    pub impact_momentum: f64,
    pub peak_to_impact_gap: f64,
    pub impact_duration: f64,
    pub phase_at_impact: GaitPhase,
    pub fallover: bool,
    pub seed: u64,
    #[serde(default)]
    pub trajectory_ref: Option<String>,
    /// Thresholds the outcome was judged against.
    #[serde(default)]
    pub fall_criteria: FallCriteria,
}

/// A test that produced no contact episode. Kept for the audit trail but
/// excluded from statistics and from the fail counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidTest {
    pub test_id: String,
    pub pressure: f64,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub start_pressure: f64,
    pub end_pressure: f64,
    pub pressure_step: f64,
    pub consecutive_fail_stop: u32,
    pub observation_window: f64,
    pub repeats_per_pressure: u32,
    pub seed_base: u64,
    /// Half-width of the uniform placement offset drawn per test, m.
    pub placement_spread: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            start_pressure: 50.0,
            end_pressure: 95.0,
            pressure_step: 5.0,
            consecutive_fail_stop: 2,
            observation_window: 4.0,
            repeats_per_pressure: 1,
            seed_base: 0,
            placement_spread: 0.02,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.start_pressure, self.end_pressure, self.pressure_step, self.observation_window]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("campaign values must be finite".into()));
        }
        if self.start_pressure > self.end_pressure {
            return Err(Error::InvalidConfig(format!(
                "start_pressure {} exceeds end_pressure {}",
                self.start_pressure, self.end_pressure
            )));
        }
        if self.pressure_step <= 0.0 {
            return Err(Error::InvalidConfig("pressure_step must be positive".into()));
        }
        if self.consecutive_fail_stop == 0 {
            return Err(Error::InvalidConfig("consecutive_fail_stop must be at least 1".into()));
        }
        if self.repeats_per_pressure == 0 {
            return Err(Error::InvalidConfig("repeats_per_pressure must be at least 1".into()));
        }
        if self.observation_window <= 0.0 {
            return Err(Error::InvalidConfig("observation_window must be positive".into()));
        }
        if !(0.0..=0.05).contains(&self.placement_spread) {
            return Err(Error::InvalidConfig("placement_spread must lie in [0, 0.05] m".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ScheduleExhausted,
    ConsecutiveFails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub controller_kind: ControllerKind,
    pub config: CampaignConfig,
    pub tests: Vec<TestRecord>,
    #[serde(default)]
    pub invalid_tests: Vec<InvalidTest>,
    pub stop_reason: StopReason,
    pub calibration: CalibrationMap,
}

/// Arithmetic sequence from start in `pressure_step` increments, capped at
/// and always ending with `end_pressure`.
pub fn escalation_schedule(config: &CampaignConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let tol = 1e-9 * config.pressure_step;
    let mut k = 0u32;
    loop {
        let p = config.start_pressure + k as f64 * config.pressure_step;
        if p >= config.end_pressure - tol {
            break;
        }
        out.push(p);
        k += 1;
    }
    out.push(config.end_pressure);
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the test at `index` (schedule slot, counting repeats).
pub fn derive_seed(seed_base: u64, index: u64) -> u64 {
    splitmix64(seed_base ^ splitmix64(index))
}

pub fn placement_from_seed(seed: u64, spread: f64) -> f64 {
    if spread == 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff5_e7a1_u64);
    rng.gen_range(-spread..=spread)
}

pub fn format_pressure(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{p:.0}")
    } else {
        format!("{p}")
    }
}

pub fn test_id(kind: ControllerKind, pressure: f64, repeat: u32) -> String {
    format!("{}{}_{:02}", kind.short_name(), format_pressure(pressure), repeat)
}

/// Fixed parts of every test: models, calibration and pipeline timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harness {
    pub setup: Setup,
    pub calibration: CalibrationMap,
    pub criteria: FallCriteria,
    /// Walking-in-place time before the ram is released, s.
    pub settle_time: f64,
}

impl Default for Harness {
    fn default() -> Self {
        Self {
            setup: Setup::default(),
            calibration: CalibrationMap::default(),
            criteria: FallCriteria::default(),
            settle_time: 2.0,
        }
    }
}

impl Harness {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        self.calibration.validate()?;
        if self.settle_time < 0.0 || !self.settle_time.is_finite() {
            return Err(Error::InvalidConfig("settle_time must be non-negative".into()));
        }
        if self.settle_time + self.criteria.window > self.setup.sim.horizon {
            return Err(Error::InvalidConfig(format!(
                "horizon {} s cannot hold settle time plus a {} s observation window",
                self.setup.sim.horizon, self.criteria.window
            )));
        }
        Ok(())
    }

    pub fn with_window(&self, window: f64) -> Harness {
        let mut h = self.clone();
        h.criteria.window = window;
        h
    }
}

/// One logged tick: the state at the end of the tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickLog {
    pub tick: u64,
    pub time: f64,
    pub ram_position: f64,
    pub ram_velocity: f64,
    pub contact_force: f64,
    pub robot: crate::biped::RobotState,
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub record: TestRecord,
    pub event: ImpactEvent,
    pub contact: ContactState,
    pub ram_trace: Vec<RamSample>,
    pub log: Vec<TickLog>,
}

impl TestOutcome {
    /// Ram samples strictly before the first sample with contact force.
    pub fn pre_contact_trace(&self) -> &[RamSample] {
        let end = self.ram_trace.iter().position(|s| s.force > 0.0).unwrap_or(self.ram_trace.len());
        &self.ram_trace[..end]
    }

    /// Pre-contact ram samples on the tick grid. Sub-step samples are
    /// dropped since sub-stepping starts at a subject-dependent time.
    pub fn pre_contact_ticks(&self, dt: f64) -> Vec<RamSample> {
        self.pre_contact_trace().iter().filter(|s| (s.time / dt).round() * dt == s.time).copied().collect()
    }
}

/// SHA-256 over the bit patterns of a ram trace.
pub fn trace_hash(trace: &[RamSample]) -> String {
    let mut h = Sha256::new();
    for s in trace {
        for v in [s.time, s.position, s.velocity] {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Runs one impact test end to end.
pub fn run_test(
    controller: &ControllerHandle,
    action: &OperatorAction,
    harness: &Harness,
    test_id: &str,
) -> Result<TestOutcome> {
    harness.validate()?;
    let target_peak = peak_velocity_from_pressure(action.pressure, &harness.calibration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(action.seed);
    let fraction: f64 = rng.gen();
    let mut setup = harness.setup;
    setup.robot = controller.robot_spec(&harness.setup.robot);
    let robot = init_state(action.placement_offset, fraction, &setup.robot)?;
    let mut ctrl = controller.clone();
    ctrl.set_target_point(0.0);

    let impactor = ImpactorState::charged(launch_position(&setup));
    let arming = Arming { target_peak, fire_time: harness.settle_time };
    let mut world = WorldState::with_rng(robot, impactor, Some(arming), rng);
    let dt = setup.sim.dt;
    let max_ticks = (setup.sim.horizon / dt).round() as u64;
    let window = harness.criteria.window;

    let mut trace = Vec::new();
    let mut log = Vec::with_capacity(max_ticks as usize);
    let mut robot_log = Vec::with_capacity(max_ticks as usize + 1);
    robot_log.push(RobotSample { time: 0.0, state: world.robot });
    while world.tick < max_ticks {
        if let Some(t) = world.contact.first_contact_time {
            if world.time >= t + window {
                break;
            }
        } else if world.impactor.phase == crate::impactor::RamPhase::Stopped {
            break;
        }
        world = advance(&world, &setup, &mut ctrl, Some(&mut trace))?;
        robot_log.push(RobotSample { time: world.time, state: world.robot });
        log.push(TickLog {
            tick: world.tick,
            time: world.time,
            ram_position: world.impactor.ram_position,
            ram_velocity: world.impactor.ram_velocity,
            contact_force: world.contact.contact_force,
            robot: world.robot,
        });
    }

    let event = detect_impact(&trace)?;
    let impact_tick = (event.impact_time / dt + 1e-9).floor() as usize;
    let impact_state = robot_log[impact_tick.min(robot_log.len() - 1)].state;
    let phase = phase_label(&impact_state);
    let fallover = detect_fallover(&robot_log[impact_tick..], &harness.criteria, &setup.robot, setup.sim.gravity)?;

    let record = TestRecord {
        test_id: test_id.to_string(),
        controller_kind: controller.kind,
        pressure: action.pressure,
        peak_velocity: event.peak_velocity,
        impact_velocity: event.impact_velocity,
        impact_momentum: impact_momentum(&setup.impactor, event.impact_velocity),
        peak_to_impact_gap: event.peak_to_impact_gap,
        impact_duration: event.impact_duration,
        phase_at_impact: phase,
        fallover,
        seed: action.seed,
        trajectory_ref: None,
        fall_criteria: harness.criteria,
    };
    Ok(TestOutcome { record, event, contact: world.contact, ram_trace: trace, log })
}

/// Escalation loop with a caller-supplied test runner. The runner returns
/// `Err(Error::NoContact)` for invalid tests.
pub fn run_campaign_with<F>(
    kind: ControllerKind,
    config: &CampaignConfig,
    calibration: &CalibrationMap,
    mut run: F,
) -> Result<CampaignRecord>
where
    F: FnMut(&str, &OperatorAction) -> Result<TestRecord>,
{
    config.validate()?;
    let mut tests = Vec::new();
    let mut invalid_tests = Vec::new();
    let mut fails = 0u32;
    let mut index = 0u64;
    for pressure in escalation_schedule(config) {
        for repeat in 1..=config.repeats_per_pressure {
            let seed = derive_seed(config.seed_base, index);
            index += 1;
            let action = OperatorAction {
                pressure,
                placement_offset: placement_from_seed(seed, config.placement_spread),
                seed,
            };
            let id = test_id(kind, pressure, repeat);
            match run(&id, &action) {
                Ok(record) => {
                    fails = if record.fallover { fails + 1 } else { 0 };
                    tests.push(record);
                    if fails >= config.consecutive_fail_stop {
                        return Ok(CampaignRecord {
                            controller_kind: kind,
                            config: *config,
                            tests,
                            invalid_tests,
                            stop_reason: StopReason::ConsecutiveFails,
                            calibration: *calibration,
                        });
                    }
                }
                Err(Error::NoContact) => invalid_tests.push(InvalidTest {
                    test_id: id,
                    pressure,
                    seed,
                    reason: Error::NoContact.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CampaignRecord {
        controller_kind: kind,
        config: *config,
        tests,
        invalid_tests,
        stop_reason: StopReason::ScheduleExhausted,
        calibration: *calibration,
    })
}

/// Runs a campaign, handing every completed test outcome to `observe`.
pub fn run_campaign_observed<O>(
    controller: &ControllerHandle,
    config: &CampaignConfig,
    harness: &Harness,
    mut observe: O,
) -> Result<CampaignRecord>
where
    O: FnMut(&TestOutcome) -> Result<()>,
{
    let harness = harness.with_window(config.observation_window);
    harness.validate()?;
    run_campaign_with(controller.kind, config, &harness.calibration, |id, action| {
        let outcome = run_test(controller, action, &harness, id)?;
        observe(&outcome)?;
        Ok(outcome.record)
    })
}

pub fn run_campaign(controller: &ControllerHandle, config: &CampaignConfig, harness: &Harness) -> Result<CampaignRecord> {
    run_campaign_observed(controller, config, harness, |_| Ok(()))
}
