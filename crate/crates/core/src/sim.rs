//! Fixed-step world integrator for the composed robot + impactor system.
//!
//! Each tick runs, in order:
//! 1. the controller computes its command from the robot observation;
//! 2. the foam contact force is computed from the current geometry;
//! 3. robot and ram are integrated with semi-implicit Euler;
//! 4. contact bookkeeping is updated.
//!
//! Steps 2-4 repeat on `contact_substeps` sub-steps while the face is in
//! contact or about to touch within the tick. The command from step 1 is
//! held over the sub-steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biped::{robot_step, ExternalForce, RobotSpec, RobotState};
use crate::controllers::Policy;
use crate::error::{Error, Result};
use crate::impactor::{ram_step, ImpactorSpec, ImpactorState, RamPhase, RamSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// N/m.
    pub foam_stiffness: f64,
    /// N·s/m.
    pub foam_damping: f64,
    pub foam_thickness: f64,
    pub gravity: f64,
    pub impact_axis_height: f64,
    /// Torso depth from the CoM line to its front plate, m.
    pub torso_half_depth: f64,
    pub contact_substeps: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            foam_stiffness: 5.0e4,
            foam_damping: 600.0,
            foam_thickness: 0.054,
            gravity: 9.81,
            impact_axis_height: 0.992,
            torso_half_depth: 0.12,
            contact_substeps: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 4.0) {
            return Err(Error::InvalidConfig(format!("horizon must be at least 4 s, got {}", self.horizon)));
        }
        if !(self.foam_stiffness > 0.0 && self.foam_damping >= 0.0 && self.foam_thickness >= 0.0) {
            return Err(Error::InvalidConfig("foam constants must be non-negative with k > 0".into()));
        }
        if !(self.gravity > 0.0 && self.impact_axis_height > 0.0 && self.torso_half_depth >= 0.0) {
            return Err(Error::InvalidConfig("gravity and impact height must be positive".into()));
        }
        if self.contact_substeps == 0 {
            return Err(Error::InvalidConfig("contact_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything about a run that does not change tick to tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub sim: SimConfig,
    pub robot: RobotSpec,
    pub impactor: ImpactorSpec,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.robot.validate()?;
        self.impactor.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    pub in_contact: bool,
    pub penetration: f64,
    /// Force applied over the most recent (sub)step.
    pub contact_force: f64,
    pub impulse_accumulated: f64,
    pub first_contact_time: Option<f64>,
    pub separation_time: Option<f64>,
    pub episodes: u32,
}

/// Peak velocity the ram is armed for and when it is released.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arming {
    pub target_peak: f64,
    pub fire_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub robot: RobotState,
    pub impactor: ImpactorState,
    pub contact: ContactState,
    pub arming: Option<Arming>,
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(robot: RobotState, impactor: ImpactorState, arming: Option<Arming>, seed: u64) -> Self {
        Self::with_rng(robot, impactor, arming, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(robot: RobotState, impactor: ImpactorState, arming: Option<Arming>, rng: ChaCha8Rng) -> Self {
        Self {
            tick: 0,
            time: 0.0,
            robot,
            impactor,
            contact: ContactState::default(),
            arming,
            rng,
        }
    }
}

/// Position of the outer foam surface on the torso at the impact height.
pub fn surface_x(robot: &RobotState, config: &SimConfig) -> f64 {
    robot.com_x + (config.impact_axis_height - robot.com_z) * robot.pitch.sin()
        - config.torso_half_depth
        - config.foam_thickness
}

pub fn surface_velocity(robot: &RobotState, config: &SimConfig) -> f64 {
    robot.com_vx + (config.impact_axis_height - robot.com_z) * robot.pitch.cos() * robot.pitch_rate
        - robot.com_vz * robot.pitch.sin()
}

/// Foam surface of an upright robot standing at x = 0.
pub fn nominal_surface_x(spec: &RobotSpec, config: &SimConfig) -> f64 {
    let _ = spec;
    -config.torso_half_depth - config.foam_thickness
}

/// Where the ram rests before firing: a full stroke plus the coast margin
/// behind the nominal contact surface.
pub fn launch_position(setup: &Setup) -> f64 {
    nominal_surface_x(&setup.robot, &setup.sim) - setup.impactor.coast_margin - setup.impactor.stroke
}

/// Kelvin-Voigt element without adhesion: zero when not compressed,
/// otherwise `k·penetration + c·rate` clamped at zero.
pub fn kelvin_voigt(penetration: f64, rate: f64, stiffness: f64, damping: f64) -> f64 {
    if penetration <= 0.0 {
        0.0
    } else {
        (stiffness * penetration + damping * rate).max(0.0)
    }
}

pub fn contact_force(impactor: &ImpactorState, robot: &RobotState, config: &SimConfig) -> f64 {
    let penetration = impactor.ram_position - surface_x(robot, config);
    let rate = impactor.ram_velocity - surface_velocity(robot, config);
    kelvin_voigt(penetration, rate, config.foam_stiffness, config.foam_damping)
}

fn needs_substeps(world: &WorldState, config: &SimConfig) -> bool {
    if world.contact.in_contact {
        return true;
    }
    if !world.impactor.phase.is_live() {
        return false;
    }
    let gap = surface_x(&world.robot, config) - world.impactor.ram_position;
    let closing = world.impactor.ram_velocity - surface_velocity(&world.robot, config);
    gap - 2.0 * closing.max(0.0) * config.dt <= 0.0
}

fn check_finite(time: f64, robot: &RobotState, impactor: &ImpactorState) -> Result<()> {
    if !robot.is_finite() {
        return Err(Error::NonFiniteState { time, what: "robot state" });
    }
    if !(impactor.ram_position.is_finite() && impactor.ram_velocity.is_finite()) {
        return Err(Error::NonFiniteState { time, what: "impactor state" });
    }
    Ok(())
}

/// Advances the world by one tick. Ram samples for every (sub)step are
/// appended to `ram_trace` when given.
pub fn advance<P: Policy + ?Sized>(
    world: &WorldState,
    setup: &Setup,
    controller: &mut P,
    mut ram_trace: Option<&mut Vec<RamSample>>,
) -> Result<WorldState> {
    let cfg = &setup.sim;
    let mut w = world.clone();
    let t0 = w.tick as f64 * cfg.dt;
    if !(w.robot.is_finite() && w.impactor.ram_position.is_finite() && w.impactor.ram_velocity.is_finite()) {
        return Err(Error::NonFiniteState { time: t0, what: "input state" });
    }

    let target_peak = match w.arming {
        Some(arm) => {
            if w.impactor.phase == RamPhase::Charging && t0 >= arm.fire_time {
                w.impactor = w.impactor.fire();
            }
            arm.target_peak
        }
        None => 0.0,
    };

    let cmd = controller.command(&w.robot, &setup.robot, cfg.gravity, t0);

    let substeps = if needs_substeps(&w, cfg) { cfg.contact_substeps } else { 1 };
    let h = cfg.dt / substeps as f64;
    for k in 0..substeps {
        let t = (w.tick as f64 + k as f64 / substeps as f64) * cfg.dt;
        let live = w.impactor.phase.is_live();
        let force = if live { contact_force(&w.impactor, &w.robot, cfg) } else { 0.0 };
        if let Some(trace) = ram_trace.as_deref_mut() {
            trace.push(RamSample {
                time: t,
                position: w.impactor.ram_position,
                velocity: w.impactor.ram_velocity,
                force,
                gap: surface_x(&w.robot, cfg) - w.impactor.ram_position,
            });
        }

        let external = ExternalForce { force, height: cfg.impact_axis_height };
        w.robot = robot_step(&w.robot, &cmd, external, &setup.robot, cfg.gravity, h, &mut w.rng)
            .map_err(|_| Error::NonFiniteState { time: t, what: "robot state" })?;
        // Exact step to the next grid time, so free flight lands on it bit for bit.
        let t_next = (w.tick as f64 + (k + 1) as f64 / substeps as f64) * cfg.dt;
        w.impactor = ram_step(&w.impactor, &setup.impactor, target_peak, force, t, t_next - t);
        check_finite(t + h, &w.robot, &w.impactor)?;

        let c = &mut w.contact;
        c.contact_force = force;
        c.impulse_accumulated += force * h;
        if force > 0.0 && !c.in_contact {
            c.episodes += 1;
        }
        if force > 0.0 && c.first_contact_time.is_none() {
            c.first_contact_time = Some(t);
        }
        let penetration = if w.impactor.phase.is_live() {
            w.impactor.ram_position - surface_x(&w.robot, cfg)
        } else {
            0.0
        };
        let was_in_contact = c.in_contact;
        c.penetration = penetration.max(0.0);
        c.in_contact = penetration > 0.0;
        if was_in_contact && !c.in_contact {
            if c.separation_time.is_none() && c.first_contact_time.is_some() {
                c.separation_time = Some(t + h);
            }
            if w.impactor.phase == RamPhase::InContact {
                w.impactor.phase = RamPhase::Rebounding;
            }
        }
    }

    w.tick += 1;
    w.time = w.tick as f64 * cfg.dt;
    Ok(w)
}

/// Outcome of driving the ram into a fixed rigid wall.
#[derive(Debug, Clone, PartialEq)]
pub struct WallEpisode {
    pub impulse: f64,
    pub approach_velocity: f64,
    pub rebound_velocity: f64,
    pub duration: f64,
    pub trace: Vec<RamSample>,
}

/// Drives a coasting ram into a rigid wall through the same foam law and
/// sub-stepping policy as [`advance`], until the face separates.
pub fn wall_collision(approach_velocity: f64, spec: &ImpactorSpec, config: &SimConfig) -> Result<WallEpisode> {
    let wall_x = 0.0;
    let mut ram = ImpactorState {
        ram_position: wall_x - 0.5 * approach_velocity * config.dt,
        ram_velocity: approach_velocity,
        phase: RamPhase::Coasting,
        peak_velocity_achieved: approach_velocity,
        peak_time: Some(0.0),
        launch_position: wall_x - 0.1,
        coast_from: None,
    };
    let h = config.dt / config.contact_substeps as f64;
    let mut trace = Vec::new();
    let mut impulse = 0.0;
    let mut t = 0.0;
    let mut first = None;
    let max_steps = (1.0 / h) as usize;
    for _ in 0..max_steps {
        let penetration = ram.ram_position - wall_x;
        let force = kelvin_voigt(penetration, ram.ram_velocity, config.foam_stiffness, config.foam_damping);
        trace.push(RamSample { time: t, position: ram.ram_position, velocity: ram.ram_velocity, force, gap: -penetration });
        if force > 0.0 && first.is_none() {
            first = Some(t);
        }
        ram = ram_step(&ram, spec, approach_velocity, force, t, h);
        impulse += force * h;
        t += h;
        if first.is_some() && ram.ram_position - wall_x <= 0.0 {
            trace.push(RamSample { time: t, position: ram.ram_position, velocity: ram.ram_velocity, force: 0.0, gap: wall_x - ram.ram_position });
            return Ok(WallEpisode {
                impulse,
                approach_velocity,
                rebound_velocity: ram.ram_velocity,
                duration: t - first.unwrap_or(0.0),
                trace,
            });
        }
        if !(ram.ram_velocity.is_finite() && ram.ram_position.is_finite()) {
            return Err(Error::NonFiniteState { time: t, what: "impactor state" });
        }
    }
    Err(Error::NoContact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biped::init_state;
    use crate::controllers::{ControlCommand, ControllerHandle, ControllerKind};

    struct Idle;
    impl Policy for Idle {
        fn command(&mut self, _: &RobotState, _: &RobotSpec, _: f64, _: f64) -> ControlCommand {
            ControlCommand::default()
        }
    }

    #[test]
    fn kelvin_voigt_cases() {
        assert_eq!(kelvin_voigt(-0.01, 4.0, 5e4, 600.0), 0.0);
        assert!((kelvin_voigt(0.01, 0.0, 5e4, 600.0) - 500.0).abs() < 1e-9);
        assert_eq!(kelvin_voigt(0.005, -1.0, 5e4, 600.0), 0.0);
    }

    #[test]
    fn contact_force_zero_with_gap() {
        let setup = Setup::default();
        let robot = init_state(0.0, 0.0, &setup.robot).unwrap();
        let surface = surface_x(&robot, &setup.sim);
        let mut ram = ImpactorState::charged(surface - 0.01);
        ram.phase = RamPhase::Coasting;
        ram.ram_velocity = 4.0;
        assert_eq!(contact_force(&ram, &robot, &setup.sim), 0.0);
        ram.ram_position = surface + 0.01;
        ram.ram_velocity = 0.0;
        assert!((contact_force(&ram, &robot, &setup.sim) - 500.0).abs() < 1e-6);
    }

    #[test]
    fn far_impactor_standing_robot_is_untouched() {
        let setup = Setup::default();
        let robot = init_state(0.0, 0.0, &setup.robot).unwrap();
        let mut w = WorldState::new(robot, ImpactorState::charged(launch_position(&setup)), None, 3);
        for _ in 0..500 {
            w = advance(&w, &setup, &mut Idle, None).unwrap();
            assert_eq!(w.contact.contact_force, 0.0);
        }
        assert_eq!(w.robot.com_x, 0.0);
        assert_eq!(w.robot.com_vx, 0.0);
        assert_eq!(w.tick, 500);
        assert_eq!(w.time, 500.0 * setup.sim.dt);
    }

    fn armed_world(setup: &Setup, seed: u64, fraction: f64) -> WorldState {
        let robot = init_state(0.0, fraction, &setup.robot).unwrap();
        WorldState::new(
            robot,
            ImpactorState::charged(launch_position(setup)),
            Some(Arming { target_peak: 4.0, fire_time: 1.0 }),
            seed,
        )
    }

    #[test]
    fn advance_is_deterministic() {
        let setup = Setup::default();
        let run = || {
            let mut c = ControllerHandle::new(ControllerKind::TMAnalog);
            let mut w = armed_world(&setup, 9, 0.3);
            for _ in 0..10_000 {
                w = advance(&w, &setup, &mut c, None).unwrap();
            }
            w
        };
        let (a, b) = (run(), run());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.contact.first_contact_time.is_some());
    }

    #[test]
    fn serialized_round_trip_continues_identically() {
        let setup = Setup::default();
        let mut c = ControllerHandle::new(ControllerKind::BBAnalog);
        let mut w = armed_world(&setup, 21, 0.7);
        for _ in 0..1050 {
            w = advance(&w, &setup, &mut c, None).unwrap();
        }
        let restored: WorldState = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        let mut c2: ControllerHandle = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(restored, w);
        let (mut a, mut b) = (w, restored);
        for _ in 0..3000 {
            a = advance(&a, &setup, &mut c, None).unwrap();
            b = advance(&b, &setup, &mut c2, None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn impulse_bookkeeping_matches_ram_momentum_change() {
        let setup = Setup::default();
        let mut c = ControllerHandle::new(ControllerKind::TMAnalog);
        let mut w = armed_world(&setup, 5, 0.1);
        let mut trace = Vec::new();
        for _ in 0..2000 {
            w = advance(&w, &setup, &mut c, Some(&mut trace)).unwrap();
            assert!(w.contact.contact_force >= 0.0);
            if w.contact.contact_force > 0.0 {
                assert!(w.contact.first_contact_time.is_some());
            }
        }
        let first = trace.iter().position(|s| s.force > 0.0).unwrap();
        let sep = first + trace[first..].iter().position(|s| s.gap > 0.0).unwrap();
        let delivered: f64 = trace[first..sep].windows(2).map(|p| p[0].force * (p[1].time - p[0].time)).sum();
        let dp = setup.impactor.ram_mass * (trace[sep].velocity - trace[first].velocity);
        assert!(((dp + delivered) / delivered).abs() < 1e-9, "dp {dp} J {delivered}");
    }

    #[test]
    fn rigid_wall_elastic_impulse_is_twice_momentum() {
        let spec = ImpactorSpec::default();
        let cfg = SimConfig { dt: 1e-4, foam_damping: 0.0, ..SimConfig::default() };
        let ep = wall_collision(3.89, &spec, &cfg).unwrap();
        let expected = 2.0 * 6.4 * 3.89;
        assert!((ep.impulse - expected).abs() / expected < 0.01, "{}", ep.impulse);
        assert!((ep.rebound_velocity.abs() - 3.89).abs() / 3.89 < 0.01);
    }

    #[test]
    fn rigid_wall_damped_impulse_is_bounded() {
        let spec = ImpactorSpec::default();
        let ep = wall_collision(3.89, &spec, &SimConfig::default()).unwrap();
        assert!(ep.impulse > 24.896 && ep.impulse <= 49.792 * 1.001, "{}", ep.impulse);
        assert!(ep.rebound_velocity < 0.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SimConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { horizon: 3.0, ..Default::default() }.validate().is_err());
        assert!(Setup::default().validate().is_ok());
    }

    #[test]
    fn non_finite_input_fails_fast() {
        let setup = Setup::default();
        let mut w = armed_world(&setup, 1, 0.0);
        w.robot.com_vx = f64::NAN;
        assert!(matches!(advance(&w, &setup, &mut Idle, None), Err(Error::NonFiniteState { .. })));
    }
}
