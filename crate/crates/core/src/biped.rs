//! Planar reduced-order biped: linear inverted pendulum CoM dynamics with a
//! torso flywheel for pitch, discrete stepping driven by a phase clock, and
//! fallover detection over a post-impact window.
//!
//! Conventions: `x` runs along the impact axis (the ram travels toward +x),
//! `pitch` is positive when the top of the torso moves toward +x. A positive
//! ankle torque shifts the centre of pressure toward +x, a positive flywheel
//! torque pitches the torso toward +x and pushes the CoM toward -x.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::ControlCommand;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stance {
    Left,
    Right,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SwingDir {
    Up,
    Down,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GaitPhase {
    pub stance: Stance,
    pub swing_dir: SwingDir,
}

impl GaitPhase {
    pub const DUAL_NONE: GaitPhase = GaitPhase { stance: Stance::Dual, swing_dir: SwingDir::None };

    /// All five labels a sound phase machine can produce.
    pub const ALL: [GaitPhase; 5] = [
        GaitPhase::DUAL_NONE,
        GaitPhase { stance: Stance::Left, swing_dir: SwingDir::Up },
        GaitPhase { stance: Stance::Left, swing_dir: SwingDir::Down },
        GaitPhase { stance: Stance::Right, swing_dir: SwingDir::Up },
        GaitPhase { stance: Stance::Right, swing_dir: SwingDir::Down },
    ];

    pub fn single(side: Side, dir: SwingDir) -> GaitPhase {
        let stance = match side {
            Side::Left => Stance::Left,
            Side::Right => Stance::Right,
        };
        GaitPhase { stance, swing_dir: dir }
    }

    pub fn is_legal(&self) -> bool {
        (self.stance == Stance::Dual) == (self.swing_dir == SwingDir::None)
    }

    pub fn stance_label(&self) -> &'static str {
        match self.stance {
            Stance::Left => "Left",
            Stance::Right => "Right",
            Stance::Dual => "Dual",
        }
    }

    pub fn swing_label(&self) -> &'static str {
        match self.swing_dir {
            SwingDir::Up => "Up",
            SwingDir::Down => "Down",
            SwingDir::None => "None",
        }
    }

    pub fn parse(stance: &str, swing: &str) -> Option<GaitPhase> {
        let stance = match stance {
            "Left" => Stance::Left,
            "Right" => Stance::Right,
            "Dual" => Stance::Dual,
            _ => return None,
        };
        let swing_dir = match swing {
            "Up" => SwingDir::Up,
            "Down" => SwingDir::Down,
            "None" => SwingDir::None,
            _ => return None,
        };
        let phase = GaitPhase { stance, swing_dir };
        phase.is_legal().then_some(phase)
    }
}

impl From<GaitPhase> for String {
    fn from(p: GaitPhase) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for GaitPhase {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.split_once('_')
            .and_then(|(a, b)| GaitPhase::parse(a, b))
            .ok_or_else(|| format!("invalid gait phase label `{s}`"))
    }
}

impl fmt::Display for GaitPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.stance_label(), self.swing_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub total_mass: f64,
    pub com_height_nominal: f64,
    pub flywheel_inertia: f64,
    pub max_step_length: f64,
    pub step_period: f64,
    pub swing_apex: f64,
    pub ankle_torque_limit: f64,
    pub hip_torque_limit: f64,
    /// Maximum leg length; the CoM drops once the stance leg is overextended.
    pub leg_length: f64,
    /// Fraction of each step spent in double support.
    pub dual_support_fraction: f64,
    /// Half-width of the uniform touchdown timing noise, s.
    pub touchdown_time_jitter: f64,
    /// Half-width of the uniform foot placement noise, m.
    pub placement_jitter: f64,
    /// CoM height at which a falling robot comes to rest on the rail, m.
    pub floor_height: f64,
    /// Horizontal speed limit of the swing foot; bounds how far a late
    /// retarget can move the landing point, m/s.
    pub swing_speed_limit: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            total_mass: 45.0,
            com_height_nominal: 0.9,
            flywheel_inertia: 4.0,
            max_step_length: 0.5,
            step_period: 0.4,
            swing_apex: 0.08,
            ankle_torque_limit: 40.0,
            hip_torque_limit: 150.0,
            leg_length: 1.03,
            dual_support_fraction: 0.2,
            touchdown_time_jitter: 0.005,
            placement_jitter: 0.005,
            floor_height: 0.3,
            swing_speed_limit: 1.5,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_mass", self.total_mass),
            ("com_height_nominal", self.com_height_nominal),
            ("flywheel_inertia", self.flywheel_inertia),
            ("max_step_length", self.max_step_length),
            ("step_period", self.step_period),
            ("swing_apex", self.swing_apex),
            ("ankle_torque_limit", self.ankle_torque_limit),
            ("hip_torque_limit", self.hip_torque_limit),
            ("floor_height", self.floor_height),
            ("swing_speed_limit", self.swing_speed_limit),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("robot {name} must be positive, got {value}")));
            }
        }
        if !(self.leg_length > self.com_height_nominal) {
            return Err(Error::InvalidConfig("robot leg_length must exceed com_height_nominal".into()));
        }
        if !(0.0..1.0).contains(&self.dual_support_fraction) {
            return Err(Error::InvalidConfig("robot dual_support_fraction must lie in [0, 1)".into()));
        }
        if !(self.touchdown_time_jitter >= 0.0 && self.touchdown_time_jitter < 0.5 * self.step_period) {
            return Err(Error::InvalidConfig("robot touchdown_time_jitter out of range".into()));
        }
        if !(self.placement_jitter >= 0.0) {
            return Err(Error::InvalidConfig("robot placement_jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// LIP natural frequency sqrt(g / z0).
    pub fn omega0(&self, gravity: f64) -> f64 {
        (gravity / self.com_height_nominal).sqrt()
    }

    /// Horizontal CoM-to-stance distance beyond which the leg cannot hold
    /// the nominal CoM height.
    pub fn reach(&self) -> f64 {
        (self.leg_length.powi(2) - self.com_height_nominal.powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub com_x: f64,
    pub com_z: f64,
    pub com_vx: f64,
    pub com_vz: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub stance_foot_x: f64,
    pub swing_foot_x: f64,
    pub swing_foot_z: f64,
    pub swing_foot_vz: f64,
    pub gait: GaitPhase,
    /// Time since the last touchdown, in [0, step_duration).
    pub phase_clock: f64,
    /// Duration of the current step including its timing noise.
    pub step_duration: f64,
    /// Foot carrying the load in single support (the leading foot in dual).
    pub support: Side,
    /// Swing foot position at lift-off.
    pub liftoff_x: f64,
    pub step_count: u64,
    /// Stance leg overextended; the CoM is toppling about `fall_pivot`.
    pub falling: bool,
    pub fall_pivot: f64,
    /// Came to rest on the safety rail; the state is frozen.
    pub collapsed: bool,
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        [
            self.com_x,
            self.com_z,
            self.com_vx,
            self.com_vz,
            self.pitch,
            self.pitch_rate,
            self.stance_foot_x,
            self.swing_foot_x,
            self.swing_foot_z,
            self.swing_foot_vz,
            self.phase_clock,
            self.step_duration,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn kinetic_energy(&self, spec: &RobotSpec) -> f64 {
        0.5 * spec.total_mass * (self.com_vx.powi(2) + self.com_vz.powi(2))
            + 0.5 * spec.flywheel_inertia * self.pitch_rate.powi(2)
    }

    /// Capture point relative to the CoM, |v| / ω0.
    pub fn capture_offset(&self, omega0: f64) -> f64 {
        self.com_vx / omega0
    }

    fn in_double_support(&self, spec: &RobotSpec) -> bool {
        self.phase_clock < spec.dual_support_fraction * self.step_duration
    }
}

/// Horizontal force acting on the torso at a fixed height.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExternalForce {
    pub force: f64,
    pub height: f64,
}

/// Derives the gait label from foot kinematics: both feet grounded is
/// `Dual_None`; otherwise the support foot is the stance and the sign of the
/// swing foot vertical velocity gives the swing direction.
pub fn phase_label(state: &RobotState) -> GaitPhase {
    if state.swing_foot_z <= 0.0 && state.swing_foot_vz == 0.0 {
        GaitPhase::DUAL_NONE
    } else if state.swing_foot_vz > 0.0 {
        GaitPhase::single(state.support, SwingDir::Up)
    } else {
        GaitPhase::single(state.support, SwingDir::Down)
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Walking-in-place initial state at a given fraction of the two-step
/// stride: [0, 0.5) is the left-support step, [0.5, 1) the right-support
/// step, each starting in double support.
pub fn init_state(placement_offset: f64, gait_phase_fraction: f64, spec: &RobotSpec) -> Result<RobotState> {
    if !(placement_offset.abs() <= 0.05) {
        return Err(Error::OffsetOutOfRange(placement_offset));
    }
    if !(0.0..1.0).contains(&gait_phase_fraction) {
        return Err(Error::InvalidConfig(format!(
            "gait phase fraction {gait_phase_fraction} outside [0, 1)"
        )));
    }
    let (support, within) = if gait_phase_fraction < 0.5 {
        (Side::Left, gait_phase_fraction * 2.0)
    } else {
        (Side::Right, (gait_phase_fraction - 0.5) * 2.0)
    };
    let z0 = spec.com_height_nominal;
    let mut state = RobotState {
        com_x: placement_offset,
        com_z: z0,
        com_vx: 0.0,
        com_vz: 0.0,
        pitch: 0.0,
        pitch_rate: 0.0,
        stance_foot_x: placement_offset,
        swing_foot_x: placement_offset,
        swing_foot_z: 0.0,
        swing_foot_vz: 0.0,
        gait: GaitPhase::DUAL_NONE,
        phase_clock: within * spec.step_period,
        step_duration: spec.step_period,
        support,
        liftoff_x: placement_offset,
        step_count: 0,
        falling: false,
        fall_pivot: placement_offset,
        collapsed: false,
    };
    update_swing(&mut state, placement_offset, spec, f64::INFINITY);
    Ok(state)
}

/// Moves the swing foot along its profile toward the touchdown target
/// `target_x`, no faster horizontally than the swing speed limit.
fn update_swing(state: &mut RobotState, target_x: f64, spec: &RobotSpec, dt: f64) {
    let dual_end = spec.dual_support_fraction * state.step_duration;
    if state.phase_clock < dual_end {
        state.swing_foot_z = 0.0;
        state.swing_foot_vz = 0.0;
    } else {
        let single = state.step_duration - dual_end;
        let s = (state.phase_clock - dual_end) / single;
        let pi = std::f64::consts::PI;
        let desired = state.liftoff_x + (target_x - state.liftoff_x) * smoothstep(s);
        state.swing_foot_x = track(state.swing_foot_x, desired, spec.swing_speed_limit * dt);
        state.swing_foot_z = spec.swing_apex * (pi * s).sin().max(0.0);
        state.swing_foot_vz = spec.swing_apex * pi * (pi * s).cos() / single;
    }
    state.gait = phase_label(state);
}

fn track(from: f64, to: f64, max_move: f64) -> f64 {
    from + (to - from).clamp(-max_move, max_move)
}

/// One integration step of the subject. Semi-implicit Euler on the CoM and
/// pitch, then the phase machine: touchdown happens when the phase clock
/// rolls over, placing the swing foot as close to the commanded offset from
/// the CoM as its speed limit allowed (clamped to the step limit) plus seeded
/// placement noise, and drawing the next step's timing noise.
pub fn robot_step(
    state: &RobotState,
    cmd: &ControlCommand,
    external: ExternalForce,
    spec: &RobotSpec,
    gravity: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RobotState> {
    let mut s = *state;
    if s.collapsed {
        return Ok(s);
    }
    let m = spec.total_mass;
    let z0 = spec.com_height_nominal;
    let w2 = gravity / z0;
    let ankle = if s.falling {
        0.0
    } else {
        cmd.ankle_torque.clamp(-spec.ankle_torque_limit, spec.ankle_torque_limit)
    };
    let fly = cmd.flywheel_torque.clamp(-spec.hip_torque_limit, spec.hip_torque_limit);
    let pivot = if s.falling { s.fall_pivot } else { s.stance_foot_x };

    let ax = w2 * (s.com_x - pivot) - (ankle + fly) / (m * z0) + external.force / m;
    let alpha = (fly + external.force * (external.height - s.com_z)) / spec.flywheel_inertia;
    s.com_vx += ax * dt;
    s.com_x += s.com_vx * dt;
    s.pitch_rate += alpha * dt;
    s.pitch += s.pitch_rate * dt;

    if !s.falling && (s.com_x - s.stance_foot_x).abs() > spec.reach() {
        s.falling = true;
        s.fall_pivot = s.stance_foot_x;
    }
    let z_new = if s.falling {
        let dx = s.com_x - s.fall_pivot;
        (spec.leg_length.powi(2) - dx * dx).max(0.0).sqrt().min(z0)
    } else {
        z0
    };
    s.com_vz = (z_new - s.com_z) / dt;
    s.com_z = z_new;
    if s.falling && s.com_z <= spec.floor_height {
        s.com_z = spec.floor_height;
        s.com_vx = 0.0;
        s.com_vz = 0.0;
        s.pitch_rate = 0.0;
        s.collapsed = true;
    }

    if !s.falling {
        advance_gait(&mut s, cmd, spec, dt, rng);
    }

    if !s.is_finite() {
        return Err(Error::NonFiniteState { time: f64::NAN, what: "robot state" });
    }
    Ok(s)
}

fn advance_gait(s: &mut RobotState, cmd: &ControlCommand, spec: &RobotSpec, dt: f64, rng: &mut ChaCha8Rng) {
    let step = cmd.next_footstep_x.clamp(-spec.max_step_length, spec.max_step_length);
    // A standing robot holds in double support until stepping is requested.
    if s.in_double_support(spec) && !cmd.stepping {
        s.swing_foot_z = 0.0;
        s.swing_foot_vz = 0.0;
        s.gait = GaitPhase::DUAL_NONE;
        return;
    }
    s.phase_clock += dt;
    if s.phase_clock >= s.step_duration {
        let noise = if spec.placement_jitter > 0.0 {
            rng.gen_range(-spec.placement_jitter..=spec.placement_jitter)
        } else {
            0.0
        };
        let timing = if spec.touchdown_time_jitter > 0.0 {
            rng.gen_range(-spec.touchdown_time_jitter..=spec.touchdown_time_jitter)
        } else {
            0.0
        };
        let reachable = track(s.swing_foot_x, s.com_x + step, spec.swing_speed_limit * dt);
        let landed = (reachable + noise).clamp(s.com_x - spec.max_step_length, s.com_x + spec.max_step_length);
        s.swing_foot_x = s.stance_foot_x;
        s.liftoff_x = s.stance_foot_x;
        s.stance_foot_x = landed;
        s.support = s.support.other();
        s.phase_clock = (s.phase_clock - s.step_duration).max(0.0);
        s.step_duration = spec.step_period + timing;
        s.step_count += 1;
    }
    update_swing(s, s.com_x + step, spec, dt);
}

/// Explicit thresholds standing in for the operator's fallover judgement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallCriteria {
    pub pitch_limit: f64,
    /// Fall when com_z drops below this fraction of the nominal height.
    pub height_fraction: f64,
    /// Consecutive touchdowns whose required capture step exceeds the step
    /// limit before a fall is declared.
    pub uncapturable_steps: u32,
    /// Required window length after impact, s.
    pub window: f64,
}

impl Default for FallCriteria {
    fn default() -> Self {
        Self {
            pitch_limit: 0.6,
            height_fraction: 0.5,
            uncapturable_steps: 3,
            window: 4.0,
        }
    }
}

/// A robot state stamped with its simulation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotSample {
    pub time: f64,
    pub state: RobotState,
}

pub fn detect_fallover(
    window: &[RobotSample],
    criteria: &FallCriteria,
    spec: &RobotSpec,
    gravity: f64,
) -> Result<bool> {
    let have = match (window.first(), window.last()) {
        (Some(a), Some(b)) => b.time - a.time,
        _ => 0.0,
    };
    // One tick of slack for windows that end on the tick grid.
    if have + 1e-6 < criteria.window {
        return Err(Error::WindowTooShort { have, need: criteria.window });
    }
    let omega0 = spec.omega0(gravity);
    let floor = criteria.height_fraction * spec.com_height_nominal;
    let mut uncapturable = 0u32;
    let mut last_steps = window[0].state.step_count;
    for sample in window {
        let s = &sample.state;
        if s.pitch.abs() > criteria.pitch_limit || s.com_z < floor {
            return Ok(true);
        }
        if s.step_count != last_steps {
            last_steps = s.step_count;
            if s.capture_offset(omega0).abs() > spec.max_step_length {
                uncapturable += 1;
                if uncapturable >= criteria.uncapturable_steps {
                    return Ok(true);
                }
            } else {
                uncapturable = 0;
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const G: f64 = 9.81;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn standing(spec: &RobotSpec) -> RobotState {
        init_state(0.0, 0.0, spec).unwrap()
    }

    #[test]
    fn labels_render_as_stance_and_swing() {
        assert_eq!(GaitPhase::DUAL_NONE.to_string(), "Dual_None");
        assert_eq!(GaitPhase::single(Side::Left, SwingDir::Up).to_string(), "Left_Up");
        assert_eq!(GaitPhase::parse("Right", "Down"), Some(GaitPhase::single(Side::Right, SwingDir::Down)));
        assert_eq!(GaitPhase::parse("Dual", "Up"), None);
        assert!(GaitPhase::ALL.iter().all(GaitPhase::is_legal));
    }

    #[test]
    fn phase_label_cases() {
        let spec = RobotSpec::default();
        assert_eq!(phase_label(&standing(&spec)), GaitPhase::DUAL_NONE);

        let rising = init_state(0.0, 0.25, &spec).unwrap();
        assert_eq!(phase_label(&rising), GaitPhase::single(Side::Left, SwingDir::Up));

        // Right support, just past the swing apex.
        let dual_end = spec.dual_support_fraction * spec.step_period;
        let apex = dual_end + 0.5 * (spec.step_period - dual_end);
        let fraction = 0.5 + 0.5 * (apex + 1e-4) / spec.step_period;
        let descending = init_state(0.0, fraction, &spec).unwrap();
        assert_eq!(phase_label(&descending), GaitPhase::single(Side::Right, SwingDir::Down));
    }

    #[test]
    fn init_state_rejects_large_offsets() {
        let spec = RobotSpec::default();
        assert!(matches!(init_state(0.06, 0.0, &spec), Err(Error::OffsetOutOfRange(_))));
        assert!(init_state(-0.05, 0.0, &spec).is_ok());
        assert!(init_state(0.0, 1.0, &spec).is_err());
    }

    #[test]
    fn equilibrium_over_stance_foot_does_not_drift() {
        let spec = RobotSpec::default();
        let mut s = standing(&spec);
        let mut r = rng();
        let cmd = ControlCommand::default();
        for _ in 0..1000 {
            s = robot_step(&s, &cmd, ExternalForce::default(), &spec, G, 1e-3, &mut r).unwrap();
        }
        assert!(s.com_x.abs() < 1e-9);
        assert_eq!(s.step_count, 0);
        assert_eq!(s.gait, GaitPhase::DUAL_NONE);
    }

    #[test]
    fn impulse_changes_velocity_by_j_over_m() {
        let spec = RobotSpec::default();
        let s = standing(&spec);
        let dt = 1e-3;
        let j = 20.0;
        let ext = ExternalForce { force: j / dt, height: spec.com_height_nominal };
        let next = robot_step(&s, &ControlCommand::default(), ext, &spec, G, dt, &mut rng()).unwrap();
        let expected = j / spec.total_mass;
        assert!(((next.com_vx - expected) / expected).abs() < 1e-6);
    }

    #[test]
    fn impact_above_com_pitches_the_torso() {
        let spec = RobotSpec::default();
        let s = standing(&spec);
        let ext = ExternalForce { force: 1000.0, height: 0.992 };
        let next = robot_step(&s, &ControlCommand::default(), ext, &spec, G, 1e-3, &mut rng()).unwrap();
        let expected = 1000.0 * (0.992 - 0.9) / spec.flywheel_inertia * 1e-3;
        assert!((next.pitch_rate - expected).abs() < 1e-12);
    }

    #[test]
    fn stepping_alternates_support_and_labels_stay_legal() {
        let spec = RobotSpec { placement_jitter: 0.0, ..RobotSpec::default() };
        let mut s = standing(&spec);
        let mut r = rng();
        let cmd = ControlCommand { stepping: true, ..ControlCommand::default() };
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            s = robot_step(&s, &cmd, ExternalForce::default(), &spec, G, 1e-3, &mut r).unwrap();
            assert!(s.gait.is_legal());
            assert!(s.swing_foot_z >= 0.0);
            seen.insert(s.gait);
        }
        assert!(s.step_count >= 4);
        assert_eq!(seen.len(), 5, "{seen:?}");
    }

    #[test]
    fn overextension_collapses_and_freezes() {
        let spec = RobotSpec::default();
        let mut s = standing(&spec);
        s.com_vx = 2.5;
        let mut r = rng();
        for _ in 0..3000 {
            s = robot_step(&s, &ControlCommand::default(), ExternalForce::default(), &spec, G, 1e-3, &mut r)
                .unwrap();
        }
        assert!(s.collapsed);
        assert_eq!(s.com_z, spec.floor_height);
        assert!(s.is_finite());
    }

    fn window_from(states: &[RobotState], dt: f64) -> Vec<RobotSample> {
        states
            .iter()
            .enumerate()
            .map(|(i, s)| RobotSample { time: i as f64 * dt, state: *s })
            .collect()
    }

    #[test]
    fn fallover_thresholds() {
        let spec = RobotSpec::default();
        let crit = FallCriteria::default();
        let quiet = vec![standing(&spec); 4001];
        assert!(!detect_fallover(&window_from(&quiet, 1e-3), &crit, &spec, G).unwrap());

        let mut pitched = quiet.clone();
        pitched[2000].pitch = 0.7;
        assert!(detect_fallover(&window_from(&pitched, 1e-3), &crit, &spec, G).unwrap());

        let short = vec![standing(&spec); 100];
        assert!(matches!(
            detect_fallover(&window_from(&short, 1e-3), &crit, &spec, G),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn three_uncapturable_touchdowns_are_a_fall() {
        let spec = RobotSpec::default();
        let crit = FallCriteria::default();
        let omega = spec.omega0(G);
        let mut states = vec![standing(&spec); 4001];
        for (k, idx) in [500usize, 900, 1300].iter().enumerate() {
            for s in states.iter_mut().skip(*idx) {
                s.step_count = k as u64 + 1;
                s.com_vx = 0.6 * omega;
            }
        }
        assert!(detect_fallover(&window_from(&states, 1e-3), &crit, &spec, G).unwrap());
        // A capturable touchdown in between resets the count.
        for s in states.iter_mut().skip(900).take(400) {
            s.com_vx = 0.1;
        }
        for s in states.iter_mut().skip(1300) {
            s.com_vx = 0.6 * omega;
        }
        assert!(!detect_fallover(&window_from(&states, 1e-3), &crit, &spec, G).unwrap());
    }

    /// One recovery step to the capture point (clamped to the step limit),
    /// then standing on a weak ankle. The LIP oracle puts the boundary at
    /// J* = m · ω0 · max_step_length.
    fn single_step_recovery(impulse: f64) -> bool {
        let spec = RobotSpec {
            ankle_torque_limit: 1.0,
            placement_jitter: 0.0,
            touchdown_time_jitter: 0.0,
            swing_speed_limit: 1e9,
            ..RobotSpec::default()
        };
        let dt = 1e-3;
        let omega = spec.omega0(G);
        let mut r = rng();
        // Single support, one tick before touchdown.
        let mut s = init_state(0.0, 0.5 - 1.5 * dt / (2.0 * spec.step_period), &spec).unwrap();
        let ext = ExternalForce { force: impulse / dt, height: spec.com_height_nominal };
        s = robot_step(&s, &ControlCommand { stepping: true, ..Default::default() }, ext, &spec, G, dt, &mut r).unwrap();
        let start_steps = s.step_count;
        let mut window = Vec::new();
        for i in 0..4200 {
            let cmd = if s.step_count == start_steps {
                ControlCommand { stepping: true, next_footstep_x: s.com_vx / omega, ..Default::default() }
            } else {
                let cp = s.com_x + s.com_vx / omega - s.stance_foot_x;
                ControlCommand {
                    ankle_torque: 50.0 * spec.total_mass * G * cp,
                    ..Default::default()
                }
            };
            s = robot_step(&s, &cmd, ExternalForce::default(), &spec, G, dt, &mut r).unwrap();
            window.push(RobotSample { time: i as f64 * dt, state: s });
        }
        assert_eq!(s.step_count, start_steps + 1);
        detect_fallover(&window, &FallCriteria::default(), &spec, G).unwrap()
    }

    #[test]
    fn capturability_boundary_separates_outcomes() {
        let spec = RobotSpec::default();
        let j_star = spec.total_mass * spec.omega0(G) * spec.max_step_length;
        assert!(!single_step_recovery(0.98 * j_star));
        assert!(single_step_recovery(1.02 * j_star));
    }
}
