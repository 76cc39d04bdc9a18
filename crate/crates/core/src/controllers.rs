//! Locomotion policies under test.
//!
//! Three subjects share one interface:
//! - `TMAnalog`: capture-point + Raibert footstep planner over a closed-form
//!   weighted least-squares task-space solve (CoM and pitch tasks).
//! - `TLAnalog`: the same low-level solve with a scripted lookup table over
//!   (com_vx, pitch) bins standing in for a learned high-level planner.
//! - `BBAnalog`: a velocity-tracking black box that stands still at zero
//!   command and is kept near the fixed point by an operator issuing small
//!   velocity nudges.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::biped::{RobotSpec, RobotState};
use crate::error::{Error, Result};

/// The robot-internal control signal for one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub ankle_torque: f64,
    pub flywheel_torque: f64,
    /// Touchdown target for the swing foot, relative to the CoM.
    pub next_footstep_x: f64,
    pub desired_velocity: f64,
    /// Whether the gait should keep stepping; when false the robot holds in
    /// double support at the next opportunity.
    pub stepping: bool,
}

impl ControlCommand {
    pub fn is_feasible(&self, spec: &RobotSpec) -> bool {
        self.ankle_torque.abs() <= spec.ankle_torque_limit
            && self.flywheel_torque.abs() <= spec.hip_torque_limit
            && self.next_footstep_x.abs() <= spec.max_step_length
            && self.ankle_torque.is_finite()
            && self.flywheel_torque.is_finite()
            && self.next_footstep_x.is_finite()
    }

    fn clamped(mut self, spec: &RobotSpec) -> Self {
        self.ankle_torque = self.ankle_torque.clamp(-spec.ankle_torque_limit, spec.ankle_torque_limit);
        self.flywheel_torque = self.flywheel_torque.clamp(-spec.hip_torque_limit, spec.hip_torque_limit);
        self.next_footstep_x = self.next_footstep_x.clamp(-spec.max_step_length, spec.max_step_length);
        self
    }
}

/// Anything that maps a robot observation to a command.
pub trait Policy {
    fn command(&mut self, obs: &RobotState, spec: &RobotSpec, gravity: f64, time: f64) -> ControlCommand;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "TM")]
    TMAnalog,
    #[serde(rename = "TL")]
    TLAnalog,
    #[serde(rename = "BB")]
    BBAnalog,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::TMAnalog, ControllerKind::TLAnalog, ControllerKind::BBAnalog];

    pub fn short_name(self) -> &'static str {
        match self {
            ControllerKind::TMAnalog => "TM",
            ControllerKind::TLAnalog => "TL",
            ControllerKind::BBAnalog => "BB",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TM" | "TMANALOG" => Ok(ControllerKind::TMAnalog),
            "TL" | "TLANALOG" => Ok(ControllerKind::TLAnalog),
            "BB" | "BBANALOG" | "AR" => Ok(ControllerKind::BBAnalog),
            _ => Err(Error::InvalidConfig(format!("unknown controller kind `{s}` (expected TM, TL or BB)"))),
        }
    }
}

/// Gains of the two-task weighted least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsidGains {
    pub kp_com: f64,
    pub kd_com: f64,
    pub kp_pitch: f64,
    pub kd_pitch: f64,
    pub w_com: f64,
    pub w_pitch: f64,
    pub regularization: f64,
}

impl Default for TsidGains {
    fn default() -> Self {
        Self {
            kp_com: 4.0,
            kd_com: 3.0,
            kp_pitch: 120.0,
            kd_pitch: 22.0,
            w_com: 1.0,
            w_pitch: 1.0,
            regularization: 1e-10,
        }
    }
}

/// Solves min_u ||A u - b||²_W + λ||u||² for u = [ankle, flywheel], where
/// the rows of A map torques to CoM and pitch accelerations of the LIP +
/// flywheel model and b holds the desired accelerations minus the drift.
pub fn tsid_solve(
    obs: &RobotState,
    spec: &RobotSpec,
    gravity: f64,
    com_acc_des: f64,
    pitch_acc_des: f64,
    gains: &TsidGains,
) -> (f64, f64) {
    let mz = spec.total_mass * spec.com_height_nominal;
    let a = Matrix2::new(-1.0 / mz, -1.0 / mz, 0.0, 1.0 / spec.flywheel_inertia);
    let drift = gravity / spec.com_height_nominal * (obs.com_x - obs.stance_foot_x);
    let b = Vector2::new(com_acc_des - drift, pitch_acc_des);
    let w = Matrix2::new(gains.w_com, 0.0, 0.0, gains.w_pitch);
    let normal = a.transpose() * w * a + Matrix2::identity() * gains.regularization;
    let rhs = a.transpose() * w * b;
    match normal.try_inverse() {
        Some(inv) => {
            let u = inv * rhs;
            (u[0], u[1])
        }
        None => (0.0, 0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmParams {
    pub step_period: f64,
    pub swing_apex: f64,
    /// Raibert velocity-regulation gain, s.
    pub k_v: f64,
    pub tsid: TsidGains,
}

impl Default for TmParams {
    fn default() -> Self {
        Self { step_period: 0.4, swing_apex: 0.08, k_v: 0.1, tsid: TsidGains::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub vx_bin_low: f64,
    pub vx_bin_high: f64,
    pub pitch_bin_low: f64,
    pub pitch_bin_high: f64,
    pub step_offset_m: f64,
    pub pitch_setpoint_rad: f64,
}

impl TableRow {
    fn center(&self) -> (f64, f64) {
        (0.5 * (self.vx_bin_low + self.vx_bin_high), 0.5 * (self.pitch_bin_low + self.pitch_bin_high))
    }
}

/// Gain-scheduled lookup over (com_vx, pitch) bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub version: String,
    pub rows: Vec<TableRow>,
}

const DEFAULT_TABLE: &str = include_str!("../data/tl_policy_v1.csv");

impl PolicyTable {
    pub fn default_v1() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled policy table is well-formed")
    }

    pub fn zeros() -> Self {
        PolicyTable {
            version: "zeros".into(),
            rows: vec![TableRow {
                vx_bin_low: -10.0,
                vx_bin_high: 10.0,
                pitch_bin_low: -3.2,
                pitch_bin_high: 3.2,
                step_offset_m: 0.0,
                pitch_setpoint_rad: 0.0,
            }],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingPolicyTable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses the CSV table. A leading `# <name> vN` comment line names the
    /// version; other `#` lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let version = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .and_then(|l| l.split(':').next())
            .map(|v| v.trim().to_string())
            .unwrap_or_else(|| "unversioned".into());
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, row) in reader.deserialize::<TableRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
                message: e.to_string(),
            })?;
            if !(row.vx_bin_low < row.vx_bin_high && row.pitch_bin_low < row.pitch_bin_high) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "bin bounds must satisfy low < high".into(),
                });
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::MissingPolicyTable("table has no rows".into()));
        }
        Ok(PolicyTable { version, rows })
    }

    /// Looks up (step offset, pitch setpoint). Observations outside the
    /// table are clamped onto its range; if that still misses every bin the
    /// nearest bin centre wins.
    pub fn lookup(&self, vx: f64, pitch: f64) -> (f64, f64) {
        let vx_min = self.rows.iter().map(|r| r.vx_bin_low).fold(f64::INFINITY, f64::min);
        let vx_max = self.rows.iter().map(|r| r.vx_bin_high).fold(f64::NEG_INFINITY, f64::max);
        let p_min = self.rows.iter().map(|r| r.pitch_bin_low).fold(f64::INFINITY, f64::min);
        let p_max = self.rows.iter().map(|r| r.pitch_bin_high).fold(f64::NEG_INFINITY, f64::max);
        let vx = vx.clamp(vx_min, vx_max);
        let pitch = pitch.clamp(p_min, p_max);
        let inside = |lo: f64, hi: f64, v: f64, top: f64| lo <= v && (v < hi || (v == hi && hi == top));
        let hit = self.rows.iter().find(|r| {
            inside(r.vx_bin_low, r.vx_bin_high, vx, vx_max) && inside(r.pitch_bin_low, r.pitch_bin_high, pitch, p_max)
        });
        let row = hit.unwrap_or_else(|| {
            self.rows
                .iter()
                .min_by(|a, b| {
                    let da = dist2(a.center(), (vx, pitch));
                    let db = dist2(b.center(), (vx, pitch));
                    da.total_cmp(&db)
                })
                .expect("table is non-empty")
        });
        (row.step_offset_m, row.pitch_setpoint_rad)
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlParams {
    pub step_period: f64,
    pub swing_apex: f64,
    pub dual_support_fraction: f64,
    pub k_v: f64,
    pub tsid: TsidGains,
    pub table: PolicyTable,
}

impl Default for TlParams {
    fn default() -> Self {
        Self {
            step_period: 0.5,
            swing_apex: 0.06,
            dual_support_fraction: 0.45,
            k_v: 0.1,
            tsid: TsidGains::default(),
            table: PolicyTable::default_v1(),
        }
    }
}

/// Proportional operator nudging with a dead band and a hard velocity cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NudgeParams {
    /// s⁻¹.
    pub gain: f64,
    pub dead_band: f64,
    pub limit: f64,
    /// How often the operator revises the command, s.
    pub update_period: f64,
}

impl Default for NudgeParams {
    fn default() -> Self {
        Self { gain: 2.0, dead_band: 0.01, limit: 0.1, update_period: 0.5 }
    }
}

pub fn operator_nudge(obs: &RobotState, target_point: f64, params: &NudgeParams) -> f64 {
    let error = target_point - obs.com_x;
    if error.abs() <= params.dead_band {
        return 0.0;
    }
    let limit = params.limit.min(0.1);
    (params.gain * error).clamp(-limit, limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbParams {
    pub step_period: f64,
    pub swing_apex: f64,
    /// Raibert velocity gain, s.
    pub k_raibert: f64,
    /// CoM speed above which the black box starts stepping on its own.
    pub step_trigger_speed: f64,
    pub kp_ankle: f64,
    pub kd_ankle: f64,
    pub kp_pitch: f64,
    pub kd_pitch: f64,
    pub nudge: NudgeParams,
}

impl Default for BbParams {
    fn default() -> Self {
        Self {
            step_period: 0.45,
            swing_apex: 0.05,
            k_raibert: 0.04,
            step_trigger_speed: 0.3,
            kp_ankle: 6.0,
            kd_ankle: 4.0,
            kp_pitch: 300.0,
            kd_pitch: 40.0,
            nudge: NudgeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControllerParams {
    TM(TmParams),
    TL(TlParams),
    BB(BbParams),
}

/// Operator nudge schedule held by the black-box subject.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NudgeState {
    pub target_point: f64,
    pub commanded_velocity: f64,
    pub next_update: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerHandle {
    pub kind: ControllerKind,
    pub params: ControllerParams,
    pub nudge: NudgeState,
}

impl ControllerHandle {
    pub fn new(kind: ControllerKind) -> Self {
        let params = match kind {
            ControllerKind::TMAnalog => ControllerParams::TM(TmParams::default()),
            ControllerKind::TLAnalog => ControllerParams::TL(TlParams::default()),
            ControllerKind::BBAnalog => ControllerParams::BB(BbParams::default()),
        };
        Self { kind, params, nudge: NudgeState::default() }
    }

    pub fn with_table(table: PolicyTable) -> Self {
        let params = ControllerParams::TL(TlParams { table, ..TlParams::default() });
        Self { kind: ControllerKind::TLAnalog, params, nudge: NudgeState::default() }
    }

    /// Overlays this controller's gait choice onto a base robot spec.
    pub fn robot_spec(&self, base: &RobotSpec) -> RobotSpec {
        let (step_period, swing_apex) = match &self.params {
            ControllerParams::TM(p) => (p.step_period, p.swing_apex),
            ControllerParams::TL(p) => (p.step_period, p.swing_apex),
            ControllerParams::BB(p) => (p.step_period, p.swing_apex),
        };
        let dual_support_fraction = match &self.params {
            ControllerParams::TL(p) => p.dual_support_fraction,
            _ => base.dual_support_fraction,
        };
        RobotSpec { step_period, swing_apex, dual_support_fraction, ..*base }
    }

    pub fn set_target_point(&mut self, target: f64) {
        self.nudge.target_point = target;
    }
}

impl Policy for ControllerHandle {
    fn command(&mut self, obs: &RobotState, spec: &RobotSpec, gravity: f64, time: f64) -> ControlCommand {
        match &self.params {
            ControllerParams::TM(p) => tm_policy(obs, spec, gravity, p),
            ControllerParams::TL(p) => tl_policy(obs, spec, gravity, p),
            ControllerParams::BB(p) => {
                if time >= self.nudge.next_update {
                    self.nudge.commanded_velocity = operator_nudge(obs, self.nudge.target_point, &p.nudge);
                    self.nudge.next_update = time + p.nudge.update_period;
                }
                bb_policy(obs, self.nudge.commanded_velocity, spec, gravity, p)
            }
        }
    }
}

fn task_space_command(
    obs: &RobotState,
    spec: &RobotSpec,
    gravity: f64,
    tsid: &TsidGains,
    footstep: f64,
    pitch_setpoint: f64,
) -> ControlCommand {
    let com_acc = -tsid.kp_com * (obs.com_x - obs.stance_foot_x) - tsid.kd_com * obs.com_vx;
    let pitch_acc = -tsid.kp_pitch * (obs.pitch - pitch_setpoint) - tsid.kd_pitch * obs.pitch_rate;
    let (ankle, fly) = tsid_solve(obs, spec, gravity, com_acc, pitch_acc, tsid);
    ControlCommand {
        ankle_torque: ankle,
        flywheel_torque: fly,
        next_footstep_x: footstep,
        desired_velocity: 0.0,
        stepping: true,
    }
    .clamped(spec)
}

/// Capture-point footstep with Raibert velocity regulation toward zero:
/// `com_vx / ω0 + k_v · com_vx`.
pub fn tm_footstep(com_vx: f64, omega0: f64, k_v: f64) -> f64 {
    com_vx / omega0 + k_v * (com_vx - 0.0)
}

pub fn tm_policy(obs: &RobotState, spec: &RobotSpec, gravity: f64, params: &TmParams) -> ControlCommand {
    let footstep = tm_footstep(obs.com_vx, spec.omega0(gravity), params.k_v);
    task_space_command(obs, spec, gravity, &params.tsid, footstep, 0.0)
}

/// TL high level: capture-point footstep plus the table's offset, and the
/// table's pitch setpoint.
pub fn tl_plan(obs: &RobotState, spec: &RobotSpec, gravity: f64, params: &TlParams) -> (f64, f64) {
    let (offset, pitch_setpoint) = params.table.lookup(obs.com_vx, obs.pitch);
    (tm_footstep(obs.com_vx, spec.omega0(gravity), params.k_v) + offset, pitch_setpoint)
}

pub fn tl_policy(obs: &RobotState, spec: &RobotSpec, gravity: f64, params: &TlParams) -> ControlCommand {
    let (footstep, pitch_setpoint) = tl_plan(obs, spec, gravity, params);
    task_space_command(obs, spec, gravity, &params.tsid, footstep, pitch_setpoint)
}

/// Velocity-tracking black box: Raibert footstep without a capture-point
/// term and an ankle-dominant balance law. With a zero command and a slow
/// CoM it stands in double support.
pub fn bb_policy(
    obs: &RobotState,
    commanded_velocity: f64,
    spec: &RobotSpec,
    gravity: f64,
    params: &BbParams,
) -> ControlCommand {
    let commanded_velocity = commanded_velocity.clamp(-1.0, 1.0);
    let stance_time = spec.step_period * (1.0 - spec.dual_support_fraction);
    let footstep = obs.com_vx * stance_time / 2.0 + params.k_raibert * (obs.com_vx - commanded_velocity);
    let mz = spec.total_mass * spec.com_height_nominal;
    let w2 = gravity / spec.com_height_nominal;
    let dx = obs.com_x - obs.stance_foot_x;
    let ankle = mz * (w2 * dx + params.kp_ankle * dx + params.kd_ankle * (obs.com_vx - commanded_velocity));
    let fly = spec.flywheel_inertia * (-params.kp_pitch * obs.pitch - params.kd_pitch * obs.pitch_rate);
    let stepping = commanded_velocity != 0.0 || obs.com_vx.abs() > params.step_trigger_speed;
    ControlCommand {
        ankle_torque: ankle,
        flywheel_torque: fly,
        next_footstep_x: footstep,
        desired_velocity: commanded_velocity,
        stepping,
    }
    .clamped(spec)
}
