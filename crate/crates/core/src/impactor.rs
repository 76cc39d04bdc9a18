//! Pneumatic linear impactor: ram kinematics, pressure calibration, and
//! impact-event extraction from a ram trace.
//!
//! Nothing in this module reads a random generator. The ram trajectory up to
//! first contact is a pure function of the armed peak velocity and the fire
//! time, so every subject sees the same disturbance for the same operator
//! action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual bound a calibration fit must stay under, in m/s.
pub const CALIBRATION_RESIDUAL_BOUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpactorSpec {
    /// Ram mass in kg.
    pub ram_mass: f64,
    /// Impactor face width in m (6 in).
    pub face_width: f64,
    /// Impactor face height in m (4 in).
    pub face_height_extent: f64,
    /// Height of the face center above the ground in m.
    pub face_center_height: f64,
    /// Forward travel from the launch position to the front end stop, in m.
    pub travel_length: f64,
    /// Largest peak velocity the ram can be armed for, in m/s.
    pub max_velocity: f64,
    /// Length of the constant-acceleration drive stroke, in m.
    pub stroke: f64,
    /// Distance between the end of the drive stroke and the nominal contact
    /// surface, in m. Places the peak velocity before the impact.
    pub coast_margin: f64,
    /// Deceleration of the retract brake once the face has separated, m/s².
    pub brake_deceleration: f64,
}

impl Default for ImpactorSpec {
    fn default() -> Self {
        Self {
            ram_mass: 6.4,
            face_width: 0.1524,
            face_height_extent: 0.1016,
            face_center_height: 0.992,
            travel_length: 0.7,
            max_velocity: 10.0,
            stroke: 0.3,
            coast_margin: 0.1,
            brake_deceleration: 40.0,
        }
    }
}

impl ImpactorSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ram_mass", self.ram_mass),
            ("face_width", self.face_width),
            ("face_height_extent", self.face_height_extent),
            ("face_center_height", self.face_center_height),
            ("travel_length", self.travel_length),
            ("max_velocity", self.max_velocity),
            ("stroke", self.stroke),
            ("brake_deceleration", self.brake_deceleration),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("impactor {name} must be positive, got {value}")));
            }
        }
        if !(self.coast_margin.is_finite() && self.coast_margin >= 0.0) {
            return Err(Error::InvalidConfig("impactor coast_margin must be non-negative".into()));
        }
        if self.stroke + self.coast_margin >= self.travel_length {
            return Err(Error::InvalidConfig(
                "impactor travel_length must exceed stroke + coast_margin".into(),
            ));
        }
        Ok(())
    }

    /// Constant drive acceleration that reaches `target_peak` at the end of
    /// the stroke.
    pub fn drive_acceleration(&self, target_peak: f64) -> f64 {
        target_peak * target_peak / (2.0 * self.stroke)
    }
}

/// Affine pressure → peak-velocity map of the pneumatic drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// (m/s) per PSI.
    pub slope: f64,
    /// m/s.
    pub intercept: f64,
    /// Inclusive [low, high] pressure range in PSI.
    pub valid_pressure_range: [f64; 2],
    /// Largest absolute fit residual over the calibration samples, m/s.
    pub max_residual: f64,
}

impl Default for CalibrationMap {
    /// Line through (85 PSI, 3.89 m/s) and (95 PSI, 4.23 m/s), valid over the
    /// pressures that map into the 1.5-4.4 m/s band the drive repeats over.
    fn default() -> Self {
        Self {
            slope: 0.034,
            intercept: 1.0,
            valid_pressure_range: [15.0, 100.0],
            max_residual: 0.0,
        }
    }
}

impl CalibrationMap {
    pub fn validate(&self) -> Result<()> {
        let [low, high] = self.valid_pressure_range;
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::InvalidConfig(format!("calibration slope must be positive, got {}", self.slope)));
        }
        if !(self.intercept.is_finite() && low.is_finite() && high.is_finite() && low <= high) {
            return Err(Error::InvalidConfig("calibration range must be finite with low <= high".into()));
        }
        if !(self.max_residual < CALIBRATION_RESIDUAL_BOUND) {
            return Err(Error::CalibrationRejected {
                max_residual: self.max_residual,
                bound: CALIBRATION_RESIDUAL_BOUND,
            });
        }
        Ok(())
    }

    pub fn contains(&self, pressure: f64) -> bool {
        let [low, high] = self.valid_pressure_range;
        pressure >= low && pressure <= high
    }
}

pub fn peak_velocity_from_pressure(pressure: f64, calib: &CalibrationMap) -> Result<f64> {
    if !calib.contains(pressure) {
        let [low, high] = calib.valid_pressure_range;
        return Err(Error::PressureOutOfRange { pressure, low, high });
    }
    Ok(calib.slope * pressure + calib.intercept)
}

/// Ordinary least-squares affine fit of (pressure PSI, peak velocity m/s)
/// samples. The fit is rejected unless every residual stays under 0.1 m/s.
pub fn fit_calibration(samples: &[(f64, f64)]) -> Result<CalibrationMap> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSamples);
    }
    if samples.iter().any(|(p, v)| !p.is_finite() || !v.is_finite()) {
        return Err(Error::InvalidConfig("calibration samples must be finite".into()));
    }
    let n = samples.len() as f64;
    let mean_p = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_v = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(p, v) in samples {
        sxx += (p - mean_p) * (p - mean_p);
        sxy += (p - mean_p) * (v - mean_v);
    }
    if sxx <= f64::EPSILON * mean_p.abs().max(1.0) {
        return Err(Error::DegenerateSamples);
    }
    let slope = sxy / sxx;
    let intercept = mean_v - slope * mean_p;
    let max_residual = samples
        .iter()
        .map(|&(p, v)| (v - (slope * p + intercept)).abs())
        .fold(0.0, f64::max);
    if max_residual >= CALIBRATION_RESIDUAL_BOUND {
        return Err(Error::CalibrationRejected {
            max_residual,
            bound: CALIBRATION_RESIDUAL_BOUND,
        });
    }
    if !(slope > 0.0) {
        return Err(Error::InvalidConfig(format!("fitted slope {slope} is not positive")));
    }
    let low = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let high = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(CalibrationMap {
        slope,
        intercept,
        valid_pressure_range: [low, high],
        max_residual,
    })
}

/// Momentum delivered by the ram at the moment of impact.
pub fn impact_momentum(spec: &ImpactorSpec, impact_velocity: f64) -> f64 {
    spec.ram_mass * impact_velocity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RamPhase {
    Charging,
    Accelerating,
    Coasting,
    InContact,
    Rebounding,
    Stopped,
}

impl RamPhase {
    fn rank(self) -> u8 {
        match self {
            RamPhase::Charging => 0,
            RamPhase::Accelerating => 1,
            RamPhase::Coasting => 2,
            RamPhase::InContact => 3,
            RamPhase::Rebounding => 4,
            RamPhase::Stopped => 5,
        }
    }

    /// Whether `self -> next` is an admissible transition: forward through the
    /// listed order, or back from `Rebounding` into `InContact`.
    pub fn may_transition_to(self, next: RamPhase) -> bool {
        next.rank() >= self.rank() || (self == RamPhase::Rebounding && next == RamPhase::InContact)
    }

    /// Whether the face can touch the subject in this phase.
    pub fn is_live(self) -> bool {
        !matches!(self, RamPhase::Charging | RamPhase::Stopped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactorState {
    /// Position of the face front along the impact axis, m.
    pub ram_position: f64,
    pub ram_velocity: f64,
    pub phase: RamPhase,
    pub peak_velocity_achieved: f64,
    /// Earliest time at which `peak_velocity_achieved` was reached.
    pub peak_time: Option<f64>,
    pub launch_position: f64,
    /// (time, position) where coasting began. Free flight is evaluated from
    /// this anchor so the trajectory does not depend on step partitioning.
    #[serde(default)]
    pub coast_from: Option<(f64, f64)>,
}

impl ImpactorState {
    pub fn charged(launch_position: f64) -> Self {
        Self {
            ram_position: launch_position,
            ram_velocity: 0.0,
            phase: RamPhase::Charging,
            peak_velocity_achieved: 0.0,
            peak_time: None,
            launch_position,
            coast_from: None,
        }
    }

    pub fn fire(mut self) -> Self {
        if self.phase == RamPhase::Charging {
            self.phase = RamPhase::Accelerating;
        }
        self
    }
}

/// Advances the ram by one step of length `dt` ending at `now + dt`.
///
/// The drive pushes only while `Accelerating` and is cut once the face
/// touches the subject. After separation the retract brake slows the ram to
/// rest, at which point it is withdrawn to the launch position.
pub fn ram_step(
    state: &ImpactorState,
    spec: &ImpactorSpec,
    target_peak: f64,
    contact_force: f64,
    now: f64,
    dt: f64,
) -> ImpactorState {
    let mut s = *state;
    let target = target_peak.min(spec.max_velocity);
    let decel = contact_force / spec.ram_mass;
    match s.phase {
        RamPhase::Charging | RamPhase::Stopped => return s,
        RamPhase::Accelerating => {
            if contact_force > 0.0 {
                s.phase = RamPhase::InContact;
                s.ram_velocity -= decel * dt;
            } else if target <= 0.0 {
                s.ram_velocity = 0.0;
                s.phase = RamPhase::Stopped;
                return s;
            } else {
                s.ram_velocity += spec.drive_acceleration(target) * dt;
                if s.ram_velocity >= target {
                    s.ram_velocity = target;
                    s.phase = RamPhase::Coasting;
                }
            }
        }
        RamPhase::Coasting => {
            if contact_force > 0.0 {
                s.phase = RamPhase::InContact;
                s.ram_velocity -= decel * dt;
            }
        }
        RamPhase::InContact => s.ram_velocity -= decel * dt,
        RamPhase::Rebounding => {
            if contact_force > 0.0 {
                s.phase = RamPhase::InContact;
                s.ram_velocity -= decel * dt;
            } else {
                let dv = spec.brake_deceleration * dt;
                if s.ram_velocity.abs() <= dv {
                    s.ram_velocity = 0.0;
                    s.phase = RamPhase::Stopped;
                    s.ram_position = s.launch_position;
                    return s;
                }
                s.ram_velocity -= dv.copysign(s.ram_velocity);
            }
        }
    }
    match (s.phase, s.coast_from) {
        (RamPhase::Coasting, Some((t0, x0))) => s.ram_position = x0 + s.ram_velocity * (now + dt - t0),
        (RamPhase::Coasting, None) => {
            s.ram_position += s.ram_velocity * dt;
            s.coast_from = Some((now + dt, s.ram_position));
        }
        _ => s.ram_position += s.ram_velocity * dt,
    }
    if s.ram_velocity > s.peak_velocity_achieved {
        s.peak_velocity_achieved = s.ram_velocity;
        s.peak_time = Some(now + dt);
    }
    if s.ram_position - s.launch_position >= spec.travel_length && s.ram_velocity > 0.0 {
        s.ram_position = s.launch_position + spec.travel_length;
        s.ram_velocity = 0.0;
        s.phase = RamPhase::Stopped;
    }
    s
}

/// One ram sample, taken at the start of a (sub)step: the state at `time`
/// and the contact force acting over the step that follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamSample {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    pub force: f64,
    /// Face-to-subject gap, m; negative while the foam is compressed.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactEvent {
    pub impact_time: f64,
    pub impact_velocity: f64,
    pub peak_velocity: f64,
    pub peak_time: f64,
    pub peak_to_impact_gap: f64,
    /// First contact to separation (gap > 0). Runs to the end of the trace
    /// when no separation was logged.
    pub impact_duration: f64,
    pub separation_time: Option<f64>,
    /// First time after impact at which the ram velocity is <= 0.
    pub zero_crossing_time: Option<f64>,
    /// Ram velocity at separation (negative when bouncing back).
    pub rebound_velocity: f64,
}

pub fn detect_impact(trace: &[RamSample]) -> Result<ImpactEvent> {
    let first = trace.iter().position(|s| s.force > 0.0).ok_or(Error::NoContact)?;
    let impact = trace[first];
    let (mut peak_velocity, mut peak_time) = (f64::NEG_INFINITY, impact.time);
    for s in &trace[..=first] {
        if s.velocity > peak_velocity {
            peak_velocity = s.velocity;
            peak_time = s.time;
        }
    }
    let after = &trace[first + 1..];
    let separation = after.iter().find(|s| s.gap > 0.0);
    let end = separation.or(after.last()).unwrap_or(&impact);
    let zero_crossing_time = after.iter().find(|s| s.velocity <= 0.0).map(|s| s.time);
    Ok(ImpactEvent {
        impact_time: impact.time,
        impact_velocity: impact.velocity,
        peak_velocity,
        peak_time,
        peak_to_impact_gap: impact.time - peak_time,
        impact_duration: end.time - impact.time,
        separation_time: separation.map(|s| s.time),
        zero_crossing_time,
        rebound_velocity: end.velocity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorAction {
    pub pressure: f64,
    /// Robot distance error from the nominal impact point, m.
    pub placement_offset: f64,
    pub seed: u64,
}
