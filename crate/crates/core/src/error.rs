use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state component became NaN or infinite after integration.
    #[error("non-finite state at t = {time:.6} s: {what}")]
    NonFiniteState { time: f64, what: &'static str },

    #[error("pressure {pressure} PSI outside calibrated range [{low}, {high}] PSI")]
    PressureOutOfRange { pressure: f64, low: f64, high: f64 },

    #[error("calibration samples are degenerate: at least two distinct pressures are required")]
    DegenerateSamples,

    #[error("calibration rejected: max residual {max_residual:.4} m/s is not below {bound} m/s")]
    CalibrationRejected { max_residual: f64, bound: f64 },

    #[error("no contact episode found")]
    NoContact,

    #[error("observation window of {have:.3} s is shorter than the required {need:.3} s")]
    WindowTooShort { have: f64, need: f64 },

    #[error("window of {window:.3} s after impact exceeds the logged span of {available:.3} s")]
    WindowExceedsLog { window: f64, available: f64 },

    #[error("placement offset {0} m exceeds the admissible ±0.05 m")]
    OffsetOutOfRange(f64),

    #[error("policy table unavailable: {0}")]
    MissingPolicyTable(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: field `{field}`: {message}")]
    SchemaMismatch {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cannot read {path}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
