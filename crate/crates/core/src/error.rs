use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mean not zero: |c0| = {mean:e} exceeds {limit:e}")]
    MeanNotZero { mean: f64, limit: f64 },

    #[error("symbol is not finite at populated frequency xi = {xi}")]
    NonFiniteSymbol { xi: f64 },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("field tagged real has imaginary part {imag:e} above tolerance")]
    NotReal { imag: f64 },

    #[error("step rejected at t = {t}: {reason}")]
    StepRejected { t: f64, reason: String },

    #[error("blow-up detected at t = {t}: H1 norm {norm:e} exceeds twice the initial {initial:e}")]
    BlowUp { t: f64, norm: f64, initial: f64 },

    #[error("wrap-around at t = {t}: {fraction:e} of the L2 mass lies in the outer box edge")]
    WrapAround { t: f64, fraction: f64 },

    #[error("mean drift at t = {t}: |c0| = {mean:e}")]
    MeanDrift { t: f64, mean: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("packet under-resolved: dx = {dx} exceeds {limit}")]
    UnderResolved { dx: f64, limit: f64 },

    #[error("packet support [{lo}, {hi}] leaves the box")]
    OutOfBox { lo: f64, hi: f64 },

    #[error("velocity {v} outside the probed range [{lo}, {hi}]")]
    Extrapolation { v: f64, lo: f64, hi: f64 },

    #[error("quadrature under-resolved: relative change {change:e} on doubling")]
    QuadratureUnderResolved { change: f64 },

    #[error("missing snapshot at t = {t}")]
    MissingSnapshots { t: f64 },

    #[error("config hash mismatch: trajectory {found}, config {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Runtime monitor violations map to a distinct process exit status.
    pub fn is_monitor_violation(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. }
                | Error::WrapAround { .. }
                | Error::MeanDrift { .. }
                | Error::StepRejected { .. }
        )
    }
}
