use thiserror::Error;

/// Errors produced by the simulator and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A wavelength does not fall within half a grid spacing of any channel.
    #[error("no ITU channel within 50 GHz of {wavelength_nm} nm")]
    NoChannel { wavelength_nm: f64 },

    /// A Raman profile was queried outside the wavelengths it tabulates.
    #[error("classical wavelength {wavelength_nm} nm outside Raman profile coverage for channel C{channel}")]
    Coverage { wavelength_nm: f64, channel: u8 },

    /// A precondition on the caller's input was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Input data broke a structural contract (e.g. unsorted tags).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The topology failed validation; each entry names the offending path element.
    #[error("invalid topology: {}", .0.join("; "))]
    Topology(Vec<String>),

    /// A scenario failed to parse or validate; each entry starts with its
    /// line and column.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("CAR undefined: {0}")]
    UndefinedCar(String),

    #[error("visibility fit failed: {0}")]
    Fit(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("incomplete QKD session: {0}")]
    IncompleteSession(String),

    /// Malformed QTT1 data; `offset` is the byte position where parsing stopped.
    #[error("QTT1 parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
