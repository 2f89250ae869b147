use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("source triad is collinear (|det| = {det:e})")]
    SingularTriad { det: f64 },

    #[error("chromaticity ({x}, {y}) lies outside the source gamut")]
    OutsideGamut { x: f64, y: f64 },

    #[error("unsupported {scheme} constellation order {order}")]
    UnsupportedOrder { scheme: String, order: usize },

    #[error("invalid chromaticity ({x}, {y})")]
    InvalidChromaticity { x: f64, y: f64 },

    #[error("invalid source set: {0}")]
    InvalidSources(String),

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("cyclic prefix length {cp} exceeds block length {n}")]
    InvalidPrefix { cp: usize, n: usize },

    #[error("symbol index {index} out of range for {order} points")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected} bands, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cross-talk matrix is singular")]
    SingularMatrix,

    #[error("spectral power distribution integrates to zero")]
    EmptySupport,

    #[error("invalid transform length {0} (must be a non-zero power of two)")]
    InvalidLength(usize),

    #[error("channel has a spectral null at bin {bin} (|lambda| = {magnitude:e})")]
    SpectralNull { bin: usize, magnitude: f64 },

    #[error("imaginary residue {0:e} after inverse transform")]
    ImaginaryResidue(f64),

    #[error("invalid target BER {0}")]
    InvalidTarget(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by invalid parameters or inputs, as opposed to
    /// I/O or numerical failures during a run.
    pub fn is_invalid_input(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Csv(_)
                | Error::SpectralNull { .. }
                | Error::ImaginaryResidue(_)
        )
    }
}
