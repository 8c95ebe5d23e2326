use thiserror::Error;

/// Errors produced by the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("element spacing {spacing_m} m is not half a wavelength ({half_wavelength_m} m)")]
    UnsupportedSpacing { spacing_m: f64, half_wavelength_m: f64 },

    #[error("model order {order} must be smaller than the correlation size {size}")]
    ModelOrder { order: usize, size: usize },

    #[error("no position fix: {0}")]
    NoFix(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
