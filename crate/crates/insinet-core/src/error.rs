use alloc::string::String;
use core::fmt;

/// Error categories shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tile/mosaic/mask geometry that cannot be satisfied.
    InvalidGeometry(String),
    /// Malformed or inconsistent input data.
    InvalidInput(String),
    /// Tensor or raster shape mismatch.
    Shape(String),
    /// Inconsistent network or training configuration.
    Config(String),
    /// A caller broke an operation contract (missing inputs, wrong counts).
    Contract(String),
    /// Training aborted on a non-finite loss.
    Divergence(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGeometry(m) => write!(f, "invalid geometry: {m}"),
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Divergence(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
