use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("zero state vector")]
    ZeroState,

    /// The overlap between two states is too small for its argument to be
    /// meaningful. `index` names the offending consecutive pair when the
    /// overlap comes from a state sequence.
    #[error("singular overlap (|<a|b>| = {magnitude:e}) at pair {index:?}")]
    SingularOverlap { magnitude: f64, index: Option<usize> },

    #[error("time step too coarse: total step probability {total} deviates from 1 at t = {time}")]
    StepTooCoarse { total: f64, time: f64 },

    #[error("density matrix integration diverged at t = {time}: {reason}")]
    IntegrationDiverged { time: f64, reason: String },

    #[error("degenerate density-matrix spectrum (gap {gap:e}) at sample {index}")]
    DegenerateSpectrum { gap: f64, index: usize },

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("no singularity found in window: {0}")]
    NoRootInWindow(String),

    /// φ₀(π)/2π lands too far from an integer to be a winding number.
    #[error("winding {value} is not within tolerance of an integer")]
    NonIntegerWinding { value: f64 },

    #[error("theta sweep could not be made continuous near theta = {theta}")]
    SweepThroughSingularity { theta: f64 },
}
