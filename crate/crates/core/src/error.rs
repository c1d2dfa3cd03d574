use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stable index alpha={0}; require alpha in (0,2]")]
    InvalidAlpha(f64),
    #[error("invalid spatial dimension {0}; require dim >= 1")]
    InvalidDim(usize),
    #[error("nonpositive time t={0}")]
    NonpositiveTime(f64),
    #[error("point has length {got}, expected {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("alpha={0} outside (1,2); the perturbation pipeline requires 1 < alpha < 2")]
    AlphaOutsideSeriesRange(f64),
    #[error("closed-form reference density only available for alpha in {{1, 2}}, got {0}")]
    NoClosedForm(f64),
    #[error("quadrature failed to converge: {0}")]
    QuadratureFailed(String),
    #[error("extrapolation failed to converge within the configured h ladder")]
    ExtrapolationFailed,
    #[error("drift field failed the weak divergence test (residual {0:.3e})")]
    NotDivergenceFree(f64),
    #[error("empty calibration sample")]
    EmptySample,
    #[error("eta={0} at or beyond the Motzkin generating-function radius 1/3")]
    EtaOutOfRange(f64),
    #[error("envelope undefined: eta={0} outside (0, (sqrt(5)-1)/4)")]
    EnvelopeOutOfRange(f64),
    #[error("fixed-point iteration diverging (successive differences grew twice); eta estimate {0:.3}")]
    IterationDiverged(f64),
    #[error("Motzkin number overflow at n={0}")]
    MotzkinOverflow(usize),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
