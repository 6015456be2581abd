use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter `{name}` out of domain: {value} ({reason})")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error(
        "effective relaxation rate {rate} is not positive (alpha too large for this preparation)"
    )]
    NonPositiveRate { rate: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("rate matrix is not a valid generator: {0}")]
    InvalidGenerator(String),

    #[error("rate matrix violates detailed balance (residual {residual:e})")]
    NotReversible { residual: f64 },

    #[error("spectrum is degenerate: eigenvalues {first} and {second} closer than {tolerance:e}")]
    DegenerateSpectrum {
        first: f64,
        second: f64,
        tolerance: f64,
    },

    #[error("eigenvalue tracking across T±h is ambiguous for mode {mode}")]
    AmbiguousTracking { mode: usize },

    #[error("Fisher information diverges: population {population:e} at level {level} with derivative {derivative:e}")]
    DivergentFisher {
        level: usize,
        population: f64,
        derivative: f64,
    },

    #[error("hot preparation is closer to equilibrium than the cold one at t = 0 (d_hot = {d_hot}, d_cold = {d_cold})")]
    MislabeledPreparations { d_hot: f64, d_cold: f64 },

    #[error("norm `{0}` is only defined for two-level populations")]
    UnsupportedNorm(&'static str),

    #[error("population {0} has no positive-temperature Gibbs match")]
    PopulationInversion(f64),

    #[error("integrator became unstable at t = {time}: |p| = {magnitude}")]
    UnstableIntegration { time: f64, magnitude: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("lemma neighbourhood touches the simplex boundary: p = {population:e} <= {margin:e}")]
    BoundaryProximity { population: f64, margin: f64 },

    #[error("too few points: need at least {required}, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    #[error("grid must be strictly increasing")]
    UnsortedGrid,

    #[error("likelihood is flat: p(t;T) does not vary over the search interval")]
    DegenerateLikelihood,

    #[error("no observations supplied")]
    NoObservations,
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

pub(crate) fn ensure_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}
