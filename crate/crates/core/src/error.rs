use thiserror::Error;

/// Errors raised by state construction, optical operations and the protocol models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("mode `{0}` is present in both states")]
    LabelCollision(String),

    #[error("mode `{0}` appears more than once in the registry")]
    DuplicateMode(String),

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("mode `{0}` has no polarization partner")]
    MissingPartner(String),

    #[error("occupation {occupation:?} does not fit a {modes}-mode registry with n_max = {n_max}")]
    InvalidOccupation {
        occupation: Vec<u8>,
        modes: usize,
        n_max: u8,
    },

    #[error("truncation n_max must be at least 1 (got {0})")]
    InvalidTruncation(u8),

    #[error("truncation overflow: leaked probability {leaked:.3e} exceeds {limit:.1e}")]
    TruncationOverflow { leaked: f64, limit: f64 },

    #[error("`{name}` = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("measurement outcome has zero probability")]
    ZeroProbability,

    #[error("outcome pattern has {got} entries for {expected} measured modes")]
    OutcomeArity { expected: usize, got: usize },

    #[error("threshold detectors cannot resolve photon number")]
    UnsupportedOutcome,

    #[error("tracing out every mode leaves a scalar")]
    ScalarState,

    #[error("states are defined on different mode registries")]
    RegistryMismatch,

    #[error("dual-rail subspace probability {0:.3e} is too small to extract a two-qubit state")]
    DegenerateExtraction(f64),

    #[error("matrix is not a valid two-qubit density matrix: {0}")]
    InvalidDensityMatrix(&'static str),

    #[error("g2(0) is undefined for a state with no photons")]
    UndefinedG2,

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64, expected: &'static str) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(SimError::OutOfRange { name, value, expected })
    }
}
