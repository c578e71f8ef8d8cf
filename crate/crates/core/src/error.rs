use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or input record violates its invariants.
    #[error("invalid {what}: {reason}")]
    Validation { what: &'static str, reason: String },

    #[error(
        "no phase matching in [{lo_deg}°, {hi_deg}°]: mismatch {residual_lo:.6e} rad/mm at {lo_deg}°, \
         {residual_hi:.6e} rad/mm at {hi_deg}°"
    )]
    NoPhaseMatching {
        lo_deg: f64,
        hi_deg: f64,
        residual_lo: f64,
        residual_hi: f64,
    },

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("filter does not overlap the signal support of the spectrum")]
    EmptyMarginal,

    #[error("herald probability is zero, cannot condition on a trigger")]
    CannotCondition,

    #[error("cannot estimate g2: {0}")]
    Estimation(String),

    /// Measured rates are inconsistent with the declared losses.
    #[error("infeasible counts: {0}")]
    InfeasibleCounts(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("monte carlo mode requires an explicit seed")]
    MissingSeed,
}

impl Error {
    /// Whether the failure comes from bad inputs rather than from a
    /// numerical procedure that could not produce a result.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Domain(_) | Error::MissingSeed
        )
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            what,
            reason: reason.into(),
        }
    }
}
