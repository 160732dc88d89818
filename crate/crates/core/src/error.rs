use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid `{field}`: {rule}")]
    InvalidParameter { field: &'static str, rule: String },

    #[error("light cone violated: L = {l} but at least {required} sites are needed (horizon {horizon}, separation {separation})")]
    LightCone {
        l: usize,
        required: usize,
        horizon: usize,
        separation: usize,
    },

    #[error("kernel matrix is singular: det = {det:e}")]
    Singular { det: f64 },

    #[error("matrix is not symmetric: max |A - A^T| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("degenerate denominator: largest eigenvalue of the shifted N matrix is {lambda4:e}")]
    DegenerateDenominator { lambda4: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    pub fn invalid(field: &'static str, rule: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            rule: rule.into(),
        }
    }

    /// Whether the error stems from bad input rather than a failed numerical check.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. } | Error::LightCone { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "gamma",
            format!("must satisfy gamma > 1 (got {gamma}); gamma <= 1 makes the two-point kernel singular"),
        ))
    }
}
