//! Probability kernels used by the simulator, the likelihood and the sampler.
//!
//! Every density returns `-inf` off its support and never `NaN` for finite
//! input with valid parameters. Samplers draw from a [`Rng`] so results are
//! reproducible from `(seed, stream)`.

mod continuous;
mod mvn;
mod rng;
pub mod special;
mod truncnorm;

pub use continuous::{
    bernoulli_log_pmf, normal_log_pdf, BetaDist, GammaDist, HalfCauchy, NormalDist,
};
pub use mvn::{InverseWishart3, MvNormal3};
pub(crate) use mvn::mvn3_log_pdf;
pub use rng::Rng;
pub use truncnorm::{truncnorm_log_pdf, TruncatedNormal};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("empty truncation interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<(), DistError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidParameter { name, value })
    }
}

pub(crate) fn check_finite(name: &'static str, value: f64) -> Result<(), DistError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidParameter { name, value })
    }
}
