//! Spatially differenced two-step estimation of sample-selection models.
//!
//! A probit first step on the full sample gives the inverse Mills ratio for
//! every selected observation; a sparse spatial difference operator then
//! removes location and sub-location effects from outcomes, covariates and
//! the Mills ratio alike, and the differenced equation is fitted by OLS with
//! a variance that accounts for both the differencing and the generated
//! regressor.

pub mod dataset;
pub mod differencing;
pub mod estimator;
pub mod inference;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod numerics;
pub mod probit;
pub mod report;

pub use error::{Error, Result};
