//! Standard and adversarial risk of ridge regression and two-layer NTK
//! regression in the benign-overfitting regime.
//!
//! Modules follow the data flow: [`spectra`] builds covariance spectra and
//! rank diagnostics, [`datagen`] samples data, [`ridge`] fits estimators,
//! [`risk`] evaluates conditional and Monte Carlo risks, [`bounds`] evaluates
//! the theoretical bound shapes, [`ntk`] covers the network model and
//! [`experiment`] runs configured sweeps.

pub mod bounds;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod ntk;
pub mod ridge;
pub mod risk;
pub mod rng;
pub mod spectra;

pub use error::{Error, Result};
