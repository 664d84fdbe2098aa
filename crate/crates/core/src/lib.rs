//! Cramér-Rao bounds for range-based localization when some of the range
//! measurements carry a random bias with a known prior density.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: beacons, target and the [`Scenario`] wiring.
//! - [`bias`]: prior densities of the range biases.
//! - [`quadrature`]: adaptive Gauss-Kronrod integration.
//! - [`crb`]: marginal densities, score, per-beacon Fisher coefficients,
//!   FIM assembly and CRB inversion.
//! - [`estimators`]: informed and joint maximum-likelihood locators.
//! - [`experiments`]: measurement synthesis, bound sweeps and Monte Carlo
//!   MSE sweeps.
//! - [`cli`]: scenario files, CSV output and the `crb-loc` commands.

pub mod bias;
pub mod cli;
pub mod crb;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod geometry;
pub mod optim;
pub mod quadrature;

pub use bias::BiasModel;
pub use crb::{CoeffMode, CrbResult, Fim};
pub use error::{Error, Result};
pub use geometry::{Point, Scenario, Violation};
pub use quadrature::QuadratureSpec;
