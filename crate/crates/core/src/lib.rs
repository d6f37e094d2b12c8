//! Pseudospectral simulation of the stochastic mass-critical NLS with
//! Stratonovich potential noise, plus numerical checks of the dispersive,
//! Strichartz, smoothing and maximal-function estimates used to study it.

pub mod error;
pub mod functionals;
pub mod grid;
pub mod norms;
pub mod oracle;
pub mod propagators;
pub mod snapshot;
pub mod spectral;
pub mod stochastic;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, GridSpec, PotentialSpec};
