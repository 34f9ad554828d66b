//! Sufficient dimension reduction by penalized alternating minimization.
//!
//! Given a regression function `f: ℝⁿ → ℝ` and the Gaussian input density
//! `π^{-n/2} e^{-|x|²}`, the alternating scheme fits a ridge-network model
//! `G ≈ f` while pulling the model's gradient field toward the top-k principal
//! subspace of its own gradient moment matrix. The output is the orthogonal
//! projector onto the recovered k-dimensional input subspace.
//!
//! Module map:
//!
//! - [`model`]: the cutoff ridge network and its input gradients
//! - [`sampling`]: seeded Gaussian and cutoff-density point sets
//! - [`objective`]: data-fit and gradient-alignment objectives with exact
//!   parameter gradients
//! - [`optimizer`]: Adam inner minimization with best-iterate acceptance
//! - [`spectral`]: moment matrices, Jacobi eigensolver, projectors
//! - [`driver`]: the outer alternating loop
//! - [`experiments`]: Ackley-target sweeps, CSV tables and SVG charts
//! - [`fourier`]: grid Fourier tools checking the dual-space identities in 1-D and 2-D
//! - [`cli`]: the `fourier-sdr` command line

pub mod cli;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod fourier;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod sampling;
pub mod spectral;

pub use driver::{run_alternating, RunConfig, RunResult};
pub use error::{Result, SdrError};
pub use model::{Activation, RidgeModel};
pub use objective::{ObjectiveContext, TargetFunction};
pub use optimizer::OptimizerConfig;
pub use sampling::SampleBatch;
pub use spectral::{MomentMatrix, Projector};
