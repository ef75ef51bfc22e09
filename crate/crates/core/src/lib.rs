//! Partially observed mean-field linear-quadratic control with a recursive
//! utility.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the numerical core:
//! the problem model and its validation, the Riccati layer, synthesis of the
//! optimal filtered feedback, analytic costs, and per-path simulation kernels
//! driven by counter-based Gaussian noise. File formats, parallel ensembles
//! and the command line live in the `mflqg` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod coeffs;
pub mod cost;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod noise;
pub mod ode;
pub mod path;
pub mod perturb;
pub mod problem;
pub mod projection;
pub mod reference;
pub mod riccati;
pub mod simulate;
pub mod synthesis;
pub mod validate;

pub use error::{Error, Result};
pub use grid::{StepPoint, TimeGrid};
pub use nalgebra::DMatrix;
pub use path::{CoefficientPath, DensePath, Interpolation};
pub use problem::{Dims, MFLQProblem};
pub use riccati::RiccatiBundle;
pub use synthesis::{synthesize, FeedbackLaw, ReducedCost, Synthesis};
