//! MatrixConv unmixing (MCU) for hyperspectral blind unmixing.
//!
//! The crate models the linear mixing model `Y = E A`, solves the
//! convolutional-sparse-coding endmember and abundance problems with
//! reference ADMM solvers, unrolls those solvers into the UEDIP/UADIP
//! networks (assembled into NBA), trains them against SiVM+FCLS guidance,
//! and optionally wraps training in an outer ADMM loop with a
//! regularization-by-denoising prior (NBARED).
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). The
//! type aliases at the crate root fix the scalar to `f64`, which is what
//! the command-line harness uses.

pub mod baselines;
pub mod error;
pub mod hsi;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod ndgraph;
pub mod nets;
pub mod red;
pub mod reference;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor storage used throughout the crate.
pub type Tensor<T> = ndarray::ArrayD<T>;

pub type Cube = hsi::HsiCube<f64>;
pub type Endmembers = hsi::EndmemberMatrix<f64>;
pub type Abundances = hsi::AbundanceMatrix<f64>;
pub type Guidance = hsi::Guidance<f64>;
pub type Graph = ndgraph::Graph<f64>;
pub type NbaParams = nets::NbaParams<f64>;
pub type NbaOutputs = nets::NbaOutputs<f64>;
pub type Trainer = train::Trainer<f64>;
