//! Sliced Wasserstein distances over images with convolution slicers.
//!
//! Instead of vectorizing a `c x d x d` image and projecting onto a random
//! direction, a convolution slicer pushes the image through a chain of
//! unit-norm random convolution kernels until a single scalar (or a point
//! in `R^k`) remains. The resulting one-dimensional optimal transport
//! problems have closed forms, giving fast Monte Carlo estimators of
//! distances between empirical measures of images.
//!
//! Modules:
//! - [`tensor`]: dense image tensors and empirical measures
//! - [`conv`]: the no-padding convolution primitive
//! - [`slicer`]: kernel schedules, sampling, evaluation, gradients
//! - [`ot`]: one-dimensional and exact small-scale optimal transport
//! - [`rng`]: seeded counter-based substreams for reproducible sampling

pub mod cli;
pub mod conv;
pub mod error;
pub mod dataio;
pub mod distances;
pub mod ot;
pub mod rng;
pub mod slicer;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{EmpiricalMeasure, Tensor3};
