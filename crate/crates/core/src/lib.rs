//! Numerical core for through-plane super-resolution of 3D medical volumes.
//!
//! Everything here is pure computation over in-memory buffers: slice-thickness
//! degradation models, cubic-spline resampling, patch datasets, a small
//! reverse-mode engine for 3D/2D convolutional networks, the multi-scale
//! residual generator and patch discriminator, tri-planar perceptual loss,
//! two-stage training and image-quality metrics. File formats, archives and
//! the command line live in the `soupsr` crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `std` feature only enables runtime SIMD dispatch in the GEMM
//! backend and `std::error::Error` impls.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod degradation;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod perceptual;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
pub use volume::Volume;
