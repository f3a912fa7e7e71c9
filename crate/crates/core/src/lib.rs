//! Melt pool thermal-field surrogates for laser powder bed fusion.
//!
//! The crate has four layers:
//!
//! * [`physics`] generates 3D temperature histories with an explicit
//!   finite-difference conduction solver driven by a moving Gaussian source.
//! * [`dataset`] normalizes, crops and splits those histories into training
//!   samples and defines the on-disk dataset container.
//! * [`tensor`] is a small deterministic autodiff engine; [`surrogate`]
//!   builds and trains the temperature, masker and masked-temperature CNNs
//!   on top of it.
//! * [`eval`] computes relative RMSE and melt-pool IoU and aggregates them.

pub mod blob;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod physics;
pub mod surrogate;
pub mod tensor;

pub use error::{Error, Result};
