//! Spatiotemporal atlas construction from serial 3-D volumes.
//!
//! A cohort of volumes acquired across gestational days is registered to a
//! day-dependent atlas with stationary-velocity-field deformations. Velocity
//! fields and atlas deviations are optimized jointly; a groupwise constraint
//! pulls the per-day mean deformation toward identity so the atlas, not the
//! deformations, absorbs the anatomy. Everything downstream of the fitted
//! model (evaluation metrics, voxel-based group comparison) lives here too.

pub mod atlas;
pub mod diffeo;
mod error;
pub mod io;
pub(crate) mod kernels;
pub mod metrics;
pub mod objective;
pub mod phantom;
pub mod vbm;
pub mod volume;

pub use error::{Error, Result};
