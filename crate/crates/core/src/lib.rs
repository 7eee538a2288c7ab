//! Geometry, compression and cost modelling for feeding native-resolution
//! images to a fixed-resolution vision transformer.
//!
//! The pipeline runs in this order:
//!
//! 1. [`partition`] picks how many slices to cut and the column/row grid.
//! 2. [`encoding`] fits each slice (and a low-resolution overview) to a patch
//!    grid under the encoder's position-embedding budget and interpolates the
//!    position table to that grid.
//! 3. [`resampler`] compresses every slice's tokens to a fixed count with a
//!    shared cross-attention layer.
//! 4. [`schema`] lays the compressed blocks out for the language model.
//!
//! [`cost`] estimates FLOPs for whole strategies, [`probes`] simulates the
//! counting and padding failure modes of fixed-tile and pad-to-square encoders,
//! and [`proofs`] numerically checks the bounds and moments of the partition
//! rule.

pub mod binfmt;
pub mod config;
pub mod cost;
pub mod encoding;
pub mod error;
pub mod partition;
pub mod probes;
pub mod proofs;
pub mod resampler;
pub mod schema;

pub use error::{Error, Result};
pub use partition::{ImageSize, PartitionPlan, Rect, SliceGrid, VitSpec};
