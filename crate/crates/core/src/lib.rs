//! Motion-guided pseudo-label refinement.
//!
//! The pipeline turns a per-pixel 3D object-motion map into moving-instance
//! masks ([`motion_masks`]), splits each instance into object masks using
//! feature similarity ([`object_discovery`]), and rewrites segmentation pseudo
//! labels under each object mask so that a rigid moving object carries one
//! moving class ([`semantic_mining`]). [`losses_eval`] provides the matching
//! losses and mIoU evaluation, and [`geometry`] the rigid-motion warp used to
//! validate motion maps, including a synthetic scene renderer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod losses_eval;
pub mod motion_masks;
pub mod object_discovery;
pub mod semantic_mining;
pub mod tensor;

pub use error::{Error, Result};
