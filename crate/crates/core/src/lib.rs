#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

//! Data-driven object and part localization by nearest-neighbor box
//! transfer, with the regression, recognition, and evaluation tooling that
//! surrounds it.
//!
//! The pipeline, in execution order:
//!
//! 1. [`index`]: annotated training images with per-stage feature matrices,
//!    searched by an exact k-nearest-neighbor scan.
//! 2. [`transfer`]: boxes of retrieved neighbors are fused in the unit
//!    square and mapped into the query frame, iterating on recomputed crop
//!    features until the box stabilizes.
//! 3. [`regression`]: ridge-regressed corrections tighten transferred boxes.
//! 4. [`recognition`]: one-vs-all linear classification over concatenated
//!    region features.
//! 5. [`evaluation`]: part-correct-localization tables and accuracy.
//!
//! [`synthetic`] generates seeded worlds for end-to-end validation.
//! Everything here is pure computation over in-memory data; file formats and
//! the command-line driver live in the companion `boxtransfer` crate.

extern crate alloc;

pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod index;
pub mod recognition;
pub mod regression;
pub mod synthetic;
pub mod transfer;

mod fmath;
mod linalg;
