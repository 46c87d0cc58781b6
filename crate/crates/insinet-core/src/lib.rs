//! Core algorithms for neighborhood-aware bitemporal change detection.
//!
//! Everything in this crate is pure computation over in-memory rasters and
//! tensors: scene tiling and neighborhood mosaics, the quadruple encoder
//! network with per-scale temporal and center-neighborhood fusion, the
//! multi-scale attention head, cross-entropy training with Adam, confusion
//! metrics, and parameter/MAC profiling. File formats, the CLI and plotting
//! live in the companion `insinet` crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod profile;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
