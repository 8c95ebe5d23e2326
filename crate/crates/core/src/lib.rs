//! Single-anchor 3D localization with a partially-connected receiving RIS.
//!
//! The surface is partitioned into subarrays, each feeding one reception RF
//! chain. Every subarray estimates the azimuth/elevation of the line-of-sight
//! path from a handful of analog-combined pilot samples (atomic-norm denoising
//! followed by root-MUSIC), and the per-subarray bearings are intersected in a
//! least-squares sense to obtain the 3D position of the transmitter.
//!
//! Module map:
//!
//! * [`geometry`] scene description, ground-truth angles, partitioning, GDoP
//! * [`channel`] steering vectors, near/far-field channels, path loss, NLoS scenarios
//! * [`measurement`] combiners and noisy pilot reception
//! * [`crlb`] Fisher information, LoS angle bounds and the position error bound
//! * [`anm`] atomic-norm denoising solved with ADMM
//! * [`music`] correlation decomposition and root-MUSIC angle extraction
//! * [`fusion`] MAD outlier rejection and least-squares bearing intersection
//! * [`omp`] gridded orthogonal matching pursuit baseline
//! * [`experiments`] Monte Carlo sweeps, heatmaps and CSV/manifest output
//! * [`config`] run configuration with unit-suffixed keys

// Validation checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anm;
pub mod channel;
pub mod config;
pub mod crlb;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod geometry;
mod linalg;
pub mod measurement;
pub mod music;
pub mod omp;
pub mod units;

pub use error::{Error, Result};
pub use geometry::{PartitionPattern, Scene, SubarrayConfig, Vec3};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;
