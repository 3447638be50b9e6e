//! Mean speed-of-sound (SoS) estimation from the geometric disparity between
//! diverging-wave transmits, and local SoS tomography on top of it.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! kernels; file formats, configuration and the command line live in the
//! `sos-tools` crate.
//!
//! Processing chain:
//!
//! 1. [`synthsim`] produces single-element transmit channel data for a medium
//!    with known SoS (straight-ray, point-scatterer model).
//! 2. [`beamform`] forms RF images by delay-and-sum at an assumed SoS `c_bf`.
//! 3. [`delaytrack`] measures the axial delay between the images of two
//!    transmits by normalized cross-correlation.
//! 4. [`regress`] reduces the delay map to an angular pattern and fits its
//!    slope.
//! 5. [`calibrate`] maps slopes to the SoS offset `Δc = c_bf − c` and inverts
//!    that map.
//! 6. [`tomo`] reconstructs a local slowness map from several transmit pairs.
//! 7. [`metrics`] scores SoS maps (RMSE, CNR).
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod beamform;
pub mod calibrate;
pub mod delaytrack;
mod error;
pub mod geometry;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod regress;
pub mod stats;
pub mod synthsim;
pub mod tomo;

pub use error::{Error, Result};
pub use geometry::{ImagingGrid, Point, PolarRoi, TransducerArray};
