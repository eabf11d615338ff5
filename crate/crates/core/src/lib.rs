//! Latent difference guidance for bitemporal change detection.
//!
//! A difference-embedding module is trained adversarially to compress the
//! pre/post difference into a latent map `Z` that keeps the change signal and
//! drops background noise. `Z` is then injected into a segmentation backbone.
//!
//! The crate is `no_std` with `alloc`; file formats and the command line live
//! in the `ldguid` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbones;
pub mod de;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod image;
pub mod metrics;
pub(crate) mod kernels;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
