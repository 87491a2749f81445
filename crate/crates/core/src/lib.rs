//! Restoration of fast macro x-ray fluorescence scans.
//!
//! A slow reference scan of a painting collects enough photons per pixel
//! for element mapping, but ties up the instrument for hours. This crate
//! models the fast alternative: record a short-dwell scan whose counts
//! are Poisson-degraded, then recover the underlying photon rates by a
//! non-negative dictionary factorization fitted under the Poisson
//! likelihood, spatially guided by a registered RGB photograph.
//!
//! Pipeline stages, one module each:
//!
//! - [`volume`]: scan, rate, image, dictionary, and abundance types.
//! - [`container`]: on-disk format for volumes and factor matrices.
//! - [`phantom`]: synthetic ground-truth volumes for testing.
//! - [`sim`]: Poisson scan simulation at a chosen dwell time.
//! - [`init`]: clustering and non-negative least-squares initialization.
//! - [`objective`]: the penalized Poisson likelihood and its gradients.
//! - [`solver`]: alternating Adam minimization with pruning.
//! - [`mcr`]: least-squares baseline factorization.
//! - [`metrics`]: restoration quality measures.

pub mod container;
pub mod error;
pub mod init;
pub mod mcr;
pub mod metrics;
pub mod objective;
pub mod phantom;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod volume;

#[cfg(any(test, feature = "reference"))]
pub mod reference;

pub use error::{Error, Result};
