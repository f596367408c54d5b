//! Simulation and estimation toolkit for quantum-dot entangled-photon sources.
//!
//! The crate models the biexciton–exciton radiative cascade of a strain-tuned,
//! cavity-enhanced quantum dot, generates synthetic measurement records from that
//! model, and implements the analysis chain used to characterize such a source:
//!
//! * [`quantum`]: two-qubit polarization states, fully entangled fraction,
//!   concurrence, fidelity, plus a brute-force oracle for the entangled fraction.
//! * [`cascade`]: time-averaged cascade state under fine-structure precession,
//!   the closed-form entangled-fraction law and its curve fit, g²(0) correction,
//!   linewidth and Purcell arithmetic.
//! * [`tomography`]: the 36-setting polarization tomography, maximum-likelihood
//!   reconstruction and Poissonian Monte Carlo error bars.
//! * [`stream`]: time-tagged photon/detector Monte Carlo, HBT g²(τ), HOM
//!   interference and rate/efficiency accounting.
//! * [`lifetime`]: IRF-convolved decay models and χ²-surface lifetime fits.
//! * [`strain`]: affine piezo-strain model of the fine structure, null finding,
//!   sweeps and sinusoidal FSS extraction.
//! * [`positioning`]: synthetic cryo-microscope images and quantum-dot localization.
//! * [`pipeline`]: reproducible command pipelines used by the `qdent` binary.
//!
//! Every stochastic entry point takes an explicit seed.

pub mod cascade;
pub mod error;
pub mod fit;
pub mod lifetime;
pub mod pipeline;
pub mod positioning;
pub mod quantum;
pub mod rng;
pub mod strain;
pub mod stream;
pub mod tomography;

pub use error::{Error, Result};

/// Reduced Planck constant in μeV·ns.
pub const HBAR_UEV_NS: f64 = 0.658_211_956_9;
