//! Kernel independence testing with the Hilbert-Schmidt Independence Criterion.
//!
//! The crate provides the exact quadratic-time statistics (biased and unbiased
//! HSIC, distance correlation) with permutation and spectral nulls, and three
//! large-scale variants whose cost is linear in the sample size:
//!
//! | module | statistic | null |
//! |--------|-----------|------|
//! | [`quadratic`], [`null`] | `m * HSIC_b` | permutation, chi-square mixture from Gram spectra |
//! | [`block`] | mean of per-block unbiased HSIC | Gaussian (CLT) with estimated variance |
//! | [`lowrank`] | HSIC of Nystrom or random Fourier features | mixture from primal covariance spectra, or permutation |
//!
//! [`experiments`] holds the synthetic generators and the Monte Carlo power harness.

// `!(x > 0.0)` is used deliberately so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod block;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod lowrank;
pub mod null;
#[cfg(test)]
mod oracles;
pub mod outcome;
pub mod quadratic;
pub mod rng;
pub mod sample;

pub use error::{HsicError, Result};
pub use kernels::{
    center_gram, cross_gram, gram, kernel_eval, median_heuristic, GramMatrix, GramState,
    KernelChoice, KernelFamily, KernelSpec, MedianHeuristic,
};
pub use null::{EigenSpectrum, NullModel, SpectralConfig};
pub use outcome::{ParamValue, TestOutcome, Timings};
pub use quadratic::{dcor, hsic_biased, hsic_unbiased, sub_corr, sub_hsic};
pub use sample::PairedSample;

/// Matrix type used throughout the public API.
pub use nalgebra;
