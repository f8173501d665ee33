//! Numerical laboratory for KP-II type equations on the three-torus.
//!
//! Functions live on `T³ × [0, T_w]` and are represented by their Fourier
//! coefficients on a truncated lattice `(k, η, τ_j)`. The modules build on
//! each other in this order:
//!
//! * [`field`]: lattices, spectra, transforms and frequency projections.
//! * [`counting`]: lattice points in thin annuli, sums of two squares.
//! * [`phase`]: the dispersion relation and the resonance identity.
//! * [`norms`]: Fourier restriction norms and their weighted variants.
//! * [`bilinear`]: products, the `M^{-ε}` multiplier and free evolution.
//! * [`probe`]: ratio probes and extremizer searches for bilinear estimates.
//! * [`solver`]: pseudospectral time stepping and Picard iteration.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled; the FFT backend then switches to the portable implementation.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

use alloc::string::String;

pub mod bilinear;
pub mod counting;
pub mod fft;
pub mod field;
pub mod math;
pub mod norms;
pub mod phase;
pub mod probe;
pub mod solver;

pub use fft::Complex64;
pub use field::{FreqPoint, GridSpec, SpaceTimeSpectrum, SpatialGrid, SpatialSpectrum};
pub use norms::{KWeight, NormParams};
pub use phase::{DispersionParams, ResonanceSplit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("x-frequency must be nonzero ({0})")]
    ZeroFrequency(&'static str),
    #[error("resonant null interaction: k1 + k2 = 0")]
    NullInteraction,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("mean-zero condition violated: {0}")]
    MeanZero(String),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("Picard iteration diverged at iterate {iterate}: contraction ratio {ratio}")]
    Divergence { iterate: usize, ratio: f64 },
    #[error("undefined ratio: {0}")]
    Degenerate(String),
    #[error("malformed data: {0}")]
    Format(String),
}

pub type Result<T> = core::result::Result<T, Error>;
