//! Fast evaluation of the Bingham closure for orientational kinetic theories,
//! with a pseudo-spectral simulator for the coarse-grained active-nematic
//! system that the closure feeds.
//!
//! The closure takes the second-moment tensor `D = ⟨pp⟩` of a distribution of
//! unit vectors and returns contractions of the fourth moment `S = ⟨pppp⟩` of
//! the entropy-minimizing (Bingham) distribution matching `D`. The expensive
//! part, inverting the moment map in the diagonal frame, is precomputed once
//! into Chebyshev interpolants; runtime evaluation is eigendecomposition plus
//! polynomial evaluation plus frame rotation.
//!
//! Module map:
//! - [`special`]: modified-Bessel ratios and quadrature rules.
//! - [`solve`]: the moment inversion in the diagonal frame (2D and 3D).
//! - [`chebmap`]: fitting, evaluating, and serializing the Chebyshev maps.
//! - [`frame`]: small symmetric eigensolvers, trace completion, rotation,
//!   the full closure pipeline, and Bingham-parameter recovery.
//! - [`sim`]: periodic pseudo-spectral active-nematic solver (IMEX SBDF2).
//! - [`diag`]: shell spectra, vorticity, onset detection, entropy integrals.

pub mod chebmap;
pub mod diag;
mod error;
pub mod frame;
pub mod sim;
pub mod solve;
pub mod special;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
