//! Joint user identification and channel estimation (JUICE) for grant-free
//! machine-type communications with clustered device activity.
//!
//! The uplink model is `Y = Φ Xᵀ + W`, where the effective channel columns
//! `x_i = γ_i h_i` are jointly sparse across the `M` base-station antennas and
//! the activity indicators `γ_i` are correlated through clusters: a handful of
//! clusters activate, and within an active cluster only a subset of devices
//! transmit. The package provides:
//!
//! - [`model`] — synthetic scenario generation (clusters, activity, pilots,
//!   Rayleigh channels, received signal),
//! - [`priors`] — the structured spike-and-slab prior primitives,
//! - [`ep`] — an expectation-propagation solver over the clustered prior,
//! - [`exact`] — exact posterior by cluster-configuration enumeration, for
//!   small instances,
//! - [`baselines`] — oracle MMSE, M-SBL and iteratively reweighted ℓ2,1
//!   reference estimators,
//! - [`harness`] — Monte Carlo experiment runner, metrics and CSV/JSON export.

pub mod baselines;
pub mod ep;
mod error;
pub mod exact;
pub mod harness;
pub mod model;
pub mod priors;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;

/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
