//! Reachable-set bounds for LTI control loops under stealthy sensor attacks
//! against a chi-squared residual detector.
//!
//! The crate simulates a plant with a steady-state Kalman filter and static
//! estimate feedback, injects zero-alarm or hidden sensor attacks, and bounds
//! the attack-reachable states with ellipsoids computed either from a log-det
//! SDP ([`lmi`]) or from truncated Minkowski sums ([`geom`]). Monte-Carlo
//! clouds ([`montecarlo`]) check the bounds empirically.

pub mod attack;
pub mod bound;
pub mod detector;
pub mod ellipsoid;
pub mod error;
pub mod geom;
pub mod linalg;
pub mod lmi;
pub mod montecarlo;
pub mod plant;
pub mod scenario;
pub mod system;
pub mod verify;

pub use error::{Error, ErrorClass, Result};

/// Library version, stamped into output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Order-preserving map over independent work units, parallel when the
/// `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: IntoIterator,
    I::Item: Send,
    T: Send,
    F: Fn(I::Item) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let items: Vec<I::Item> = items.into_iter().collect();
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: IntoIterator,
    F: Fn(I::Item) -> T,
{
    items.into_iter().map(f).collect()
}
