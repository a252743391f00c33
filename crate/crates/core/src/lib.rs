//! Randomized polarization measurements through a multi-port metasurface,
//! end to end: exact quantum-state oracles, port POVM construction and
//! 2-design validation, a parameterized readout-noise model, a count-table
//! emulator standing in for the physical device, noise calibration,
//! probability-level error mitigation, and classical-shadow / purity
//! estimators with repetition statistics.
//!
//! Conventions used throughout the crate:
//!
//! - Qubit 0 is the most significant bit of every computational index, so
//!   the amplitude vector of an n-qubit state reads like the bit string
//!   `b_0 b_1 .. b_{n-1}`.
//! - Each measurement basis pairs two antipodal ports; outcome 0 is the port
//!   whose Bloch vector points along the positive axis. For the six-port
//!   design the bases are ordered (z, x, y) and outcome 0 corresponds to the
//!   H, H+V, and LC ports respectively.
//! - Circular polarization is fixed as `|LC> = (|H> + i|V>)/sqrt(2)`
//!   (Bloch +y) and `|RC> = (|H> - i|V>)/sqrt(2)`.
//! - Every stochastic routine takes an explicit seed and is reproducible
//!   regardless of thread count.

pub mod calibrate;
pub mod emulator;
pub mod error;
pub mod estimate;
pub mod mitigate;
pub mod noise;
pub mod povm;
pub mod qcore;

pub use error::{Error, Result};
