//! Link-level simulator and analytical toolkit for reference-tone analog
//! receive beamforming (continuous analog channel estimation, CACE) in
//! massive MIMO OFDM.
//!
//! A continuously transmitted reference tone is filtered out per RX antenna
//! and used as the combining weights for the data subcarriers, emulating
//! matched filtering without digital per-antenna channel estimation. The
//! crate provides:
//!
//! - [`spectrum`]: the normalized DFT convention (1/K on the forward
//!   transform), signed subcarrier indexing and the modular Kronecker delta.
//! - [`channel`]: multipath MIMO channel model, planar-array responses,
//!   the beta spatial-correlation coefficients, transmit beamforming and the
//!   digital-CE eigenbeamforming baseline.
//! - [`phase_noise`]: Wiener and Ornstein-Uhlenbeck oscillator phase noise,
//!   the spectral statistics of `exp(-j*theta[n])` and the mu aggregates.
//! - [`link_sim`]: the discrete-time simulation of one OFDM symbol through
//!   the analog-combining receiver, including QPSK symbol-error measurement.
//! - [`analysis`]: closed-form SINR/capacity bounds, reference-energy and
//!   filter-bandwidth optimization, and Monte Carlo throughput.
//!
//! Monte Carlo loops are data-parallel via rayon when the `parallel` feature
//! (default) is enabled; results are bit-identical to the sequential
//! fallback for a fixed master seed.

pub mod analysis;
pub mod channel;
pub mod error;
pub mod exec;
pub mod link_sim;
pub mod phase_noise;
pub mod rng;
pub mod spectrum;

pub use error::{CaceError, Result};
pub use num_complex::Complex64;
