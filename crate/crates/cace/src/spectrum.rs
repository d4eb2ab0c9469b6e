//! Normalized DFT convention and signed subcarrier indexing.
//!
//! The transforms here are "normalized DFT" (nDFT): the `1/K` factor sits on
//! the *forward* transform,
//!
//! ```text
//! C[k] = (1/K) sum_{n=0}^{K-1} s[n] exp(-j 2 pi k n / K)
//! s[n] =       sum_{k}         C[k] exp(+j 2 pi k n / K)
//! ```
//!
//! so Parseval reads `sum_n |s[n]|^2 = K * sum_k |C[k]|^2`. Subcarriers are
//! indexed by signed integers `k in {-K1, ..., K2}`; coefficients are stored
//! in natural DFT bin order `0..K-1` and the signed-index accessors perform
//! the wrap.

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{CaceError, Result};

/// Subcarrier layout of one OFDM symbol.
///
/// `k1` negative-frequency and `k2` positive-frequency subcarriers plus the
/// reference bin at index 0 give `K = k1 + k2 + 1` in total. Subcarrier `k`
/// sits at frequency offset `k / symbol_duration_s` from the carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierGrid {
    k1: usize,
    k2: usize,
    symbol_duration_s: f64,
}

impl SubcarrierGrid {
    pub fn new(k1: usize, k2: usize, symbol_duration_s: f64) -> Result<Self> {
        if k1 + k2 + 1 < 3 {
            return Err(CaceError::invalid(format!(
                "grid needs at least 3 subcarriers, got K = {}",
                k1 + k2 + 1
            )));
        }
        if !(symbol_duration_s > 0.0) {
            return Err(CaceError::invalid(format!(
                "symbol duration must be positive, got {symbol_duration_s}"
            )));
        }
        Ok(Self {
            k1,
            k2,
            symbol_duration_s,
        })
    }

    /// Total number of subcarriers `K = k1 + k2 + 1`.
    pub fn total(&self) -> usize {
        self.k1 + self.k2 + 1
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    /// Symbol duration `T_s` in seconds (excluding any cyclic prefix).
    pub fn symbol_duration_s(&self) -> f64 {
        self.symbol_duration_s
    }

    /// Frequency offset of subcarrier `k` from the carrier, `k / T_s` in Hz.
    pub fn subcarrier_frequency_hz(&self, k: i64) -> f64 {
        k as f64 / self.symbol_duration_s
    }

    /// Signed subcarrier indices in ascending order `-k1 ..= k2`.
    pub fn signed_indices(&self) -> impl Iterator<Item = i64> {
        -(self.k1 as i64)..=(self.k2 as i64)
    }

    /// Storage bin for signed index `k`. Indices outside `{-k1, ..., k2}`
    /// wrap modulo `K`, matching the periodicity of the nDFT coefficients.
    pub fn bin(&self, k: i64) -> usize {
        let big_k = self.total() as i64;
        k.rem_euclid(big_k) as usize
    }

    /// Signed index for a storage bin; inverse of [`Self::bin`] on the grid.
    pub fn signed(&self, bin: usize) -> i64 {
        debug_assert!(bin < self.total());
        if bin <= self.k2 {
            bin as i64
        } else {
            bin as i64 - self.total() as i64
        }
    }

    /// Forward nDFT of a length-`K` sample sequence.
    pub fn ndft(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(samples.len())?;
        Ok(ndft_raw(samples))
    }

    /// Inverse nDFT of a length-`K` coefficient sequence.
    pub fn indft(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(coeffs.len())?;
        Ok(indft_raw(coeffs))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.total() {
            return Err(CaceError::invalid(format!(
                "sequence length {len} does not match K = {}",
                self.total()
            )));
        }
        Ok(())
    }
}

/// Modular Kronecker delta: true iff `a = b (mod modulus)`.
pub fn mod_delta(a: i64, b: i64, modulus: i64) -> Result<bool> {
    if modulus < 1 {
        return Err(CaceError::invalid(format!(
            "modulus must be >= 1, got {modulus}"
        )));
    }
    Ok((a - b).rem_euclid(modulus) == 0)
}

static FFT_PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut plans = FFT_PLANS.lock().unwrap();
    plans
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// Forward nDFT without grid length checking; `K` is the slice length.
pub(crate) fn ndft_raw(samples: &[Complex64]) -> Vec<Complex64> {
    let k = samples.len();
    let mut buf = samples.to_vec();
    plan(k, false).process(&mut buf);
    let scale = 1.0 / k as f64;
    for c in &mut buf {
        *c *= scale;
    }
    buf
}

/// Inverse nDFT without grid length checking.
pub(crate) fn indft_raw(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    plan(buf.len(), true).process(&mut buf);
    buf
}

/// In-place forward nDFT on a mutable buffer.
pub(crate) fn ndft_in_place(buf: &mut [Complex64]) {
    let k = buf.len();
    plan(k, false).process(buf);
    let scale = 1.0 / k as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

/// In-place inverse nDFT on a mutable buffer.
pub(crate) fn indft_in_place(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
}
