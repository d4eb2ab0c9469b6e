//! Discrete-time simulation of one OFDM symbol through the analog-combining
//! receiver.
//!
//! The chain works at exactly `K` samples per symbol. The cyclic prefix is
//! never synthesized: with the prefix longer than the maximum delay the
//! linear channel is circular over the symbol, so it is applied
//! per-subcarrier in the frequency domain (a small-K time-domain convolution
//! oracle in the tests validates this shortcut). One symbol runs as
//!
//! 1. frequency frame: `sqrt(E_r)` on bin 0, data on the non-guard bins,
//! 2. per-antenna channel application and inverse nDFT to time samples,
//! 3. element-wise oscillator rotation `exp(-j theta[n])` (plus any mean
//!    frequency offset),
//! 4. additive white Gaussian noise,
//! 5. reference extraction with an ideal rectangular or truncated-sinc
//!    low-pass filter of half-width `g_hat` bins,
//! 6. conjugate combining of the filtered control signals with the
//!    unfiltered samples, and
//! 7. OFDM demodulation `Y_k = (T_s / K) sum_n y[n] exp(-j 2 pi k n / K)`.
//!
//! The wideband low-pass filter of the downconversion stage is modeled as
//! identity over the simulated band; it only suppresses out-of-band noise.
//! Data leakage through the reference filter is simulated faithfully even
//! though the analytical bounds neglect it.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

use crate::channel::{check_unit_norm, BetaTable, ChannelRealization, SteeredChannel};
use crate::error::{CaceError, Result};
use crate::exec;
use crate::phase_noise::{sample_trace, PhaseNoiseModel, PhaseNoiseTrace};
use crate::rng::{trial_rng, Substream};
use crate::spectrum::{self, SubcarrierGrid};
use nalgebra::DVector;

/// Reference-extraction filter implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Keep exactly the nDFT bins `{-g_hat, ..., g_hat}`.
    IdealRect,
    /// Circular convolution with `sin(2 pi g_hat t / T_s) / (pi t)`
    /// truncated to `|t| <= 2 T_s / g_hat`.
    TruncatedSinc,
}

/// All scalar link parameters for one symbol.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    grid: SubcarrierGrid,
    guard_half_width: usize,
    filter_half_width: usize,
    symbol_energy_j: f64,
    reference_energy_j: f64,
    noise_psd_j: f64,
    pn: PhaseNoiseModel,
    freq_offset_hz: f64,
    filter_mode: FilterMode,
}

impl SystemConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: SubcarrierGrid,
        guard_half_width: usize,
        filter_half_width: usize,
        symbol_energy_j: f64,
        reference_energy_j: f64,
        noise_psd_j: f64,
        pn: PhaseNoiseModel,
        freq_offset_hz: f64,
        filter_mode: FilterMode,
    ) -> Result<Self> {
        if filter_half_width == 0 || 2 * filter_half_width > guard_half_width {
            return Err(CaceError::invalid(format!(
                "filter half-width must satisfy 0 < g_hat <= g/2, got g_hat = {filter_half_width}, g = {guard_half_width}"
            )));
        }
        if guard_half_width >= grid.k1().min(grid.k2()) {
            return Err(CaceError::invalid(format!(
                "guard half-width {guard_half_width} must stay below min(K1, K2) = {}",
                grid.k1().min(grid.k2())
            )));
        }
        if !(symbol_energy_j > 0.0) {
            return Err(CaceError::invalid("symbol energy must be positive"));
        }
        if !(0.0..=symbol_energy_j).contains(&reference_energy_j) {
            return Err(CaceError::invalid(format!(
                "reference energy {reference_energy_j} outside [0, E_s = {symbol_energy_j}]"
            )));
        }
        if noise_psd_j < 0.0 {
            return Err(CaceError::invalid("noise PSD must be non-negative"));
        }
        pn.validate()?;
        Ok(Self {
            grid,
            guard_half_width,
            filter_half_width,
            symbol_energy_j,
            reference_energy_j,
            noise_psd_j,
            pn,
            freq_offset_hz,
            filter_mode,
        })
    }

    pub fn grid(&self) -> &SubcarrierGrid {
        &self.grid
    }

    pub fn guard_half_width(&self) -> usize {
        self.guard_half_width
    }

    pub fn filter_half_width(&self) -> usize {
        self.filter_half_width
    }

    pub fn symbol_energy_j(&self) -> f64 {
        self.symbol_energy_j
    }

    pub fn reference_energy_j(&self) -> f64 {
        self.reference_energy_j
    }

    pub fn noise_psd_j(&self) -> f64 {
        self.noise_psd_j
    }

    pub fn pn(&self) -> PhaseNoiseModel {
        self.pn
    }

    pub fn freq_offset_hz(&self) -> f64 {
        self.freq_offset_hz
    }

    pub fn filter_mode(&self) -> FilterMode {
        self.filter_mode
    }

    /// Size of the blanked set `|G| = 2g + 1`.
    pub fn guard_len(&self) -> usize {
        2 * self.guard_half_width + 1
    }

    /// Size of the filter support `|G_hat| = 2 g_hat + 1`.
    pub fn filter_len(&self) -> usize {
        2 * self.filter_half_width + 1
    }

    /// Number of data subcarriers `K - |G|`.
    pub fn data_len(&self) -> usize {
        self.grid.total() - self.guard_len()
    }

    /// Per-data-subcarrier energy `E_d = (E_s - E_r) / (K - |G|)`.
    pub fn data_energy_j(&self) -> f64 {
        (self.symbol_energy_j - self.reference_energy_j) / self.data_len() as f64
    }

    /// True when `k` carries data (outside the guard set).
    pub fn is_data(&self, k: i64) -> bool {
        k >= -(self.grid.k1() as i64)
            && k <= self.grid.k2() as i64
            && k.unsigned_abs() as usize > self.guard_half_width
    }

    /// Data subcarrier indices in ascending signed order.
    pub fn data_indices(&self) -> impl Iterator<Item = i64> + '_ {
        let g = self.guard_half_width as i64;
        self.grid.signed_indices().filter(move |&k| k.abs() > g)
    }

    /// Position of data subcarrier `k` within a [`TxSymbol`], if any.
    pub fn data_position(&self, k: i64) -> Option<usize> {
        if !self.is_data(k) {
            return None;
        }
        let k1 = self.grid.k1() as i64;
        let g = self.guard_half_width as i64;
        Some(if k < 0 {
            (k + k1) as usize
        } else {
            (k1 - g + (k - g) - 1) as usize
        })
    }

    /// Copy of this config with a different reference energy.
    pub fn with_reference_energy(&self, reference_energy_j: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.guard_half_width,
            self.filter_half_width,
            self.symbol_energy_j,
            reference_energy_j,
            self.noise_psd_j,
            self.pn,
            self.freq_offset_hz,
            self.filter_mode,
        )
    }

    /// Copy of this config with different guard and filter half-widths.
    pub fn with_widths(&self, guard_half_width: usize, filter_half_width: usize) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            guard_half_width,
            filter_half_width,
            self.symbol_energy_j,
            self.reference_energy_j,
            self.noise_psd_j,
            self.pn,
            self.freq_offset_hz,
            self.filter_mode,
        )
    }

    /// Copy of this config with a different noise PSD.
    pub fn with_noise_psd(&self, noise_psd_j: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.guard_half_width,
            self.filter_half_width,
            self.symbol_energy_j,
            self.reference_energy_j,
            noise_psd_j,
            self.pn,
            self.freq_offset_hz,
            self.filter_mode,
        )
    }
}

/// Constellation carried on the data subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constellation {
    /// Gray-mapped QPSK with `|x_k|^2 = E_d` exactly.
    Qpsk,
    /// Circularly symmetric Gaussian with `E{|x_k|^2} = E_d`.
    Gaussian,
}

/// Data symbols over the subcarriers `K \ G`, ascending signed order.
#[derive(Debug, Clone)]
pub struct TxSymbol {
    pub data: Vec<Complex64>,
    pub constellation: Constellation,
}

impl TxSymbol {
    pub fn random_qpsk(cfg: &SystemConfig, rng: &mut impl Rng) -> Self {
        let amp = (cfg.data_energy_j() / 2.0).sqrt();
        let data = (0..cfg.data_len())
            .map(|_| {
                let re = if rng.gen::<bool>() { amp } else { -amp };
                let im = if rng.gen::<bool>() { amp } else { -amp };
                Complex64::new(re, im)
            })
            .collect();
        Self {
            data,
            constellation: Constellation::Qpsk,
        }
    }

    pub fn random_gaussian(cfg: &SystemConfig, rng: &mut impl Rng) -> Self {
        let sigma = (cfg.data_energy_j() / 2.0).sqrt();
        let data = (0..cfg.data_len())
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * sigma, im * sigma)
            })
            .collect();
        Self {
            data,
            constellation: Constellation::Gaussian,
        }
    }

    /// All-zero data (reference tone only).
    pub fn silent(cfg: &SystemConfig) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); cfg.data_len()],
            constellation: Constellation::Gaussian,
        }
    }
}

/// `M_rx` per-antenna sample sequences of length `K`, antenna-contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaSignal {
    samples: usize,
    antennas: usize,
    data: Vec<Complex64>,
}

impl AntennaSignal {
    pub fn zeros(antennas: usize, samples: usize) -> Self {
        Self {
            samples,
            antennas,
            data: vec![Complex64::new(0.0, 0.0); antennas * samples],
        }
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn antenna(&self, a: usize) -> &[Complex64] {
        &self.data[a * self.samples..(a + 1) * self.samples]
    }

    pub fn antenna_mut(&mut self, a: usize) -> &mut [Complex64] {
        &mut self.data[a * self.samples..(a + 1) * self.samples]
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }
}

/// S/I/Z split of the demodulation outputs, bin order.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub signal: Vec<Complex64>,
    pub interference: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

/// Per-symbol demodulation outputs `Y_k` plus diagnostics.
#[derive(Debug, Clone)]
pub struct DemodFrame {
    /// `Y_k` in bin order.
    pub y: Vec<Complex64>,
    /// Ground-truth S/I/Z split, present when recording was enabled.
    pub decomposition: Option<Decomposition>,
    /// Fast-fading factor estimated from `Y_0`.
    pub fast_fading_estimate: f64,
    /// True fast-fading factor of the oscillator trace (offset included).
    pub fast_fading_true: f64,
}

impl DemodFrame {
    pub fn y_at(&self, grid: &SubcarrierGrid, k: i64) -> Complex64 {
        self.y[grid.bin(k)]
    }

    /// The S/I/Z split; an error when the symbol ran without recording.
    pub fn decomposition(&self) -> Result<&Decomposition> {
        self.decomposition
            .as_ref()
            .ok_or_else(|| CaceError::invalid("ground-truth recording was not enabled"))
    }
}

/// Frequency-domain frame of one symbol: `sqrt(E_r)` on bin 0, data symbols
/// on `K \ G`, zeros on the guard bins.
pub fn build_tx_frequency_frame(cfg: &SystemConfig, data: &TxSymbol) -> Result<Vec<Complex64>> {
    if data.data.len() != cfg.data_len() {
        return Err(CaceError::invalid(format!(
            "expected {} data symbols, got {}",
            cfg.data_len(),
            data.data.len()
        )));
    }
    let grid = cfg.grid();
    let mut frame = vec![Complex64::new(0.0, 0.0); grid.total()];
    frame[grid.bin(0)] = Complex64::new(cfg.reference_energy_j.sqrt(), 0.0);
    for (i, k) in cfg.data_indices().enumerate() {
        frame[grid.bin(k)] = data.data[i];
    }
    Ok(frame)
}

/// Per-subcarrier channel application: column `k` of the result is
/// `H(f_k) t frame[k] / sqrt(T_s)`, returned in the frequency domain.
pub fn apply_channel_freq(
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    frame: &[Complex64],
    grid: &SubcarrierGrid,
) -> Result<AntennaSignal> {
    let steered = SteeredChannel::new(chan, t)?;
    if frame.len() != grid.total() {
        return Err(CaceError::invalid("frame length does not match the grid"));
    }
    let k = grid.total();
    let m_rx = steered.m_rx();
    let scale = 1.0 / grid.symbol_duration_s().sqrt();
    let mut out = AntennaSignal::zeros(m_rx, k);
    for kk in grid.signed_indices() {
        let bin = grid.bin(kk);
        if frame[bin] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let h = steered.response(grid.subcarrier_frequency_hz(kk));
        let w = frame[bin] * scale;
        for a in 0..m_rx {
            out.antenna_mut(a)[bin] += h[a] * w;
        }
    }
    Ok(out)
}

/// Row-wise inverse nDFT: frequency-domain antenna signals to time samples.
pub fn freq_to_time(freq: &AntennaSignal) -> AntennaSignal {
    let mut out = freq.clone();
    for a in 0..out.antennas() {
        spectrum::indft_in_place(out.antenna_mut(a));
    }
    out
}

/// Element-wise oscillator rotation `exp(-j [theta[n] + 2 pi f_off n T_s/K])`
/// of per-antenna time samples.
pub fn apply_rx_oscillator(
    time: &AntennaSignal,
    trace: &PhaseNoiseTrace,
    freq_offset_hz: f64,
    grid: &SubcarrierGrid,
) -> Result<AntennaSignal> {
    if trace.len() != time.samples() {
        return Err(CaceError::invalid("trace length does not match sample count"));
    }
    let rot = rotation_table(trace, freq_offset_hz, grid);
    let mut out = time.clone();
    for a in 0..out.antennas() {
        for (s, r) in out.antenna_mut(a).iter_mut().zip(&rot) {
            *s *= r;
        }
    }
    Ok(out)
}

fn rotation_table(
    trace: &PhaseNoiseTrace,
    freq_offset_hz: f64,
    grid: &SubcarrierGrid,
) -> Vec<Complex64> {
    let k = trace.len() as f64;
    let step = TAU * freq_offset_hz * grid.symbol_duration_s() / k;
    trace
        .theta()
        .iter()
        .enumerate()
        .map(|(n, &th)| Complex64::from_polar(1.0, -(th + step * n as f64)))
        .collect()
}

/// Add circularly symmetric white Gaussian noise with per-sample complex
/// variance `K N_0 / T_s`, so the nDFT coefficients have covariance
/// `(N_0 / T_s) I` per bin.
pub fn add_awgn(
    time: &AntennaSignal,
    noise_psd_j: f64,
    grid: &SubcarrierGrid,
    rng: &mut impl Rng,
) -> AntennaSignal {
    let mut out = time.clone();
    if noise_psd_j == 0.0 {
        return out;
    }
    let sigma =
        (grid.total() as f64 * noise_psd_j / grid.symbol_duration_s() / 2.0).sqrt();
    for a in 0..out.antennas() {
        for s in out.antenna_mut(a) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex64::new(re * sigma, im * sigma);
        }
    }
    out
}

/// Spectrum of the truncated-sinc kernel: the unnormalized DFT of
/// `sin(2 pi g_hat m / K) / (pi m)` (with `2 g_hat / K` at `m = 0`) over
/// taps `|m| <= 2 K / g_hat`, placed circularly.
pub fn truncated_sinc_spectrum(g_hat: usize, k: usize) -> Vec<Complex64> {
    let half_taps = (2 * k) / g_hat;
    let mut kernel = vec![Complex64::new(0.0, 0.0); k];
    for m in -(half_taps as i64)..=(half_taps as i64) {
        let tap = if m == 0 {
            2.0 * g_hat as f64 / k as f64
        } else {
            (TAU * g_hat as f64 * m as f64 / k as f64).sin() / (std::f64::consts::PI * m as f64)
        };
        kernel[m.rem_euclid(k as i64) as usize] += Complex64::new(tap, 0.0);
    }
    let mut spec = spectrum::ndft_raw(&kernel);
    for c in &mut spec {
        *c *= k as f64;
    }
    spec
}

/// Extract the received reference: per-antenna narrowband low-pass filtering
/// keeping (IdealRect) or weighting (TruncatedSinc) the band
/// `{-g_hat, ..., g_hat}`.
pub fn extract_reference(time: &AntennaSignal, cfg: &SystemConfig) -> AntennaSignal {
    let spec = match cfg.filter_mode {
        FilterMode::IdealRect => None,
        FilterMode::TruncatedSinc => Some(truncated_sinc_spectrum(
            cfg.filter_half_width,
            cfg.grid.total(),
        )),
    };
    extract_reference_with(time, cfg, spec.as_deref())
}

/// Same as [`extract_reference`] but reusing a precomputed truncated-sinc
/// spectrum (ignored in IdealRect mode).
pub fn extract_reference_with(
    time: &AntennaSignal,
    cfg: &SystemConfig,
    sinc_spectrum: Option<&[Complex64]>,
) -> AntennaSignal {
    let grid = cfg.grid();
    let k = grid.total();
    let g_hat = cfg.filter_half_width as i64;
    let mut out = time.clone();
    for a in 0..out.antennas() {
        let row = out.antenna_mut(a);
        spectrum::ndft_in_place(row);
        match cfg.filter_mode {
            FilterMode::IdealRect => {
                for kk in grid.signed_indices() {
                    if kk.abs() > g_hat {
                        row[grid.bin(kk)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
            FilterMode::TruncatedSinc => {
                let spec = sinc_spectrum.expect("TruncatedSinc requires a kernel spectrum");
                debug_assert_eq!(spec.len(), k);
                for (c, h) in row.iter_mut().zip(spec) {
                    *c *= h;
                }
            }
        }
        spectrum::indft_in_place(row);
    }
    out
}

/// Analog combining and sampling: `y[n] = control[n]^H rx[n]`, summing the
/// conjugate-weighted antenna samples.
pub fn combine_and_sample(rx: &AntennaSignal, control: &AntennaSignal) -> Vec<Complex64> {
    debug_assert_eq!(rx.antennas(), control.antennas());
    debug_assert_eq!(rx.samples(), control.samples());
    let mut y = vec![Complex64::new(0.0, 0.0); rx.samples()];
    for a in 0..rx.antennas() {
        let r = rx.antenna(a);
        let c = control.antenna(a);
        for ((acc, &rv), &cv) in y.iter_mut().zip(r).zip(c) {
            *acc += cv.conj() * rv;
        }
    }
    y
}

/// OFDM demodulation `Y_k = T_s * ndft(y)[k]`.
pub fn demodulate(y: &[Complex64], grid: &SubcarrierGrid) -> Result<Vec<Complex64>> {
    if y.len() != grid.total() {
        return Err(CaceError::invalid("sample count does not match the grid"));
    }
    let mut out = spectrum::ndft_raw(y);
    let ts = grid.symbol_duration_s();
    for c in &mut out {
        *c *= ts;
    }
    Ok(out)
}

/// Estimate the per-symbol fast-fading factor from the reference bin output:
/// `(Re{Y_0} - M_rx |G_hat| N_0) / (M_rx beta_00 E_r)`, clamped to `[0, 1]`.
pub fn estimate_fast_fading(
    y0: Complex64,
    beta00: f64,
    m_rx: usize,
    cfg: &SystemConfig,
) -> Result<f64> {
    let denom = m_rx as f64 * beta00 * cfg.reference_energy_j;
    if !(denom > 0.0) {
        return Err(CaceError::invalid(
            "fast-fading estimator needs beta_00 > 0 and E_r > 0",
        ));
    }
    let bias = m_rx as f64 * cfg.filter_len() as f64 * cfg.noise_psd_j;
    Ok(((y0.re - bias) / denom).clamp(0.0, 1.0))
}

/// One configured link: channel steered by the TX beamformer plus the
/// scalar parameters.
///
/// The per-symbol engine exploits the rank-`L` structure of the steered
/// channel: every antenna's noiseless signal is a fixed linear combination
/// (the RX steering matrix `A`) of `L` scalar path signals, so the combining
/// output decomposes into a signal-signal term through the Gram matrix
/// `A^H A`, two signal-noise terms through the `L`-dimensional projected
/// noise `A^H w`, and the per-antenna noise-noise term. Only the last one
/// touches all `M_rx` antennas. The result is sample-exact equal to running
/// the generic per-antenna operations.
#[derive(Debug, Clone)]
pub struct LinkSimulator {
    cfg: SystemConfig,
    /// RX steering matrix, `rx_steer[l * m_rx + a] = [a_rx(l)]_a`.
    rx_steer: Vec<Complex64>,
    /// Gram matrix `A^H A`, `gram[l1 * n_paths + l2]`.
    gram: Vec<Complex64>,
    /// Steered per-bin path coefficients `c_l(k)`, `path_coef[bin * n_paths + l]`.
    path_coef: Vec<Complex64>,
    m_rx: usize,
    n_paths: usize,
    sinc_spectrum: Option<Vec<Complex64>>,
    betas: BetaTable,
}

impl LinkSimulator {
    pub fn new(cfg: SystemConfig, chan: &ChannelRealization, t: &DVector<Complex64>) -> Result<Self> {
        check_unit_norm(t)?;
        let grid = cfg.grid();
        let k = grid.total();
        let m_rx = chan.rx_array().elements();
        let n_paths = chan.mpcs().len();

        let mut path_gains = Vec::with_capacity(n_paths);
        let mut path_delays_s = Vec::with_capacity(n_paths);
        let mut rx_steer = Vec::with_capacity(n_paths * m_rx);
        for mpc in chan.mpcs() {
            let a_tx = chan.tx_response(mpc);
            path_gains.push(mpc.amplitude * a_tx.dotc(t));
            path_delays_s.push(mpc.delay_s);
            rx_steer.extend_from_slice(chan.rx_response(mpc).as_slice());
        }
        let mut gram = vec![Complex64::new(0.0, 0.0); n_paths * n_paths];
        for l1 in 0..n_paths {
            for l2 in 0..n_paths {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..m_rx {
                    acc += rx_steer[l1 * m_rx + a].conj() * rx_steer[l2 * m_rx + a];
                }
                gram[l1 * n_paths + l2] = acc;
            }
        }
        let carrier_hz = chan.carrier_frequency_hz();
        let mut path_coef = vec![Complex64::new(0.0, 0.0); k * n_paths];
        for kk in grid.signed_indices() {
            let bin = grid.bin(kk);
            let f = grid.subcarrier_frequency_hz(kk);
            for (l, (&gain, &tau)) in path_gains.iter().zip(&path_delays_s).enumerate() {
                let phase = -TAU * (carrier_hz + f) * tau;
                path_coef[bin * n_paths + l] = gain * Complex64::from_polar(1.0, phase);
            }
        }
        let sinc_spectrum = match cfg.filter_mode() {
            FilterMode::IdealRect => None,
            FilterMode::TruncatedSinc => {
                Some(truncated_sinc_spectrum(cfg.filter_half_width(), k))
            }
        };
        let betas = BetaTable::from_channel(chan, t, grid)?;
        Ok(Self {
            cfg,
            rx_steer,
            gram,
            path_coef,
            m_rx,
            n_paths,
            sinc_spectrum,
            betas,
        })
    }

    pub fn cfg(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn betas(&self) -> &BetaTable {
        &self.betas
    }

    pub fn m_rx(&self) -> usize {
        self.m_rx
    }

    /// Narrowband filter of one scalar sample sequence, in place.
    fn filter_vec(&self, buf: &mut [Complex64]) {
        let grid = self.cfg.grid();
        let g_hat = self.cfg.filter_half_width() as i64;
        spectrum::ndft_in_place(buf);
        match self.cfg.filter_mode() {
            FilterMode::IdealRect => {
                for kk in grid.signed_indices() {
                    if kk.abs() > g_hat {
                        buf[grid.bin(kk)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
            FilterMode::TruncatedSinc => {
                let spec = self.sinc_spectrum.as_ref().expect("cached at build");
                for (c, h) in buf.iter_mut().zip(spec) {
                    *c *= h;
                }
            }
        }
        spectrum::indft_in_place(buf);
    }

    /// Run one symbol through the chain.
    pub fn run_symbol(
        &self,
        tx: &TxSymbol,
        trace: &PhaseNoiseTrace,
        noise_rng: &mut impl Rng,
    ) -> Result<DemodFrame> {
        self.run_internal(tx, trace, noise_rng, false)
    }

    /// Run one symbol and record the ground-truth S/I/Z split.
    pub fn run_symbol_decomposed(
        &self,
        tx: &TxSymbol,
        trace: &PhaseNoiseTrace,
        noise_rng: &mut impl Rng,
    ) -> Result<DemodFrame> {
        self.run_internal(tx, trace, noise_rng, true)
    }

    fn run_internal(
        &self,
        tx: &TxSymbol,
        trace: &PhaseNoiseTrace,
        noise_rng: &mut impl Rng,
        decompose: bool,
    ) -> Result<DemodFrame> {
        let cfg = &self.cfg;
        let grid = cfg.grid();
        let k = grid.total();
        let l = self.n_paths;
        let zero = Complex64::new(0.0, 0.0);
        if trace.len() != k {
            return Err(CaceError::invalid("trace length does not match the grid"));
        }
        let frame = build_tx_frequency_frame(cfg, tx)?;
        let rot = rotation_table(trace, cfg.freq_offset_hz(), grid);

        // Rotated per-path signals v_l and their filtered versions vf_l.
        let scale = 1.0 / grid.symbol_duration_s().sqrt();
        let mut v = vec![zero; l * k];
        let mut vf = vec![zero; l * k];
        for li in 0..l {
            let row = &mut v[li * k..(li + 1) * k];
            for (bin, r) in row.iter_mut().enumerate() {
                *r = self.path_coef[bin * l + li] * frame[bin] * scale;
            }
            spectrum::indft_in_place(row);
            for (s, r) in row.iter_mut().zip(&rot) {
                *s *= r;
            }
            vf[li * k..(li + 1) * k].copy_from_slice(row);
            self.filter_vec(&mut vf[li * k..(li + 1) * k]);
        }

        // Signal-signal term through the Gram matrix.
        let mut t1 = vec![zero; k];
        for l1 in 0..l {
            for l2 in 0..l {
                let g = self.gram[l1 * l + l2];
                let a = &vf[l1 * k..(l1 + 1) * k];
                let b = &v[l2 * k..(l2 + 1) * k];
                for ((acc, &x), &y) in t1.iter_mut().zip(a).zip(b) {
                    *acc += g * x.conj() * y;
                }
            }
        }

        // Noise paths: projected noise through the steering matrix plus the
        // per-antenna noise-noise products.
        let mut y_samples = t1.clone();
        if cfg.noise_psd_j() > 0.0 {
            let noise = add_awgn(&AntennaSignal::zeros(self.m_rx, k), cfg.noise_psd_j(), grid, noise_rng);
            let mut projected = vec![zero; l * k];
            for a in 0..self.m_rx {
                let w = noise.antenna(a);
                for li in 0..l {
                    let steer = self.rx_steer[li * self.m_rx + a].conj();
                    let row = &mut projected[li * k..(li + 1) * k];
                    for (p, &s) in row.iter_mut().zip(w) {
                        *p += steer * s;
                    }
                }
            }
            let mut scratch = vec![zero; k];
            for li in 0..l {
                let p = &projected[li * k..(li + 1) * k];
                // Signal-control applied to noise: conj(vf_l) * p_l.
                let a = &vf[li * k..(li + 1) * k];
                for ((acc, &x), &pw) in y_samples.iter_mut().zip(a).zip(p) {
                    *acc += x.conj() * pw;
                }
                // Noise-control applied to the signal: conj(F{p_l}) * v_l.
                scratch.copy_from_slice(p);
                self.filter_vec(&mut scratch);
                let b = &v[li * k..(li + 1) * k];
                for ((acc, &f), &s) in y_samples.iter_mut().zip(&scratch).zip(b) {
                    *acc += f.conj() * s;
                }
            }
            // Noise-control applied to noise, antenna by antenna.
            for a in 0..self.m_rx {
                let w = noise.antenna(a);
                scratch.copy_from_slice(w);
                self.filter_vec(&mut scratch);
                for ((acc, &f), &s) in y_samples.iter_mut().zip(&scratch).zip(w) {
                    *acc += f.conj() * s;
                }
            }
        }
        let y = demodulate(&y_samples, grid)?;

        // True fast-fading factor of the effective (offset-inclusive) trace.
        let omega_tot = spectrum::ndft_raw(&rot);
        let mut fast_true = 0.0;
        for kd in -(cfg.filter_half_width() as i64)..=(cfg.filter_half_width() as i64) {
            fast_true += omega_tot[grid.bin(kd)].norm_sqr();
        }
        let fast_est = estimate_fast_fading(y[grid.bin(0)], self.betas.beta_kk(0), self.m_rx, cfg)
            .unwrap_or(fast_true);

        let decomposition = if decompose {
            // With the control taken from the noiseless signal the chain is
            // linear in the direct input; the all-signal noiseless output is
            // exactly the Gram term.
            let t_full = demodulate(&t1, grid)?;

            // Per-path correlation e_l = (sqrt(T_s)/K) sum_n rot[n] conj(vf_l[n]);
            // the bin-k direct contribution is frame[k] * sum e_l Gram c_l'(k).
            let es = grid.symbol_duration_s().sqrt() / k as f64;
            let mut e = vec![zero; l];
            for (li, ev) in e.iter_mut().enumerate() {
                let a = &vf[li * k..(li + 1) * k];
                let mut acc = zero;
                for (&r, &x) in rot.iter().zip(a) {
                    acc += r * x.conj();
                }
                *ev = acc * es;
            }
            let mut signal_part = vec![zero; k];
            for kk in cfg.data_indices() {
                let bin = grid.bin(kk);
                let mut gain = zero;
                for l1 in 0..l {
                    for l2 in 0..l {
                        gain += e[l1] * self.gram[l1 * l + l2] * self.path_coef[bin * l + l2];
                    }
                }
                signal_part[bin] = frame[bin] * gain;
            }
            let interference: Vec<Complex64> = t_full
                .iter()
                .zip(&signal_part)
                .map(|(t, s)| t - s)
                .collect();
            let noise: Vec<Complex64> = y.iter().zip(&t_full).map(|(y, t)| y - t).collect();
            Some(Decomposition {
                signal: signal_part,
                interference,
                noise,
            })
        } else {
            None
        };

        Ok(DemodFrame {
            y,
            decomposition,
            fast_fading_estimate: fast_est,
            fast_fading_true: fast_true,
        })
    }
}

/// Source of the fast-fading factor used by the coherent detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingKnowledge {
    /// Ground truth from the oscillator trace.
    Perfect,
    /// Estimate from the reference bin output `Y_0`.
    Estimated,
}

/// Symbol-error-rate estimate for one tracked subcarrier.
#[derive(Debug, Clone)]
pub struct SerEstimate {
    pub k: i64,
    pub symbols: u64,
    pub errors: u64,
    pub ser: f64,
    /// 95% Wilson score interval.
    pub wilson: (f64, f64),
}

/// Wilson score interval for a binomial proportion at `z = 1.96`.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Monte Carlo QPSK round trip: transmit random Gray-mapped QPSK symbols,
/// run the chain, equalize `Y_k / (M_rx beta_0k sqrt(E_r) F)` and slice.
/// Returns per-subcarrier SER estimates for the tracked indices.
pub fn qpsk_roundtrip(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    n_symbols: u64,
    master_seed: u64,
    tracked: &[i64],
    fading: FadingKnowledge,
) -> Result<Vec<SerEstimate>> {
    if tracked.is_empty() {
        return Err(CaceError::invalid("tracked subcarrier set must be non-empty"));
    }
    for &k in tracked {
        if !cfg.is_data(k) {
            return Err(CaceError::invalid(format!(
                "tracked subcarrier {k} is not a data subcarrier"
            )));
        }
    }
    let sim = LinkSimulator::new(cfg.clone(), chan, t)?;
    let grid = cfg.grid();
    let positions: Vec<usize> = tracked
        .iter()
        .map(|&k| cfg.data_position(k).expect("validated"))
        .collect();

    let errors = exec::accumulate_trials(
        n_symbols,
        || vec![0u64; tracked.len()],
        |acc: &mut Vec<u64>, trial| {
            let mut pn_rng = trial_rng(master_seed, trial, Substream::PhaseNoise);
            let mut noise_rng = trial_rng(master_seed, trial, Substream::ChannelNoise);
            let mut data_rng = trial_rng(master_seed, trial, Substream::Data);
            let trace = sample_trace(&cfg.pn(), grid, &mut pn_rng).expect("validated model");
            let tx = TxSymbol::random_qpsk(cfg, &mut data_rng);
            let frame = sim
                .run_symbol(&tx, &trace, &mut noise_rng)
                .expect("validated config");
            let f = match fading {
                FadingKnowledge::Perfect => frame.fast_fading_true,
                FadingKnowledge::Estimated => frame.fast_fading_estimate,
            };
            for (i, (&k, &pos)) in tracked.iter().zip(&positions).enumerate() {
                let denom = sim.betas().beta_0k(k)
                    * (sim.m_rx() as f64 * cfg.reference_energy_j().sqrt() * f);
                let eq = frame.y_at(grid, k) / denom;
                let sent = tx.data[pos];
                let wrong =
                    (eq.re > 0.0) != (sent.re > 0.0) || (eq.im > 0.0) != (sent.im > 0.0);
                if wrong {
                    acc[i] += 1;
                }
            }
        },
        |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += y;
            }
            a
        },
    );

    Ok(tracked
        .iter()
        .zip(&errors)
        .map(|(&k, &e)| SerEstimate {
            k,
            symbols: n_symbols,
            errors: e,
            ser: e as f64 / n_symbols as f64,
            wilson: wilson_interval(e, n_symbols),
        })
        .collect())
}
