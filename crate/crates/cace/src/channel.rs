//! Multipath MIMO channel model and spatial correlation coefficients.
//!
//! The channel is a finite sum of discrete multipath components (MPCs), each
//! with a complex amplitude, a delay and planar-array angles at both ends:
//!
//! ```text
//! H(f) = sum_l alpha_l a_rx(l) a_tx(l)^H exp(-j 2 pi (f_c + f) tau_l)
//! ```
//!
//! Array responses are frequency independent (no beam squint) and the cyclic
//! prefix is assumed longer than the maximum delay, so the channel acts
//! per-subcarrier. The `beta` coefficients
//! `beta(k1, k2) = t^H H(f_k1)^H H(f_k2) t / M_rx` are the effective SISO
//! gains after reference-tone combining and drive all capacity bounds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, TAU};

use crate::error::{CaceError, Result};
use crate::rng::{trial_rng, Substream};
use crate::spectrum::SubcarrierGrid;

/// Uniform planar array: `m_h` horizontal by `m_v` vertical elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub m_h: usize,
    pub m_v: usize,
    pub spacing_h_m: f64,
    pub spacing_v_m: f64,
    pub wavelength_m: f64,
}

impl ArrayGeometry {
    pub fn new(
        m_h: usize,
        m_v: usize,
        spacing_h_m: f64,
        spacing_v_m: f64,
        wavelength_m: f64,
    ) -> Result<Self> {
        if m_h < 1 || m_v < 1 {
            return Err(CaceError::invalid("array needs at least one element per axis"));
        }
        if !(spacing_h_m > 0.0 && spacing_v_m > 0.0 && wavelength_m > 0.0) {
            return Err(CaceError::invalid(
                "array spacings and wavelength must be positive",
            ));
        }
        Ok(Self {
            m_h,
            m_v,
            spacing_h_m,
            spacing_v_m,
            wavelength_m,
        })
    }

    /// Half-wavelength spaced array for a given carrier frequency.
    pub fn half_wavelength(m_h: usize, m_v: usize, carrier_frequency_hz: f64) -> Result<Self> {
        let lambda = 299_792_458.0 / carrier_frequency_hz;
        Self::new(m_h, m_v, lambda / 2.0, lambda / 2.0, lambda)
    }

    /// Total element count `M = m_h * m_v`.
    pub fn elements(&self) -> usize {
        self.m_h * self.m_v
    }
}

/// One discrete propagation path.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathComponent {
    pub amplitude: Complex64,
    pub delay_s: f64,
    pub aoa_azimuth_rad: f64,
    pub aoa_elevation_rad: f64,
    pub aod_azimuth_rad: f64,
    pub aod_elevation_rad: f64,
}

/// A full channel realization: MPC list plus both array geometries.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    mpcs: Vec<MultipathComponent>,
    tx_array: ArrayGeometry,
    rx_array: ArrayGeometry,
    carrier_frequency_hz: f64,
    cyclic_prefix_s: f64,
}

impl ChannelRealization {
    pub fn new(
        mpcs: Vec<MultipathComponent>,
        tx_array: ArrayGeometry,
        rx_array: ArrayGeometry,
        carrier_frequency_hz: f64,
        cyclic_prefix_s: f64,
    ) -> Result<Self> {
        if mpcs.is_empty() {
            return Err(CaceError::invalid("channel needs at least one MPC"));
        }
        if !(carrier_frequency_hz > 0.0) {
            return Err(CaceError::invalid("carrier frequency must be positive"));
        }
        for (i, mpc) in mpcs.iter().enumerate() {
            if mpc.delay_s < 0.0 {
                return Err(CaceError::invalid(format!("MPC {i} has negative delay")));
            }
            if mpc.delay_s >= cyclic_prefix_s {
                return Err(CaceError::invalid(format!(
                    "MPC {i} delay {} s reaches the cyclic prefix {} s",
                    mpc.delay_s, cyclic_prefix_s
                )));
            }
        }
        Ok(Self {
            mpcs,
            tx_array,
            rx_array,
            carrier_frequency_hz,
            cyclic_prefix_s,
        })
    }

    pub fn mpcs(&self) -> &[MultipathComponent] {
        &self.mpcs
    }

    pub fn tx_array(&self) -> &ArrayGeometry {
        &self.tx_array
    }

    pub fn rx_array(&self) -> &ArrayGeometry {
        &self.rx_array
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        self.carrier_frequency_hz
    }

    pub fn cyclic_prefix_s(&self) -> f64 {
        self.cyclic_prefix_s
    }

    pub fn rx_response(&self, mpc: &MultipathComponent) -> DVector<Complex64> {
        array_response(&self.rx_array, mpc.aoa_azimuth_rad, mpc.aoa_elevation_rad)
    }

    pub fn tx_response(&self, mpc: &MultipathComponent) -> DVector<Complex64> {
        array_response(&self.tx_array, mpc.aod_azimuth_rad, mpc.aod_elevation_rad)
    }
}

/// Planar-array steering vector. Element `m_v * h + (v - 1)` for horizontal
/// index `h in {0..m_h-1}` and vertical index `v in {1..m_v}` has unit
/// magnitude and phase
/// `2 pi [dH h sin(azi) sin(ele) + dV (v-1) cos(ele)] / lambda`.
pub fn array_response(
    geometry: &ArrayGeometry,
    azimuth_rad: f64,
    elevation_rad: f64,
) -> DVector<Complex64> {
    let horiz = geometry.spacing_h_m * azimuth_rad.sin() * elevation_rad.sin();
    let vert = geometry.spacing_v_m * elevation_rad.cos();
    let mut out = DVector::from_element(geometry.elements(), Complex64::new(0.0, 0.0));
    for h in 0..geometry.m_h {
        for v in 1..=geometry.m_v {
            let phase =
                TAU * (horiz * h as f64 + vert * (v - 1) as f64) / geometry.wavelength_m;
            out[geometry.m_v * h + (v - 1)] = Complex64::from_polar(1.0, phase);
        }
    }
    out
}

/// Frequency response `H(f)` at offset `f` from the carrier, as an
/// `M_rx x M_tx` matrix.
pub fn freq_response(chan: &ChannelRealization, freq_offset_hz: f64) -> DMatrix<Complex64> {
    let m_rx = chan.rx_array.elements();
    let m_tx = chan.tx_array.elements();
    let mut out = DMatrix::from_element(m_rx, m_tx, Complex64::new(0.0, 0.0));
    for mpc in &chan.mpcs {
        let phase = -TAU * (chan.carrier_frequency_hz + freq_offset_hz) * mpc.delay_s;
        let scale = mpc.amplitude * Complex64::from_polar(1.0, phase);
        let a_rx = chan.rx_response(mpc);
        let a_tx = chan.tx_response(mpc);
        out += (a_rx * a_tx.adjoint()) * scale;
    }
    out
}

/// Channel pre-multiplied by a fixed TX beamformer: evaluates `H(f) t`
/// cheaply for many frequencies.
#[derive(Debug, Clone)]
pub struct SteeredChannel {
    /// Per-MPC scalar `alpha_l * (a_tx(l)^H t)`.
    gains: Vec<Complex64>,
    delays_s: Vec<f64>,
    rx_responses: Vec<DVector<Complex64>>,
    carrier_frequency_hz: f64,
    m_rx: usize,
}

impl SteeredChannel {
    pub fn new(chan: &ChannelRealization, t: &DVector<Complex64>) -> Result<Self> {
        check_unit_norm(t)?;
        if t.len() != chan.tx_array.elements() {
            return Err(CaceError::invalid("beamformer length does not match TX array"));
        }
        let mut gains = Vec::with_capacity(chan.mpcs.len());
        let mut delays_s = Vec::with_capacity(chan.mpcs.len());
        let mut rx_responses = Vec::with_capacity(chan.mpcs.len());
        for mpc in &chan.mpcs {
            let a_tx = chan.tx_response(mpc);
            gains.push(mpc.amplitude * a_tx.dotc(t));
            delays_s.push(mpc.delay_s);
            rx_responses.push(chan.rx_response(mpc));
        }
        Ok(Self {
            gains,
            delays_s,
            rx_responses,
            carrier_frequency_hz: chan.carrier_frequency_hz,
            m_rx: chan.rx_array.elements(),
        })
    }

    pub fn m_rx(&self) -> usize {
        self.m_rx
    }

    /// `H(f) t` at offset `f` from the carrier.
    pub fn response(&self, freq_offset_hz: f64) -> DVector<Complex64> {
        let mut out = DVector::from_element(self.m_rx, Complex64::new(0.0, 0.0));
        for ((gain, delay), a_rx) in self
            .gains
            .iter()
            .zip(&self.delays_s)
            .zip(&self.rx_responses)
        {
            let phase = -TAU * (self.carrier_frequency_hz + freq_offset_hz) * delay;
            let scale = gain * Complex64::from_polar(1.0, phase);
            out.axpy(scale, a_rx, Complex64::new(1.0, 0.0));
        }
        out
    }

    /// Sum of per-MPC steered powers `sum_l |alpha_l|^2 |a_tx(l)^H t|^2`,
    /// the orthogonal-array limit of every diagonal `beta(k, k)`.
    pub fn bar_beta(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum()
    }
}

/// Spatial correlation `beta(k1, k2) = t^H H(f_k1)^H H(f_k2) t / M_rx`.
pub fn beta(
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    k1: i64,
    k2: i64,
    grid: &SubcarrierGrid,
) -> Result<Complex64> {
    let steered = SteeredChannel::new(chan, t)?;
    Ok(beta_steered(&steered, k1, k2, grid))
}

fn beta_steered(steered: &SteeredChannel, k1: i64, k2: i64, grid: &SubcarrierGrid) -> Complex64 {
    let h1 = steered.response(grid.subcarrier_frequency_hz(k1));
    let h2 = steered.response(grid.subcarrier_frequency_hz(k2));
    let raw = h1.dotc(&h2) / steered.m_rx as f64;
    if k1 == k2 {
        // Quadratic form: analytically real, clamp the rounding residue.
        debug_assert!(raw.im.abs() <= 1e-12 * raw.re.abs().max(f64::MIN_POSITIVE));
        Complex64::new(raw.re, 0.0)
    } else {
        raw
    }
}

/// Closed-form `beta(k1, k2)` for channels whose RX steering vectors are
/// mutually orthogonal: `sum_l p_l exp(j 2 pi (f_k1 - f_k2) tau_l)` where
/// `p_l = |alpha_l|^2 |a_tx(l)^H t|^2`. For `k1 = k2` this is the total
/// steered power, independent of `k1`.
pub fn orthogonal_beta(
    mpc_gains: &[f64],
    delays_s: &[f64],
    k1: i64,
    k2: i64,
    grid: &SubcarrierGrid,
) -> Complex64 {
    debug_assert_eq!(mpc_gains.len(), delays_s.len());
    let df = grid.subcarrier_frequency_hz(k1) - grid.subcarrier_frequency_hz(k2);
    let mut acc = Complex64::new(0.0, 0.0);
    for (&p, &tau) in mpc_gains.iter().zip(delays_s) {
        acc += Complex64::from_polar(p, TAU * df * tau);
    }
    acc
}

/// The beta coefficients a link evaluation needs: the row `beta(0, k)`, the
/// diagonal `beta(k, k)`, their maximum and the orthogonal-limit total.
/// Only the row and the diagonal are kept; the full `K x K` table never
/// materializes.
#[derive(Debug, Clone)]
pub struct BetaTable {
    row0: Vec<Complex64>,
    diag: Vec<f64>,
    beta_max: f64,
    bar_beta: f64,
    grid: SubcarrierGrid,
    m_rx: usize,
}

impl BetaTable {
    /// Evaluate the table from an explicit channel and TX beamformer.
    pub fn from_channel(
        chan: &ChannelRealization,
        t: &DVector<Complex64>,
        grid: &SubcarrierGrid,
    ) -> Result<Self> {
        let steered = SteeredChannel::new(chan, t)?;
        let k = grid.total();
        let h0 = steered.response(0.0);
        let m_rx = steered.m_rx as f64;
        let mut row0 = vec![Complex64::new(0.0, 0.0); k];
        let mut diag = vec![0.0; k];
        for kk in grid.signed_indices() {
            let h = steered.response(grid.subcarrier_frequency_hz(kk));
            let bin = grid.bin(kk);
            row0[bin] = h0.dotc(&h) / m_rx;
            diag[bin] = h.norm_squared() / m_rx;
        }
        let beta_max = diag.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            row0,
            diag,
            beta_max,
            bar_beta: steered.bar_beta(),
            grid: grid.clone(),
            m_rx: steered.m_rx,
        })
    }

    /// Build the table from the orthogonal-array closed form, bypassing any
    /// explicit geometry. `mpc_gains[l] = |alpha_l|^2 |a_tx(l)^H t|^2`.
    pub fn from_orthogonal_gains(
        mpc_gains: &[f64],
        delays_s: &[f64],
        m_rx: usize,
        grid: &SubcarrierGrid,
    ) -> Result<Self> {
        if mpc_gains.len() != delays_s.len() || mpc_gains.is_empty() {
            return Err(CaceError::invalid("gains and delays must pair up"));
        }
        if mpc_gains.iter().any(|&p| p < 0.0) {
            return Err(CaceError::invalid("MPC gains must be non-negative"));
        }
        let bar_beta: f64 = mpc_gains.iter().sum();
        let k = grid.total();
        let mut row0 = vec![Complex64::new(0.0, 0.0); k];
        let diag = vec![bar_beta; k];
        for kk in grid.signed_indices() {
            row0[grid.bin(kk)] = orthogonal_beta(mpc_gains, delays_s, 0, kk, grid);
        }
        Ok(Self {
            row0,
            diag,
            beta_max: bar_beta,
            bar_beta,
            grid: grid.clone(),
            m_rx,
        })
    }

    pub fn beta_0k(&self, k: i64) -> Complex64 {
        self.row0[self.grid.bin(k)]
    }

    pub fn beta_kk(&self, k: i64) -> f64 {
        self.diag[self.grid.bin(k)]
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn bar_beta(&self) -> f64 {
        self.bar_beta
    }

    pub fn m_rx(&self) -> usize {
        self.m_rx
    }

    pub fn grid(&self) -> &SubcarrierGrid {
        &self.grid
    }
}

/// TX beamformer matched to the strongest MPC: `a_tx(l*) / sqrt(M_tx)` with
/// `l* = argmax_l |alpha_l|`, ties broken by the lowest index.
pub fn tx_beamformer_strongest_mpc(chan: &ChannelRealization) -> DVector<Complex64> {
    let mut best = 0usize;
    for (i, mpc) in chan.mpcs.iter().enumerate() {
        if mpc.amplitude.norm() > chan.mpcs[best].amplitude.norm() {
            best = i;
        }
    }
    let a_tx = chan.tx_response(&chan.mpcs[best]);
    let scale = 1.0 / (chan.tx_array.elements() as f64).sqrt();
    a_tx.map(|v| v * scale)
}

/// Perfect-rCSI digital baseline: the principal eigenvector of the effective
/// RX correlation matrix `R = (1/K) sum_k H(f_k) t t^H H(f_k)^H`. The phase
/// is fixed so the largest-magnitude entry is real positive.
pub fn digital_ce_rx_beamformer(
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    grid: &SubcarrierGrid,
) -> Result<DVector<Complex64>> {
    let steered = SteeredChannel::new(chan, t)?;
    let r = rx_correlation_matrix(&steered, grid);
    let eig = r
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| CaceError::numeric("RX correlation eigendecomposition failed"))?;
    let mut best = 0usize;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut w: DVector<Complex64> = eig.eigenvectors.column(best).into_owned();
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(CaceError::numeric("degenerate principal eigenvector"));
    }
    w /= Complex64::new(norm, 0.0);
    // Deterministic phase: largest-magnitude entry real positive.
    let mut anchor = 0usize;
    for i in 1..w.len() {
        if w[i].norm_sqr() > w[anchor].norm_sqr() {
            anchor = i;
        }
    }
    let rot = (w[anchor] / w[anchor].norm()).conj();
    Ok(w.map(|v| v * rot))
}

/// Effective RX correlation matrix `(1/K) sum_k (H(f_k) t)(H(f_k) t)^H`.
pub fn rx_correlation_matrix(
    steered: &SteeredChannel,
    grid: &SubcarrierGrid,
) -> DMatrix<Complex64> {
    let m = steered.m_rx;
    let mut r = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
    for kk in grid.signed_indices() {
        let h = steered.response(grid.subcarrier_frequency_hz(kk));
        r.gerc(Complex64::new(1.0, 0.0), &h, &h, Complex64::new(1.0, 0.0));
    }
    r / Complex64::new(grid.total() as f64, 0.0)
}

/// Simplified random clustered channel: `l_resolvable` clusters, each split
/// into `subpaths_per_cluster` sub-paths with small delay and angle jitter.
/// Cluster delays are uniform in `[0, 0.8 T_cp]`, gains are complex Gaussian
/// and the total power is normalized to one. Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn random_clustered_channel(
    seed: u64,
    l_resolvable: usize,
    subpaths_per_cluster: usize,
    delay_spread_s: f64,
    angle_spread_rad: f64,
    tx_array: ArrayGeometry,
    rx_array: ArrayGeometry,
    carrier_frequency_hz: f64,
    cyclic_prefix_s: f64,
) -> Result<ChannelRealization> {
    if l_resolvable < 1 || subpaths_per_cluster < 1 {
        return Err(CaceError::invalid("cluster and subpath counts must be >= 1"));
    }
    let mut rng = trial_rng(seed, 0, Substream::Channel);
    let mut mpcs = Vec::with_capacity(l_resolvable * subpaths_per_cluster);
    for _ in 0..l_resolvable {
        let delay_c = rng.gen::<f64>() * 0.8 * cyclic_prefix_s;
        let aoa_azi = rng.gen_range(-PI..PI);
        let aoa_ele = rng.gen_range(PI / 4.0..3.0 * PI / 4.0);
        let aod_azi = rng.gen_range(-PI / 2.0..PI / 2.0);
        let aod_ele = rng.gen_range(PI / 4.0..3.0 * PI / 4.0);
        let gain_c = complex_gaussian(&mut rng);
        let subpath_scale = 1.0 / (subpaths_per_cluster as f64).sqrt();
        for _ in 0..subpaths_per_cluster {
            let amplitude = gain_c * complex_gaussian(&mut rng) * subpath_scale;
            let delay = (delay_c + rng.gen_range(-delay_spread_s..=delay_spread_s))
                .clamp(0.0, 0.9 * cyclic_prefix_s);
            let jitter = |rng: &mut rand_chacha::ChaCha8Rng| {
                rng.gen_range(-angle_spread_rad..=angle_spread_rad)
            };
            mpcs.push(MultipathComponent {
                amplitude,
                delay_s: delay,
                aoa_azimuth_rad: aoa_azi + jitter(&mut rng),
                aoa_elevation_rad: aoa_ele + jitter(&mut rng),
                aod_azimuth_rad: aod_azi + jitter(&mut rng),
                aod_elevation_rad: aod_ele + jitter(&mut rng),
            });
        }
    }
    let total: f64 = mpcs.iter().map(|m| m.amplitude.norm_sqr()).sum();
    let scale = 1.0 / total.sqrt();
    for mpc in &mut mpcs {
        mpc.amplitude *= scale;
    }
    ChannelRealization::new(mpcs, tx_array, rx_array, carrier_frequency_hz, cyclic_prefix_s)
}

/// Three-path benchmark channel: power split 0.6 / 0.3 / 0.1 across delays
/// 0 / 20 / 40 ns with well-separated arrival angles. All paths share a
/// broadside departure, so the matched TX beam collects every path and the
/// total steered power is exactly one.
pub fn sparse_three_path_channel(
    tx_array: ArrayGeometry,
    rx_array: ArrayGeometry,
    carrier_frequency_hz: f64,
    cyclic_prefix_s: f64,
) -> Result<ChannelRealization> {
    let m_tx = tx_array.elements() as f64;
    let amps = [0.6f64.sqrt(), -(0.3f64.sqrt()), 0.1f64.sqrt()];
    let delays = [0.0, 20e-9, 40e-9];
    let aoa_azi = [0.0, PI / 6.0, -PI / 6.0];
    let aoa_ele = [0.45 * PI, PI / 2.0, PI / 2.0];
    let mpcs = (0..3)
        .map(|l| MultipathComponent {
            amplitude: Complex64::new(amps[l] / m_tx.sqrt(), 0.0),
            delay_s: delays[l],
            aoa_azimuth_rad: aoa_azi[l],
            aoa_elevation_rad: aoa_ele[l],
            aod_azimuth_rad: 0.0,
            aod_elevation_rad: PI / 2.0,
        })
        .collect();
    ChannelRealization::new(
        mpcs,
        tx_array,
        rx_array,
        carrier_frequency_hz,
        cyclic_prefix_s,
    )
}

/// Steered power fractions and delays of a channel under a beamformer, for
/// use with [`orthogonal_beta`] / [`BetaTable::from_orthogonal_gains`].
pub fn steered_gains(
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_unit_norm(t)?;
    let mut gains = Vec::with_capacity(chan.mpcs.len());
    let mut delays = Vec::with_capacity(chan.mpcs.len());
    for mpc in &chan.mpcs {
        let a_tx = chan.tx_response(mpc);
        gains.push((mpc.amplitude * a_tx.dotc(t)).norm_sqr());
        delays.push(mpc.delay_s);
    }
    Ok((gains, delays))
}

pub(crate) fn check_unit_norm(t: &DVector<Complex64>) -> Result<()> {
    let norm = t.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(CaceError::invalid(format!(
            "beamformer must be unit norm, got |t| = {norm}"
        )));
    }
    Ok(())
}

fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) / 2f64.sqrt()
}
