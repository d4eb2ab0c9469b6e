//! Oscillator phase noise and its spectral statistics.
//!
//! One OFDM symbol sees `K` samples `theta[n]` of the RX oscillator phase.
//! Everything downstream depends on the nDFT coefficients `Omega[k]` of
//! `exp(-j*theta[n])`: their diagonal second moments `Delta[k] =
//! E{|Omega[k]|^2}` quantify how the oscillator spreads the reference tone
//! across subcarriers, and the aggregates `mu(a, g_hat)` and
//! `mu_tilde(k, g_hat)` of those diagonals drive every SINR and capacity
//! bound.
//!
//! Two evaluators are provided for the diagonal:
//!
//! - [`DeltaProfile`] computes the *exact* second moment of the sampled
//!   model through the Gaussian characteristic function,
//!   `Delta[k] = (1/K^2) sum_{n1,n2} chi(n1-n2) exp(-j 2 pi k (n1-n2)/K)`,
//!   folded onto one length-`K` transform. This matches Monte Carlo
//!   estimates to within sampling error for any parameter choice.
//! - [`delta_wiener`] and [`delta_ou`] evaluate the windowed closed forms in
//!   which the lag window is decoupled from the sample index. Those are
//!   cheap and accurate when the phase decorrelates well within a symbol
//!   (`sigma_theta^2 * T_s >> 1` for the Wiener model) but undershoot the
//!   spectral tails outside that regime, so the exact profile is what feeds
//!   the link bounds.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::cell::OnceCell;
use std::f64::consts::TAU;

use crate::error::{CaceError, Result};
use crate::exec;
use crate::rng::{trial_rng, Substream};
use crate::spectrum::{self, SubcarrierGrid};

/// Oscillator phase-noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseNoiseModel {
    /// Ideal oscillator, `theta[n] = 0`.
    None,
    /// Free-running oscillator: integrated white frequency noise with
    /// diffusion `sigma_theta_sq` in rad^2/s.
    Wiener { sigma_theta_sq: f64 },
    /// Locked oscillator: mean-reverting phase with diffusion
    /// `sigma_theta_sq` (rad^2/s) and reversion rate `eta_theta` (1/s).
    OrnsteinUhlenbeck { sigma_theta_sq: f64, eta_theta: f64 },
}

impl PhaseNoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PhaseNoiseModel::None => Ok(()),
            PhaseNoiseModel::Wiener { sigma_theta_sq } => {
                if sigma_theta_sq < 0.0 {
                    Err(CaceError::invalid("Wiener sigma_theta_sq must be >= 0"))
                } else {
                    Ok(())
                }
            }
            PhaseNoiseModel::OrnsteinUhlenbeck {
                sigma_theta_sq,
                eta_theta,
            } => {
                if sigma_theta_sq < 0.0 {
                    Err(CaceError::invalid("OU sigma_theta_sq must be >= 0"))
                } else if !(eta_theta > 0.0) {
                    Err(CaceError::invalid("OU eta_theta must be > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// One symbol's sampled oscillator phase and, lazily, the nDFT coefficients
/// of `exp(-j*theta[n])`.
#[derive(Debug)]
pub struct PhaseNoiseTrace {
    theta: Vec<f64>,
    model: PhaseNoiseModel,
    omega: OnceCell<Vec<Complex64>>,
}

impl PhaseNoiseTrace {
    pub fn from_samples(theta: Vec<f64>, model: PhaseNoiseModel) -> Self {
        Self {
            theta,
            model,
            omega: OnceCell::new(),
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn model(&self) -> PhaseNoiseModel {
        self.model
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// nDFT coefficients `Omega[k]` of `exp(-j*theta[n])`, in bin order.
    pub fn omega(&self) -> &[Complex64] {
        self.omega.get_or_init(|| {
            let samples: Vec<Complex64> = self
                .theta
                .iter()
                .map(|&th| Complex64::from_polar(1.0, -th))
                .collect();
            spectrum::ndft_raw(&samples)
        })
    }

    /// New trace with the linear phase of a `freq_offset_hz` oscillator
    /// mismatch added: `theta[n] += 2 pi f_off n T_s / K`.
    pub fn with_frequency_offset(&self, freq_offset_hz: f64, grid: &SubcarrierGrid) -> Self {
        let k = self.theta.len() as f64;
        let step = TAU * freq_offset_hz * grid.symbol_duration_s() / k;
        let theta = self
            .theta
            .iter()
            .enumerate()
            .map(|(n, &th)| th + step * n as f64)
            .collect();
        Self::from_samples(theta, self.model)
    }

    /// Power of the filtered rotation inside the band `{-g_hat, ..., g_hat}`,
    /// `sum_{|k| <= g_hat} |Omega[k]|^2`. This is the per-symbol fast-fading
    /// factor seen by the data subcarriers.
    pub fn fast_fading_factor(&self, g_hat: usize, grid: &SubcarrierGrid) -> f64 {
        let omega = self.omega();
        let mut acc = 0.0;
        for kd in -(g_hat as i64)..=(g_hat as i64) {
            acc += omega[grid.bin(kd)].norm_sqr();
        }
        acc
    }
}

/// Sample one Wiener trace: `theta[0] = 0` and independent Gaussian
/// increments of variance `sigma_theta_sq * T_s / K`.
pub fn sample_wiener_trace(
    model: &PhaseNoiseModel,
    grid: &SubcarrierGrid,
    rng: &mut impl Rng,
) -> Result<PhaseNoiseTrace> {
    let PhaseNoiseModel::Wiener { sigma_theta_sq } = *model else {
        return Err(CaceError::invalid("sample_wiener_trace requires a Wiener model"));
    };
    model.validate()?;
    let k = grid.total();
    let step = (sigma_theta_sq * grid.symbol_duration_s() / k as f64).sqrt();
    let mut theta = Vec::with_capacity(k);
    let mut acc = 0.0;
    theta.push(acc);
    for _ in 1..k {
        let xi: f64 = rng.sample(StandardNormal);
        acc += step * xi;
        theta.push(acc);
    }
    Ok(PhaseNoiseTrace::from_samples(theta, *model))
}

/// Sample one stationary OU trace: `theta[0] ~ N(0, sigma^2 / 2 eta)` and the
/// exact AR(1) discretization `theta[n+1] = rho theta[n] + sqrt((sigma^2 /
/// 2 eta)(1 - rho^2)) xi` with `rho = exp(-eta T_s / K)`.
pub fn sample_ou_trace(
    model: &PhaseNoiseModel,
    grid: &SubcarrierGrid,
    rng: &mut impl Rng,
) -> Result<PhaseNoiseTrace> {
    let PhaseNoiseModel::OrnsteinUhlenbeck {
        sigma_theta_sq,
        eta_theta,
    } = *model
    else {
        return Err(CaceError::invalid("sample_ou_trace requires an OU model"));
    };
    model.validate()?;
    let k = grid.total();
    let var0 = sigma_theta_sq / (2.0 * eta_theta);
    let rho = (-eta_theta * grid.symbol_duration_s() / k as f64).exp();
    let innovation = (var0 * (1.0 - rho * rho)).sqrt();
    let mut theta = Vec::with_capacity(k);
    let xi0: f64 = rng.sample(StandardNormal);
    let mut cur = var0.sqrt() * xi0;
    theta.push(cur);
    for _ in 1..k {
        let xi: f64 = rng.sample(StandardNormal);
        cur = rho * cur + innovation * xi;
        theta.push(cur);
    }
    Ok(PhaseNoiseTrace::from_samples(theta, *model))
}

/// Sample a trace for any model; the `None` model yields an all-zero phase.
pub fn sample_trace(
    model: &PhaseNoiseModel,
    grid: &SubcarrierGrid,
    rng: &mut impl Rng,
) -> Result<PhaseNoiseTrace> {
    match model {
        PhaseNoiseModel::None => Ok(PhaseNoiseTrace::from_samples(
            vec![0.0; grid.total()],
            *model,
        )),
        PhaseNoiseModel::Wiener { .. } => sample_wiener_trace(model, grid, rng),
        PhaseNoiseModel::OrnsteinUhlenbeck { .. } => sample_ou_trace(model, grid, rng),
    }
}

/// nDFT coefficients of `exp(-j*theta[n])` for a trace, in bin order.
pub fn omega_coefficients(trace: &PhaseNoiseTrace) -> &[Complex64] {
    trace.omega()
}

/// Exact diagonal second moments `Delta[k] = E{|Omega[k]|^2}` of a model on
/// a grid, stored in bin order.
#[derive(Debug, Clone)]
pub struct DeltaProfile {
    diag: Vec<f64>,
    grid: SubcarrierGrid,
    model: PhaseNoiseModel,
}

impl DeltaProfile {
    /// Build the exact profile for any model.
    pub fn new(model: &PhaseNoiseModel, grid: &SubcarrierGrid) -> Result<Self> {
        model.validate()?;
        let k = grid.total();
        let diag = match *model {
            PhaseNoiseModel::None => {
                let mut d = vec![0.0; k];
                d[0] = 1.0;
                d
            }
            PhaseNoiseModel::Wiener { sigma_theta_sq } => {
                let a = sigma_theta_sq * grid.symbol_duration_s() / (2.0 * k as f64);
                exact_diag_from_chi(k, |u| (-a * u as f64).exp())
            }
            PhaseNoiseModel::OrnsteinUhlenbeck {
                sigma_theta_sq,
                eta_theta,
            } => {
                let r0 = sigma_theta_sq / (2.0 * eta_theta);
                let rate = eta_theta * grid.symbol_duration_s() / k as f64;
                exact_diag_from_chi(k, |u| (-r0 * (1.0 - (-rate * u as f64).exp())).exp())
            }
        };
        Ok(Self {
            diag,
            grid: grid.clone(),
            model: *model,
        })
    }

    /// Diagonal value at signed subcarrier index `k` (wraps modulo `K`).
    pub fn delta(&self, k: i64) -> f64 {
        self.diag[self.grid.bin(k)]
    }

    /// Diagonal in bin order.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn grid(&self) -> &SubcarrierGrid {
        &self.grid
    }

    pub fn model(&self) -> PhaseNoiseModel {
        self.model
    }
}

/// Fold the exact double sum `(1/K^2) sum_{n1,n2} chi(|n1-n2|) e^{-j...}`
/// onto a single length-K transform. `chi(u)` is the characteristic function
/// `E{exp(-j(theta[n+u]-theta[n]))}` of the phase increment at lag `u >= 0`.
fn exact_diag_from_chi(k: usize, chi: impl Fn(usize) -> f64) -> Vec<f64> {
    let kf = k as f64;
    let mut folded = vec![Complex64::new(0.0, 0.0); k];
    folded[0] = Complex64::new(1.0 / kf, 0.0);
    for v in 1..k {
        let w = ((k - v) as f64 * chi(v) + v as f64 * chi(k - v)) / (kf * kf);
        folded[v] = Complex64::new(w, 0.0);
    }
    // Unnormalized forward DFT of the folded lag weights gives Delta[k].
    let mut spec = spectrum::ndft_raw(&folded);
    for c in &mut spec {
        *c *= kf;
    }
    spec.into_iter().map(|c| c.re.max(0.0)).collect()
}

/// Windowed closed form for the Wiener diagonal `Delta[k1]`: two geometric
/// series over the centered lag window `[-K/2, K/2)`. Exact limit `delta[k1]`
/// at zero diffusion. Accurate only when the phase decorrelates within the
/// symbol; logs a warning when `sigma_theta_sq * T_s < 0.1`.
pub fn delta_wiener(k1: i64, model: &PhaseNoiseModel, grid: &SubcarrierGrid) -> Result<f64> {
    let PhaseNoiseModel::Wiener { sigma_theta_sq } = *model else {
        return Err(CaceError::invalid("delta_wiener requires a Wiener model"));
    };
    model.validate()?;
    let k = grid.total() as f64;
    let c = sigma_theta_sq * grid.symbol_duration_s();
    if c == 0.0 {
        return Ok(if spectrum::mod_delta(k1, 0, grid.total() as i64)? {
            1.0
        } else {
            0.0
        });
    }
    if c < 0.1 {
        log::warn!(
            "windowed Wiener diagonal evaluated at sigma_theta_sq*T_s = {c:.3e}; \
             the form is only accurate when this product is large"
        );
    }
    let one = Complex64::new(1.0, 0.0);
    let minus = Complex64::new(-(c / 4.0), std::f64::consts::PI * k1 as f64);
    let plus = Complex64::new(-(c / 4.0), -std::f64::consts::PI * k1 as f64);
    let step_minus = Complex64::new(c / (2.0 * k), -TAU * k1 as f64 / k);
    let step_plus = Complex64::new(-c / (2.0 * k), -TAU * k1 as f64 / k);
    let term1 = (one - minus.exp()) / (step_minus.exp() - one);
    let term2 = (one - plus.exp()) / (one - step_plus.exp());
    let value = (term1 + term2) / k;
    if value.im.abs() > 1e-3 * value.re.abs().max(f64::MIN_POSITIVE) {
        return Err(CaceError::numeric(format!(
            "windowed Wiener diagonal at k = {k1} has imaginary residue {} vs real {}",
            value.im, value.re
        )));
    }
    Ok(value.re)
}

/// Windowed closed form for the OU diagonal: the direct lag sum
/// `(e^{-R0}/K) sum_{u=-floor(K/2)}^{floor((K-1)/2)} e^{R[u]} e^{-j 2 pi k u / K}`
/// with `R[u] = (sigma^2 / 2 eta) exp(-eta |u| T_s / K)`.
pub fn delta_ou(k1: i64, model: &PhaseNoiseModel, grid: &SubcarrierGrid) -> Result<f64> {
    let PhaseNoiseModel::OrnsteinUhlenbeck {
        sigma_theta_sq,
        eta_theta,
    } = *model
    else {
        return Err(CaceError::invalid("delta_ou requires an OU model"));
    };
    model.validate()?;
    let k = grid.total() as i64;
    let kf = k as f64;
    let r0 = sigma_theta_sq / (2.0 * eta_theta);
    let rate = eta_theta * grid.symbol_duration_s() / kf;
    let mut acc = Complex64::new(0.0, 0.0);
    for u in -(k / 2)..=((k - 1) / 2) {
        let r_u = r0 * (-rate * u.abs() as f64).exp();
        let phase = -TAU * (k1 * u) as f64 / kf;
        acc += Complex64::from_polar((r_u - r0).exp(), phase);
    }
    Ok((acc.re / kf).max(0.0))
}

/// Signal-retention aggregate `mu(a, g_hat) = sum_{|kd| <= g_hat}
/// Delta[a + kd]`, indices wrapping modulo `K`.
pub fn mu(a: i64, g_hat: usize, delta: &DeltaProfile) -> f64 {
    let mut acc = 0.0;
    for kd in -(g_hat as i64)..=(g_hat as i64) {
        acc += delta.delta(a + kd);
    }
    acc
}

/// Residual-ICI aggregate `mu_tilde(k, g_hat) = sum_{|kd| <= g_hat}
/// Delta[kd] * Delta[kd + k]`.
pub fn mu_tilde(k: i64, g_hat: usize, delta: &DeltaProfile) -> f64 {
    let mut acc = 0.0;
    for kd in -(g_hat as i64)..=(g_hat as i64) {
        acc += delta.delta(kd) * delta.delta(kd + k);
    }
    acc
}

/// Ensemble second moments of `Omega` over independent traces.
#[derive(Debug, Clone)]
pub struct OmegaEnsembleStats {
    pub trials: u64,
    /// `Ê{|Omega[k]|^2}` in bin order.
    pub diag: Vec<f64>,
    /// For each requested lag `m`: `Ê{Omega[k] Omega*[k+m]}` in bin order.
    pub cross: Vec<(usize, Vec<Complex64>)>,
}

/// Estimate `E{Omega[k] Omega*[k+m]}` for `m = 0` (the diagonal) and the
/// requested lags, averaging over `trials` independent traces. Trials are
/// seeded per index so the result is independent of the worker count.
pub fn omega_ensemble_stats(
    model: &PhaseNoiseModel,
    grid: &SubcarrierGrid,
    trials: u64,
    master_seed: u64,
    lags: &[usize],
) -> Result<OmegaEnsembleStats> {
    model.validate()?;
    if trials == 0 {
        return Err(CaceError::invalid("need at least one trial"));
    }
    let k = grid.total();

    struct Acc {
        diag: Vec<f64>,
        cross: Vec<Vec<Complex64>>,
    }
    let n_lags = lags.len();
    let init = || Acc {
        diag: vec![0.0; k],
        cross: vec![vec![Complex64::new(0.0, 0.0); k]; n_lags],
    };
    let acc = exec::accumulate_trials(
        trials,
        init,
        |acc: &mut Acc, trial| {
            let mut rng = trial_rng(master_seed, trial, Substream::PhaseNoise);
            let trace = sample_trace(model, grid, &mut rng).expect("validated model");
            let omega = trace.omega();
            for (i, w) in omega.iter().enumerate() {
                acc.diag[i] += w.norm_sqr();
            }
            for (li, &m) in lags.iter().enumerate() {
                let row = &mut acc.cross[li];
                for i in 0..k {
                    row[i] += omega[i] * omega[(i + m) % k].conj();
                }
            }
        },
        |mut a, b| {
            for (x, y) in a.diag.iter_mut().zip(&b.diag) {
                *x += y;
            }
            for (ra, rb) in a.cross.iter_mut().zip(&b.cross) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            a
        },
    );

    let scale = 1.0 / trials as f64;
    Ok(OmegaEnsembleStats {
        trials,
        diag: acc.diag.into_iter().map(|v| v * scale).collect(),
        cross: lags
            .iter()
            .zip(acc.cross)
            .map(|(&m, row)| (m, row.into_iter().map(|v| v * scale).collect()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::SubcarrierGrid;

    fn grid(k1: usize, k2: usize, t_s: f64) -> SubcarrierGrid {
        SubcarrierGrid::new(k1, k2, t_s).unwrap()
    }

    const TS: f64 = 1e-6;

    #[test]
    fn zero_diffusion_wiener_trace_is_silent() {
        let g = grid(8, 7, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 0.0 };
        let mut rng = trial_rng(0, 0, Substream::PhaseNoise);
        let trace = sample_wiener_trace(&model, &g, &mut rng).unwrap();
        assert!(trace.theta().iter().all(|&t| t == 0.0));
        let omega = trace.omega();
        assert!((omega[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        for w in &omega[1..] {
            assert!(w.norm() < 1e-14);
        }
    }

    #[test]
    fn wrong_model_kind_is_rejected() {
        let g = grid(8, 7, TS);
        let wiener = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let ou = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 1.0 / TS,
            eta_theta: 1e6,
        };
        let mut rng = trial_rng(0, 0, Substream::PhaseNoise);
        assert!(sample_wiener_trace(&ou, &g, &mut rng).is_err());
        assert!(sample_ou_trace(&wiener, &g, &mut rng).is_err());
        assert!(delta_wiener(0, &ou, &g).is_err());
        assert!(delta_ou(0, &wiener, &g).is_err());
    }

    #[test]
    fn wiener_increment_variance_matches_model() {
        let g = grid(8, 7, TS);
        let sigma_sq = 1.0 / TS;
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: sigma_sq };
        let want = sigma_sq * TS / 16.0;
        let trials = 20_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for trial in 0..trials {
            let mut rng = trial_rng(11, trial, Substream::PhaseNoise);
            let trace = sample_wiener_trace(&model, &g, &mut rng).unwrap();
            for w in trace.theta().windows(2) {
                let d = w[1] - w[0];
                sum += d;
                sum_sq += d * d;
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // Sample variance of a Gaussian has std ~ var * sqrt(2/n).
        let sigma_mc = want * (2.0 / n as f64).sqrt();
        assert!(
            (var - want).abs() < 3.0 * sigma_mc,
            "var {var:.6e} vs {want:.6e} (3 sigma = {:.2e})",
            3.0 * sigma_mc
        );
    }

    #[test]
    fn wiener_endpoint_variance_follows_diffusion_law() {
        let k = 256usize;
        let g = grid(128, 127, TS);
        let sigma_sq = 1.0 / TS;
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: sigma_sq };
        let want = sigma_sq * TS * (k as f64 - 1.0) / k as f64;
        let trials = 20_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for trial in 0..trials {
            let mut rng = trial_rng(12, trial, Substream::PhaseNoise);
            let trace = sample_wiener_trace(&model, &g, &mut rng).unwrap();
            let end = *trace.theta().last().unwrap();
            sum += end;
            sum_sq += end * end;
        }
        let mean = sum / trials as f64;
        let var = sum_sq / trials as f64 - mean * mean;
        let sigma_mc = want * (2.0 / trials as f64).sqrt();
        assert!(
            (var - want).abs() < 3.0 * sigma_mc,
            "var {var:.4} vs {want:.4}"
        );
    }

    #[test]
    fn ou_autocorrelation_and_stationarity() {
        let k = 64usize;
        let g = grid(32, 31, TS);
        let sigma_sq = 1.0 / TS;
        let eta = 1e6;
        let model = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: sigma_sq,
            eta_theta: eta,
        };
        let r0 = sigma_sq / (2.0 * eta);
        let trials = 30_000u64;
        let lags = [0usize, 1, 8, 32];
        let mut acc = vec![0.0; lags.len()];
        let mut var_first = 0.0;
        let mut var_last = 0.0;
        for trial in 0..trials {
            let mut rng = trial_rng(13, trial, Substream::PhaseNoise);
            let trace = sample_ou_trace(&model, &g, &mut rng).unwrap();
            let th = trace.theta();
            for (i, &m) in lags.iter().enumerate() {
                acc[i] += th[0] * th[m];
            }
            var_first += th[0] * th[0];
            var_last += th[k - 1] * th[k - 1];
        }
        for (i, &m) in lags.iter().enumerate() {
            let got = acc[i] / trials as f64;
            let want = r0 * (-eta * m as f64 * TS / k as f64).exp();
            // Products of two Gaussians have variance ~ r0^2 (1 + rho^2).
            let sigma_mc = r0 * (2.0f64).sqrt() / (trials as f64).sqrt();
            assert!(
                (got - want).abs() < 3.0 * sigma_mc,
                "lag {m}: {got:.4e} vs {want:.4e}"
            );
        }
        let vf = var_first / trials as f64;
        let vl = var_last / trials as f64;
        let sigma_mc = r0 * (2.0f64).sqrt() / (trials as f64).sqrt();
        assert!((vf - vl).abs() < 6.0 * sigma_mc, "{vf} vs {vl}");
    }

    #[test]
    fn pinned_ou_concentrates_at_dc() {
        let g = grid(32, 31, TS);
        let model = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 1.0 / TS,
            eta_theta: 1e12,
        };
        let mut rng = trial_rng(5, 0, Substream::PhaseNoise);
        let trace = sample_ou_trace(&model, &g, &mut rng).unwrap();
        let omega = trace.omega();
        assert!(omega[0].norm() > 0.9999);
        let profile = DeltaProfile::new(&model, &g).unwrap();
        assert!(profile.delta(0) > 0.9999);
    }

    #[test]
    fn per_trace_spectral_identity() {
        // sum_a Omega[a] Omega*[a+k1] = delta_{0,k1 mod K} for every trace.
        let g = grid(128, 127, TS);
        let k = g.total();
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        for trial in 0..8 {
            let mut rng = trial_rng(21, trial, Substream::PhaseNoise);
            let trace = sample_wiener_trace(&model, &g, &mut rng).unwrap();
            let omega = trace.omega();
            for k1 in [0usize, 1, 7, 100, k / 2] {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..k {
                    acc += omega[a] * omega[(a + k1) % k].conj();
                }
                let want = if k1 % k == 0 { 1.0 } else { 0.0 };
                assert!(
                    (acc - Complex64::new(want, 0.0)).norm() <= 1e-9,
                    "k1 = {k1}: residual {}",
                    (acc - Complex64::new(want, 0.0)).norm()
                );
            }
        }
    }

    #[test]
    fn constant_phase_is_a_global_rotation() {
        let g = grid(8, 7, TS);
        let c = 0.7;
        let trace = PhaseNoiseTrace::from_samples(vec![c; g.total()], PhaseNoiseModel::None);
        let omega = trace.omega();
        assert!((omega[0] - Complex64::from_polar(1.0, -c)).norm() < 1e-13);
        for w in &omega[1..] {
            assert!(w.norm() < 1e-13);
        }
    }

    #[test]
    fn global_phase_leaves_magnitudes_and_fading_factor() {
        let g = grid(64, 63, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let mut rng = trial_rng(30, 0, Substream::PhaseNoise);
        let trace = sample_wiener_trace(&model, &g, &mut rng).unwrap();
        let shifted = PhaseNoiseTrace::from_samples(
            trace.theta().iter().map(|&t| t + 1.234).collect(),
            model,
        );
        let a = trace.omega();
        let b = shifted.omega();
        for (x, y) in a.iter().zip(b) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }
        let f1 = trace.fast_fading_factor(5, &g);
        let f2 = shifted.fast_fading_factor(5, &g);
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn exact_profile_sums_to_one_and_matches_monte_carlo() {
        let g = grid(128, 127, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let profile = DeltaProfile::new(&model, &g).unwrap();
        let total: f64 = profile.diag().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "sum {total}");

        let stats = omega_ensemble_stats(&model, &g, 20_000, 77, &[]).unwrap();
        for bin in 0..g.total() {
            let gap_db = 10.0 * (stats.diag[bin] / profile.diag()[bin]).log10();
            assert!(
                gap_db.abs() < 0.5,
                "bin {bin}: empirical {} vs exact {} ({gap_db:.2} dB)",
                stats.diag[bin],
                profile.diag()[bin]
            );
        }
    }

    #[test]
    fn ou_exact_profile_matches_monte_carlo_quarter_band() {
        let g = grid(128, 127, TS);
        let model = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 1.0 / TS,
            eta_theta: 1e6,
        };
        let profile = DeltaProfile::new(&model, &g).unwrap();
        let stats = omega_ensemble_stats(&model, &g, 20_000, 78, &[]).unwrap();
        let quarter = g.total() as i64 / 4;
        for k in -quarter..=quarter {
            let bin = g.bin(k);
            let gap_db = 10.0 * (stats.diag[bin] / profile.diag()[bin]).log10();
            assert!(gap_db.abs() < 0.5, "k {k}: {gap_db:.2} dB");
        }
        for &d in profile.diag() {
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn windowed_forms_match_exact_profile_when_decorrelated() {
        // When the phase decorrelates within ~K/400 samples the lag window
        // and the exact triangular weighting agree to O(1/(sigma^2 T_s)).
        let g = grid(128, 127, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 400.0 / TS };
        let profile = DeltaProfile::new(&model, &g).unwrap();
        for k in [-100i64, -3, 0, 1, 2, 17, 64] {
            let windowed = delta_wiener(k, &model, &g).unwrap();
            let exact = profile.delta(k);
            assert!(
                (windowed - exact).abs() < 1e-2 * exact,
                "k {k}: windowed {windowed} vs exact {exact}"
            );
        }

        let ou = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 400.0 / TS,
            eta_theta: 400e6,
        };
        let profile = DeltaProfile::new(&ou, &g).unwrap();
        for k in [-100i64, -3, 0, 1, 2, 17, 64] {
            let windowed = delta_ou(k, &ou, &g).unwrap();
            let exact = profile.delta(k);
            assert!(
                (windowed - exact).abs() < 1e-2 * exact.max(1e-12),
                "k {k}: windowed {windowed} vs exact {exact}"
            );
        }
    }

    #[test]
    fn windowed_wiener_noiseless_limit_is_exact() {
        let g = grid(128, 127, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 0.0 };
        assert_eq!(delta_wiener(0, &model, &g).unwrap(), 1.0);
        assert_eq!(delta_wiener(3, &model, &g).unwrap(), 0.0);
        assert_eq!(delta_wiener(256, &model, &g).unwrap(), 1.0); // wraps to 0
    }

    #[test]
    fn windowed_sums_to_one() {
        let g = grid(128, 127, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let total: f64 = g
            .signed_indices()
            .map(|k| delta_wiener(k, &model, &g).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 0.01, "sum {total}");

        let ou = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 1.0 / TS,
            eta_theta: 1e6,
        };
        let total: f64 = g
            .signed_indices()
            .map(|k| delta_ou(k, &ou, &g).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 0.01, "sum {total}");
    }

    #[test]
    fn mu_contracts() {
        let g = grid(128, 127, TS);
        let noiseless = DeltaProfile::new(&PhaseNoiseModel::None, &g).unwrap();
        for g_hat in [0usize, 1, 5] {
            assert!((mu(0, g_hat, &noiseless) - 1.0).abs() < 1e-15);
        }
        assert_eq!(mu_tilde(3, 5, &noiseless), 0.0);

        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let profile = DeltaProfile::new(&model, &g).unwrap();
        // Monotone in g_hat, and the (K-1)/2 window captures almost all power.
        let mut prev = 0.0;
        for g_hat in 0..=(g.total() - 1) / 2 {
            let cur = mu(0, g_hat, &profile);
            assert!(cur + 1e-15 >= prev, "g_hat {g_hat}");
            prev = cur;
        }
        let full = mu(0, (g.total() - 1) / 2, &profile);
        assert!((full - 1.0).abs() < 1e-3, "full-band mu {full}");

        // mu_tilde is bounded by mu through the largest in-window diagonal.
        for k in [-40i64, 5, 22, 100] {
            let m = mu(k, 10, &profile);
            let mt = mu_tilde(k, 10, &profile);
            let peak: f64 = (-10i64..=10)
                .map(|kd| profile.delta(kd))
                .fold(0.0, f64::max);
            assert!(mt <= m * peak + 1e-15);
            assert!(mt <= m + 1e-15);
            assert!(mt >= 0.0);
        }
    }

    #[test]
    fn mu_tilde_is_even_for_even_profiles() {
        let g = grid(128, 127, TS);
        let ou = PhaseNoiseModel::OrnsteinUhlenbeck {
            sigma_theta_sq: 1.0 / TS,
            eta_theta: 1e6,
        };
        let profile = DeltaProfile::new(&ou, &g).unwrap();
        for k in [1i64, 7, 40, 100] {
            let plus = mu_tilde(k, 10, &profile);
            let minus = mu_tilde(-k, 10, &profile);
            assert!(
                (plus - minus).abs() <= 1e-12 * plus.max(1e-300),
                "k {k}: {plus} vs {minus}"
            );
        }
    }

    #[test]
    fn ensemble_stats_are_worker_count_independent() {
        let g = grid(16, 15, TS);
        let model = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / TS };
        let a = omega_ensemble_stats(&model, &g, 300, 9, &[1]).unwrap();
        let b = omega_ensemble_stats(&model, &g, 300, 9, &[1]).unwrap();
        assert_eq!(a.diag, b.diag);
        assert_eq!(a.cross[0].1, b.cross[0].1);
    }
}
