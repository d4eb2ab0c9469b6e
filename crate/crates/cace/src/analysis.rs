//! Closed-form performance expressions and parameter optimization.
//!
//! The per-subcarrier SINR lower bound divides the worst-case signal power
//! by the phase-noise ICI, the reference self-interference and the three
//! noise cross terms. Averaged over the data subcarriers it yields the
//! capacity approximation, and a further relaxation of the bound (the `Xi`
//! surrogate, pseudo-concave in the reference energy) admits a closed-form
//! optimal reference-energy split. The filter half-width `g_hat` trades
//! phase-noise ICI against noise accumulation and is optimized by an exact
//! line search.
//!
//! Logarithms are base 2 throughout; capacities are bits per subcarrier
//! symbol, averaged over all `K` subcarriers.

use num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::channel::{check_unit_norm, BetaTable, ChannelRealization, SteeredChannel};
use crate::error::{CaceError, Result};
use crate::exec;
use crate::link_sim::{LinkSimulator, SystemConfig, TxSymbol};
use crate::phase_noise::{mu, mu_tilde, sample_trace, DeltaProfile};
use crate::rng::{trial_rng, Substream};
use nalgebra::DVector;

/// Analytical link summary at one operating point.
#[derive(Debug, Clone)]
pub struct LinkMetrics {
    /// Per-data-subcarrier SINR lower bound (linear), ascending signed k.
    pub sinr_lb: Vec<f64>,
    /// Capacity approximation, bits per subcarrier symbol.
    pub c_approx: f64,
    /// Closed-form optimal reference energy (J).
    pub e_r_opt: f64,
    /// Line-search optimal filter half-width.
    pub g_hat_opt: usize,
    /// Surrogate objective at the configured parameters.
    pub xi: f64,
    /// The two aggregates of the closed-form allocation.
    pub q_term: f64,
    pub r_term: f64,
}

/// Per-subcarrier SINR lower bound for data subcarrier `k`.
///
/// `use_remark2` selects the tighter residual-ICI aggregate
/// `mu_tilde(k, g_hat)` in place of `mu(k, g_hat)`.
pub fn sinr_lower_bound(
    k: i64,
    betas: &BetaTable,
    cfg: &SystemConfig,
    delta: &DeltaProfile,
    use_remark2: bool,
) -> Result<f64> {
    if !cfg.is_data(k) {
        return Err(CaceError::invalid(format!(
            "subcarrier {k} is in the guard/reference set"
        )));
    }
    let g_hat = cfg.filter_half_width();
    let mu0 = mu(0, g_hat, delta).min(1.0);
    let ici_aggregate = if use_remark2 {
        mu_tilde(k, g_hat, delta)
    } else {
        mu(k, g_hat, delta)
    };
    let m_rx = betas.m_rx() as f64;
    let e_r = cfg.reference_energy_j();
    let e_d = cfg.data_energy_j();
    let n0 = cfg.noise_psd_j();
    let beta_max = betas.beta_max();
    let g_hat_len = cfg.filter_len() as f64;

    let num = m_rx * betas.beta_0k(k).norm_sqr() * e_r * e_d * mu0 * mu0;
    let den = m_rx * beta_max * beta_max * e_r * (e_d * mu0 * (1.0 - mu0) + e_r * ici_aggregate)
        + beta_max * n0 * (e_r + g_hat_len * e_d)
        + g_hat_len * n0 * n0;
    if num == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Capacity approximation `(1/K) sum_{data k} log2(1 + gamma_k)`.
pub fn capacity_approx(
    betas: &BetaTable,
    cfg: &SystemConfig,
    delta: &DeltaProfile,
    use_remark2: bool,
) -> Result<f64> {
    let mut acc = 0.0;
    for k in cfg.data_indices() {
        acc += (1.0 + sinr_lower_bound(k, betas, cfg, delta, use_remark2)?).log2();
    }
    Ok(acc / cfg.grid().total() as f64)
}

/// Surrogate objective in the reference energy: the channel-independent
/// SINR factor with the data-ICI term replaced by its budget-level bound.
/// Strictly pseudo-concave in `E_r` on `(0, E_s)`.
pub fn xi(betas: &BetaTable, cfg: &SystemConfig, delta: &DeltaProfile) -> f64 {
    let g_hat = cfg.filter_half_width();
    let mu0 = mu(0, g_hat, delta).min(1.0);
    let m_rx = betas.m_rx() as f64;
    let e_r = cfg.reference_energy_j();
    let e_d = cfg.data_energy_j();
    let e_s = cfg.symbol_energy_j();
    let n0 = cfg.noise_psd_j();
    let beta_max = betas.beta_max();
    let g_hat_len = cfg.filter_len() as f64;
    let data_len = cfg.data_len() as f64;

    let num = m_rx * e_r * e_d * mu0 * mu0;
    let den = m_rx * beta_max * beta_max * e_r * (e_s / data_len) * mu0 * (1.0 - mu0)
        + beta_max * n0 * (e_r + g_hat_len * e_d)
        + g_hat_len * n0 * n0;
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Closed-form reference-energy allocation.
#[derive(Debug, Clone, Copy)]
pub struct PowerAllocation {
    pub e_r_opt: f64,
    pub q_term: f64,
    pub r_term: f64,
}

/// Stationary point of [`xi`] in the reference energy:
/// `E_r = E_s (sqrt(R^2 + Q R) - R) / Q` with
/// `Q = M_rx beta_max^2 (1 - mu0) mu0 E_s + beta_max N0 (K - |G_hat| - |G|)`
/// and `R = N0 |G_hat| (beta_max + N0 (K - |G|) / E_s)`.
pub fn optimal_reference_energy(
    betas: &BetaTable,
    cfg: &SystemConfig,
    delta: &DeltaProfile,
) -> Result<PowerAllocation> {
    let g_hat = cfg.filter_half_width();
    let mu0 = mu(0, g_hat, delta).min(1.0);
    let m_rx = betas.m_rx() as f64;
    let e_s = cfg.symbol_energy_j();
    let n0 = cfg.noise_psd_j();
    let beta_max = betas.beta_max();
    let k = cfg.grid().total() as f64;
    let g_hat_len = cfg.filter_len() as f64;
    let guard_len = cfg.guard_len() as f64;

    let q = m_rx * beta_max * beta_max * (1.0 - mu0) * mu0 * e_s
        + beta_max * n0 * (k - g_hat_len - guard_len);
    let r = n0 * g_hat_len * (beta_max + n0 * (k - guard_len) / e_s);
    if !(q > 0.0) {
        return Err(CaceError::invalid(format!(
            "allocation needs Q > 0, got Q = {q} (degenerate channel)"
        )));
    }
    let e_r_opt = e_s * ((r * r + q * r).sqrt() - r) / q;
    Ok(PowerAllocation {
        e_r_opt,
        q_term: q,
        r_term: r,
    })
}

/// Result of the filter half-width line search.
#[derive(Debug, Clone, Copy)]
pub struct GHatOptimum {
    pub g_hat_opt: usize,
    pub e_r_opt: f64,
    pub c_at_opt: f64,
}

/// Exhaustive line search over `1 <= g_hat <= min(K1, K2)/2` with the guard
/// tied to `g = 2 g_hat` and the reference energy from
/// [`optimal_reference_energy`]. Ties resolve to the lowest `g_hat`.
pub fn optimize_g_hat(
    betas: &BetaTable,
    cfg_template: &SystemConfig,
    delta: &DeltaProfile,
) -> Result<GHatOptimum> {
    let grid = cfg_template.grid();
    let max_g_hat = grid.k1().min(grid.k2()) / 2;
    let mut best: Option<GHatOptimum> = None;
    for g_hat in 1..=max_g_hat {
        let cfg = cfg_template.with_widths(2 * g_hat, g_hat)?;
        // At zero phase noise with very wide guards the surrogate
        // denominator degenerates (Q <= 0); those widths cannot be
        // allocated by the closed form and never win, so skip them.
        let Ok(alloc) = optimal_reference_energy(betas, &cfg, delta) else {
            continue;
        };
        let cfg = cfg.with_reference_energy(alloc.e_r_opt)?;
        let c = capacity_approx(betas, &cfg, delta, true)?;
        let better = match &best {
            None => true,
            Some(b) => c > b.c_at_opt,
        };
        if better {
            best = Some(GHatOptimum {
                g_hat_opt: g_hat,
                e_r_opt: alloc.e_r_opt,
                c_at_opt: c,
            });
        }
    }
    best.ok_or_else(|| CaceError::invalid("empty g_hat search range"))
}

/// Gray-mapped QPSK symbol error probability over a Gaussian channel with
/// symbol SNR `gamma`: `2 Q(sqrt(gamma)) - Q(sqrt(gamma))^2`.
pub fn analytical_qpsk_ser(gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    let q = 0.5 * erfc((gamma / 2.0).sqrt());
    2.0 * q - q * q
}

/// Digital-CE baseline throughput: a fixed unit-norm RX beam `w`, all `K`
/// subcarriers carrying data at `E_s / K` each, no reference or guard:
/// `(1/K) sum_k log2(1 + |w^H H(f_k) t|^2 (E_s/K) / N0)`.
pub fn digital_ce_capacity(
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    w: &DVector<Complex64>,
    cfg: &SystemConfig,
) -> Result<f64> {
    check_unit_norm(w)?;
    let steered = SteeredChannel::new(chan, t)?;
    let grid = cfg.grid();
    let e_d = cfg.symbol_energy_j() / grid.total() as f64;
    let n0 = cfg.noise_psd_j();
    let mut acc = 0.0;
    for k in grid.signed_indices() {
        let h = steered.response(grid.subcarrier_frequency_hz(k));
        let snr = w.dotc(&h).norm_sqr() * e_d / n0;
        acc += (1.0 + snr).log2();
    }
    Ok(acc / grid.total() as f64)
}

/// Monte Carlo throughput estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct ThroughputEstimate {
    pub bits_per_subcarrier: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Monte Carlo throughput of the analog-combining link: Gaussian signaling,
/// per-trial fast fading from the oscillator trace, interference-plus-noise
/// power measured from the ground-truth decomposition, Gaussian-equivalent
/// rate `(1/K) sum_k log2(1 + s_k(F) / iz_k)` averaged over trials.
pub fn cace_mc_throughput(
    cfg: &SystemConfig,
    chan: &ChannelRealization,
    t: &DVector<Complex64>,
    trials: u64,
    master_seed: u64,
) -> Result<ThroughputEstimate> {
    if trials < 100 {
        return Err(CaceError::invalid("need at least 100 trials"));
    }
    let sim = LinkSimulator::new(cfg.clone(), chan, t)?;
    let grid = cfg.grid();
    let data_bins: Vec<usize> = cfg.data_indices().map(|k| grid.bin(k)).collect();

    struct Acc {
        iz_power: Vec<f64>,
        fading: Vec<(u64, f64)>,
    }
    let acc = exec::accumulate_trials(
        trials,
        || Acc {
            iz_power: vec![0.0; data_bins.len()],
            fading: Vec::new(),
        },
        |acc: &mut Acc, trial| {
            let mut pn_rng = trial_rng(master_seed, trial, Substream::PhaseNoise);
            let mut noise_rng = trial_rng(master_seed, trial, Substream::ChannelNoise);
            let mut data_rng = trial_rng(master_seed, trial, Substream::Data);
            let trace = sample_trace(&cfg.pn(), grid, &mut pn_rng).expect("validated");
            let tx = TxSymbol::random_gaussian(cfg, &mut data_rng);
            let frame = sim
                .run_symbol_decomposed(&tx, &trace, &mut noise_rng)
                .expect("validated");
            let dec = frame.decomposition.as_ref().expect("recording enabled");
            for (i, &bin) in data_bins.iter().enumerate() {
                acc.iz_power[i] += (frame.y[bin] - dec.signal[bin]).norm_sqr();
            }
            acc.fading.push((trial, frame.fast_fading_true));
        },
        |mut a, mut b| {
            for (x, y) in a.iz_power.iter_mut().zip(&b.iz_power) {
                *x += y;
            }
            a.fading.append(&mut b.fading);
            a
        },
    );

    let mut fading = acc.fading;
    fading.sort_unstable_by_key(|&(trial, _)| trial);
    let iz: Vec<f64> = acc
        .iz_power
        .iter()
        .map(|&p| p / trials as f64)
        .collect();

    let m_rx = sim.m_rx() as f64;
    let e_r = cfg.reference_energy_j();
    let e_d = cfg.data_energy_j();
    let k_total = cfg.grid().total() as f64;
    let data_ks: Vec<i64> = cfg.data_indices().collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &(_, f) in &fading {
        let mut c = 0.0;
        for (i, &k) in data_ks.iter().enumerate() {
            let sig = m_rx * m_rx * sim.betas().beta_0k(k).norm_sqr() * e_r * e_d * f * f;
            c += (1.0 + sig / iz[i]).log2();
        }
        c /= k_total;
        sum += c;
        sum_sq += c * c;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(ThroughputEstimate {
        bits_per_subcarrier: mean,
        std_error: (var / n).sqrt(),
        trials,
    })
}

/// Evaluate the full analytical summary at a configured operating point.
pub fn evaluate_link(
    betas: &BetaTable,
    cfg: &SystemConfig,
    delta: &DeltaProfile,
) -> Result<LinkMetrics> {
    let mut sinr_lb = Vec::with_capacity(cfg.data_len());
    for k in cfg.data_indices() {
        sinr_lb.push(sinr_lower_bound(k, betas, cfg, delta, true)?);
    }
    let c_approx = capacity_approx(betas, cfg, delta, true)?;
    let alloc = optimal_reference_energy(betas, cfg, delta)?;
    let opt = optimize_g_hat(betas, cfg, delta)?;
    Ok(LinkMetrics {
        sinr_lb,
        c_approx,
        e_r_opt: alloc.e_r_opt,
        g_hat_opt: opt.g_hat_opt,
        xi: xi(betas, cfg, delta),
        q_term: alloc.q_term,
        r_term: alloc.r_term,
    })
}
