use cace::channel::{sparse_three_path_channel, tx_beamformer_strongest_mpc, ArrayGeometry, BetaTable};
use cace::link_sim::{qpsk_roundtrip, FadingKnowledge, FilterMode, SystemConfig};
use cace::phase_noise::PhaseNoiseModel;
use cace::spectrum::SubcarrierGrid;
use std::time::Instant;

fn main() {
    let ts = 1e-6; let fc = 30e9; let es = 1.0;
    let g = SubcarrierGrid::new(512, 511, ts).unwrap();
    let chan = sparse_three_path_channel(
        ArrayGeometry::half_wavelength(32, 8, fc).unwrap(),
        ArrayGeometry::half_wavelength(16, 4, fc).unwrap(), fc, 100e-9).unwrap();
    let t = tx_beamformer_strongest_mpc(&chan);
    let betas = BetaTable::from_channel(&chan, &t, &g).unwrap();
    let wiener = PhaseNoiseModel::Wiener { sigma_theta_sq: 1.0 / ts };
    let n0 = betas.bar_beta() * es / 1024.0;
    for (label, psd) in [("noiseless", 0.0), ("noisy", n0)] {
        let cfg = SystemConfig::new(g.clone(), 20, 10, es, 0.2, psd, wiener, 0.0, FilterMode::TruncatedSinc).unwrap();
        let t0 = Instant::now();
        let n = 2000u64;
        let s = qpsk_roundtrip(&cfg, &chan, &t, n, 1, &[22, -40], FadingKnowledge::Perfect).unwrap();
        println!("{label}: {:.2} ms/symbol wall (ser {:.3})", t0.elapsed().as_secs_f64()*1e3/n as f64, s[0].ser);
    }
}
