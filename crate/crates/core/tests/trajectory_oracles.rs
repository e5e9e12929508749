use proptest::prelude::*;

use reexcite::calibration::predict_yield;
use reexcite::experiment::ExperimentConfig;
use reexcite::scalar::{from_ghz, from_ps, to_ps};
use reexcite::trajectory::{run, SimConfig};

/// Kolmogorov–Smirnov distance of a sample against a CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampled_yields_match_rate_equations() {
    let mut cfg = ExperimentConfig::default();
    cfg.sim.n_pulses = 200_000;
    let photons = run(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), &cfg.sim()).unwrap();
    let y = predict_yield(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), cfg.sim.off_threshold, 4000);
    let n = cfg.sim.n_pulses as f64;

    let p = photons.fraction_at_least(1);
    let sigma = (y.at_least_one * (1.0 - y.at_least_one) / n).sqrt();
    assert!((p - y.at_least_one).abs() < 4.0 * sigma, "P(n≥1) {p} vs {}", y.at_least_one);

    let during = photons.records.iter().filter(|r| r.during_drive).count() as f64 / n;
    let sigma = (y.during_drive / n).sqrt();
    assert!((during - y.during_drive).abs() < 4.0 * sigma, "during {during} vs {}", y.during_drive);
    assert!(photons.aborted.is_empty());
}

#[test]
fn after_pulse_delays_are_exponential() {
    let mut cfg = ExperimentConfig::default();
    cfg.sim.n_pulses = 50_000;
    let photons = run(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), &cfg.sim()).unwrap();
    let (_, t_off) = cfg.pulse().drive_window(cfg.sim.off_threshold);
    let delays: Vec<f64> = photons
        .records
        .iter()
        .filter(|r| !r.during_drive)
        .map(|r| to_ps(r.emission_time - t_off))
        .collect();
    let n = delays.len() as f64;
    let tau = cfg.emitter.lifetime_ps;
    let d = ks_distance(delays, |x| 1.0 - (-x / tau).exp());
    // Critical value at the 0.1% level.
    assert!(d < 1.95 / n.sqrt(), "KS distance {d} over {n} photons");
}

#[test]
fn thinning_matches_rate_equations_across_couplings() {
    for coupling_ps2 in [0.01, 0.03, 0.2] {
        let mut cfg = ExperimentConfig::default();
        cfg.phonon.coupling_ps2 = coupling_ps2;
        cfg.sim.n_pulses = 50_000;
        let photons = run(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), &cfg.sim()).unwrap();
        let y = predict_yield(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), cfg.sim.off_threshold, 4000);
        let mean = photons.mean_photons();
        let sigma = (y.mean_photons / cfg.sim.n_pulses as f64).sqrt();
        assert!((mean - y.mean_photons).abs() < 5.0 * sigma, "α {coupling_ps2}: {mean} vs {}", y.mean_photons);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pulses_are_strictly_time_ordered(
        rabi in 20.0f64..200.0,
        detuning in prop_oneof![20.0f64..250.0, -250.0f64..-20.0],
        fwhm in 10.0f64..100.0,
        coupling in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.laser.peak_rabi_ghz = rabi;
        cfg.laser.detuning_ghz = detuning;
        cfg.laser.pulse_fwhm_ps = fwhm;
        cfg.phonon.coupling_ps2 = coupling;
        let sim = SimConfig { n_pulses: 300, rng_seed: seed, workers: 1, ..cfg.sim() };
        let pulse = cfg.pulse();
        let photons = run(&pulse, &cfg.emitter(), &cfg.phonons(), &sim).unwrap();
        let (on, off) = pulse.drive_window(sim.off_threshold);
        for w in photons.records.windows(2) {
            if w[0].pulse_index == w[1].pulse_index {
                prop_assert!(w[0].emission_time < w[1].emission_time);
                prop_assert_eq!(w[1].ordinal, w[0].ordinal + 1);
                // Only the final photon of a pulse can come after the drive.
                prop_assert!(w[0].during_drive);
            }
        }
        for r in &photons.records {
            if r.during_drive {
                prop_assert!(r.emission_time >= on && r.emission_time <= off);
                prop_assert!(r.center_freq * detuning.signum() <= 1e-9 * from_ghz(1.0));
            } else {
                prop_assert!(r.emission_time > off);
                prop_assert_eq!(r.center_freq, 0.0);
            }
        }
        let counted: u64 = photons.per_pulse.iter().map(|&c| c as u64).sum();
        prop_assert_eq!(counted as usize, photons.records.len());
        prop_assert!(photons.per_pulse.iter().all(|&c| c as usize <= sim.max_photons_per_pulse));
        prop_assert!(from_ps(fwhm) > 0.0);
    }
}
