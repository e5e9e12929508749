use proptest::prelude::*;
use rand_distr::{Distribution, Exp};

use reexcite::analysis::{
    decay_fit, extract_rabi, linear_fit, side_peak_position, GatingMode, Spectrum, TimeHistogram,
};
use reexcite::physmodel::{max_shift, rabi_from_shift};
use reexcite::rng::{substream, Domain};

fn two_gaussians(side: f64, step: f64) -> Spectrum {
    let n = (130.0 / step) as usize;
    let positions: Vec<f64> = (0..=n).map(|i| -100.0 + i as f64 * step).collect();
    let counts = positions
        .iter()
        .map(|&x| {
            let main = 5000.0 * (-0.5 * (x / 3.6).powi(2)).exp();
            let broad = 2000.0 * (-0.5 * ((x - side) / 8.0).powi(2)).exp();
            (main + broad).round()
        })
        .collect();
    Spectrum::from_counts(positions, counts, GatingMode::TwoPhoton)
}

#[test]
fn planted_exponential_is_recovered() {
    let mut rng = substream(465, Domain::Synthetic, 0);
    let exp = Exp::<f64>::new(1.0 / 465.0).unwrap();
    let hist = TimeHistogram::from_times((0..1_000_000).map(|_| exp.sample(&mut rng).floor() as i64), 10);
    let fit = decay_fit(&hist, (0, 8000)).unwrap();
    assert!((fit.tau - 465.0).abs() < 2.0, "{fit:?}");
    assert!(fit.error < 2.0, "{fit:?}");
}

#[test]
fn planted_side_peak_is_recovered() {
    let s = side_peak_position(&two_gaussians(-45.0, 1.0), 10.0).unwrap();
    assert!((s.value + 45.0).abs() < 0.5, "{s:?}");
    let r = extract_rabi(&two_gaussians(-45.0, 1.0), 125.0).unwrap();
    assert!((r.value - 115.2).abs() < 0.5, "{r:?}");
}

#[test]
fn planted_line_is_recovered() {
    let x: Vec<f64> = [10.0, 20.0, 40.0, 60.0, 80.0].iter().map(|d| d / 465.0).collect();
    let y: Vec<f64> = x.iter().map(|x| 0.72 * x).collect();
    let fit = linear_fit(&x, &y, &[], true).unwrap();
    assert!((fit.slope() - 0.72).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn extraction_inverts_planted_shifts(rabi in 80.0f64..180.0, step in prop_oneof![Just(0.5), Just(1.0)]) {
        let detuning = 125.0;
        let shift = max_shift(rabi, detuning).unwrap();
        let spec = two_gaussians(shift, step);
        let got = extract_rabi(&spec, detuning).unwrap();
        let back = rabi_from_shift(shift, detuning).unwrap();
        prop_assert!((back - rabi).abs() < 1e-9 * rabi);
        // Parabolic refinement of a sampled Gaussian is good to a fraction of the step.
        let tolerance = 3.0 * got.error + 0.2 * (rabi_from_shift(shift - step, detuning).unwrap() - rabi).abs();
        prop_assert!((got.value - rabi).abs() <= tolerance, "planted {} got {:?}", rabi, got);
    }
}
