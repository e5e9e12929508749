use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use reexcite::analysis::{coincidence_pairs, cross_correlate, g2_zero};
use reexcite::rng::{substream, Domain};

const PERIOD: i64 = 13166;

fn poisson_times(seed: u64, rate_per_ps: f64, n: usize) -> Vec<i64> {
    let mut rng = substream(seed, Domain::Synthetic, 0);
    let gap = Exp::new(rate_per_ps).unwrap();
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += gap.sample(&mut rng);
            t.round() as i64
        })
        .collect()
}

#[test]
fn independent_poisson_streams_give_unity() {
    // 10⁶ tags per channel at roughly one click per period.
    let a = poisson_times(11, 1.0 / PERIOD as f64, 1_000_000);
    let b = poisson_times(12, 1.0 / PERIOD as f64, 1_000_000);
    let hist = cross_correlate(&a, &b, 1, 2 * PERIOD).unwrap();
    let g2 = g2_zero(&hist, PERIOD).unwrap();
    assert!((g2.value - 1.0).abs() < 0.02, "{g2:?}");
    assert!((g2.value - 1.0).abs() < 3.0 * g2.error, "{g2:?}");
}

#[test]
fn one_photon_per_pulse_gives_zero() {
    let mut rng = substream(3, Domain::Synthetic, 1);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for k in 0..200_000i64 {
        let t = k * PERIOD + 300 + rng.random_range(0..2000);
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    let hist = cross_correlate(&a, &b, 1, 2 * PERIOD).unwrap();
    assert_eq!(g2_zero(&hist, PERIOD).unwrap().value, 0.0);
}

#[test]
fn poisson_pair_rate() {
    let rate = 1e-5;
    let n = 400_000;
    let a = poisson_times(21, rate, n);
    let b = poisson_times(22, rate, n);
    let window = 3000;
    let pairs = coincidence_pairs(&a, &b, window).unwrap();
    let duration = a[n - 1].min(b[n - 1]) as f64;
    let expected = rate * rate * (2 * window + 1) as f64 * duration;
    let sigma = expected.sqrt();
    assert!((pairs.len() as f64 - expected).abs() < 5.0 * sigma, "{} vs {expected}", pairs.len());
}

fn sorted_times() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-50_000i64..50_000, 0..200).prop_map(|mut v| {
        v.sort_unstable();
        v
    })
}

proptest! {
    #[test]
    fn channel_swap_mirrors_histogram(a in sorted_times(), b in sorted_times(), bin in 1i64..50) {
        let span = bin * 100;
        let ab = cross_correlate(&a, &b, bin, span).unwrap();
        let ba = cross_correlate(&b, &a, bin, span).unwrap();
        let mut mirrored = ba.counts.clone();
        mirrored.reverse();
        prop_assert_eq!(ab.counts, mirrored);
    }

    #[test]
    fn pairs_respect_window(a in sorted_times(), b in sorted_times(), window in 0i64..5000) {
        let pairs = coincidence_pairs(&a, &b, window).unwrap();
        prop_assert!(pairs.iter().all(|p| (p.a - p.b).abs() <= window));
        let brute = a.iter().map(|&x| b.iter().filter(|&&y| (x - y).abs() <= window).count()).sum::<usize>();
        prop_assert_eq!(pairs.len(), brute);
        prop_assert!(pairs.windows(2).all(|w| w[0].a <= w[1].a));
    }
}
