//! Spectral filters, HBT beamsplitter and detectors.
//!
//! Photons are filtered by sampling: a photon survives a cascade with
//! probability equal to the product of the transmissions at its detection
//! frequency. Narrow etalons also stretch the wavepacket, which is
//! represented by an exponential delay with the cavity photon lifetime.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Domain};
use crate::scalar::{from_ghz, to_ps, Scalar};
use crate::tagio::{Role, TagStream, TimeTag};
use crate::trajectory::{with_workers, PhotonRecord, PhotonStream, SimError};

/// Etalons narrower than this (GHz) reshape the photon in time.
pub const DELAY_WIDTH_LIMIT_GHZ: f64 = 20.0;

/// `2·sqrt(2 ln 2)`: Gaussian FWHM over standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const PULSES_PER_BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("filter {index}: {reason}")]
    Filter { index: usize, reason: String },
    #[error("detector {arm}: {reason}")]
    Detector { arm: &'static str, reason: String },
    #[error("chain: {0}")]
    Chain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Fabry–Pérot transmission comb (Airy function); aperiodic Lorentzian when `fsr` is 0.
    LorentzianEtalon,
    GaussianBandpass,
    /// Gaussian stop band whose depth is limited by `floor`.
    Notch,
}

/// One spectral filter. Frequencies are angular, relative to `ω0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec<T = f64> {
    pub kind: FilterKind,
    pub center: T,
    pub fwhm: T,
    /// Free spectral range (etalons only); 0 disables periodicity.
    pub fsr: T,
    /// Residual transmission at the center of a notch.
    pub floor: T,
}

impl<T: Scalar> FilterSpec<T> {
    pub fn etalon(center: T, fwhm: T, fsr: T) -> Self {
        Self {
            kind: FilterKind::LorentzianEtalon,
            center,
            fwhm,
            fsr,
            floor: T::zero(),
        }
    }

    pub fn bandpass(center: T, fwhm: T) -> Self {
        Self {
            kind: FilterKind::GaussianBandpass,
            center,
            fwhm,
            fsr: T::zero(),
            floor: T::zero(),
        }
    }

    pub fn notch(center: T, fwhm: T, floor: T) -> Self {
        Self {
            kind: FilterKind::Notch,
            center,
            fwhm,
            fsr: T::zero(),
            floor,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fwhm > T::zero()) {
            return Err("fwhm must be positive".into());
        }
        if !(self.floor >= T::zero() && self.floor <= T::one()) {
            return Err("floor must lie in [0, 1]".into());
        }
        if self.kind == FilterKind::LorentzianEtalon
            && self.fsr != T::zero()
            && !(self.fsr > self.fwhm)
        {
            return Err("etalon fsr must exceed its fwhm (or be 0)".into());
        }
        Ok(())
    }

    /// Power transmission at angular frequency `omega`.
    pub fn transmission(&self, omega: T) -> T {
        let detuning = omega - self.center;
        match self.kind {
            FilterKind::LorentzianEtalon => {
                if self.fsr > T::zero() {
                    // Coefficient of finesse chosen so that the comb has exactly the
                    // configured FWHM: T(center ± fwhm/2) = 1/2.
                    let edge = (T::PI() * self.fwhm / (T::lit(2.0) * self.fsr)).sin();
                    let s = (T::PI() * detuning / self.fsr).sin();
                    T::one() / (T::one() + (s * s) / (edge * edge))
                } else {
                    let x = T::lit(2.0) * detuning / self.fwhm;
                    T::one() / (T::one() + x * x)
                }
            }
            FilterKind::GaussianBandpass => gaussian_profile(detuning, self.fwhm),
            FilterKind::Notch => {
                (T::one() - gaussian_profile(detuning, self.fwhm)).max(self.floor)
            }
        }
    }

    /// Mean photon delay introduced by this filter, s; 0 unless it is a narrow etalon.
    pub fn mean_delay(&self) -> T {
        if self.kind == FilterKind::LorentzianEtalon
            && self.fwhm < from_ghz(T::lit(DELAY_WIDTH_LIMIT_GHZ))
        {
            T::one() / self.fwhm
        } else {
            T::zero()
        }
    }
}

fn gaussian_profile<T: Scalar>(detuning: T, fwhm: T) -> T {
    let x = detuning / fwhm;
    (-T::lit(4.0) * T::LN_2() * x * x).exp()
}

/// Product of the transmissions of a filter cascade; 1 for an empty list.
pub fn cascade_transmission<T: Scalar>(specs: &[FilterSpec<T>], omega: T) -> T {
    specs
        .iter()
        .fold(T::one(), |acc, f| acc * f.transmission(omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub channel: u8,
    pub efficiency: f64,
    /// Hz.
    pub dark_rate: f64,
    /// Gaussian timing jitter FWHM, s.
    pub jitter_fwhm: f64,
    /// s.
    pub dead_time: f64,
}

impl DetectorSpec {
    pub fn ideal(channel: u8) -> Self {
        Self {
            channel,
            efficiency: 1.0,
            dark_rate: 0.0,
            jitter_fwhm: 0.0,
            dead_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err("efficiency must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("jitter_fwhm", self.jitter_fwhm),
            ("dead_time", self.dead_time),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// HBT detection setup with an electronic laser clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Filters before the beamsplitter.
    pub shared_filters: Vec<FilterSpec>,
    pub arm_a_filters: Vec<FilterSpec>,
    pub arm_b_filters: Vec<FilterSpec>,
    /// Probability that a photon is routed to arm A.
    pub splitter_ratio: f64,
    pub detector_a: DetectorSpec,
    pub detector_b: DetectorSpec,
    pub clock_channel: u8,
    /// Clock period in integer picoseconds.
    pub rep_period_ps: i64,
}

impl ChainConfig {
    /// Lossless, noiseless chain: all photons land on arm A unfiltered.
    pub fn transparent(rep_period_ps: i64) -> Self {
        Self {
            shared_filters: Vec::new(),
            arm_a_filters: Vec::new(),
            arm_b_filters: Vec::new(),
            splitter_ratio: 1.0,
            detector_a: DetectorSpec::ideal(1),
            detector_b: DetectorSpec::ideal(2),
            clock_channel: 0,
            rep_period_ps,
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let lists = [
            &self.shared_filters,
            &self.arm_a_filters,
            &self.arm_b_filters,
        ];
        for (index, f) in lists.into_iter().flatten().enumerate() {
            f.validate()
                .map_err(|reason| ChainError::Filter { index, reason })?;
        }
        self.detector_a
            .validate()
            .map_err(|reason| ChainError::Detector { arm: "a", reason })?;
        self.detector_b
            .validate()
            .map_err(|reason| ChainError::Detector { arm: "b", reason })?;
        if !(0.0..=1.0).contains(&self.splitter_ratio) {
            return Err(ChainError::Chain("splitter_ratio must lie in [0, 1]".into()));
        }
        let (a, b, c) = (
            self.detector_a.channel,
            self.detector_b.channel,
            self.clock_channel,
        );
        if a == b || a == c || b == c {
            return Err(ChainError::Chain("channel ids must be distinct".into()));
        }
        if self.rep_period_ps <= 0 {
            return Err(ChainError::Chain("rep_period_ps must be positive".into()));
        }
        Ok(())
    }
}

/// Survival probability of a photon routed to arm A (`true`) or B.
pub fn survival(chain: &ChainConfig, omega: f64, arm_a: bool) -> f64 {
    let arm = if arm_a {
        &chain.arm_a_filters
    } else {
        &chain.arm_b_filters
    };
    cascade_transmission(&chain.shared_filters, omega) * cascade_transmission(arm, omega)
}

fn filter_delay<R: Rng + ?Sized>(filters: &[FilterSpec], rng: &mut R) -> f64 {
    filters
        .iter()
        .map(|f| f.mean_delay())
        .filter(|&d| d > 0.0)
        .map(|d| Exp::new(1.0 / d).expect("positive delay").sample(rng))
        .sum()
}

fn jitter<R: Rng + ?Sized>(det: &DetectorSpec, rng: &mut R) -> f64 {
    if det.jitter_fwhm > 0.0 {
        Normal::new(0.0, det.jitter_fwhm / FWHM_PER_SIGMA)
            .expect("finite jitter")
            .sample(rng)
    } else {
        0.0
    }
}

fn dark_tags<R: Rng + ?Sized>(
    det: &DetectorSpec,
    start_ps: i64,
    period_ps: i64,
    rng: &mut R,
    out: &mut Vec<TimeTag>,
) {
    if det.dark_rate <= 0.0 {
        return;
    }
    let mean = det.dark_rate * period_ps as f64 * 1e-12;
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
    for _ in 0..n {
        let offset = rng.random_range(0..period_ps);
        out.push(TimeTag::new(det.channel, start_ps + offset));
    }
}

/// Picoseconds from seconds, rounded half to even.
#[inline]
pub fn to_ps_rounded(seconds: f64) -> i64 {
    to_ps(seconds).round_ties_even() as i64
}

fn detect_photon<R: Rng + ?Sized>(
    chain: &ChainConfig,
    record: &PhotonRecord,
    pulse_start: i64,
    rng: &mut R,
) -> Option<TimeTag> {
    let arm_a = rng.random::<f64>() < chain.splitter_ratio;
    let (arm_filters, det) = if arm_a {
        (&chain.arm_a_filters, &chain.detector_a)
    } else {
        (&chain.arm_b_filters, &chain.detector_b)
    };
    let pass = survival(chain, record.detection_freq, arm_a) * det.efficiency;
    if rng.random::<f64>() >= pass {
        return None;
    }
    let t = record.emission_time
        + filter_delay(&chain.shared_filters, rng)
        + filter_delay(arm_filters, rng)
        + jitter(det, rng);
    Some(TimeTag::new(det.channel, pulse_start + to_ps_rounded(t)))
}

/// Drops tags that arrive within the dead time of the previous kept tag on the same channel.
pub fn apply_dead_time(tags: Vec<TimeTag>, detectors: &[DetectorSpec]) -> Vec<TimeTag> {
    let mut last: [Option<i64>; 256] = [None; 256];
    let mut dead = [0i64; 256];
    for d in detectors {
        dead[d.channel as usize] = to_ps_rounded(d.dead_time);
    }
    tags.into_iter()
        .filter(|t| {
            let ch = t.channel as usize;
            if dead[ch] == 0 {
                return true;
            }
            match last[ch] {
                Some(prev) if t.timestamp - prev < dead[ch] => false,
                _ => {
                    last[ch] = Some(t.timestamp);
                    true
                }
            }
        })
        .collect()
}

/// Turns photons into a sorted tag stream with clock, arm A and arm B channels.
///
/// Pure in `(stream, chain, seed)`; the worker count never changes the result.
pub fn detect(
    stream: &PhotonStream,
    chain: &ChainConfig,
    seed: u64,
    workers: usize,
) -> Result<TagStream, SimError> {
    chain
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let n = stream.n_pulses();
    let period = chain.rep_period_ps;
    let records = &stream.records;
    let blocks = n.div_ceil(PULSES_PER_BLOCK);

    let parts: Vec<Vec<TimeTag>> = with_workers(workers, || {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let lo = b * PULSES_PER_BLOCK;
                let hi = (lo + PULSES_PER_BLOCK).min(n);
                let mut out = Vec::new();
                let mut idx = records.partition_point(|r| r.pulse_index < lo);
                for k in lo..hi {
                    let mut rng = substream(seed, Domain::Detection, k);
                    let start = k as i64 * period;
                    out.push(TimeTag::new(chain.clock_channel, start));
                    while idx < records.len() && records[idx].pulse_index == k {
                        if let Some(tag) = detect_photon(chain, &records[idx], start, &mut rng) {
                            out.push(tag);
                        }
                        idx += 1;
                    }
                    dark_tags(&chain.detector_a, start, period, &mut rng, &mut out);
                    dark_tags(&chain.detector_b, start, period, &mut rng, &mut out);
                }
                out.sort_unstable();
                out
            })
            .collect()
    })?;

    let mut tags: Vec<TimeTag> = parts.into_iter().flatten().collect();
    // Blocks are already sorted; jitter and delays only reorder near block edges.
    tags.sort();
    let tags = apply_dead_time(tags, &[chain.detector_a, chain.detector_b]);
    Ok(TagStream {
        tags,
        sorted: true,
        roles: [
            (Role::Clock, chain.clock_channel),
            (Role::ArmA, chain.detector_a.channel),
            (Role::ArmB, chain.detector_b.channel),
        ]
        .into_iter()
        .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physmodel::{EmitterModel, LaserPulse, PhononEnv};
    use crate::scalar::{from_ps, to_ghz};
    use crate::trajectory::SimConfig;
    use approx::assert_relative_eq;

    fn ghz(x: f64) -> f64 {
        from_ghz(x)
    }

    #[test]
    fn peak_transmission_is_one() {
        let c = ghz(-12.0);
        for f in [
            FilterSpec::etalon(c, ghz(5.5), ghz(125.0)),
            FilterSpec::etalon(c, ghz(5.5), 0.0),
            FilterSpec::bandpass(c, ghz(120.0)),
        ] {
            assert_relative_eq!(f.transmission(c), 1.0, max_relative = 1e-12);
        }
        let notch = FilterSpec::notch(c, ghz(120.0), 1e-6);
        assert_relative_eq!(notch.transmission(c), 1e-6);
    }

    #[test]
    fn etalon_half_width() {
        for fsr in [ghz(125.0), ghz(292.0), 0.0] {
            let f = FilterSpec::etalon(ghz(3.0), ghz(5.5), fsr);
            for side in [-0.5, 0.5] {
                let t = f.transmission(ghz(3.0) + side * ghz(5.5));
                assert!((t - 0.5).abs() < 1e-6, "{t}");
            }
        }
    }

    #[test]
    fn etalon_comb_is_periodic() {
        let f = FilterSpec::etalon(0.0, ghz(5.5), ghz(125.0));
        assert_relative_eq!(f.transmission(ghz(125.0)), 1.0, max_relative = 1e-9);
        assert_relative_eq!(
            f.transmission(ghz(40.0)),
            f.transmission(ghz(165.0)),
            max_relative = 1e-9
        );
    }

    #[test]
    fn gaussian_and_notch_profiles() {
        let bp = FilterSpec::bandpass(0.0, ghz(120.0));
        assert_relative_eq!(bp.transmission(ghz(60.0)), 0.5, max_relative = 1e-12);
        let notch = FilterSpec::notch(ghz(125.0), ghz(120.0), 1e-6);
        assert_relative_eq!(notch.transmission(ghz(65.0)), 0.5, max_relative = 1e-12);
        assert!(notch.transmission(ghz(-45.0)) > 0.99);
    }

    #[test]
    fn cascade_cases() {
        let f = FilterSpec::etalon(0.0, ghz(5.5), ghz(125.0));
        let w = ghz(7.7);
        assert_eq!(cascade_transmission(&[f], w), f.transmission(w));
        assert_eq!(cascade_transmission::<f64>(&[], w), 1.0);
        let scan = [
            FilterSpec::etalon(0.0, ghz(5.5), ghz(125.0)),
            FilterSpec::etalon(0.0, ghz(16.4), ghz(292.0)),
        ];
        assert!(cascade_transmission(&scan, ghz(125.0)) < 0.05);
        assert_relative_eq!(cascade_transmission(&scan, 0.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn narrow_etalon_suppresses_stark_shifted_photons() {
        let f = FilterSpec::etalon(0.0, ghz(6.0), ghz(125.0));
        let t = f.transmission(ghz(-45.0));
        assert!(t < 0.01);
        assert!((t - 0.006_896).abs() < 1e-4, "{t}");
    }

    #[test]
    fn filter_validation() {
        assert!(FilterSpec::etalon(0.0, 0.0, 1.0).validate().is_err());
        assert!(FilterSpec::etalon(0.0, 2.0, 1.0).validate().is_err());
        assert!(FilterSpec::notch(0.0, 1.0, 1.5).validate().is_err());
        assert!(FilterSpec::etalon(0.0, 1.0, 0.0).validate().is_ok());
    }

    #[test]
    fn delay_only_for_narrow_etalons() {
        let narrow = FilterSpec::etalon(0.0, ghz(5.5), ghz(125.0));
        assert_relative_eq!(to_ps(narrow.mean_delay()), 28.937, max_relative = 1e-3);
        assert_eq!(FilterSpec::etalon(0.0, ghz(25.0), ghz(292.0)).mean_delay(), 0.0);
        assert_eq!(FilterSpec::bandpass(0.0, ghz(5.0)).mean_delay(), 0.0);
    }

    #[test]
    fn rounding_is_half_even() {
        assert_eq!(to_ps_rounded(2.5e-12), 2);
        assert_eq!(to_ps_rounded(3.5e-12), 4);
        assert_eq!(to_ps_rounded(-2.5e-12), -2);
    }

    #[test]
    fn dead_time_sweep() {
        let det = DetectorSpec {
            dead_time: from_ps(100.0),
            ..DetectorSpec::ideal(1)
        };
        let tags = vec![
            TimeTag::new(1, 0),
            TimeTag::new(2, 10),
            TimeTag::new(1, 50),
            TimeTag::new(1, 100),
            TimeTag::new(1, 150),
            TimeTag::new(1, 250),
        ];
        let kept = apply_dead_time(tags, &[det]);
        assert_eq!(
            kept,
            vec![
                TimeTag::new(1, 0),
                TimeTag::new(2, 10),
                TimeTag::new(1, 100),
                TimeTag::new(1, 250)
            ]
        );
    }

    fn small_run(n: u64) -> PhotonStream {
        let pulse = LaserPulse::new(
            ghz(125.0),
            from_ps(80.0),
            ghz(115.2),
            from_ps(13166.0),
            from_ps(200.0),
        )
        .unwrap();
        let emitter = EmitterModel {
            transition_freq: 0.0,
            lifetime: from_ps(465.0),
            diffusion_sigma: ghz(2.0),
            fourier_coeff: 1.0,
        };
        let env = PhononEnv {
            coupling: 0.08e-24,
            cutoff: ghz(180.0),
            temperature: 4.0,
        };
        let cfg = SimConfig {
            n_pulses: n,
            ..SimConfig::default()
        };
        crate::trajectory::run(&pulse, &emitter, &env, &cfg).unwrap()
    }

    #[test]
    fn transparent_chain_reproduces_emission_times() {
        let photons = small_run(5000);
        let tags = detect(&photons, &ChainConfig::transparent(13166), 3, 0).unwrap();
        let arm: Vec<i64> = tags.times(1);
        assert_eq!(arm.len(), photons.records.len());
        let mut expected: Vec<i64> = photons
            .records
            .iter()
            .map(|r| r.pulse_index as i64 * 13166 + to_ps_rounded(r.emission_time))
            .collect();
        expected.sort();
        assert_eq!(arm, expected);
        assert_eq!(tags.count(0), 5000);
        let clocks = tags.times(0);
        assert!(clocks.windows(2).all(|w| w[1] - w[0] == 13166));
    }

    #[test]
    fn adding_filters_never_raises_survival() {
        let mut chain = ChainConfig::transparent(13166);
        let bare: Vec<f64> = (-100..100)
            .map(|g| survival(&chain, ghz(g as f64), true))
            .collect();
        chain.shared_filters.push(FilterSpec::bandpass(ghz(-40.0), ghz(120.0)));
        let one: Vec<f64> = (-100..100)
            .map(|g| survival(&chain, ghz(g as f64), true))
            .collect();
        chain
            .arm_a_filters
            .push(FilterSpec::etalon(0.0, ghz(6.0), ghz(125.0)));
        let two: Vec<f64> = (-100..100)
            .map(|g| survival(&chain, ghz(g as f64), true))
            .collect();
        for i in 0..bare.len() {
            assert!(one[i] <= bare[i] && two[i] <= one[i]);
        }
    }

    #[test]
    fn dark_counts_are_poisson() {
        let photons = small_run(1);
        // 1 s of darks in a single long "period".
        let mut chain = ChainConfig::transparent(1_000_000_000_000);
        chain.detector_a.dark_rate = 1000.0;
        let mut no_photons = photons.clone();
        no_photons.records.clear();
        let tags = detect(&no_photons, &chain, 11, 1).unwrap();
        let n = tags.count(1) as f64;
        assert!((n - 1000.0).abs() < 3.0 * 1000f64.sqrt(), "{n}");
        assert_eq!(tags.count(2), 0);
    }

    #[test]
    fn dead_time_holds_on_output() {
        let photons = small_run(20_000);
        let mut chain = ChainConfig::transparent(13166);
        chain.splitter_ratio = 0.5;
        chain.detector_a.dead_time = from_ps(300.0);
        chain.detector_b.dead_time = from_ps(300.0);
        let tags = detect(&photons, &chain, 5, 0).unwrap();
        for ch in [1u8, 2] {
            let t = tags.times(ch);
            assert!(t.windows(2).all(|w| w[1] - w[0] >= 300));
        }
    }

    #[test]
    fn duplicate_channels_rejected() {
        let mut chain = ChainConfig::transparent(13166);
        chain.detector_b.channel = 1;
        assert!(chain.validate().is_err());
    }

    #[test]
    fn stark_shifted_photons_blocked_by_narrow_etalon() {
        let photons = small_run(30_000);
        let mut chain = ChainConfig::transparent(13166);
        chain.shared_filters.push(FilterSpec::etalon(0.0, ghz(6.0), ghz(125.0)));
        let red: Vec<&PhotonRecord> = photons
            .records
            .iter()
            .filter(|r| to_ghz(r.center_freq) < -40.0)
            .collect();
        let mean_t: f64 = red
            .iter()
            .map(|r| survival(&chain, r.detection_freq, true))
            .sum::<f64>()
            / red.len() as f64;
        assert!(!red.is_empty());
        assert!(mean_t < 0.02, "{mean_t}");
    }
}
