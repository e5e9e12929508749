//! Figure presets.
//!
//! Each preset has a compute function returning typed results (used by the
//! tests) and is wrapped by [`run_preset`], which writes the CSV series, a
//! `metrics.json` summary and, last, the run manifest.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::analysis::{
    coincidence_pairs, cross_correlate, decay_fit, deconvolve_quadrature, first_second_histograms,
    g2_zero, gated_pairs, histogram2d, linear_fit, rabi_from_estimate, side_peak_position,
    since_clock, AnalysisError, DecayFit, Estimate, FirstSecond, FitResult, GatingMode, Hist2D,
    Spectrum, TimeHistogram,
};
use crate::calibration::predict_yield;
use crate::detchain::{detect, ChainConfig};
use crate::physmodel::{max_shift, peak_rabi_from_power, PhysError};
use crate::rng::child_seed;
use crate::scalar::to_ps;
use crate::trajectory::{run, with_workers, PhotonStream, SimError};

use super::config::{ConfigError, ExperimentConfig};
use super::manifest::{OutputSet, RunManifest};
use super::plotdata::{emit_plotdata, heatmap_svg, line_svg, PlotStyle, Product};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown preset {0:?} (expected one of {known})", known = Preset::names())]
    UnknownPreset(String),
    #[error("preset {preset} needs {what}")]
    Mismatch { preset: Preset, what: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error("writing outputs: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Errors caused by the configuration or the request rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RunError::UnknownPreset(_) | RunError::Mismatch { .. } | RunError::Config(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Preset {
    Fig2b,
    Fig3a,
    Fig3b,
    Fig4,
    FigS3,
    FigS4,
    FigS5,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fig2b,
        Preset::Fig3a,
        Preset::Fig3b,
        Preset::Fig4,
        Preset::FigS3,
        Preset::FigS4,
        Preset::FigS5,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig2b => "fig2b",
            Preset::Fig3a => "fig3a",
            Preset::Fig3b => "fig3b",
            Preset::Fig4 => "fig4",
            Preset::FigS3 => "figS3",
            Preset::FigS4 => "figS4",
            Preset::FigS5 => "figS5",
        }
    }

    fn names() -> String {
        Self::ALL.map(|p| p.name()).join(", ")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| RunError::UnknownPreset(s.to_string()))
    }
}

/// Indices of the independent detection passes of a run.
mod stage {
    pub const MAIN: u64 = 1;
    pub const SCAN: u64 = 2;
    pub const FILTERED: u64 = 3;
    pub const JITTER_FREE: u64 = 4;
    pub const TRACES: u64 = 5;
}

/// Seed of detection pass `stage`; trajectories use `sim.seed` itself.
pub fn detection_seed(cfg: &ExperimentConfig, stage: u64) -> u64 {
    child_seed(cfg.sim.seed, stage)
}

fn validated(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(v).into())
    }
}

/// Runs the trajectories of a validated config.
pub fn simulate(cfg: &ExperimentConfig) -> Result<PhotonStream, RunError> {
    validated(cfg)?;
    Ok(run(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), &cfg.sim())?)
}

struct Clicks {
    a: Vec<i64>,
    b: Vec<i64>,
    clock: Vec<i64>,
}

fn clicks(photons: &PhotonStream, chain: &ChainConfig, seed: u64, workers: usize) -> Result<Clicks, RunError> {
    let tags = detect(photons, chain, seed, workers)?;
    Ok(Clicks {
        a: tags.times(chain.detector_a.channel),
        b: tags.times(chain.detector_b.channel),
        clock: tags.times(chain.clock_channel),
    })
}

// ---------------------------------------------------------------- fig2b

/// Temporal ordering of the two photons of re-excited pulses.
#[derive(Debug, Clone, Serialize)]
pub struct TemporalResult {
    #[serde(skip)]
    pub histograms: FirstSecond,
    pub pairs: usize,
    /// Lifetime fit to the late-click tail.
    pub decay: DecayFit,
    pub first_peak_ps: f64,
    pub first_fwhm_ps: f64,
    /// First-click FWHM with the rms detector response removed in quadrature.
    pub first_fwhm_deconvolved_ps: f64,
    pub second_peak_ps: f64,
    /// Pulses with at least two emitted photons.
    pub multi_photon_pulses: u64,
    /// Fraction of their first photons emitted inside the drive window, before jitter.
    pub first_inside_drive: f64,
    pub drive_window_ps: [f64; 2],
    pub at_least_one: f64,
    pub at_least_two: f64,
}

pub fn temporal(cfg: &ExperimentConfig, photons: &PhotonStream) -> Result<TemporalResult, RunError> {
    let chain = cfg.chain();
    let c = clicks(photons, &chain, detection_seed(cfg, stage::MAIN), cfg.sim.workers)?;
    let pairs = coincidence_pairs(&c.a, &c.b, cfg.chain.coincidence_window_ps)?;
    let t = &cfg.timing;
    let histograms = first_second_histograms(&pairs, &c.clock, t.bin_ps)?;
    let decay = decay_fit(&histograms.second, (t.decay_window_ps[0], t.decay_window_ps[1]))?;

    let (on, off) = photons.pulse.drive_window(cfg.sim.off_threshold);
    let mut multi = 0u64;
    let mut inside = 0u64;
    for w in photons.records.windows(2) {
        if w[0].ordinal == 1 && w[1].pulse_index == w[0].pulse_index {
            multi += 1;
            let e = w[0].emission_time;
            if w[0].during_drive && e >= on && e <= off {
                inside += 1;
            }
        }
    }

    let (ja, jb) = (cfg.chain.detector_a.jitter_fwhm_ps, cfg.chain.detector_b.jitter_fwhm_ps);
    let response = ((ja * ja + jb * jb) / 2.0).sqrt();
    let first_fwhm = histograms.first.fwhm();
    Ok(TemporalResult {
        pairs: pairs.len(),
        decay,
        first_peak_ps: histograms.first.peak_time(),
        first_fwhm_ps: first_fwhm,
        first_fwhm_deconvolved_ps: deconvolve_quadrature(first_fwhm, response),
        second_peak_ps: histograms.second.peak_time(),
        multi_photon_pulses: multi,
        first_inside_drive: if multi == 0 { 0.0 } else { inside as f64 / multi as f64 },
        drive_window_ps: [to_ps(on), to_ps(off)],
        at_least_one: photons.fraction_at_least(1),
        at_least_two: photons.fraction_at_least(2),
        histograms,
    })
}

// ---------------------------------------------------------------- spectra

/// The three gating modes of one filter scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectraSet {
    pub unheralded: Spectrum,
    pub two_photon: Spectrum,
    pub first_photon: Spectrum,
}

impl SpectraSet {
    pub fn write_csv<W: Write>(&self, mut out: W, meta: &serde_json::Value) -> io::Result<()> {
        writeln!(out, "# {meta}")?;
        writeln!(out, "position_GHz,unheralded,unheralded_err,two_photon,two_photon_err,first_photon,first_photon_err")?;
        for i in 0..self.two_photon.positions.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.two_photon.positions[i],
                self.unheralded.counts[i],
                self.unheralded.errors[i],
                self.two_photon.counts[i],
                self.two_photon.errors[i],
                self.first_photon.counts[i],
                self.first_photon.errors[i]
            )?;
        }
        Ok(())
    }

    fn svg(&self) -> String {
        let series = |s: &Spectrum| s.positions.iter().copied().zip(s.counts.iter().copied()).collect();
        line_svg(
            &[
                ("two-photon", series(&self.two_photon)),
                ("first-photon", series(&self.first_photon)),
            ],
            "filter detuning (GHz)",
            "coincidences",
            false,
        )
    }
}

/// Scans arm A's filter cascade over `centers`; one detection pass per center
/// feeds all three gating modes.
pub fn scan_modes(
    cfg: &ExperimentConfig,
    photons: &PhotonStream,
    chain: &ChainConfig,
    centers: &[f64],
) -> Result<SpectraSet, RunError> {
    if !centers.windows(2).all(|w| w[0] < w[1]) {
        return Err(AnalysisError::InvalidArgument("filter centers must be strictly increasing".into()).into());
    }
    let seed = detection_seed(cfg, stage::SCAN);
    let window = cfg.chain.coincidence_window_ps;
    let gate = (cfg.scan.gate_ps[0], cfg.scan.gate_ps[1]);
    let counts: Result<Vec<[f64; 3]>, RunError> = with_workers(cfg.sim.workers, || {
        centers
            .par_iter()
            .map(|&center| {
                let mut ch = chain.clone();
                ch.arm_a_filters = cfg.scan.filters_at(center);
                let point = || -> Result<[f64; 3], RunError> {
                    let c = clicks(photons, &ch, seed, 1)?;
                    let pairs = coincidence_pairs(&c.a, &c.b, window)?;
                    let gated = gated_pairs(&pairs, &c.clock, gate)?;
                    Ok([c.a.len() as f64, pairs.len() as f64, gated.len() as f64])
                };
                point().map_err(|e| {
                    AnalysisError::ScanPoint {
                        center,
                        reason: e.to_string(),
                    }
                    .into()
                })
            })
            .collect()
    })?;
    let counts = counts?;
    let column = |k: usize, mode| Spectrum::from_counts(centers.to_vec(), counts.iter().map(|c| c[k]).collect(), mode);
    Ok(SpectraSet {
        unheralded: column(0, GatingMode::Unheralded),
        two_photon: column(1, GatingMode::TwoPhoton),
        first_photon: column(2, GatingMode::FirstPhoton),
    })
}

/// Heralded spectra at one drive strength.
#[derive(Debug, Clone, Serialize)]
pub struct SpectraResult {
    #[serde(skip)]
    pub spectra: SpectraSet,
    /// Largest two-photon count within the exclusion band.
    pub main_peak_ghz: Option<f64>,
    pub main_fwhm_ghz: f64,
    pub side_peak: Estimate,
    pub side_fwhm_ghz: f64,
    pub first_photon_peak: Estimate,
    /// Ω0/2π from the side peak via the shift relation.
    pub extracted_rabi_ghz: Estimate,
    /// Shift of the bare dressed-state line at the pulse maximum.
    pub bare_max_shift_ghz: f64,
}

pub fn spectra(cfg: &ExperimentConfig, photons: &PhotonStream) -> Result<SpectraResult, RunError> {
    let set = scan_modes(cfg, photons, &cfg.chain(), &cfg.scan.centers())?;
    let ex = cfg.scan.exclusion_ghz;
    let side = side_peak_position(&set.two_photon, ex)?;
    Ok(SpectraResult {
        main_peak_ghz: set.two_photon.max_position_in(-ex, ex),
        main_fwhm_ghz: set.two_photon.fwhm_in(-ex, ex),
        side_fwhm_ghz: set.two_photon.fwhm_in(f64::NEG_INFINITY, -ex),
        first_photon_peak: side_peak_position(&set.first_photon, ex)?,
        extracted_rabi_ghz: rabi_from_estimate(side, cfg.laser.detuning_ghz)?,
        bare_max_shift_ghz: max_shift(cfg.laser.peak_rabi_ghz, cfg.laser.detuning_ghz)?,
        side_peak: side,
        spectra: set,
    })
}

// ---------------------------------------------------------------- fig3b

#[derive(Debug, Clone, Serialize)]
pub struct PowerPoint {
    pub field_scale: f64,
    pub applied_rabi_ghz: f64,
    pub bare_max_shift_ghz: f64,
    /// From the first-photon spectrum, which has no zero-phonon peak.
    pub side_peak: Estimate,
    /// From the two-photon spectrum.
    pub main_peak_ghz: Option<f64>,
    pub extracted_rabi_ghz: Estimate,
    #[serde(skip)]
    pub spectra: SpectraSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerScanResult {
    pub points: Vec<PowerPoint>,
    /// Extracted Ω0 against field scale.
    pub fit: FitResult,
}

/// Configuration of one point of the power scan.
pub fn scaled_field(cfg: &ExperimentConfig, scale: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.laser.peak_rabi_ghz = cfg.laser.peak_rabi_ghz * scale;
    c
}

pub fn power_scan(cfg: &ExperimentConfig) -> Result<PowerScanResult, RunError> {
    validated(cfg)?;
    if cfg.scan.field_scales.len() < 2 {
        return Err(RunError::Mismatch {
            preset: Preset::Fig3b,
            what: "at least two scan.field_scales".into(),
        });
    }
    let centers = cfg.scan.centers();
    let mut points = Vec::new();
    for &scale in &cfg.scan.field_scales {
        let c = scaled_field(cfg, scale);
        let photons = simulate(&c)?;
        let set = scan_modes(&c, &photons, &c.chain(), &centers)?;
        let side = side_peak_position(&set.first_photon, cfg.scan.power_exclusion_ghz)?;
        let ex = cfg.scan.exclusion_ghz;
        points.push(PowerPoint {
            field_scale: scale,
            applied_rabi_ghz: c.laser.peak_rabi_ghz,
            bare_max_shift_ghz: max_shift(c.laser.peak_rabi_ghz, c.laser.detuning_ghz)?,
            side_peak: side,
            main_peak_ghz: set.two_photon.max_position_in(-ex, ex),
            extracted_rabi_ghz: rabi_from_estimate(side, c.laser.detuning_ghz)?,
            spectra: set,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.field_scale).collect();
    let y: Vec<f64> = points.iter().map(|p| p.extracted_rabi_ghz.value).collect();
    let e: Vec<f64> = points.iter().map(|p| p.extracted_rabi_ghz.error).collect();
    let fit = linear_fit(&x, &y, &e, false)?;
    Ok(PowerScanResult { points, fit })
}

// ---------------------------------------------------------------- fig4

#[derive(Debug, Clone, Serialize)]
pub struct PulsePoint {
    pub pulse_fwhm_ps: f64,
    /// `Δt_L / τ_QD`.
    pub x: f64,
    pub peak_rabi_ghz: f64,
    pub at_least_two: f64,
    pub unfiltered: Estimate,
    pub filtered: Option<Estimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PulseScanResult {
    pub points: Vec<PulsePoint>,
    /// Unfiltered g²(0) against `Δt_L/τ_QD`, through the origin.
    pub unfiltered_fit: FitResult,
    /// Filtered over unfiltered g²(0) at the longest pulse.
    pub filtered_ratio_longest: Option<f64>,
    /// Largest over smallest filtered g²(0) across the scan.
    pub filtered_max_over_min: Option<f64>,
}

/// Configuration at one pulse length, at the average power of the reference pulse.
pub fn at_pulse_length(cfg: &ExperimentConfig, pulse_fwhm_ps: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    let reference = cfg.laser.peak_rabi_ghz * cfg.pulse_scan.field_scale;
    c.laser.peak_rabi_ghz = peak_rabi_from_power(reference, cfg.laser.pulse_fwhm_ps, pulse_fwhm_ps);
    c.laser.pulse_fwhm_ps = pulse_fwhm_ps;
    c
}

fn g2_of(photons: &PhotonStream, chain: &ChainConfig, cfg: &ExperimentConfig, stage: u64) -> Result<Estimate, RunError> {
    let c = clicks(photons, chain, detection_seed(cfg, stage), cfg.sim.workers)?;
    let period = cfg.laser.rep_period_ps();
    let span = 2 * period;
    let hist = cross_correlate(&c.a, &c.b, cfg.pulse_scan.bin_ps, span - span % cfg.pulse_scan.bin_ps)?;
    Ok(g2_zero(&hist, period)?)
}

pub fn pulse_scan(cfg: &ExperimentConfig, with_filter: bool) -> Result<PulseScanResult, RunError> {
    validated(cfg)?;
    if with_filter && cfg.pulse_scan.etalon.is_none() {
        return Err(RunError::Mismatch {
            preset: Preset::Fig4,
            what: "pulse_scan.etalon for the filtered series".into(),
        });
    }
    if cfg.pulse_scan.pulse_lengths_ps.is_empty() {
        return Err(RunError::Mismatch {
            preset: Preset::Fig4,
            what: "at least one pulse_scan.pulse_lengths_ps entry".into(),
        });
    }
    let mut points = Vec::new();
    for &dt in &cfg.pulse_scan.pulse_lengths_ps {
        let c = at_pulse_length(cfg, dt);
        let photons = simulate(&c)?;
        let chain = c.chain();
        let unfiltered = g2_of(&photons, &chain, &c, stage::MAIN)?;
        let filtered = match (&cfg.pulse_scan.etalon, with_filter) {
            (Some(etalon), true) => {
                let mut filtered_chain = chain.clone();
                filtered_chain.shared_filters.push(etalon.to_spec());
                Some(g2_of(&photons, &filtered_chain, &c, stage::FILTERED)?)
            }
            _ => None,
        };
        points.push(PulsePoint {
            pulse_fwhm_ps: dt,
            x: dt / cfg.emitter.lifetime_ps,
            peak_rabi_ghz: c.laser.peak_rabi_ghz,
            at_least_two: photons.fraction_at_least(2),
            unfiltered,
            filtered,
        });
    }

    let x: Vec<f64> = points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.unfiltered.value).collect();
    let e: Vec<f64> = points.iter().map(|p| p.unfiltered.error).collect();
    let unfiltered_fit = linear_fit(&x, &y, &e, true)?;

    let longest = points
        .iter()
        .max_by(|a, b| a.pulse_fwhm_ps.total_cmp(&b.pulse_fwhm_ps))
        .expect("non-empty scan");
    let filtered_ratio_longest = longest.filtered.map(|f| f.value / longest.unfiltered.value);
    let filtered: Vec<f64> = points.iter().filter_map(|p| p.filtered.map(|f| f.value)).collect();
    let filtered_max_over_min = (!filtered.is_empty()).then(|| {
        let max = filtered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = filtered.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    });
    Ok(PulseScanResult {
        points,
        unfiltered_fit,
        filtered_ratio_longest,
        filtered_max_over_min,
    })
}

// ---------------------------------------------------------------- figS3

#[derive(Debug, Clone, Serialize)]
pub struct Hist2DResult {
    #[serde(skip)]
    pub jittered: Hist2D,
    #[serde(skip)]
    pub jitter_free: Hist2D,
    pub jitter_free_pairs: u64,
    pub jitter_free_diagonal: u64,
    /// Same-pulse photon pairs whose emission times share a bin, before detection.
    pub emission_same_bin: u64,
    pub diagonal_mean: f64,
    pub band_mean: f64,
    pub diagonal_over_band: f64,
}

pub fn two_photon_map(cfg: &ExperimentConfig, photons: &PhotonStream) -> Result<Hist2DResult, RunError> {
    let t = &cfg.timing;
    let window = cfg.chain.coincidence_window_ps;
    let map = |chain: &ChainConfig, stage: u64| -> Result<Hist2D, RunError> {
        let c = clicks(photons, chain, detection_seed(cfg, stage), cfg.sim.workers)?;
        let pairs = coincidence_pairs(&c.a, &c.b, window)?;
        Ok(histogram2d(&pairs, &c.clock, t.hist2d_bin_ps, t.hist2d_bins)?)
    };
    let chain = cfg.chain();
    let jittered = map(&chain, stage::MAIN)?;
    let mut ideal = chain.clone();
    ideal.detector_a.jitter_fwhm = 0.0;
    ideal.detector_b.jitter_fwhm = 0.0;
    let jitter_free = map(&ideal, stage::JITTER_FREE)?;

    let bin = t.hist2d_bin_ps as f64;
    let emission_same_bin = photons
        .records
        .windows(2)
        .filter(|w| {
            w[0].pulse_index == w[1].pulse_index
                && (to_ps(w[0].emission_time) / bin).floor() == (to_ps(w[1].emission_time) / bin).floor()
        })
        .count() as u64;

    let diag = jittered.diagonal();
    let diagonal_mean = diag.iter().sum::<u64>() as f64 / diag.len().max(1) as f64;
    let band_mean = jittered.band_mean(t.hist2d_band_ps[0], t.hist2d_band_ps[1]);
    Ok(Hist2DResult {
        jitter_free_pairs: jitter_free.total(),
        jitter_free_diagonal: jitter_free.diagonal().iter().sum(),
        emission_same_bin,
        diagonal_mean,
        band_mean,
        diagonal_over_band: if band_mean > 0.0 { diagonal_mean / band_mean } else { f64::NAN },
        jittered,
        jitter_free,
    })
}

// ---------------------------------------------------------------- figS4

#[derive(Debug, Clone, Serialize)]
pub struct DetuningSide {
    pub detuning_ghz: f64,
    pub at_least_one: f64,
    pub at_least_two: f64,
    pub two_photon_total: f64,
    /// Strongest two-photon feature on the far side of `ω0` from the laser
    /// (red of `ω0` for blue detuning and vice versa), GHz.
    pub side_peak_ghz: Option<f64>,
    #[serde(skip)]
    pub spectra: SpectraSet,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetuningResult {
    pub blue: DetuningSide,
    pub red: DetuningSide,
}

/// The configuration mirrored about `ω0`: laser, filters and scan range change sign.
pub fn mirrored(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.laser.detuning_ghz = -cfg.laser.detuning_ghz;
    for f in c.chain.shared_filters.iter_mut().chain(&mut c.chain.arm_a_filters).chain(&mut c.chain.arm_b_filters) {
        f.center_ghz = -f.center_ghz;
    }
    c.scan.start_ghz = -cfg.scan.stop_ghz;
    c.scan.stop_ghz = -cfg.scan.start_ghz;
    c
}

fn mirror(spec: &Spectrum) -> Spectrum {
    Spectrum {
        positions: spec.positions.iter().rev().map(|p| -p).collect(),
        counts: spec.counts.iter().rev().copied().collect(),
        errors: spec.errors.iter().rev().copied().collect(),
        mode: spec.mode,
    }
}

pub fn detuning_asymmetry(cfg: &ExperimentConfig) -> Result<DetuningResult, RunError> {
    validated(cfg)?;
    let side = |c: &ExperimentConfig, red: bool| -> Result<DetuningSide, RunError> {
        // Config validation insists on blue detuning, so the red run goes straight to the model.
        let photons = run(&c.pulse(), &c.emitter(), &c.phonons(), &c.sim())?;
        let set = scan_modes(c, &photons, &c.chain(), &c.scan.centers())?;
        let ex = cfg.scan.exclusion_ghz;
        let peak = if red {
            side_peak_position(&mirror(&set.two_photon), ex).ok().map(|e| -e.value)
        } else {
            side_peak_position(&set.two_photon, ex).ok().map(|e| e.value)
        };
        Ok(DetuningSide {
            detuning_ghz: c.laser.detuning_ghz,
            at_least_one: photons.fraction_at_least(1),
            at_least_two: photons.fraction_at_least(2),
            two_photon_total: set.two_photon.total(),
            side_peak_ghz: peak,
            spectra: set,
        })
    };
    Ok(DetuningResult {
        blue: side(cfg, false)?,
        red: side(&mirrored(cfg), true)?,
    })
}

// ---------------------------------------------------------------- figS5

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub filter_ghz: f64,
    /// Local maxima of the smoothed trace, ps after the clock.
    pub maxima_ps: Vec<f64>,
    pub fwhm_ps: f64,
    pub total: u64,
    /// Exponential fit to the tail, where the trace has one.
    pub tail: Option<DecayFit>,
    #[serde(skip)]
    pub histogram: TimeHistogram,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceResult {
    pub traces: Vec<Trace>,
}

/// Clock-referenced arrival histograms behind the scanning cascade, all light on arm A.
pub fn filtered_traces(cfg: &ExperimentConfig, photons: &PhotonStream, centers: &[f64]) -> Result<TraceResult, RunError> {
    let t = &cfg.timing;
    let n_bins = (t.trace_span_ps / t.trace_bin_ps) as usize;
    let window = (t.decay_window_ps[0], t.decay_window_ps[1].min(t.trace_span_ps));
    let seed = detection_seed(cfg, stage::TRACES);
    let traces: Result<Vec<Trace>, RunError> = with_workers(cfg.sim.workers, || {
        centers
            .par_iter()
            .map(|&f| {
                let mut chain = cfg.chain();
                chain.arm_a_filters = cfg.scan.filters_at(f);
                chain.splitter_ratio = 1.0;
                let c = clicks(photons, &chain, seed, 1)?;
                let mut h = TimeHistogram::new(t.trace_bin_ps);
                for dt in c.a.iter().filter_map(|&x| since_clock(&c.clock, x)) {
                    if dt < t.trace_span_ps {
                        h.fill(dt);
                    }
                }
                h.counts.resize(n_bins, 0);
                let maxima = h.local_maxima(t.trace_smooth, t.trace_prominence);
                Ok(Trace {
                    filter_ghz: f,
                    maxima_ps: maxima.iter().map(|&i| h.center(i)).collect(),
                    fwhm_ps: h.fwhm(),
                    total: h.total(),
                    tail: decay_fit(&h, window).ok(),
                    histogram: h,
                })
            })
            .collect()
    })?;
    Ok(TraceResult { traces: traces? })
}

// ---------------------------------------------------------------- runner

/// Result of [`run_preset`].
#[derive(Debug, Clone)]
pub struct PresetOutput {
    pub dir: PathBuf,
    pub metrics: serde_json::Value,
    pub manifest: RunManifest,
}

fn meta(preset: Preset, cfg: &ExperimentConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut m = json!({ "preset": preset.name(), "seed": cfg.sim.seed, "n_pulses": cfg.sim.n_pulses });
    if let (Some(m), serde_json::Value::Object(extra)) = (m.as_object_mut(), extra) {
        m.extend(extra);
    }
    m
}

fn calibration_summary(cfg: &ExperimentConfig) -> serde_json::Value {
    let y = predict_yield(&cfg.pulse(), &cfg.emitter(), &cfg.phonons(), cfg.sim.off_threshold, 2000);
    json!({
        "coupling_ps2": cfg.phonon.coupling_ps2,
        "peak_rabi_ghz": cfg.laser.peak_rabi_ghz,
        "predicted_preparation": y.at_least_one,
        "predicted_mean_photons": y.mean_photons,
        "bare_max_shift_ghz": max_shift(cfg.laser.peak_rabi_ghz, cfg.laser.detuning_ghz).ok(),
        "rep_period_ps": cfg.laser.rep_period_ps(),
    })
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("metrics serialize")
}

/// Runs `preset`, writing every output into `out_dir` and the manifest last.
pub fn run_preset(preset: Preset, cfg: &ExperimentConfig, out_dir: &Path, style: PlotStyle) -> Result<PresetOutput, RunError> {
    validated(cfg)?;
    let start = Instant::now();
    let mut out = OutputSet::create(out_dir)?;
    let mut derived = json!({ "calibration": calibration_summary(cfg) });

    let metrics = match preset {
        Preset::Fig2b => {
            let photons = simulate(cfg)?;
            let r = temporal(cfg, &photons)?;
            emit_plotdata(Product::Histogram(&r.histograms.first), style, &mut out, "first_photon_hist")?;
            emit_plotdata(Product::Histogram(&r.histograms.second), style, &mut out, "second_photon_hist")?;
            to_json(&r)
        }
        Preset::Fig3a => {
            let photons = simulate(cfg)?;
            let r = spectra(cfg, &photons)?;
            let m = meta(preset, cfg, json!({ "gate_ps": cfg.scan.gate_ps }));
            out.write_with("spectra.csv", |w| r.spectra.write_csv(w, &m))?;
            if style.svg {
                out.write_bytes("spectra.svg", r.spectra.svg().as_bytes())?;
            }
            to_json(&r)
        }
        Preset::Fig3b => {
            let r = power_scan(cfg)?;
            derived["applied_rabi_ghz"] = to_json(&r.points.iter().map(|p| (p.field_scale, p.applied_rabi_ghz)).collect::<Vec<_>>());
            out.write_with("sidepeak_vs_field.csv", |w| {
                writeln!(w, "# {}", meta(preset, cfg, json!({ "exclusion_ghz": cfg.scan.power_exclusion_ghz })))?;
                writeln!(w, "field_scale,side_peak_GHz,side_peak_err,main_peak_GHz,bare_max_shift_GHz")?;
                for p in &r.points {
                    let main = p.main_peak_ghz.map_or(String::new(), |m| m.to_string());
                    writeln!(w, "{},{},{},{main},{}", p.field_scale, p.side_peak.value, p.side_peak.error, p.bare_max_shift_ghz)?;
                }
                Ok(())
            })?;
            out.write_with("rabi_vs_field.csv", |w| {
                writeln!(w, "# {}", meta(preset, cfg, json!({ "slope": r.fit.slope(), "intercept": r.fit.intercept(), "r_squared": r.fit.r_squared })))?;
                writeln!(w, "field_scale,applied_rabi_GHz,extracted_rabi_GHz,extracted_rabi_err")?;
                for p in &r.points {
                    writeln!(w, "{},{},{},{}", p.field_scale, p.applied_rabi_ghz, p.extracted_rabi_ghz.value, p.extracted_rabi_ghz.error)?;
                }
                Ok(())
            })?;
            out.write_with("spectra_vs_field.csv", |w| {
                writeln!(w, "# {}", meta(preset, cfg, json!({})))?;
                writeln!(w, "field_scale,position_GHz,two_photon,first_photon")?;
                for p in &r.points {
                    let s = &p.spectra;
                    for i in 0..s.two_photon.positions.len() {
                        writeln!(w, "{},{},{},{}", p.field_scale, s.two_photon.positions[i], s.two_photon.counts[i], s.first_photon.counts[i])?;
                    }
                }
                Ok(())
            })?;
            to_json(&r)
        }
        Preset::Fig4 => {
            let r = pulse_scan(cfg, true)?;
            derived["peak_rabi_ghz_per_pulse_length"] =
                to_json(&r.points.iter().map(|p| (p.pulse_fwhm_ps, p.peak_rabi_ghz)).collect::<Vec<_>>());
            out.write_with("g2_vs_pulselength.csv", |w| {
                writeln!(w, "# {}", meta(preset, cfg, json!({ "slope_unfiltered": r.unfiltered_fit.slope(), "r_squared": r.unfiltered_fit.r_squared })))?;
                writeln!(w, "pulse_fwhm_ps,pulse_over_lifetime,peak_rabi_GHz,g2_unfiltered,g2_unfiltered_err,g2_filtered,g2_filtered_err")?;
                for p in &r.points {
                    let (fv, fe) = p.filtered.map_or((String::new(), String::new()), |f| (f.value.to_string(), f.error.to_string()));
                    writeln!(w, "{},{},{},{},{},{fv},{fe}", p.pulse_fwhm_ps, p.x, p.peak_rabi_ghz, p.unfiltered.value, p.unfiltered.error)?;
                }
                Ok(())
            })?;
            if style.svg {
                let un = r.points.iter().map(|p| (p.x, p.unfiltered.value)).collect();
                let fi = r.points.iter().filter_map(|p| p.filtered.map(|f| (p.x, f.value))).collect();
                let svg = line_svg(&[("unfiltered", un), ("filtered", fi)], "pulse length / lifetime", "g2(0)", false);
                out.write_bytes("g2_vs_pulselength.svg", svg.as_bytes())?;
            }
            to_json(&r)
        }
        Preset::FigS3 => {
            let photons = simulate(cfg)?;
            let r = two_photon_map(cfg, &photons)?;
            emit_plotdata(Product::Hist2D(&r.jittered), style, &mut out, "hist2d")?;
            out.write_with("hist2d_jitter_free.csv", |w| r.jitter_free.write_csv(w))?;
            if style.svg {
                out.write_bytes("hist2d_jitter_free.svg", heatmap_svg(&r.jitter_free).as_bytes())?;
            }
            to_json(&r)
        }
        Preset::FigS4 => {
            let r = detuning_asymmetry(cfg)?;
            derived["red_config"] = to_json(&mirrored(cfg));
            for (name, s) in [("blue", &r.blue), ("red", &r.red)] {
                let m = meta(preset, cfg, json!({ "detuning_ghz": s.detuning_ghz }));
                out.write_with(&format!("spectra_{name}.csv"), |w| s.spectra.write_csv(w, &m))?;
                if style.svg {
                    out.write_bytes(&format!("spectra_{name}.svg"), s.spectra.svg().as_bytes())?;
                }
            }
            to_json(&r)
        }
        Preset::FigS5 => {
            let photons = simulate(cfg)?;
            let r = filtered_traces(cfg, &photons, &cfg.timing.trace_centers_ghz)?;
            out.write_with("filtered_traces.csv", |w| {
                writeln!(w, "# {}", meta(preset, cfg, json!({ "bin_ps": cfg.timing.trace_bin_ps })))?;
                let cols: Vec<String> = r.traces.iter().map(|t| format!("filter_{}GHz", t.filter_ghz)).collect();
                writeln!(w, "t_ps,{}", cols.join(","))?;
                let n = r.traces.first().map_or(0, |t| t.histogram.counts.len());
                for i in 0..n {
                    let row: Vec<String> = r.traces.iter().map(|t| t.histogram.counts[i].to_string()).collect();
                    writeln!(w, "{},{}", r.traces[0].histogram.center(i), row.join(","))?;
                }
                Ok(())
            })?;
            if style.svg {
                let series: Vec<(String, Vec<(f64, f64)>)> = r
                    .traces
                    .iter()
                    .map(|t| {
                        let peak = t.histogram.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
                        let pts = (0..t.histogram.counts.len()).map(|i| (t.histogram.center(i), t.histogram.counts[i] as f64 / peak)).collect();
                        (format!("{} GHz", t.filter_ghz), pts)
                    })
                    .collect();
                let refs: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(n, p)| (n.as_str(), p.clone())).collect();
                out.write_bytes("filtered_traces.svg", line_svg(&refs, "time after clock (ps)", "normalized counts", false).as_bytes())?;
            }
            to_json(&r)
        }
    };

    let text = serde_json::to_string_pretty(&metrics).map_err(io::Error::other)? + "\n";
    out.write_bytes("metrics.json", text.as_bytes())?;
    let manifest = RunManifest::new(preset.name(), cfg, derived, &out, start.elapsed());
    manifest.write(out_dir)?;
    Ok(PresetOutput {
        dir: out_dir.to_path_buf(),
        metrics,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.sim.n_pulses = 3000;
        cfg.sim.workers = 1;
        cfg
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert_eq!("FIGS3".parse::<Preset>().unwrap(), Preset::FigS3);
        let err = "fig9".parse::<Preset>().unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("fig2b"));
    }

    #[test]
    fn fig4_without_etalon_is_a_mismatch() {
        let mut cfg = small();
        cfg.pulse_scan.etalon = None;
        let err = pulse_scan(&cfg, true).unwrap_err();
        assert!(matches!(err, RunError::Mismatch { preset: Preset::Fig4, .. }), "{err}");
    }

    #[test]
    fn constant_power_pulse_lengths() {
        let cfg = ExperimentConfig::default();
        let c = at_pulse_length(&cfg, 20.0);
        let reference = cfg.laser.peak_rabi_ghz * cfg.pulse_scan.field_scale;
        assert!((c.laser.peak_rabi_ghz - 2.0 * reference).abs() < 1e-9);
        assert_eq!(c.laser.pulse_fwhm_ps, 20.0);
    }

    #[test]
    fn mirror_flips_laser_filters_and_scan() {
        let cfg = ExperimentConfig::default();
        let m = mirrored(&cfg);
        assert_eq!(m.laser.detuning_ghz, -125.0);
        assert_eq!(m.chain.shared_filters[0].center_ghz, -125.0);
        assert_eq!(m.chain.shared_filters[1].center_ghz, 40.0);
        assert_eq!((m.scan.start_ghz, m.scan.stop_ghz), (-30.0, 100.0));
        let s = Spectrum::from_counts(vec![-1.0, 0.0, 2.0], vec![1.0, 2.0, 3.0], GatingMode::TwoPhoton);
        let r = mirror(&s);
        assert_eq!(r.positions, vec![-2.0, 0.0, 1.0]);
        assert_eq!(r.counts, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn preset_writes_outputs_then_manifest() {
        let dir = std::env::temp_dir().join(format!("reexcite-preset-{}", std::process::id()));
        let out = run_preset(Preset::FigS3, &small(), &dir, PlotStyle::default()).unwrap();
        let names: Vec<&str> = out.manifest.outputs.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(names, ["hist2d.csv", "hist2d_jitter_free.csv", "metrics.json"]);
        for e in &out.manifest.outputs {
            let bytes = std::fs::read(dir.join(&e.file)).unwrap();
            assert_eq!(crate::experiment::manifest::sha256_hex(&bytes), e.sha256);
        }
        assert!(dir.join("manifest.json").exists());
        assert!(out.metrics["band_mean"].is_number());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn invalid_config_is_a_config_error() {
        let mut cfg = small();
        cfg.laser.pulse_fwhm_ps = -1.0;
        let err = simulate(&cfg).unwrap_err();
        assert!(err.is_config_error());
    }
}
