//! TOML experiment configuration in laboratory units.
//!
//! Frequencies are ordinary frequencies in GHz (relative to `ω0` unless
//! noted), times in ps, rates in Hz. Conversion to the SI angular units of
//! the model happens in the `to_*` methods.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detchain::{ChainConfig, DetectorSpec, FilterKind, FilterSpec};
use crate::physmodel::{EmitterModel, LaserPulse, PhononEnv};
use crate::scalar::{from_ghz, from_ps};
use crate::trajectory::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} invalid field(s): {}", .0.len(), format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// One failed check, addressed by its dotted key path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserSection {
    /// Laser minus transition frequency, GHz; positive is blue.
    pub detuning_ghz: f64,
    pub pulse_fwhm_ps: f64,
    /// Peak Rabi frequency `Ω0/2π`, GHz. The default puts the measured
    /// two-photon side peak at −45 GHz (see `examples/calibrate.rs`).
    pub peak_rabi_ghz: f64,
    pub rep_rate_mhz: f64,
    /// Envelope peak after the clock edge, ps.
    pub pulse_center_ps: f64,
}

impl Default for LaserSection {
    fn default() -> Self {
        Self {
            detuning_ghz: 125.0,
            pulse_fwhm_ps: 80.0,
            peak_rabi_ghz: 119.0,
            rep_rate_mhz: 75.95,
            pulse_center_ps: 200.0,
        }
    }
}

impl LaserSection {
    /// Clock period, whole ps (truncated).
    pub fn rep_period_ps(&self) -> i64 {
        (1e6 / self.rep_rate_mhz).floor() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitterSection {
    pub lifetime_ps: f64,
    /// Standard deviation of the Gaussian spectral diffusion, GHz.
    pub diffusion_sigma_ghz: f64,
    /// Fourier-broadening coefficient `C`.
    pub fourier_coeff: f64,
}

impl Default for EmitterSection {
    fn default() -> Self {
        Self {
            lifetime_ps: 465.0,
            diffusion_sigma_ghz: 2.0,
            fourier_coeff: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhononSection {
    /// Coupling `α` of `J(ω) = α ω³ exp(−ω²/ω_c²)`, ps².
    pub coupling_ps2: f64,
    /// Cutoff `ω_c/2π`, GHz.
    pub cutoff_ghz: f64,
    pub temperature_k: f64,
}

impl Default for PhononSection {
    fn default() -> Self {
        Self {
            coupling_ps2: DEFAULT_COUPLING_PS2,
            cutoff_ghz: 180.0,
            temperature_k: 4.0,
        }
    }
}

/// Coupling that gives a single-pulse preparation of 0.85 at the default
/// 80 ps, 119 GHz pulse (see `examples/calibrate.rs`).
pub const DEFAULT_COUPLING_PS2: f64 = 0.0766;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_pulses: u64,
    pub seed: u64,
    pub off_threshold: f64,
    pub max_photons_per_pulse: usize,
    pub thinning_margin: f64,
    /// 0 uses all cores.
    pub workers: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_pulses: d.n_pulses,
            seed: d.rng_seed,
            off_threshold: d.off_threshold,
            max_photons_per_pulse: d.max_photons_per_pulse,
            thinning_margin: d.thinning_margin,
            workers: d.workers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub kind: FilterKind,
    pub center_ghz: f64,
    pub fwhm_ghz: f64,
    #[serde(default)]
    pub fsr_ghz: f64,
    #[serde(default)]
    pub floor: f64,
}

impl FilterEntry {
    pub fn to_spec(&self) -> FilterSpec {
        FilterSpec {
            kind: self.kind,
            center: from_ghz(self.center_ghz),
            fwhm: from_ghz(self.fwhm_ghz),
            fsr: from_ghz(self.fsr_ghz),
            floor: self.floor,
        }
    }

    /// Same filter moved by `offset_ghz`.
    pub fn shifted(&self, offset_ghz: f64) -> Self {
        Self {
            center_ghz: self.center_ghz + offset_ghz,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorEntry {
    pub channel: u8,
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: f64,
}

impl Default for DetectorEntry {
    fn default() -> Self {
        Self {
            channel: 1,
            efficiency: 0.85,
            dark_rate_hz: 100.0,
            jitter_fwhm_ps: 26.0,
            dead_time_ps: 10_000.0,
        }
    }
}

impl DetectorEntry {
    pub fn to_spec(&self) -> DetectorSpec {
        DetectorSpec {
            channel: self.channel,
            efficiency: self.efficiency,
            dark_rate: self.dark_rate_hz,
            jitter_fwhm: from_ps(self.jitter_fwhm_ps),
            dead_time: from_ps(self.dead_time_ps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub splitter_ratio: f64,
    pub clock_channel: u8,
    pub coincidence_window_ps: i64,
    pub shared_filters: Vec<FilterEntry>,
    pub arm_a_filters: Vec<FilterEntry>,
    pub arm_b_filters: Vec<FilterEntry>,
    pub detector_a: DetectorEntry,
    pub detector_b: DetectorEntry,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            splitter_ratio: 0.5,
            clock_channel: 0,
            coincidence_window_ps: 3000,
            shared_filters: vec![
                FilterEntry {
                    kind: FilterKind::Notch,
                    center_ghz: 125.0,
                    fwhm_ghz: 120.0,
                    fsr_ghz: 0.0,
                    floor: 1e-6,
                },
                FilterEntry {
                    kind: FilterKind::GaussianBandpass,
                    center_ghz: -40.0,
                    fwhm_ghz: 120.0,
                    fsr_ghz: 0.0,
                    floor: 0.0,
                },
            ],
            arm_a_filters: Vec::new(),
            arm_b_filters: Vec::new(),
            detector_a: DetectorEntry::default(),
            detector_b: DetectorEntry {
                channel: 2,
                jitter_fwhm_ps: 29.0,
                ..DetectorEntry::default()
            },
        }
    }
}

/// Scanning-filter and scan-grid settings used by the spectral presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    /// Scanning cascade, centered at 0; moved jointly to each scan position.
    pub filters: Vec<FilterEntry>,
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub step_ghz: f64,
    /// First-photon gate after the clock, ps.
    pub gate_ps: [f64; 2],
    /// Positions at or above `-exclusion` are ignored when locating the side peak.
    pub exclusion_ghz: f64,
    /// Field-amplitude scale factors of the power scan.
    pub field_scales: Vec<f64>,
    /// Exclusion used on the first-photon spectra of the power scan. Those
    /// spectra carry no zero-phonon peak, so weak-drive shifts stay resolvable.
    pub power_exclusion_ghz: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            filters: vec![
                FilterEntry {
                    kind: FilterKind::LorentzianEtalon,
                    center_ghz: 0.0,
                    fwhm_ghz: 5.5,
                    fsr_ghz: 125.0,
                    floor: 0.0,
                },
                FilterEntry {
                    kind: FilterKind::LorentzianEtalon,
                    center_ghz: 0.0,
                    fwhm_ghz: 16.4,
                    fsr_ghz: 292.0,
                    floor: 0.0,
                },
            ],
            start_ghz: -100.0,
            stop_ghz: 30.0,
            step_ghz: 1.0,
            gate_ps: [350.0, 3000.0],
            exclusion_ghz: 10.0,
            field_scales: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2],
            power_exclusion_ghz: 3.0,
        }
    }
}

impl ScanSection {
    pub fn centers(&self) -> Vec<f64> {
        let n = ((self.stop_ghz - self.start_ghz) / self.step_ghz + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.start_ghz + i as f64 * self.step_ghz)
            .collect()
    }

    /// The scanning cascade positioned at `center_ghz`.
    pub fn filters_at(&self, center_ghz: f64) -> Vec<FilterSpec> {
        self.filters
            .iter()
            .map(|f| f.shifted(center_ghz).to_spec())
            .collect()
    }
}

/// Pulse-length scan with and without a fixed etalon before the beamsplitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseScanSection {
    pub pulse_lengths_ps: Vec<f64>,
    /// Fixed etalon at `ω0`; `None` disables the filtered series.
    pub etalon: Option<FilterEntry>,
    /// Histogram bin for g²(τ), ps.
    pub bin_ps: i64,
    /// Field amplitude at the reference pulse length (`laser.pulse_fwhm_ps`)
    /// relative to `laser.peak_rabi_ghz`; other lengths keep the average power.
    pub field_scale: f64,
}

impl Default for PulseScanSection {
    fn default() -> Self {
        Self {
            pulse_lengths_ps: vec![10.0, 20.0, 40.0, 60.0, 80.0],
            etalon: Some(FilterEntry {
                kind: FilterKind::LorentzianEtalon,
                center_ghz: 0.0,
                fwhm_ghz: 6.0,
                fsr_ghz: 125.0,
                floor: 0.0,
            }),
            bin_ps: 1,
            field_scale: 0.86,
        }
    }
}

/// Time-histogram settings of the temporal presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    /// Bin of the 1st/2nd-photon histograms, ps.
    pub bin_ps: i64,
    /// Tail window of the lifetime fit, ps after the clock.
    pub decay_window_ps: [i64; 2],
    /// Bin and size of the 2D histogram.
    pub hist2d_bin_ps: i64,
    pub hist2d_bins: usize,
    /// Near-diagonal band compared with the diagonal, ps.
    pub hist2d_band_ps: [i64; 2],
    /// Filter positions of the frequency-filtered traces, GHz.
    pub trace_centers_ghz: Vec<f64>,
    pub trace_bin_ps: i64,
    /// Traces are cut at this time after the clock, ps.
    pub trace_span_ps: i64,
    /// Boxcar width (bins) and relative prominence used to count maxima.
    pub trace_smooth: usize,
    pub trace_prominence: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            bin_ps: 10,
            decay_window_ps: [700, 4000],
            hist2d_bin_ps: 5,
            hist2d_bins: 400,
            hist2d_band_ps: [50, 100],
            trace_centers_ghz: vec![0.0, -10.0, -20.0, -30.0, -40.0, -45.0, -50.0],
            trace_bin_ps: 5,
            trace_span_ps: 2000,
            trace_smooth: 3,
            trace_prominence: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Preset run by `preset` when none is given on the command line.
    pub preset: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            preset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub laser: LaserSection,
    pub emitter: EmitterSection,
    pub phonon: PhononSection,
    pub sim: SimSection,
    pub chain: ChainSection,
    pub scan: ScanSection,
    pub pulse_scan: PulseScanSection,
    pub timing: TimingSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_column(text, s.start))
                .unwrap_or((0, 0));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        Ok(cfg)
    }

    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text)?;
        let v = cfg.violations();
        if v.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn pulse(&self) -> LaserPulse {
        LaserPulse {
            detuning: from_ghz(self.laser.detuning_ghz),
            pulse_fwhm: from_ps(self.laser.pulse_fwhm_ps),
            peak_rabi: from_ghz(self.laser.peak_rabi_ghz),
            rep_period: from_ps(self.laser.rep_period_ps() as f64),
            pulse_center: from_ps(self.laser.pulse_center_ps),
        }
    }

    pub fn emitter(&self) -> EmitterModel {
        EmitterModel {
            transition_freq: 0.0,
            lifetime: from_ps(self.emitter.lifetime_ps),
            diffusion_sigma: from_ghz(self.emitter.diffusion_sigma_ghz),
            fourier_coeff: self.emitter.fourier_coeff,
        }
    }

    pub fn phonons(&self) -> PhononEnv {
        PhononEnv {
            coupling: self.phonon.coupling_ps2 * 1e-24,
            cutoff: from_ghz(self.phonon.cutoff_ghz),
            temperature: self.phonon.temperature_k,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            n_pulses: self.sim.n_pulses,
            rng_seed: self.sim.seed,
            off_threshold: self.sim.off_threshold,
            max_photons_per_pulse: self.sim.max_photons_per_pulse,
            thinning_margin: self.sim.thinning_margin,
            workers: self.sim.workers,
        }
    }

    pub fn chain(&self) -> ChainConfig {
        let specs = |v: &[FilterEntry]| v.iter().map(FilterEntry::to_spec).collect();
        ChainConfig {
            shared_filters: specs(&self.chain.shared_filters),
            arm_a_filters: specs(&self.chain.arm_a_filters),
            arm_b_filters: specs(&self.chain.arm_b_filters),
            splitter_ratio: self.chain.splitter_ratio,
            detector_a: self.chain.detector_a.to_spec(),
            detector_b: self.chain.detector_b.to_spec(),
            clock_channel: self.chain.clock_channel,
            rep_period_ps: self.laser.rep_period_ps(),
        }
    }

    /// Every violated constraint, in key-path form.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut check = |ok: bool, path: &str, message: &str| {
            if !ok {
                v.push(Violation {
                    path: path.to_string(),
                    message: message.to_string(),
                });
            }
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();

        let l = &self.laser;
        check(pos(l.detuning_ghz), "laser.detuning_ghz", "must be positive (blue detuning)");
        check(pos(l.pulse_fwhm_ps), "laser.pulse_fwhm_ps", "must be positive");
        check(nonneg(l.peak_rabi_ghz), "laser.peak_rabi_ghz", "must be non-negative");
        check(pos(l.rep_rate_mhz), "laser.rep_rate_mhz", "must be positive");
        check(l.pulse_center_ps.is_finite(), "laser.pulse_center_ps", "must be finite");
        if pos(l.pulse_fwhm_ps) && pos(l.rep_rate_mhz) {
            check(
                (l.rep_period_ps() as f64) > 4.0 * l.pulse_fwhm_ps,
                "laser.rep_rate_mhz",
                "repetition period must exceed 4 pulse lengths",
            );
        }

        let e = &self.emitter;
        check(pos(e.lifetime_ps), "emitter.lifetime_ps", "must be positive");
        check(nonneg(e.diffusion_sigma_ghz), "emitter.diffusion_sigma_ghz", "must be non-negative");
        check(nonneg(e.fourier_coeff), "emitter.fourier_coeff", "must be non-negative");

        let p = &self.phonon;
        check(nonneg(p.coupling_ps2), "phonon.coupling_ps2", "must be non-negative");
        check(pos(p.cutoff_ghz), "phonon.cutoff_ghz", "must be positive");
        check(nonneg(p.temperature_k), "phonon.temperature_k", "must be non-negative");

        let s = &self.sim;
        check(s.n_pulses >= 1, "sim.n_pulses", "must be at least 1");
        check(
            s.off_threshold > 0.0 && s.off_threshold < 1.0,
            "sim.off_threshold",
            "must lie in (0, 1)",
        );
        check(s.max_photons_per_pulse >= 1, "sim.max_photons_per_pulse", "must be at least 1");
        check(s.thinning_margin >= 1.0, "sim.thinning_margin", "must be at least 1");

        let c = &self.chain;
        check(
            (0.0..=1.0).contains(&c.splitter_ratio),
            "chain.splitter_ratio",
            "must lie in [0, 1]",
        );
        check(
            c.coincidence_window_ps >= 0,
            "chain.coincidence_window_ps",
            "must be non-negative",
        );
        let channels = [c.clock_channel, c.detector_a.channel, c.detector_b.channel];
        check(
            channels[0] != channels[1] && channels[0] != channels[2] && channels[1] != channels[2],
            "chain.detector_a.channel",
            "clock and detector channels must be distinct",
        );
        for (name, d) in [("detector_a", &c.detector_a), ("detector_b", &c.detector_b)] {
            check(
                (0.0..=1.0).contains(&d.efficiency),
                &format!("chain.{name}.efficiency"),
                "must lie in [0, 1]",
            );
            check(nonneg(d.dark_rate_hz), &format!("chain.{name}.dark_rate_hz"), "must be non-negative");
            check(nonneg(d.jitter_fwhm_ps), &format!("chain.{name}.jitter_fwhm_ps"), "must be non-negative");
            check(nonneg(d.dead_time_ps), &format!("chain.{name}.dead_time_ps"), "must be non-negative");
        }
        let lists = [
            ("chain.shared_filters", &c.shared_filters),
            ("chain.arm_a_filters", &c.arm_a_filters),
            ("chain.arm_b_filters", &c.arm_b_filters),
            ("scan.filters", &self.scan.filters),
        ];
        for (name, list) in lists {
            for (i, f) in list.iter().enumerate() {
                if let Err(m) = f.to_spec().validate() {
                    check(false, &format!("{name}[{i}]"), &m);
                }
            }
        }

        let sc = &self.scan;
        check(pos(sc.step_ghz), "scan.step_ghz", "must be positive");
        check(sc.start_ghz < sc.stop_ghz, "scan.stop_ghz", "must exceed scan.start_ghz");
        check(sc.gate_ps[0] < sc.gate_ps[1], "scan.gate_ps", "start must precede end");
        check(nonneg(sc.exclusion_ghz), "scan.exclusion_ghz", "must be non-negative");
        check(
            nonneg(sc.power_exclusion_ghz),
            "scan.power_exclusion_ghz",
            "must be non-negative",
        );
        check(
            sc.field_scales.iter().all(|&x| nonneg(x)),
            "scan.field_scales",
            "must be non-negative",
        );

        let ps = &self.pulse_scan;
        check(
            ps.pulse_lengths_ps.iter().all(|&x| pos(x)),
            "pulse_scan.pulse_lengths_ps",
            "must be positive",
        );
        check(ps.bin_ps > 0, "pulse_scan.bin_ps", "must be positive");
        check(pos(ps.field_scale), "pulse_scan.field_scale", "must be positive");
        if ps.bin_ps > 0 {
            check(
                (self.laser.rep_period_ps() / 2) % ps.bin_ps == 0,
                "pulse_scan.bin_ps",
                "must divide half the repetition period",
            );
        }

        let t = &self.timing;
        check(t.bin_ps > 0, "timing.bin_ps", "must be positive");
        check(
            t.decay_window_ps[0] < t.decay_window_ps[1],
            "timing.decay_window_ps",
            "start must precede end",
        );
        check(t.hist2d_bin_ps > 0, "timing.hist2d_bin_ps", "must be positive");
        check(t.hist2d_bins > 0, "timing.hist2d_bins", "must be positive");
        check(
            t.hist2d_band_ps[0] < t.hist2d_band_ps[1],
            "timing.hist2d_band_ps",
            "start must precede end",
        );
        check(t.trace_bin_ps > 0, "timing.trace_bin_ps", "must be positive");
        check(t.trace_span_ps > 0, "timing.trace_span_ps", "must be positive");
        check(t.trace_smooth >= 1, "timing.trace_smooth", "must be at least 1");
        if let Some(f) = &ps.etalon {
            if let Err(m) = f.to_spec().validate() {
                check(false, "pulse_scan.etalon", &m);
            }
        }
        v
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}
