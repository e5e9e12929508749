//! Quantum-jump Monte Carlo over the dressed-state rate model.
//!
//! Each pulse starts in `|α⟩`. While the drive is above the off threshold
//! the system jumps with time-dependent rates:
//!
//! * `α → β` by phonon emission at `Γ_down(t)`,
//! * `β → α` by phonon absorption at `Γ_up(t)`,
//! * `β → α` (one laser photon less) by emitting a photon at
//!   `w_β(t)/τ_QD`, with frequency `δω_L − Ω_eff(t)`.
//!
//! When the drive switches off `β` is the bare exciton and decays with the
//! bare lifetime at the bare frequency. Jump times are drawn by
//! Lewis–Shedler thinning against a constant bound, so they are exact to
//! floating-point precision.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physmodel::{ladder_rates, EmitterModel, LaserPulse, PhononEnv, PhysError};
use crate::rng::{substream, Domain};
use crate::scalar::{to_ghz, to_ps};

const PULSES_PER_BLOCK: u64 = 4096;
const BOUND_GRID: usize = 512;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Physics(#[from] PhysError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Run-level controls of the Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_pulses: u64,
    pub rng_seed: u64,
    /// Fraction of `Ω0` below which the drive counts as off.
    pub off_threshold: f64,
    pub max_photons_per_pulse: usize,
    /// Multiplier (≥ 1) applied to the sampled rate maximum to form the thinning bound.
    pub thinning_margin: f64,
    /// Worker threads; 0 uses every available core. Results do not depend on it.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_pulses: 100_000,
            rng_seed: 1,
            off_threshold: 1e-3,
            max_photons_per_pulse: 4,
            thinning_margin: 1.25,
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_pulses == 0 {
            return Err(SimError::Config("n_pulses must be at least 1".into()));
        }
        if !(self.off_threshold > 0.0 && self.off_threshold < 1.0) {
            return Err(SimError::Config("off_threshold must lie in (0, 1)".into()));
        }
        if self.max_photons_per_pulse == 0 {
            return Err(SimError::Config("max_photons_per_pulse must be at least 1".into()));
        }
        if !(self.thinning_margin >= 1.0) {
            return Err(SimError::Config("thinning_margin must be at least 1".into()));
        }
        Ok(())
    }
}

/// One emitted photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonRecord {
    pub pulse_index: u64,
    /// Seconds after the clock edge of its pulse.
    pub emission_time: f64,
    /// Emission frequency from the dressed-state model, rad/s relative to `ω0`.
    pub center_freq: f64,
    /// Frequency seen by the filters: center plus diffusion and Fourier broadening.
    pub detection_freq: f64,
    /// 1 for the first photon of its pulse, 2 for the second, ...
    pub ordinal: u8,
    /// Emitted while the drive was above the off threshold.
    pub during_drive: bool,
}

/// Photons of a whole run, sorted by `(pulse_index, emission_time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStream {
    pub records: Vec<PhotonRecord>,
    pub config: SimConfig,
    pub pulse: LaserPulse,
    pub emitter: EmitterModel,
    pub phonons: PhononEnv,
    /// Photon count per pulse (capped pulses record the cap).
    pub per_pulse: Vec<u8>,
    /// Pulses that hit `max_photons_per_pulse` and were truncated.
    pub aborted: Vec<u64>,
}

impl PhotonStream {
    pub fn n_pulses(&self) -> u64 {
        self.config.n_pulses
    }

    /// Fraction of pulses with exactly `n` photons.
    pub fn fraction_with(&self, n: u8) -> f64 {
        let hits = self.per_pulse.iter().filter(|&&c| c == n).count();
        hits as f64 / self.per_pulse.len() as f64
    }

    /// Fraction of pulses with at least `n` photons.
    pub fn fraction_at_least(&self, n: u8) -> f64 {
        let hits = self.per_pulse.iter().filter(|&&c| c >= n).count();
        hits as f64 / self.per_pulse.len() as f64
    }

    pub fn mean_photons(&self) -> f64 {
        self.records.len() as f64 / self.per_pulse.len() as f64
    }

    /// Records of one pulse (empty if it emitted nothing).
    pub fn pulse_records(&self, index: u64) -> &[PhotonRecord] {
        let lo = self.records.partition_point(|r| r.pulse_index < index);
        let hi = self.records.partition_point(|r| r.pulse_index <= index);
        &self.records[lo..hi]
    }

    /// Debug dump: `pulse_index,emission_time_ps,center_freq_GHz,detection_freq_GHz,ordinal`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "pulse_index,emission_time_ps,center_freq_GHz,detection_freq_GHz,ordinal")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:.3},{:.4},{:.4},{}",
                r.pulse_index,
                to_ps(r.emission_time),
                to_ghz(r.center_freq),
                to_ghz(r.detection_freq),
                r.ordinal
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dressed {
    /// `|α⟩` for blue detuning.
    Ground,
    /// `|β⟩` for blue detuning.
    Exciton,
}

/// Outcome of one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseOutcome {
    pub records: Vec<PhotonRecord>,
    /// Set when the photon cap was reached; the records are truncated there.
    pub aborted: bool,
}

/// Per-run precomputation shared by every pulse: drive window and thinning bound.
#[derive(Debug, Clone)]
pub struct PulseSampler {
    pulse: LaserPulse,
    emitter: EmitterModel,
    phonons: PhononEnv,
    window: (f64, f64),
    bound: f64,
    max_photons: usize,
    during_jitter: f64,
    after_jitter: f64,
}

impl PulseSampler {
    pub fn new(
        pulse: &LaserPulse,
        emitter: &EmitterModel,
        phonons: &PhononEnv,
        cfg: &SimConfig,
    ) -> Result<Self, SimError> {
        pulse.validate()?;
        emitter.validate()?;
        phonons.validate()?;
        cfg.validate()?;
        let window = pulse.drive_window(cfg.off_threshold);
        let bound = rate_bound(pulse, emitter, phonons, window) * cfg.thinning_margin;
        Ok(Self {
            pulse: *pulse,
            emitter: *emitter,
            phonons: *phonons,
            window,
            bound,
            max_photons: cfg.max_photons_per_pulse,
            // Lorentzian FWHM in rad/s: C/Δt_L under the pulse, 1/τ afterwards.
            during_jitter: emitter.fourier_coeff / pulse.pulse_fwhm,
            after_jitter: 1.0 / emitter.lifetime,
        })
    }

    /// `[t_on, t_off]` in seconds after the clock edge.
    pub fn drive_window(&self) -> (f64, f64) {
        self.window
    }

    /// Upper bound on the total exit rate of either dressed state, s⁻¹.
    pub fn rate_bound(&self) -> f64 {
        self.bound
    }

    /// Runs one pulse through the jump process.
    pub fn simulate<R: Rng + ?Sized>(&self, pulse_index: u64, rng: &mut R) -> PulseOutcome {
        let diffusion = sample_diffusion(&self.emitter, rng);
        let mut records = Vec::new();
        let mut aborted = false;

        let (t_on, t_off) = self.window;
        let mut state = Dressed::Ground;
        let mut t = t_on;
        if self.bound > 0.0 {
            let gap = Exp::new(self.bound).expect("positive bound");
            loop {
                t += gap.sample(rng);
                if t >= t_off {
                    break;
                }
                let u = rng.random::<f64>() * self.bound;
                let rates = ladder_rates(&self.pulse, &self.phonons, t);
                match state {
                    Dressed::Ground => {
                        if u < rates.excite {
                            state = Dressed::Exciton;
                        }
                    }
                    Dressed::Exciton => {
                        let radiative =
                            self.pulse.exciton_like_weight(t) * self.emitter.decay_rate();
                        debug_assert!(radiative + rates.relax <= self.bound);
                        if u < radiative {
                            if records.len() == self.max_photons {
                                aborted = true;
                                break;
                            }
                            let center = self.pulse.emission_offset(t);
                            records.push(self.photon(pulse_index, t, center, true, diffusion, rng));
                            state = Dressed::Ground;
                        } else if u < radiative + rates.relax {
                            state = Dressed::Ground;
                        }
                    }
                }
            }
        }

        if state == Dressed::Exciton && !aborted {
            if records.len() == self.max_photons {
                aborted = true;
            } else {
                let decay = Exp::new(self.emitter.decay_rate()).expect("positive lifetime");
                let t_emit = t_off + decay.sample(rng);
                records.push(self.photon(pulse_index, t_emit, 0.0, false, diffusion, rng));
            }
        }

        for (i, r) in records.iter_mut().enumerate() {
            r.ordinal = (i + 1) as u8;
        }
        PulseOutcome { records, aborted }
    }

    fn photon<R: Rng + ?Sized>(
        &self,
        pulse_index: u64,
        t: f64,
        center: f64,
        during_drive: bool,
        diffusion: f64,
        rng: &mut R,
    ) -> PhotonRecord {
        let mut record = PhotonRecord {
            pulse_index,
            emission_time: t,
            center_freq: center,
            detection_freq: center,
            ordinal: 0,
            during_drive,
        };
        let fwhm = if during_drive {
            self.during_jitter
        } else {
            self.after_jitter
        };
        record.detection_freq = assign_frequency(&record, diffusion, fwhm, rng);
        record
    }
}

/// Largest total exit rate on a grid over the drive window.
fn rate_bound(
    pulse: &LaserPulse,
    emitter: &EmitterModel,
    phonons: &PhononEnv,
    (t_on, t_off): (f64, f64),
) -> f64 {
    (0..=BOUND_GRID)
        .map(|i| {
            let t = t_on + (t_off - t_on) * i as f64 / BOUND_GRID as f64;
            let r = ladder_rates(pulse, phonons, t);
            let radiative = pulse.exciton_like_weight(t) * emitter.decay_rate();
            r.excite.max(r.relax + radiative)
        })
        .fold(0.0, f64::max)
}

/// Frequency presented to the filters.
///
/// `diffusion_offset` is drawn once per pulse from the spectral-diffusion
/// distribution; `lorentz_fwhm` (rad/s) is the Fourier broadening of this
/// photon. A zero width adds nothing.
pub fn assign_frequency<R: Rng + ?Sized>(
    record: &PhotonRecord,
    diffusion_offset: f64,
    lorentz_fwhm: f64,
    rng: &mut R,
) -> f64 {
    let jitter = if lorentz_fwhm > 0.0 {
        Cauchy::new(0.0, lorentz_fwhm / 2.0)
            .expect("positive scale")
            .sample(rng)
    } else {
        0.0
    };
    record.center_freq + diffusion_offset + jitter
}

/// Draws the per-pulse spectral-diffusion offset.
pub fn sample_diffusion<R: Rng + ?Sized>(emitter: &EmitterModel, rng: &mut R) -> f64 {
    if emitter.diffusion_sigma > 0.0 {
        Normal::new(0.0, emitter.diffusion_sigma)
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    }
}

/// One pulse with an explicit random stream.
pub fn simulate_pulse<R: Rng + ?Sized>(
    pulse: &LaserPulse,
    emitter: &EmitterModel,
    phonons: &PhononEnv,
    cfg: &SimConfig,
    pulse_index: u64,
    rng: &mut R,
) -> Result<PulseOutcome, SimError> {
    Ok(PulseSampler::new(pulse, emitter, phonons, cfg)?.simulate(pulse_index, rng))
}

pub(crate) fn with_workers<T: Send>(
    workers: usize,
    job: impl FnOnce() -> T + Send,
) -> Result<T, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    Ok(pool.install(job))
}

/// Simulates `cfg.n_pulses` pulses. Bit-identical for a given seed at any worker count.
pub fn run(
    pulse: &LaserPulse,
    emitter: &EmitterModel,
    phonons: &PhononEnv,
    cfg: &SimConfig,
) -> Result<PhotonStream, SimError> {
    let sampler = PulseSampler::new(pulse, emitter, phonons, cfg)?;
    let n = cfg.n_pulses;
    let blocks = n.div_ceil(PULSES_PER_BLOCK);
    let seed = cfg.rng_seed;

    let parts: Vec<(Vec<PhotonRecord>, Vec<u8>, Vec<u64>)> = with_workers(cfg.workers, || {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let lo = b * PULSES_PER_BLOCK;
                let hi = (lo + PULSES_PER_BLOCK).min(n);
                let mut records = Vec::new();
                let mut counts = Vec::with_capacity((hi - lo) as usize);
                let mut aborted = Vec::new();
                for k in lo..hi {
                    let mut rng = substream(seed, Domain::Trajectory, k);
                    let out = sampler.simulate(k, &mut rng);
                    counts.push(out.records.len() as u8);
                    if out.aborted {
                        aborted.push(k);
                    }
                    records.extend(out.records);
                }
                (records, counts, aborted)
            })
            .collect()
    })?;

    let mut stream = PhotonStream {
        records: Vec::new(),
        config: cfg.clone(),
        pulse: *pulse,
        emitter: *emitter,
        phonons: *phonons,
        per_pulse: Vec::with_capacity(n as usize),
        aborted: Vec::new(),
    };
    for (records, counts, aborted) in parts {
        stream.records.extend(records);
        stream.per_pulse.extend(counts);
        stream.aborted.extend(aborted);
    }
    Ok(stream)
}
