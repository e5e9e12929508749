//! Closed-form physics of a two-level emitter under a detuned Gaussian pulse.
//!
//! All frequencies are angular (rad/s) and all times are seconds. Emission
//! frequencies are offsets from the bare transition `ω0`, so a red shift is
//! negative. Conversions to the GHz / ps units used for I/O live in
//! [`crate::scalar`].
//!
//! The dressed-state picture used here: while the pulse is on, the emitter
//! and the laser field form two dressed states split by the effective Rabi
//! frequency `Ω_eff(t) = sqrt(Ω(t)² + δω_L²)`. Phonon emission moves the
//! system from the upper (`α`) to the lower (`β`) state, and a photon emitted
//! from `β` carries `ω_L − Ω_eff(t)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Reduced Planck constant over Boltzmann constant, K·s (CODATA 2018, exact ratio of the SI values).
pub const HBAR_OVER_KB: f64 = 7.638_232_577_577_646e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysError {
    #[error("laser detuning must be positive (blue detuned), got {0} rad/s")]
    NonPositiveDetuning(f64),
    #[error("side-peak shift {shift} rad/s is blue of the bare line; no real Rabi frequency reproduces it")]
    UnphysicalShift { shift: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> PhysError {
    PhysError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Gaussian laser pulse, one per repetition period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserPulse<T = f64> {
    /// `δω_L = ω_L − ω0`, rad/s. Positive means blue detuned.
    pub detuning: T,
    /// Intensity FWHM `Δt_L`, s.
    pub pulse_fwhm: T,
    /// Peak field Rabi frequency `Ω0`, rad/s.
    pub peak_rabi: T,
    /// Repetition period, s.
    pub rep_period: T,
    /// Pulse maximum, s after the clock edge.
    pub pulse_center: T,
}

impl<T: Scalar> LaserPulse<T> {
    pub fn new(
        detuning: T,
        pulse_fwhm: T,
        peak_rabi: T,
        rep_period: T,
        pulse_center: T,
    ) -> Result<Self, PhysError> {
        let pulse = Self {
            detuning,
            pulse_fwhm,
            peak_rabi,
            rep_period,
            pulse_center,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<(), PhysError> {
        if !(self.pulse_fwhm > T::zero()) {
            return Err(invalid("pulse_fwhm", "must be positive"));
        }
        if !(self.rep_period > T::lit(4.0) * self.pulse_fwhm) {
            return Err(invalid(
                "rep_period",
                "must exceed four pulse lengths so consecutive pulses do not overlap",
            ));
        }
        if !(self.peak_rabi >= T::zero()) {
            return Err(invalid("peak_rabi", "must be non-negative"));
        }
        if !self.detuning.is_finite() || !self.pulse_center.is_finite() {
            return Err(invalid("detuning", "must be finite"));
        }
        Ok(())
    }

    /// Field Rabi frequency `Ω(t)`; the intensity `Ω²(t)` has FWHM `Δt_L`.
    #[inline]
    pub fn envelope(&self, t: T) -> T {
        let x = (t - self.pulse_center) / self.pulse_fwhm;
        self.peak_rabi * (-T::lit(2.0) * T::LN_2() * x * x).exp()
    }

    /// `Ω_eff(t) = sqrt(Ω(t)² + δω_L²)`.
    #[inline]
    pub fn effective_rabi(&self, t: T) -> T {
        self.envelope(t).hypot(self.detuning)
    }

    /// True for blue detuning (including resonance); then `|α⟩` is ground-like and `|β⟩` exciton-like.
    #[inline]
    pub fn is_blue(&self) -> bool {
        self.detuning >= T::zero()
    }

    /// Instantaneous dressed-state emission frequency as an offset from `ω0`.
    ///
    /// `ω_L − Ω_eff(t)` for blue detuning. Below resonance the exciton-like
    /// state is the upper one and the line sits at `ω_L + Ω_eff(t)`.
    #[inline]
    pub fn emission_offset(&self, t: T) -> T {
        if self.is_blue() {
            self.detuning - self.effective_rabi(t)
        } else {
            self.detuning + self.effective_rabi(t)
        }
    }

    /// Excitonic weight of the exciton-like dressed state, `½(1 + |δω_L|/Ω_eff)`.
    #[inline]
    pub fn exciton_like_weight(&self, t: T) -> T {
        let w = self.dressed_weights(t);
        if self.is_blue() {
            w.beta
        } else {
            w.alpha
        }
    }

    /// Excitonic weights of the two dressed states.
    pub fn dressed_weights(&self, t: T) -> DressedWeights<T> {
        let half = T::lit(0.5);
        let eff = self.effective_rabi(t);
        let beta = if eff > T::zero() {
            half * (T::one() + self.detuning / eff)
        } else {
            half
        };
        DressedWeights {
            alpha: T::one() - beta,
            beta,
        }
    }

    /// Interval around the pulse center on which `Ω(t) ≥ threshold · Ω0`.
    pub fn drive_window(&self, threshold: T) -> (T, T) {
        let half_width =
            self.pulse_fwhm * ((T::one() / threshold).ln() / (T::lit(2.0) * T::LN_2())).sqrt();
        (self.pulse_center - half_width, self.pulse_center + half_width)
    }
}

/// Excitonic admixture of the dressed states `|α⟩` and `|β⟩`.
///
/// Off resonance and without drive `|β⟩` is the exciton, so the weights go
/// from `(0, 1)` at the pulse edges towards `(½, ½)` for strong driving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedWeights<T = f64> {
    pub alpha: T,
    pub beta: T,
}

/// Bare emitter properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterModel<T = f64> {
    /// Bare transition `ω0`, rad/s. Use 0 when all frequencies are offsets.
    pub transition_freq: T,
    /// Radiative lifetime `τ_QD`, s.
    pub lifetime: T,
    /// Standard deviation of the Gaussian spectral diffusion, rad/s.
    pub diffusion_sigma: T,
    /// Fourier-broadening coefficient for photons emitted under the pulse.
    pub fourier_coeff: T,
}

impl<T: Scalar> EmitterModel<T> {
    pub fn validate(&self) -> Result<(), PhysError> {
        if !(self.lifetime > T::zero()) {
            return Err(invalid("lifetime", "must be positive"));
        }
        if !(self.diffusion_sigma >= T::zero()) {
            return Err(invalid("diffusion_sigma", "must be non-negative"));
        }
        if !(self.fourier_coeff >= T::zero()) {
            return Err(invalid("fourier_coeff", "must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn decay_rate(&self) -> T {
        T::one() / self.lifetime
    }
}

/// Longitudinal-acoustic phonon bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononEnv<T = f64> {
    /// Super-ohmic prefactor `α`, s².
    pub coupling: T,
    /// Cutoff `ω_c`, rad/s.
    pub cutoff: T,
    /// Bath temperature, K.
    pub temperature: T,
}

impl<T: Scalar> PhononEnv<T> {
    pub fn validate(&self) -> Result<(), PhysError> {
        if !(self.coupling >= T::zero()) {
            return Err(invalid("coupling", "must be non-negative"));
        }
        if !(self.cutoff > T::zero()) {
            return Err(invalid("cutoff", "must be positive"));
        }
        if !(self.temperature >= T::zero()) {
            return Err(invalid("temperature", "must be non-negative"));
        }
        Ok(())
    }

    /// `J(ω) = α ω³ exp(−ω²/ω_c²)`, maximal at `ω_c·sqrt(3/2)`.
    #[inline]
    pub fn spectral_density(&self, omega: T) -> T {
        let r = omega / self.cutoff;
        self.coupling * omega * omega * omega * (-r * r).exp()
    }
}

/// Largest red shift reached at the pulse maximum, `δω_L − sqrt(Ω0² + δω_L²)`.
pub fn max_shift<T: Scalar>(peak_rabi: T, detuning: T) -> Result<T, PhysError> {
    if !(detuning > T::zero()) {
        return Err(PhysError::NonPositiveDetuning(detuning.to_f64().unwrap_or(f64::NAN)));
    }
    // δ − sqrt(Ω² + δ²) = −Ω² / (δ + sqrt(Ω² + δ²)), which avoids cancellation for weak drive.
    Ok(-(peak_rabi * peak_rabi) / (detuning + peak_rabi.hypot(detuning)))
}

/// Peak Rabi frequency from a measured maximum shift, `sqrt(δω_max (δω_max − 2 δω_L))`.
pub fn rabi_from_shift<T: Scalar>(shift: T, detuning: T) -> Result<T, PhysError> {
    if !(detuning > T::zero()) {
        return Err(PhysError::NonPositiveDetuning(detuning.to_f64().unwrap_or(f64::NAN)));
    }
    if shift > T::zero() {
        return Err(PhysError::UnphysicalShift {
            shift: shift.to_f64().unwrap_or(f64::NAN),
        });
    }
    let radicand = shift * (shift - T::lit(2.0) * detuning);
    Ok(radicand.max(T::zero()).sqrt())
}

/// Bose–Einstein occupation `1 / (exp(ħω/k_BT) − 1)`; exactly 0 at `T = 0`.
///
/// `omega` must be positive.
pub fn bose_occupation<T: Scalar>(omega: T, temperature: T) -> T {
    if temperature <= T::zero() {
        return T::zero();
    }
    debug_assert!(omega > T::zero(), "occupation needs a positive frequency");
    T::one() / (T::lit(HBAR_OVER_KB) * omega / temperature).exp_m1()
}

/// Phonon-induced transition rates between the dressed states, s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhononRates<T = f64> {
    /// `|α⟩ → |β⟩` with phonon emission.
    pub down: T,
    /// `|β⟩ → |α⟩` with phonon absorption.
    pub up: T,
}

/// Golden-rule rates `(π/2) J(Ω_eff) (Ω/Ω_eff)² (n + 1)` and `(π/2) J(Ω_eff) (Ω/Ω_eff)² n`.
pub fn phonon_rates<T: Scalar>(pulse: &LaserPulse<T>, env: &PhononEnv<T>, t: T) -> PhononRates<T> {
    let drive = pulse.envelope(t);
    if drive <= T::zero() {
        return PhononRates {
            down: T::zero(),
            up: T::zero(),
        };
    }
    let eff = drive.hypot(pulse.detuning);
    let mixing = (drive / eff) * (drive / eff);
    let base = T::FRAC_PI_2() * env.spectral_density(eff) * mixing;
    let n = bose_occupation(eff, env.temperature);
    PhononRates {
        down: base * (n + T::one()),
        up: base * n,
    }
}

/// Phonon rates oriented along the excitation ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderRates<T = f64> {
    /// Ground-like → exciton-like.
    pub excite: T,
    /// Exciton-like → ground-like.
    pub relax: T,
}

/// Blue detuning excites by phonon emission; red detuning needs phonon absorption.
pub fn ladder_rates<T: Scalar>(pulse: &LaserPulse<T>, env: &PhononEnv<T>, t: T) -> LadderRates<T> {
    let r = phonon_rates(pulse, env, t);
    if pulse.is_blue() {
        LadderRates {
            excite: r.down,
            relax: r.up,
        }
    } else {
        LadderRates {
            excite: r.up,
            relax: r.down,
        }
    }
}

/// Peak Rabi frequency at pulse length `pulse_fwhm` for the same average power as a reference pulse.
pub fn peak_rabi_from_power<T: Scalar>(reference_rabi: T, reference_fwhm: T, pulse_fwhm: T) -> T {
    reference_rabi * (reference_fwhm / pulse_fwhm).sqrt()
}
