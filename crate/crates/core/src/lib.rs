//! Simulation and analysis of phonon-assisted re-excitation in a quantum
//! emitter driven by detuned laser pulses.
//!
//! The model follows single pulses through a two-state dressed-state jump
//! process, sends the emitted photons through a filter and detector chain,
//! and analyses the resulting time tags as a time-correlated counting setup
//! would. Units inside the model are SI with angular frequencies; the
//! configuration layer works in GHz and ps.

pub mod analysis;
pub mod calibration;
pub mod detchain;
pub mod experiment;
pub mod physmodel;
pub mod rng;
pub mod scalar;
pub mod tagio;
pub mod trajectory;

pub use scalar::Scalar;

pub type Pulse = physmodel::LaserPulse<f64>;
pub type Pulse32 = physmodel::LaserPulse<f32>;
pub type Emitter = physmodel::EmitterModel<f64>;
pub type Emitter32 = physmodel::EmitterModel<f32>;
pub type Phonons = physmodel::PhononEnv<f64>;
pub type Phonons32 = physmodel::PhononEnv<f32>;
pub type Filter = detchain::FilterSpec<f64>;
pub type Filter32 = detchain::FilterSpec<f32>;
