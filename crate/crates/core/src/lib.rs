//! Desk-scale simulator and security calculator for a local-local-oscillator
//! continuous-variable QKD link with pilot-tone-assisted phase compensation.
//!
//! The library is organised along the physical signal path:
//!
//! - [`model`] — shared domain types, unit conventions, special functions,
//!   and the deterministic seed-derivation scheme.
//! - [`transmitter`] — Alice: Gaussian symbol drawing, pulsed quantum-signal
//!   synthesis, carrier-suppressed double-sideband pilot synthesis.
//! - [`channel`] — fibre attenuation, laser/channel phase processes,
//!   frequency offset, polarization leakage.
//! - [`receiver`] — heterodyne detection with shot and electronic noise,
//!   shot-noise calibration.
//! - [`dsp`] — the offline receive pipeline: FFT frequency-offset
//!   estimation, band-pass filtering, orthogonal down-conversion, symbol
//!   sampling, fast (pilot) and slow (training) phase compensation.
//! - [`security`] — parameter estimation, worst-case finite-size bounds,
//!   mutual information, Holevo bound, and secret key rates.
//! - [`harness`] — experiment orchestration, configuration files, waveform
//!   persistence, CSV emission, distance/noise sweeps.
//!
//! All quadratures are expressed in shot-noise units (SNU): an ideal vacuum
//! input produces unit variance per quadrature at the pipeline output before
//! electronic noise is added.

pub mod channel;
pub mod dsp;
pub mod harness;
pub mod model;
pub mod receiver;
pub mod security;
pub mod transmitter;

pub use model::{ComplexWaveform, LinkConfig, QuadratureBlock, Role};
pub use security::{KeyRateReport, SecurityInputs, SecurityMode};
