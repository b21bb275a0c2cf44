//! Fibre-channel and laser-impairment model.
//!
//! Lasers are Lorentzian: their phase is a Wiener process with increment
//! variance `2 pi * linewidth * dt` per sample. The channel adds slow
//! independent Wiener phases to the quantum and pilot paths, a common
//! rotating frequency offset, amplitude attenuation `sqrt(T)`, and scalar
//! polarization cross-leakage.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{derive_seed, ComplexWaveform, LinkConfig};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("waveform grids do not match: {0}")]
    GridMismatch(String),
}

/// What a phase trace models; used for seed-stream bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    LaserA,
    LaserB,
    ChannelSig,
    ChannelRef,
}

/// One phase value per sample, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub values: Vec<f64>,
    pub kind: PhaseKind,
}

impl PhaseTrace {
    pub fn zeros(n: usize, kind: PhaseKind) -> Self {
        Self { values: vec![0.0; n], kind }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean of the trace over the sample window `[start, start+len)`.
    pub fn window_mean(&self, start: usize, len: usize) -> f64 {
        let s = &self.values[start..start + len];
        s.iter().sum::<f64>() / len as f64
    }
}

fn wiener_walk(n_samples: usize, increment_var: f64, seed: u64, kind: PhaseKind) -> PhaseTrace {
    let mut values = vec![0.0; n_samples];
    if increment_var > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sigma = increment_var.sqrt();
        let mut acc = 0.0;
        for v in values.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            acc += sigma * g;
            *v = acc;
        }
    }
    PhaseTrace { values, kind }
}

/// Laser phase as a Wiener process with `Var(increment) = 2 pi linewidth dt`.
///
/// Starts at zero and is deterministic for a fixed seed; `linewidth = 0`
/// yields the identically-zero trace.
pub fn laser_phase_walk(
    n_samples: usize,
    linewidth: f64,
    dt: f64,
    seed: u64,
    kind: PhaseKind,
) -> PhaseTrace {
    wiener_walk(n_samples, 2.0 * std::f64::consts::PI * linewidth * dt, seed, kind)
}

/// Slow channel phase as a Wiener process with `Var(increment) = rate dt`.
pub fn slow_phase_walk(
    n_samples: usize,
    rate: f64,
    dt: f64,
    seed: u64,
    kind: PhaseKind,
) -> PhaseTrace {
    wiener_walk(n_samples, rate * dt, seed, kind)
}

/// Seed tags used by [`apply_channel`]; exposed so tests and diagnostics can
/// regenerate the exact slow traces a run used.
pub const SLOW_SIG_TAG: &str = "channel.slow.sig";
pub const SLOW_REF_TAG: &str = "channel.slow.ref";

/// Propagates the quantum signal and pilot through the fibre.
///
/// Both waveforms are scaled by `sqrt(T)`, rotated by the common offset
/// `exp(j 2 pi (delta_f + drift t/2) t)`, given independent slow phases, and
/// cross-coupled with the configured polarization leakage. The leakage mixes
/// the per-path fields after their own channel phase, i.e. at the receiver's
/// polarization splitter.
pub fn apply_channel(
    sig: &ComplexWaveform,
    pilot: &ComplexWaveform,
    cfg: &LinkConfig,
    seed: u64,
) -> Result<(ComplexWaveform, ComplexWaveform), ChannelError> {
    if !sig.same_grid(pilot) {
        return Err(ChannelError::GridMismatch(format!(
            "signal {}sa@{}Hz vs pilot {}sa@{}Hz",
            sig.len(),
            sig.sample_rate,
            pilot.len(),
            pilot.sample_rate
        )));
    }
    let n = sig.len();
    let dt = 1.0 / sig.sample_rate;
    let amp = cfg.transmittance().sqrt();
    let leak = cfg.pol_leakage();

    let slow_sig = slow_phase_walk(
        n,
        cfg.slow_phase_rate,
        dt,
        derive_seed(seed, SLOW_SIG_TAG, 0),
        PhaseKind::ChannelSig,
    );
    let slow_ref = slow_phase_walk(
        n,
        cfg.slow_phase_rate,
        dt,
        derive_seed(seed, SLOW_REF_TAG, 0),
        PhaseKind::ChannelRef,
    );

    let mut out_sig = Vec::with_capacity(n);
    let mut out_ref = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let f_inst = cfg.delta_f_ab + 0.5 * cfg.delta_f_drift * t;
        let common = Complex64::from_polar(amp, 2.0 * std::f64::consts::PI * f_inst * t);
        let s = sig.samples[i] * common * Complex64::from_polar(1.0, slow_sig.values[i]);
        let r = pilot.samples[i] * common * Complex64::from_polar(1.0, slow_ref.values[i]);
        out_sig.push(s + leak * r);
        out_ref.push(r + leak * s);
    }

    let sr = sig.sample_rate;
    Ok((
        ComplexWaveform { samples: out_sig, sample_rate: sr },
        ComplexWaveform { samples: out_ref, sample_rate: sr },
    ))
}
