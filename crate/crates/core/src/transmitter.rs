//! Alice-side synthesis: Gaussian symbol drawing, pulsed quantum-signal
//! waveform, and the carrier-suppressed double-sideband pilot tone.
//!
//! Gaussian modulation is realised the way the hardware does it: a
//! Rayleigh-distributed amplitude cascaded with a uniform phase, which
//! together produce centred Gaussian quadratures of variance `V_A` each.
//! Waveforms are complex envelopes in Alice's frame; the channel applies the
//! `delta_f_AB` rotation.

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::PhaseTrace;
use crate::model::{bessel_j1, derive_rng, ComplexWaveform, LinkConfig};

#[derive(Debug, Error)]
pub enum TxError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("laser phase trace has {got} samples, expected {want}")]
    PhaseLengthMismatch { got: usize, want: usize },
}

/// Alice's drawn symbols in polar form; `x_A = A cos(phi)`, `p_A = A sin(phi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSymbols {
    /// Rayleigh-distributed amplitudes (SNU amplitude units).
    pub amplitude: Vec<f64>,
    /// Uniform phases in [0, 2 pi).
    pub phase: Vec<f64>,
}

impl GaussianSymbols {
    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn x_a(&self) -> Vec<f64> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(a, p)| a * p.cos())
            .collect()
    }

    pub fn p_a(&self) -> Vec<f64> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(a, p)| a * p.sin())
            .collect()
    }

    /// Complex symbol `A exp(j phi)`.
    pub fn symbol(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.amplitude[k], self.phase[k])
    }

    /// Fixed-amplitude constellation on the ring `|a| = sqrt(2 V_A)`, phases
    /// uniform. Same second moments as the Gaussian draw; useful for
    /// phase-compensation diagnostics where amplitude nulls would dominate
    /// angular metrics.
    pub fn ring(n: usize, v_a: f64, seed: u64) -> Result<Self, TxError> {
        if v_a <= 0.0 {
            return Err(TxError::Domain(format!("V_A must be positive, got {v_a}")));
        }
        let mut rng = derive_rng(seed, "tx.ring", 0);
        let r = (2.0 * v_a).sqrt();
        let phase: Vec<f64> = (0..n)
            .map(|_| rng.gen::<f64>() * 2.0 * std::f64::consts::PI)
            .collect();
        Ok(Self { amplitude: vec![r; n], phase })
    }
}

/// Draws `n` Gaussian-modulated symbols with `Var(x_A) = Var(p_A) = V_A`.
///
/// Amplitude is Rayleigh with scale `sqrt(V_A)` (inverse-transform sampled),
/// phase uniform on [0, 2 pi). Deterministic for a fixed seed.
pub fn draw_gaussian_symbols(n: usize, v_a: f64, seed: u64) -> Result<GaussianSymbols, TxError> {
    if v_a <= 0.0 {
        return Err(TxError::Domain(format!("V_A must be positive, got {v_a}")));
    }
    if n == 0 {
        return Err(TxError::Domain("need at least one symbol".into()));
    }
    let mut rng = derive_rng(seed, "tx.symbols", 0);
    let scale = v_a.sqrt();
    let mut amplitude = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        // Inverse-transform Rayleigh; guard the log at u = 1.
        let r = scale * (-2.0 * (1.0 - u).max(f64::MIN_POSITIVE).ln()).sqrt();
        amplitude.push(r);
        phase.push(rng.gen::<f64>() * 2.0 * std::f64::consts::PI);
    }
    Ok(GaussianSymbols { amplitude, phase })
}

/// Pulsed quantum-signal envelope at relative frequency 0 in Alice's frame.
///
/// Each symbol occupies `duty_cycle` of its slot as a rectangular pulse of
/// complex amplitude `unit_amplitude * A exp(j phi)`, multiplied by the
/// laser phase `exp(j phi_A(t))`. `unit_amplitude` is the SNU anchor the
/// harness calibrates so that one SNU of Alice maps to one shot-noise unit
/// at the normalized receiver output.
pub fn synthesize_quantum(
    symbols: &GaussianSymbols,
    cfg: &LinkConfig,
    laser_phase: &PhaseTrace,
    unit_amplitude: f64,
) -> Result<ComplexWaveform, TxError> {
    let per = cfg.samples_per_symbol();
    let n_samples = symbols.len() * per;
    if laser_phase.len() != n_samples {
        return Err(TxError::PhaseLengthMismatch { got: laser_phase.len(), want: n_samples });
    }
    let open = cfg.window_samples();
    let mut samples = vec![Complex64::new(0.0, 0.0); n_samples];
    for k in 0..symbols.len() {
        let a = unit_amplitude * symbols.symbol(k);
        let base = k * per;
        for i in 0..open {
            let idx = base + i;
            samples[idx] = a * Complex64::from_polar(1.0, laser_phase.values[idx]);
        }
    }
    Ok(ComplexWaveform { samples, sample_rate: cfg.sample_rate })
}

/// Continuous-wave CS-DSB pilot envelope: two tones at `+-f_m` of amplitude
/// `A_ref J1(m)` plus a residual carrier `carrier_suppression` dB below one
/// sideband, all carrying the same laser phase as the quantum signal.
pub fn synthesize_pilot(
    cfg: &LinkConfig,
    laser_phase: &PhaseTrace,
    unit_amplitude: f64,
) -> Result<ComplexWaveform, TxError> {
    if cfg.mod_index > 1.0 {
        return Err(TxError::Domain(format!(
            "mod_index {} violates the small-signal assumption (must be <= 1)",
            cfg.mod_index
        )));
    }
    let n = laser_phase.len();
    let dt = 1.0 / cfg.sample_rate;
    let sideband = unit_amplitude * cfg.a_ref * bessel_j1(cfg.mod_index);
    let carrier = sideband * cfg.carrier_residual();
    let w = 2.0 * std::f64::consts::PI * cfg.f_m;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let tones = Complex64::from_polar(sideband, w * t)
            + Complex64::from_polar(sideband, -w * t)
            + Complex64::new(carrier, 0.0);
        samples.push(tones * Complex64::from_polar(1.0, laser_phase.values[i]));
    }
    Ok(ComplexWaveform { samples, sample_rate: cfg.sample_rate })
}
