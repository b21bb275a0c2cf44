//! Bob-side heterodyne detection and shot-noise calibration.
//!
//! The balanced-detector subtraction is modeled directly as its surviving
//! beat term: `r(t) = 2 gain sqrt(eta) Re{ wave(t) exp(-j phi_B(t)) }` plus
//! white shot noise of std `shot_sigma` and white electronic noise of std
//! `shot_sigma sqrt(v_el)`. LO amplitude, responsivity, and resistance are
//! lumped into `gain`; the SNU normalization downstream removes the absolute
//! scale.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::channel::PhaseTrace;
use crate::dsp::DspChain;
use crate::model::{derive_rng, ComplexWaveform, QuadratureBlock};

#[derive(Debug, Error)]
pub enum RxError {
    #[error("LO phase trace has {got} samples, expected {want}")]
    PhaseLengthMismatch { got: usize, want: usize },
    #[error("invalid detector parameters: {0}")]
    InvalidDetector(String),
    #[error("calibration needs at least {min} symbols, got {got}")]
    TooFewSymbols { got: usize, min: usize },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

/// Detector model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Quantum efficiency, (0, 1].
    pub eta: f64,
    /// Electronic-to-shot noise variance ratio (SNU).
    pub v_el: f64,
    /// Per-sample shot-noise standard deviation (simulation units).
    pub shot_sigma: f64,
    /// Transimpedance scale.
    pub gain: f64,
    /// Master switch for noise injection (calibration keeps the nominal
    /// `shot_sigma` for normalization even when a diagnostic run disables
    /// injection).
    pub noise_enabled: bool,
    /// Uniform ADC quantizer bit depth; 0 disables quantization.
    pub adc_bits: u32,
    /// ADC full scale as a multiple of the photocurrent RMS.
    pub adc_full_scale_rms: f64,
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), RxError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(RxError::InvalidDetector(format!("eta = {} not in (0, 1]", self.eta)));
        }
        if self.v_el < 0.0 {
            return Err(RxError::InvalidDetector(format!("v_el = {} negative", self.v_el)));
        }
        if !self.shot_sigma.is_finite() || self.shot_sigma <= 0.0 {
            return Err(RxError::InvalidDetector(format!(
                "shot_sigma = {} must be positive",
                self.shot_sigma
            )));
        }
        Ok(())
    }

    /// Noiseless copy for deterministic probe runs.
    pub fn noiseless(&self) -> Self {
        Self { noise_enabled: false, ..*self }
    }
}

/// Mid-rise uniform quantizer, clipping at the full scale.
fn quantize(trace: &mut [f64], bits: u32, full_scale_rms: f64) {
    let n = trace.len() as f64;
    let rms = (trace.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return;
    }
    let full = full_scale_rms * rms;
    let levels = 2u64.pow(bits.min(63)) as f64;
    let step = 2.0 * full / levels;
    for v in trace.iter_mut() {
        let clipped = v.clamp(-full, full - step);
        *v = ((clipped / step).floor() + 0.5) * step;
    }
}

/// Heterodyne photocurrent of one detector path.
///
/// The LO phase trace injects `phi_B`, so the beat carries
/// `delta_phi_fast = phi_A - phi_B`.
pub fn heterodyne_detect(
    wave: &ComplexWaveform,
    det: &DetectorParams,
    lo_phase: &PhaseTrace,
    seed: u64,
) -> Result<Vec<f64>, RxError> {
    det.validate()?;
    if lo_phase.len() != wave.len() {
        return Err(RxError::PhaseLengthMismatch { got: lo_phase.len(), want: wave.len() });
    }
    let n = wave.len();
    let amp = 2.0 * det.gain * det.eta.sqrt();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = num_complex::Complex64::from_polar(1.0, -lo_phase.values[i]);
        out.push(amp * (wave.samples[i] * lo).re);
    }
    if det.noise_enabled {
        let mut rng = derive_rng(seed, "rx.shot", 0);
        for v in out.iter_mut() {
            *v += det.shot_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if det.v_el > 0.0 {
            let sig_el = det.shot_sigma * det.v_el.sqrt();
            let mut rng = derive_rng(seed, "rx.elec", 0);
            for v in out.iter_mut() {
                *v += sig_el * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    if det.adc_bits > 0 {
        quantize(&mut out, det.adc_bits, det.adc_full_scale_rms);
    }
    Ok(out)
}

/// Result of the vacuum calibration runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotNoiseCalibration {
    /// Measured per-quadrature shot-noise variance at symbol level
    /// (LO on, optical input dark, electronic path subtracted).
    pub n0: f64,
    /// Measured electronic-only variance at symbol level (detector dark).
    pub electronic_variance: f64,
    /// Ratio `electronic_variance / n0`; should reproduce the configured v_el.
    pub measured_v_el: f64,
    /// Exact Parseval noise gain of the chain times `shot_sigma^2`; the
    /// bias-free value the pipeline normalizes with.
    pub n0_expected: f64,
    /// Symbols used per run.
    pub n_symbols: usize,
}

fn symbol_variance(block: &QuadratureBlock) -> f64 {
    0.5 * (QuadratureBlock::variance(&block.x) + QuadratureBlock::variance(&block.p))
}

/// Runs the detector with zero optical input through the identical DSP chain
/// used for data and measures the symbol-level noise variances.
///
/// Two passes: LO on with the electronic path enabled (total), and detector
/// dark (electronic only). `n0` is their difference, the hardware-style
/// estimate; `n0_expected` carries the exact chain noise gain for unbiased
/// normalization.
pub fn calibrate_shot_noise(
    det: &DetectorParams,
    chain: &DspChain,
    n_symbols: usize,
    seed: u64,
) -> Result<ShotNoiseCalibration, RxError> {
    det.validate()?;
    if n_symbols < 1_000 {
        return Err(RxError::TooFewSymbols { got: n_symbols, min: 1_000 });
    }
    let per = chain.samples_per_symbol();
    let n = n_symbols * per;

    // Pass 1: vacuum input, shot + electronic noise.
    let mut rng = derive_rng(seed, "calib.shot", 0);
    let sig_el = det.shot_sigma * det.v_el.sqrt();
    let mut rng_el = derive_rng(seed, "calib.elec", 0);
    let total_trace: Vec<f64> = (0..n)
        .map(|_| {
            det.shot_sigma * rng.sample::<f64, _>(StandardNormal)
                + sig_el * rng_el.sample::<f64, _>(StandardNormal)
        })
        .collect();
    // Pass 2: detector dark (electronic only), independent stream.
    let mut rng_dark = derive_rng(seed, "calib.dark", 0);
    let dark_trace: Vec<f64> =
        (0..n).map(|_| sig_el * rng_dark.sample::<f64, _>(StandardNormal)).collect();

    let total = chain.quantum_symbols(&total_trace)?;
    let dark = chain.quantum_symbols(&dark_trace)?;
    let var_total = symbol_variance(&total);
    let var_dark = symbol_variance(&dark);
    let n0 = var_total - var_dark;
    let n0_expected = det.shot_sigma * det.shot_sigma * chain.noise_gain(n_symbols)?;
    Ok(ShotNoiseCalibration {
        n0,
        electronic_variance: var_dark,
        measured_v_el: var_dark / n0,
        n0_expected,
        n_symbols,
    })
}
