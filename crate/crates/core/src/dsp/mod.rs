//! Offline receive pipeline: FFT frequency-offset estimation, zero-phase
//! band-pass filtering, orthogonal down-conversion, symbol sampling, fast
//! (pilot-tone) phase compensation with shot-noise normalization, and
//! slow (training-based) phase compensation.
//!
//! Sign conventions, fixed once and used throughout: the down-converter
//! returns `i + j q = A exp(j theta)` for an input tone `A cos(2 pi f t +
//! theta)`. Quadratures follow the `X ~ cos, P ~ -sin` convention of the
//! heterodyne equations, so the quantum path negates `q` while the pilot
//! path keeps it: the pilot is recovered from the mirror (difference) beat
//! line, which conjugates its phase and supplies the negation for free.
//! With both blocks in that convention, the fast compensation is exactly
//! `X' + jP' = conj(Xs + jPs) (Xr + jPr) / |Xr + jPr| / sqrt(N0)`.

mod chain;

pub use chain::{DspChain, RawSymbols};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

use crate::model::{QuadratureBlock, Role};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },
    #[error("no spectral peak above the noise floor by {margin_db} dB in [{lo}, {hi}] Hz")]
    PeakNotFound { margin_db: f64, lo: f64, hi: f64 },
    #[error("pilot dropout at symbol {symbol}: |ref|^2 = {power:e} below floor {floor:e}")]
    PilotDropout { symbol: usize, power: f64, floor: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("slow-phase estimation failed: {0}")]
    SlowEstimation(String),
    #[error("non-integer samples per symbol: sample_rate/f_rep = {0}")]
    NonIntegerSymbol(f64),
}

/// Real I/Q baseband pair on the full sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandIQ {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub sample_rate: f64,
}

// ---------------------------------------------------------------------------
// FFT plumbing
// ---------------------------------------------------------------------------

type PlanMap = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<PlanMap>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().unwrap();
    guard
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    plan(buf.len(), false).process(buf);
}

/// Inverse FFT including the 1/n normalization.
pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    plan(buf.len(), true).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Mask-edge tolerance in bins: keeps edge-bin inclusion stable under
/// sub-microhertz jitter of the estimated centre frequency without ever
/// reaching the next bin.
pub(crate) const MASK_EDGE_EPS_BINS: f64 = 1e-6;

/// Bin frequency in Hz for index `k` of an `n`-point FFT at `fs`.
#[inline]
pub(crate) fn bin_freq(k: usize, n: usize, fs: f64) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k <= n_f / 2.0 {
        k * fs / n_f
    } else {
        (k - n_f) * fs / n_f
    }
}

// ---------------------------------------------------------------------------
// Frequency-offset estimation
// ---------------------------------------------------------------------------

/// Default spectral-peak margin over the in-window noise floor (power dB).
pub const DEFAULT_PEAK_MARGIN_DB: f64 = 10.0;

/// Locates the pilot beat line by FFT peak search in `search_window`,
/// refines it by three-bin interpolation on the complex spectrum, and
/// returns `delta_f_AB = f_m - f_peak`.
///
/// The three-bin refinement uses the complex ratio
/// `Re[(X[k-1] - X[k+1]) / (2 X[k] - X[k-1] - X[k+1])]`, which is exact for
/// an unwindowed tone in the large-N limit and stays below 0.1 bin of bias
/// at any sub-bin offset (a magnitude-only parabola does not).
pub fn estimate_freq_offset(
    pilot_current: &[f64],
    sample_rate: f64,
    f_m: f64,
    search_window: (f64, f64),
) -> Result<f64, DspError> {
    estimate_freq_offset_with_margin(
        pilot_current,
        sample_rate,
        f_m,
        search_window,
        DEFAULT_PEAK_MARGIN_DB,
    )
}

pub fn estimate_freq_offset_with_margin(
    pilot_current: &[f64],
    sample_rate: f64,
    f_m: f64,
    search_window: (f64, f64),
    margin_db: f64,
) -> Result<f64, DspError> {
    let n = pilot_current.len();
    let (lo, hi) = search_window;
    if n < 8 {
        return Err(DspError::Domain {
            func: "estimate_freq_offset",
            msg: format!("trace too short ({n} samples)"),
        });
    }
    let window_ok = lo.is_finite() && hi.is_finite() && lo < hi && lo >= 0.0 && hi <= sample_rate / 2.0;
    if !window_ok {
        return Err(DspError::Domain {
            func: "estimate_freq_offset",
            msg: format!("search window [{lo}, {hi}] outside (0, Nyquist)"),
        });
    }
    let mut buf: Vec<Complex64> =
        pilot_current.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft_forward(&mut buf);

    // Peak and median power inside the window (positive frequencies only).
    let mut in_window: Vec<(usize, f64)> = Vec::new();
    for k in 1..n / 2 {
        let f = bin_freq(k, n, sample_rate);
        if f >= lo && f <= hi {
            in_window.push((k, buf[k].norm_sqr()));
        }
    }
    if in_window.len() < 3 {
        return Err(DspError::Domain {
            func: "estimate_freq_offset",
            msg: "search window narrower than three FFT bins".into(),
        });
    }
    let (k_peak, p_peak) = in_window
        .iter()
        .copied()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    // Noise floor: mean in-window power excluding the peak's three bins.
    let mut floor_sum = 0.0;
    let mut floor_cnt = 0usize;
    for &(k, p) in &in_window {
        if k + 1 >= k_peak && k <= k_peak + 1 {
            continue;
        }
        floor_sum += p;
        floor_cnt += 1;
    }
    let floor = (floor_sum / floor_cnt.max(1) as f64).max(f64::MIN_POSITIVE);
    if p_peak < floor * 10f64.powf(margin_db / 10.0) {
        return Err(DspError::PeakNotFound { margin_db, lo, hi });
    }

    let xm = buf[k_peak - 1];
    let x0 = buf[k_peak];
    let xp = buf[k_peak + 1];
    let denom = 2.0 * x0 - xm - xp;
    let delta = if denom.norm() < 1e-300 {
        0.0
    } else {
        ((xm - xp) / denom).re.clamp(-0.5, 0.5)
    };
    let f_peak = (k_peak as f64 + delta) * sample_rate / n as f64;
    Ok(f_m - f_peak)
}

// ---------------------------------------------------------------------------
// Filters and down-conversion
// ---------------------------------------------------------------------------

/// Zero-phase brick-wall band-pass: unity on `[f_center - bw/2, f_center +
/// bw/2]` (and the mirror band), zero outside. Output length equals input
/// length.
pub fn bandpass(
    trace: &[f64],
    sample_rate: f64,
    f_center: f64,
    bandwidth: f64,
) -> Result<Vec<f64>, DspError> {
    let lo = f_center - bandwidth / 2.0;
    let hi = f_center + bandwidth / 2.0;
    let band_ok = lo.is_finite() && hi.is_finite() && lo > 0.0 && hi < sample_rate / 2.0;
    if !band_ok {
        return Err(DspError::Domain {
            func: "bandpass",
            msg: format!("band [{lo}, {hi}] outside (0, Nyquist = {})", sample_rate / 2.0),
        });
    }
    let n = trace.len();
    let edge = bandwidth / 2.0 + MASK_EDGE_EPS_BINS * sample_rate / n as f64;
    let mut buf: Vec<Complex64> = trace.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft_forward(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = bin_freq(k, n, sample_rate).abs();
        if (f - f_center).abs() > edge {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_inverse(&mut buf);
    Ok(buf.into_iter().map(|c| c.re).collect())
}

/// Zero-phase brick-wall low-pass with the given cutoff.
pub fn lowpass(trace: &[f64], sample_rate: f64, cutoff: f64) -> Result<Vec<f64>, DspError> {
    let cutoff_ok = cutoff.is_finite() && cutoff > 0.0 && cutoff < sample_rate / 2.0;
    if !cutoff_ok {
        return Err(DspError::Domain {
            func: "lowpass",
            msg: format!("cutoff {cutoff} outside (0, Nyquist)"),
        });
    }
    let n = trace.len();
    let mut buf: Vec<Complex64> = trace.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft_forward(&mut buf);
    let edge = cutoff + MASK_EDGE_EPS_BINS * sample_rate / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        if bin_freq(k, n, sample_rate).abs() > edge {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_inverse(&mut buf);
    Ok(buf.into_iter().map(|c| c.re).collect())
}

/// Orthogonal down-conversion: `i = LP[2 r cos(2 pi f t)]`,
/// `q = LP[-2 r sin(2 pi f t)]`, both through a zero-phase low-pass with
/// cutoff `lp_bandwidth`. A tone `A cos(2 pi f t + theta)` maps to the
/// constant pair `(A cos theta, A sin theta)`.
pub fn down_convert(
    trace: &[f64],
    sample_rate: f64,
    f: f64,
    lp_bandwidth: f64,
) -> Result<BasebandIQ, DspError> {
    let mixer_ok = f.is_finite() && f > 0.0 && f < sample_rate / 2.0;
    if !mixer_ok {
        return Err(DspError::Domain {
            func: "down_convert",
            msg: format!("mixer frequency {f} outside (0, Nyquist)"),
        });
    }
    if lp_bandwidth >= f {
        return Err(DspError::Domain {
            func: "down_convert",
            msg: format!(
                "lp_bandwidth {lp_bandwidth} >= mixer frequency {f}: image aliases into baseband"
            ),
        });
    }
    let n = trace.len();
    let dt = 1.0 / sample_rate;
    let w = 2.0 * std::f64::consts::PI * f;
    // 2 r e^{-j w t} = (2 r cos) + j (-2 r sin); one complex LP handles both.
    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| 2.0 * trace[k] * Complex64::from_polar(1.0, -w * k as f64 * dt))
        .collect();
    fft_forward(&mut buf);
    let cut = lp_bandwidth + MASK_EDGE_EPS_BINS * sample_rate / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        if bin_freq(k, n, sample_rate).abs() > cut {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_inverse(&mut buf);
    let mut i = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for c in buf {
        i.push(c.re);
        q.push(c.im);
    }
    Ok(BasebandIQ { i, q, sample_rate })
}

// ---------------------------------------------------------------------------
// Symbol sampling
// ---------------------------------------------------------------------------

/// Clock-recovery mode for [`symbol_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymbolTiming {
    /// Use the known simulation timing (an explicit start offset in samples).
    Known(usize),
    /// Pick the offset maximizing mean symbol energy over one symbol period.
    Auto,
}

/// Averages i and q over the pulse-open window of each symbol (matched
/// rectangular filter over `duty_cycle`), starting at the timing offset.
pub fn symbol_sample(
    bb: &BasebandIQ,
    f_rep: f64,
    duty_cycle: f64,
    timing: SymbolTiming,
) -> Result<QuadratureBlock, DspError> {
    let per_f = bb.sample_rate / f_rep;
    if (per_f - per_f.round()).abs() > 1e-9 * per_f || per_f.round() < 2.0 {
        return Err(DspError::NonIntegerSymbol(per_f));
    }
    let per = per_f.round() as usize;
    if bb.i.len() != bb.q.len() {
        return Err(DspError::LengthMismatch(format!(
            "i has {} samples, q has {}",
            bb.i.len(),
            bb.q.len()
        )));
    }
    let window = ((per as f64 * duty_cycle).round() as usize).clamp(1, per);
    let offset = match timing {
        SymbolTiming::Known(o) => o % per,
        SymbolTiming::Auto => best_offset(bb, per, window),
    };
    let n_sym = (bb.i.len() - offset) / per;
    if n_sym == 0 {
        return Err(DspError::LengthMismatch("trace shorter than one symbol".into()));
    }
    let mut x = Vec::with_capacity(n_sym);
    let mut q = Vec::with_capacity(n_sym);
    for k in 0..n_sym {
        let base = offset + k * per;
        let mut si = 0.0;
        let mut sq = 0.0;
        for t in base..base + window {
            si += bb.i[t];
            sq += bb.q[t];
        }
        x.push(si / window as f64);
        q.push(sq / window as f64);
    }
    QuadratureBlock::new(x, q, Role::Bob).map_err(|e| DspError::LengthMismatch(e.to_string()))
}

fn best_offset(bb: &BasebandIQ, per: usize, window: usize) -> usize {
    // Mean symbol energy over candidate offsets, on up to 256 symbols.
    let n_sym = (bb.i.len() / per).clamp(1, 256);
    let mut best = 0usize;
    let mut best_energy = f64::NEG_INFINITY;
    for offset in 0..per {
        let usable = ((bb.i.len() - offset) / per).min(n_sym);
        if usable == 0 {
            continue;
        }
        let mut acc = 0.0;
        for k in 0..usable {
            let base = offset + k * per;
            let mut si = 0.0;
            let mut sq = 0.0;
            for t in base..base + window {
                si += bb.i[t];
                sq += bb.q[t];
            }
            acc += si * si + sq * sq;
        }
        let e = acc / usable as f64;
        if e > best_energy {
            best_energy = e;
            best = offset;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Phase compensation
// ---------------------------------------------------------------------------

/// Relative pilot-power floor below which a symbol is reported as a dropout.
pub const PILOT_POWER_FLOOR: f64 = 1e-12;

/// Fast-drift compensation and SNU normalization:
/// `X'_k = (Xs Xr + Ps Pr) / sqrt(Xr^2 + Pr^2) / sqrt(N0)`,
/// `P'_k = (Xs Pr - Ps Xr) / sqrt(Xr^2 + Pr^2) / sqrt(N0)`.
///
/// Norm-preserving up to the `1/sqrt(N0)` scale: `X'^2 + P'^2 =
/// (Xs^2 + Ps^2)/N0` exactly.
pub fn compensate_fast(
    sig: &QuadratureBlock,
    pilot: &QuadratureBlock,
    n0: f64,
) -> Result<QuadratureBlock, DspError> {
    if sig.len() != pilot.len() {
        return Err(DspError::LengthMismatch(format!(
            "signal has {} symbols, pilot {}",
            sig.len(),
            pilot.len()
        )));
    }
    if !n0.is_finite() || n0 <= 0.0 {
        return Err(DspError::Domain {
            func: "compensate_fast",
            msg: format!("N0 must be positive, got {n0}"),
        });
    }
    let n = sig.len();
    let mean_pilot_power = pilot
        .x
        .iter()
        .zip(&pilot.p)
        .map(|(x, p)| x * x + p * p)
        .sum::<f64>()
        / n as f64;
    let floor = PILOT_POWER_FLOOR * mean_pilot_power;
    let root_n0 = n0.sqrt();
    let mut x = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for k in 0..n {
        let (xs, ps) = (sig.x[k], sig.p[k]);
        let (xr, pr) = (pilot.x[k], pilot.p[k]);
        let mag2 = xr * xr + pr * pr;
        if mag2 <= floor {
            return Err(DspError::PilotDropout { symbol: k, power: mag2, floor });
        }
        let mag = mag2.sqrt();
        x.push((xs * xr + ps * pr) / mag / root_n0);
        p.push((xs * pr - ps * xr) / mag / root_n0);
    }
    QuadratureBlock::with_mask(x, p, Role::Bob, sig.training_mask.clone())
        .map_err(|e| DspError::LengthMismatch(e.to_string()))
}

/// Delays the pilot reference by `delay` symbols (symbol `k` is compensated
/// with the pilot measured at symbol `k - delay`); the first `delay` symbols
/// repeat the earliest available reference. Used to reproduce the
/// one-symbol-stale reference behind the fast-drift phase-noise formula.
pub fn delay_reference(pilot: &QuadratureBlock, delay: usize) -> QuadratureBlock {
    if delay == 0 || pilot.is_empty() {
        return pilot.clone();
    }
    let n = pilot.len();
    let mut x = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for k in 0..n {
        let src = k.saturating_sub(delay);
        x.push(pilot.x[src]);
        p.push(pilot.p[src]);
    }
    QuadratureBlock { x, p, role: pilot.role, training_mask: pilot.training_mask.clone() }
}

/// Least-squares rotation aligning Bob's training quadratures to Alice's:
/// `delta = arg sum_k (x_A + j p_A) conj(X' + j P')`. Feeding the result to
/// [`compensate_slow`] rotates Bob onto Alice.
pub fn estimate_slow_phase(
    alice_x: &[f64],
    alice_p: &[f64],
    bob_x: &[f64],
    bob_p: &[f64],
) -> Result<f64, DspError> {
    let n = alice_x.len();
    if n == 0 {
        return Err(DspError::SlowEstimation("empty training set".into()));
    }
    if alice_p.len() != n || bob_x.len() != n || bob_p.len() != n {
        return Err(DspError::LengthMismatch(format!(
            "training slices differ in length: {} {} {} {}",
            alice_x.len(),
            alice_p.len(),
            bob_x.len(),
            bob_p.len()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let a = Complex64::new(alice_x[k], alice_p[k]);
        let b = Complex64::new(bob_x[k], bob_p[k]);
        acc += a * b.conj();
    }
    if acc.norm() == 0.0 {
        return Err(DspError::SlowEstimation(
            "training correlation is zero (all-zero training symbols?)".into(),
        ));
    }
    Ok(acc.arg())
}

/// Exact rotation by `delta_slow`:
/// `X_B = X' cos(delta) - P' sin(delta)`, `P_B = X' sin(delta) + P' cos(delta)`.
pub fn compensate_slow(block: &QuadratureBlock, delta_slow: f64) -> QuadratureBlock {
    let (c, s) = (delta_slow.cos(), delta_slow.sin());
    let n = block.len();
    let mut x = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for k in 0..n {
        x.push(block.x[k] * c - block.p[k] * s);
        p.push(block.x[k] * s + block.p[k] * c);
    }
    QuadratureBlock { x, p, role: block.role, training_mask: block.training_mask.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, fs: f64, f: f64, theta: f64, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * std::f64::consts::PI * f * k as f64 / fs + theta).cos())
            .collect()
    }

    // --- frequency-offset estimation --------------------------------------

    #[test]
    fn offset_at_reference_frequencies() {
        // 1.31 GHz pilot line with f_m = 2 GHz -> 0.69 GHz offset.
        let fs = 10e9;
        let n = 1 << 16;
        let f_line = 1.31e9;
        let trace = tone(n, fs, f_line, 0.3, 1.0);
        let est = estimate_freq_offset(&trace, fs, 2e9, (1.0e9, 1.6e9)).unwrap();
        assert!((est - 0.69e9).abs() < 1e3, "est = {est}");
    }

    #[test]
    fn offset_zero_when_line_at_fm() {
        let fs = 10e9;
        let n = 1 << 15;
        let trace = tone(n, fs, 2e9, 0.0, 1.0);
        let est = estimate_freq_offset(&trace, fs, 2e9, (1.5e9, 2.5e9)).unwrap();
        assert!(est.abs() < 1.0, "est = {est}");
    }

    #[test]
    fn offset_sub_bin_accuracy_with_noise() {
        // Tones placed off-grid recover within 0.1 bin at 20 dB SNR.
        use rand::Rng;
        let fs = 10e9;
        let n = 1 << 16;
        let bin = fs / n as f64;
        let f_m = 2e9;
        let snr_amp = 10f64.powf(20.0 / 20.0) * (2.0 / n as f64).sqrt(); // 20 dB vs FFT floor
        let _ = snr_amp;
        for &frac in &[0.37, 0.11, 0.49, -0.23] {
            let f_line = 1.31e9 + frac * bin;
            let mut trace = tone(n, fs, f_line, 1.0, 1.0);
            // 20 dB SNR in the time domain.
            let mut rng = crate::model::derive_rng(5, "test.offset", 0);
            let sigma = (0.5f64 / 10f64.powf(20.0 / 10.0)).sqrt();
            for v in trace.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            let est = estimate_freq_offset(&trace, fs, f_m, (1.0e9, 1.6e9)).unwrap();
            let err_bins = (est - (f_m - f_line)).abs() / bin;
            assert!(err_bins < 0.1, "frac = {frac}: error {err_bins} bins");
        }
    }

    #[test]
    fn offset_noise_only_fails() {
        use rand::Rng;
        let fs = 10e9;
        let n = 1 << 14;
        let mut rng = crate::model::derive_rng(6, "test.offset", 0);
        let trace: Vec<f64> =
            (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        assert!(matches!(
            estimate_freq_offset(&trace, fs, 2e9, (1.0e9, 1.6e9)),
            Err(DspError::PeakNotFound { .. })
        ));
    }

    // --- band-pass ---------------------------------------------------------

    #[test]
    fn bandpass_preserves_in_band_tone() {
        let fs = 10e9;
        let n = 16_000; // 0.69 GHz is bin 1104: leakage-free grid
        let trace = tone(n, fs, 0.69e9, 0.7, 1.0);
        let out = bandpass(&trace, fs, 0.69e9, 0.5e9).unwrap();
        for (a, b) in out.iter().zip(&trace) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn bandpass_kills_out_of_band_tone() {
        let fs = 10e9;
        let n = 16_000;
        // Exact-bin tone far outside the band.
        let f = 64.0 * fs / n as f64 + 2.0e9;
        let f = (f / (fs / n as f64)).round() * fs / n as f64;
        let trace = tone(n, fs, f, 0.0, 1.0);
        let out = bandpass(&trace, fs, 0.69e9, 0.5e9).unwrap();
        let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak < 1e-9, "residual {peak}");
    }

    #[test]
    fn bandpass_white_noise_variance_parseval() {
        use rand::Rng;
        let fs = 10e9;
        let n = 1 << 16;
        let mut rng = crate::model::derive_rng(7, "test.bp", 0);
        let trace: Vec<f64> =
            (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let bw = 1.0e9;
        let out = bandpass(&trace, fs, 2.0e9, bw).unwrap();
        let var_in = trace.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let var_out = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let expect = var_in * 2.0 * bw / fs;
        // Statistical tolerance: the retained band holds ~2 bw/fs of the bins.
        assert!(
            (var_out / expect - 1.0).abs() < 0.05,
            "var_out = {var_out}, expect = {expect}"
        );
    }

    #[test]
    fn bandpass_rejects_bad_band() {
        let trace = vec![0.0; 64];
        assert!(bandpass(&trace, 10e9, 0.1e9, 0.5e9).is_err()); // hits DC
        assert!(bandpass(&trace, 10e9, 4.9e9, 0.5e9).is_err()); // hits Nyquist
    }

    #[test]
    fn lowpass_splits_tones() {
        let fs = 10e9;
        let n = 4_000;
        let keep = tone(n, fs, 0.5e9, 0.2, 1.0);
        let cut = tone(n, fs, 2.0e9, 0.0, 1.0);
        let mixed: Vec<f64> = keep.iter().zip(&cut).map(|(a, b)| a + b).collect();
        let out = lowpass(&mixed, fs, 1.0e9).unwrap();
        for (a, b) in out.iter().zip(&keep) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(lowpass(&mixed, fs, 5.1e9).is_err());
    }

    // --- down-conversion ----------------------------------------------------

    #[test]
    fn down_convert_cos_tone() {
        let fs = 10e9;
        let n = 4_000; // 2 GHz is bin 800
        let trace = tone(n, fs, 2e9, 0.0, 3.0);
        let bb = down_convert(&trace, fs, 2e9, 0.5e9).unwrap();
        for k in 0..n {
            assert!((bb.i[k] - 3.0).abs() < 1e-9);
            assert!(bb.q[k].abs() < 1e-9);
        }
    }

    #[test]
    fn down_convert_quadrature_tone() {
        let fs = 10e9;
        let n = 4_000;
        let trace = tone(n, fs, 2e9, std::f64::consts::FRAC_PI_2, 2.0);
        let bb = down_convert(&trace, fs, 2e9, 0.5e9).unwrap();
        for k in 0..n {
            assert!(bb.i[k].abs() < 1e-9);
            assert!((bb.q[k].abs() - 2.0).abs() < 1e-9);
            // Sign convention: A cos(wt + pi/2) -> q = A sin(pi/2) = +A.
            assert!(bb.q[k] > 0.0);
        }
    }

    #[test]
    fn down_convert_suppresses_far_tone() {
        let fs = 10e9;
        let n = 16_000; // both tones bin-exact
        let mut trace = tone(n, fs, 2e9, 0.4, 1.0);
        let other = tone(n, fs, 3.5e9, 0.0, 1.0);
        for (a, b) in trace.iter_mut().zip(&other) {
            *a += b;
        }
        let bb = down_convert(&trace, fs, 2e9, 0.25e9).unwrap();
        for k in 0..n {
            let z = Complex64::new(bb.i[k], bb.q[k]);
            assert!((z.norm() - 1.0).abs() < 1e-6, "|z| = {}", z.norm());
        }
    }

    #[test]
    fn down_convert_rejects_aliasing_cutoff() {
        let trace = vec![0.0; 64];
        assert!(down_convert(&trace, 10e9, 1e9, 1e9).is_err());
        assert!(down_convert(&trace, 10e9, 1e9, 2e9).is_err());
    }

    // --- symbol sampling ----------------------------------------------------

    #[test]
    fn symbol_sample_constant_baseband() {
        let fs = 10e9;
        let f_rep = 100e6;
        let n = 100 * 10;
        let bb = BasebandIQ { i: vec![2.5; n], q: vec![-1.0; n], sample_rate: fs };
        let blk = symbol_sample(&bb, f_rep, 0.5, SymbolTiming::Known(0)).unwrap();
        assert_eq!(blk.len(), 10);
        for k in 0..blk.len() {
            assert!((blk.x[k] - 2.5).abs() < 1e-12);
            assert!((blk.p[k] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symbol_sample_localizes_single_pulse() {
        let fs = 10e9;
        let f_rep = 100e6;
        let per = 100;
        let n = per * 8;
        let mut i = vec![0.0; n];
        for t in 3 * per..3 * per + 50 {
            i[t] = 1.0;
        }
        let bb = BasebandIQ { i, q: vec![0.0; n], sample_rate: fs };
        let blk = symbol_sample(&bb, f_rep, 0.5, SymbolTiming::Known(0)).unwrap();
        for k in 0..8 {
            if k == 3 {
                assert!((blk.x[k] - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(blk.x[k], 0.0);
            }
        }
    }

    #[test]
    fn symbol_sample_auto_matches_known_on_clean_data() {
        // Pulses start at offset 30; auto mode must find it, matching the
        // exhaustive-energy oracle.
        let fs = 10e9;
        let f_rep = 100e6;
        let per = 100;
        let n_sym = 64;
        let offset = 30;
        let mut i = vec![0.0; per * (n_sym + 1)];
        let mut rng_state = 1u64;
        for k in 0..n_sym {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let amp = 1.0 + (rng_state >> 33) as f64 / 2f64.powi(31);
            for t in 0..50 {
                i[offset + k * per + t] = amp;
            }
        }
        let bb = BasebandIQ { i, q: vec![0.0; per * (n_sym + 1)], sample_rate: fs };
        // Exhaustive oracle over all offsets.
        let mut best = (0usize, f64::NEG_INFINITY);
        for cand in 0..per {
            let blk = symbol_sample(&bb, f_rep, 0.5, SymbolTiming::Known(cand)).unwrap();
            let e: f64 =
                blk.x.iter().zip(&blk.p).map(|(x, p)| x * x + p * p).sum::<f64>() / blk.len() as f64;
            if e > best.1 {
                best = (cand, e);
            }
        }
        assert_eq!(best.0, offset);
        let auto = symbol_sample(&bb, f_rep, 0.5, SymbolTiming::Auto).unwrap();
        let known = symbol_sample(&bb, f_rep, 0.5, SymbolTiming::Known(offset)).unwrap();
        assert_eq!(auto.x, known.x);
    }

    #[test]
    fn symbol_sample_rejects_non_integer_ratio() {
        let bb = BasebandIQ { i: vec![0.0; 100], q: vec![0.0; 100], sample_rate: 10e9 };
        assert!(symbol_sample(&bb, 97e6, 0.5, SymbolTiming::Known(0)).is_err());
    }

    // --- fast compensation ---------------------------------------------------

    fn block(x: Vec<f64>, p: Vec<f64>) -> QuadratureBlock {
        QuadratureBlock::new(x, p, Role::Bob).unwrap()
    }

    #[test]
    fn fast_aligned_pilot_identity() {
        let sig = block(vec![1.0], vec![0.0]);
        let pil = block(vec![1.0], vec![0.0]);
        let out = compensate_fast(&sig, &pil, 1.0).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-15);
        assert!(out.p[0].abs() < 1e-15);
    }

    #[test]
    fn fast_quarter_turn_pilot() {
        // (Xs, Ps, Xr, Pr, N0) = (1, 0, 0, 1, 1) -> (0, 1).
        let sig = block(vec![1.0], vec![0.0]);
        let pil = block(vec![0.0], vec![1.0]);
        let out = compensate_fast(&sig, &pil, 1.0).unwrap();
        assert!(out.x[0].abs() < 1e-15);
        assert!((out.p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fast_common_rotation_invariance() {
        // A common rotation of signal and pilot leaves the output unchanged.
        use rand::Rng;
        let mut rng = crate::model::derive_rng(11, "test.fast", 0);
        let n = 256;
        let mut sx = Vec::new();
        let mut sp = Vec::new();
        let mut rx = Vec::new();
        let mut rp = Vec::new();
        for _ in 0..n {
            sx.push(rng.gen::<f64>() * 2.0 - 1.0);
            sp.push(rng.gen::<f64>() * 2.0 - 1.0);
            rx.push(rng.gen::<f64>() + 0.5);
            rp.push(rng.gen::<f64>() * 0.2);
        }
        let base =
            compensate_fast(&block(sx.clone(), sp.clone()), &block(rx.clone(), rp.clone()), 2.0)
                .unwrap();
        // Rotate both by random per-symbol angles. The pair convention is
        // (cos, -sin) of the beat phase, so adding theta to the beat phase
        // maps (x, p) -> (x cos t + p sin t, -x sin t + p cos t).
        let mut sx2 = sx.clone();
        let mut sp2 = sp.clone();
        let mut rx2 = rx.clone();
        let mut rp2 = rp.clone();
        for k in 0..n {
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            let (c, s) = (th.cos(), th.sin());
            let (a, b) = (sx[k], sp[k]);
            sx2[k] = a * c + b * s;
            sp2[k] = -a * s + b * c;
            let (a, b) = (rx[k], rp[k]);
            rx2[k] = a * c + b * s;
            rp2[k] = -a * s + b * c;
        }
        let rot = compensate_fast(&block(sx2, sp2), &block(rx2, rp2), 2.0).unwrap();
        for k in 0..n {
            assert!((rot.x[k] - base.x[k]).abs() < 1e-12);
            assert!((rot.p[k] - base.p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_preserves_magnitude() {
        let sig = block(vec![0.3, -1.2], vec![0.4, 0.9]);
        let pil = block(vec![5.0, 4.0], vec![1.0, -2.0]);
        let n0 = 3.0;
        let out = compensate_fast(&sig, &pil, n0).unwrap();
        for k in 0..2 {
            let lhs = out.x[k].powi(2) + out.p[k].powi(2);
            let rhs = (sig.x[k].powi(2) + sig.p[k].powi(2)) / n0;
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn fast_reports_pilot_dropout_with_index() {
        let sig = block(vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]);
        let pil = block(vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]);
        match compensate_fast(&sig, &pil, 1.0) {
            Err(DspError::PilotDropout { symbol, .. }) => assert_eq!(symbol, 1),
            other => panic!("expected dropout, got {other:?}"),
        }
    }

    // --- slow compensation ---------------------------------------------------

    #[test]
    fn slow_zero_on_identical_blocks() {
        let ax = vec![1.0, -0.5, 0.3];
        let ap = vec![0.2, 1.0, -0.7];
        let d = estimate_slow_phase(&ax, &ap, &ax, &ap).unwrap();
        assert!(d.abs() < 1e-15);
    }

    #[test]
    fn slow_recovers_construction_rotation() {
        // Bob = Alice rotated by -0.3 -> estimator returns +0.3, and
        // compensate_slow(+0.3) restores Alice.
        let ax = vec![1.0, -0.5, 0.3, 2.0];
        let ap = vec![0.2, 1.0, -0.7, 0.1];
        let th = -0.3f64;
        let bx: Vec<f64> =
            ax.iter().zip(&ap).map(|(x, p)| x * th.cos() - p * th.sin()).collect();
        let bp: Vec<f64> =
            ax.iter().zip(&ap).map(|(x, p)| x * th.sin() + p * th.cos()).collect();
        let d = estimate_slow_phase(&ax, &ap, &bx, &bp).unwrap();
        assert!((d - 0.3).abs() < 1e-12, "d = {d}");
        let bob = block(bx, bp);
        let fixed = compensate_slow(&bob, d);
        for k in 0..ax.len() {
            assert!((fixed.x[k] - ax[k]).abs() < 1e-12);
            assert!((fixed.p[k] - ap[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn slow_estimator_statistical_accuracy() {
        // Rotation 0.3 plus unit Gaussian noise on 1e4 training symbols.
        use rand::Rng;
        let mut rng = crate::model::derive_rng(13, "test.slow", 0);
        let n = 10_000;
        let v_a: f64 = 3.246;
        let th = 0.3f64;
        let mut ax = Vec::new();
        let mut ap = Vec::new();
        let mut bx = Vec::new();
        let mut bp = Vec::new();
        for _ in 0..n {
            let x = rng.sample::<f64, _>(rand_distr::StandardNormal) * v_a.sqrt();
            let p = rng.sample::<f64, _>(rand_distr::StandardNormal) * v_a.sqrt();
            // Bob = Alice rotated by -th plus unit noise.
            let rx = x * th.cos() + p * th.sin() + rng.sample::<f64, _>(rand_distr::StandardNormal);
            let rp = -x * th.sin() + p * th.cos() + rng.sample::<f64, _>(rand_distr::StandardNormal);
            ax.push(x);
            ap.push(p);
            bx.push(rx);
            bp.push(rp);
        }
        let d = estimate_slow_phase(&ax, &ap, &bx, &bp).unwrap();
        // Estimator std ~ sigma / (sqrt(2 n) * sqrt(2 V_A)) for unit noise.
        let std = 1.0 / ((2.0 * n as f64).sqrt() * (2.0 * v_a).sqrt());
        assert!((d - th).abs() < 3.0 * std, "d = {d}, std = {std}");
    }

    #[test]
    fn slow_round_trip_inverse() {
        let b = block(vec![0.4, -1.0], vec![0.8, 0.6]);
        let out = compensate_slow(&compensate_slow(&b, 0.77), -0.77);
        for k in 0..2 {
            assert!((out.x[k] - b.x[k]).abs() < 1e-12);
            assert!((out.p[k] - b.p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn slow_quarter_turn() {
        let b = block(vec![1.0], vec![0.0]);
        let out = compensate_slow(&b, std::f64::consts::FRAC_PI_2);
        assert!(out.x[0].abs() < 1e-15);
        assert!((out.p[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slow_rejects_empty_and_zero() {
        assert!(estimate_slow_phase(&[], &[], &[], &[]).is_err());
        assert!(estimate_slow_phase(&[0.0], &[0.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn delayed_reference_shifts_symbols() {
        let pil = block(vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.2, 0.3, 0.4]);
        let d = delay_reference(&pil, 1);
        assert_eq!(d.x, vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(d.p, vec![0.1, 0.1, 0.2, 0.3]);
    }
}
