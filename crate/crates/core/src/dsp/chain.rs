//! Resolved receive-chain parameters and the block-level processing path.
//!
//! A [`DspChain`] freezes everything the offline pipeline needs for one
//! configuration: band centres and widths, low-pass cutoffs, symbol geometry,
//! and timing. The same chain instance processes data blocks and calibration
//! noise so normalization and measurement always share identical filters.

use num_complex::Complex64;

use crate::model::{LinkConfig, QuadratureBlock};

use super::{
    bandpass, bin_freq, down_convert, fft_forward, symbol_sample, DspError, SymbolTiming,
};

/// Raw (unnormalized) quadrature blocks for the two detector paths.
#[derive(Debug, Clone)]
pub struct RawSymbols {
    /// Quantum path, `X ~ cos`, `P ~ -sin` of the signal beat phase.
    pub sig: QuadratureBlock,
    /// Pilot path in the same convention relative to its own beat phase.
    pub pilot: QuadratureBlock,
}

/// Frozen pipeline parameters for one link configuration and one estimated
/// frequency offset.
#[derive(Debug, Clone)]
pub struct DspChain {
    pub sample_rate: f64,
    pub f_rep: f64,
    pub duty_cycle: f64,
    /// Down-conversion / band centre for the quantum path (the estimated
    /// offset `delta_f_hat`).
    pub f_quantum: f64,
    /// Down-conversion / band centre for the pilot path (`f_m - delta_f_hat`).
    pub f_pilot: f64,
    pub quantum_bw: f64,
    pub pilot_bw: f64,
    pub timing: SymbolTiming,
    /// Gate the band-passed pilot with the symbol pulse window before
    /// down-conversion. The quantum signal only carries phase while its
    /// pulse is open; gating the CW pilot the same way makes the two
    /// phase-measurement kernels identical, so the fast compensation stays
    /// exact within the symbol even for fast laser phase walks.
    pub gate_pilot: bool,
}

impl DspChain {
    /// Builds the chain for `cfg` around the estimated offset `f_hat`.
    pub fn plan(cfg: &LinkConfig, f_hat: f64) -> Self {
        Self {
            sample_rate: cfg.sample_rate,
            f_rep: cfg.f_rep,
            duty_cycle: cfg.duty_cycle,
            f_quantum: f_hat,
            f_pilot: cfg.f_m - f_hat,
            quantum_bw: cfg.quantum_bandwidth(),
            pilot_bw: cfg.pilot_bandwidth(),
            timing: if cfg.auto_timing { SymbolTiming::Auto } else { SymbolTiming::Known(0) },
            gate_pilot: cfg.gate_pilot && cfg.duty_cycle < 1.0,
        }
    }

    pub fn samples_per_symbol(&self) -> usize {
        (self.sample_rate / self.f_rep).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        ((self.samples_per_symbol() as f64 * self.duty_cycle).round() as usize)
            .clamp(1, self.samples_per_symbol())
    }

    /// Band-pass, down-convert, and symbol-sample one detector trace.
    /// `conjugate` selects the quantum-path convention (`P = -q`); the pilot
    /// path keeps `P = +q` because its mirror beat line already negates the
    /// phase.
    fn process_path(
        &self,
        trace: &[f64],
        f_center: f64,
        bw: f64,
        conjugate: bool,
    ) -> Result<QuadratureBlock, DspError> {
        let filtered = bandpass(trace, self.sample_rate, f_center, bw)?;
        // Low-pass cutoff defaults to half the band-pass width.
        let bb = down_convert(&filtered, self.sample_rate, f_center, bw / 2.0)?;
        let mut blk = symbol_sample(&bb, self.f_rep, self.duty_cycle, self.timing)?;
        if conjugate {
            for p in blk.p.iter_mut() {
                *p = -*p;
            }
        }
        Ok(blk)
    }

    /// Quantum path alone; used by calibration runs that feed pure noise.
    pub fn quantum_symbols(&self, trace: &[f64]) -> Result<QuadratureBlock, DspError> {
        self.process_path(trace, self.f_quantum, self.quantum_bw, true)
    }

    /// Processes the two detector photocurrents into raw symbol blocks.
    pub fn process(&self, r_sig: &[f64], r_pilot: &[f64]) -> Result<RawSymbols, DspError> {
        if r_sig.len() != r_pilot.len() {
            return Err(DspError::LengthMismatch(format!(
                "signal trace {} samples, pilot {}",
                r_sig.len(),
                r_pilot.len()
            )));
        }
        let sig = self.process_path(r_sig, self.f_quantum, self.quantum_bw, true)?;
        let pilot = if self.gate_pilot {
            // Isolate the pilot line first (the gate comb must not fold the
            // sum sideband or carrier leak into band), then apply the pulse
            // gate so the pilot sees the signal's exact phase window.
            let isolated = bandpass(r_pilot, self.sample_rate, self.f_pilot, self.pilot_bw)?;
            let gated = self.apply_gate(&isolated);
            self.process_path(&gated, self.f_pilot, self.pilot_bw, false)?
        } else {
            self.process_path(r_pilot, self.f_pilot, self.pilot_bw, false)?
        };
        Ok(RawSymbols { sig, pilot })
    }

    fn apply_gate(&self, trace: &[f64]) -> Vec<f64> {
        let per = self.samples_per_symbol();
        let window = self.window_samples();
        let offset = match self.timing {
            SymbolTiming::Known(o) => o % per,
            SymbolTiming::Auto => 0,
        };
        let mut out = vec![0.0; trace.len()];
        let mut start = offset;
        while start < trace.len() {
            let end = (start + window).min(trace.len());
            out[start..end].copy_from_slice(&trace[start..end]);
            start += per;
        }
        out
    }

    /// Exact per-quadrature noise gain of the quantum path: the variance of
    /// a symbol-level quadrature when the detector input is unit-variance
    /// white noise. Computed by Parseval on the composite linear functional
    /// (window average -> low-pass -> mixer -> band-pass), so the harness
    /// can normalize without Monte-Carlo calibration error.
    pub fn noise_gain(&self, n_symbols: usize) -> Result<f64, DspError> {
        let per = self.samples_per_symbol();
        let window = self.window_samples();
        let n = n_symbols * per;
        if n == 0 {
            return Err(DspError::Domain {
                func: "noise_gain",
                msg: "need at least one symbol".into(),
            });
        }
        let offset = match self.timing {
            SymbolTiming::Known(o) => o % per,
            SymbolTiming::Auto => 0,
        };
        // Window indicator, normalized to the matched average.
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        for t in offset..offset + window {
            u[t % n] = Complex64::new(1.0 / window as f64, 0.0);
        }
        // Low-pass of the window (self-adjoint zero-phase mask).
        fft_forward(&mut u);
        let lp_cut =
            self.quantum_bw / 2.0 + super::MASK_EDGE_EPS_BINS * self.sample_rate / n as f64;
        for (k, v) in u.iter_mut().enumerate() {
            if bin_freq(k, n, self.sample_rate).abs() > lp_cut {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        super::fft_inverse(&mut u);
        // Mixer transpose: multiply by the same oscillators.
        let dt = 1.0 / self.sample_rate;
        let w = 2.0 * std::f64::consts::PI * self.f_quantum;
        let mut wx = vec![Complex64::new(0.0, 0.0); n];
        let mut wp = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..n {
            let phase = w * t as f64 * dt;
            wx[t] = u[t] * 2.0 * phase.cos();
            wp[t] = u[t] * (-2.0) * phase.sin();
        }
        // Band-pass mask and Parseval sum.
        fft_forward(&mut wx);
        fft_forward(&mut wp);
        let edge =
            self.quantum_bw / 2.0 + super::MASK_EDGE_EPS_BINS * self.sample_rate / n as f64;
        let mut gx = 0.0;
        let mut gp = 0.0;
        for k in 0..n {
            let f = bin_freq(k, n, self.sample_rate).abs();
            if (f - self.f_quantum).abs() <= edge {
                gx += wx[k].norm_sqr();
                gp += wp[k].norm_sqr();
            }
        }
        let gx = gx / n as f64;
        let gp = gp / n as f64;
        if (gx - gp).abs() > 1e-6 * gx.max(gp) {
            return Err(DspError::Domain {
                func: "noise_gain",
                msg: format!("quadrature gains disagree: {gx} vs {gp}"),
            });
        }
        Ok(0.5 * (gx + gp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn test_cfg() -> LinkConfig {
        LinkConfig {
            sim_symbols_per_block: 2_000,
            ..LinkConfig::reference_plan()
        }
    }

    #[test]
    fn noise_gain_matches_monte_carlo() {
        let cfg = test_cfg();
        let chain = DspChain::plan(&cfg, cfg.delta_f_ab);
        let n_sym = 4_000;
        let n = n_sym * chain.samples_per_symbol();
        let analytic = chain.noise_gain(n_sym).unwrap();

        let mut rng = crate::model::derive_rng(3, "test.noisegain", 0);
        let trace: Vec<f64> =
            (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let filtered = bandpass(&trace, chain.sample_rate, chain.f_quantum, chain.quantum_bw).unwrap();
        let bb = down_convert(
            &filtered,
            chain.sample_rate,
            chain.f_quantum,
            chain.quantum_bw / 2.0,
        )
        .unwrap();
        let blk = symbol_sample(&bb, chain.f_rep, chain.duty_cycle, SymbolTiming::Known(0)).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let mc = 0.5 * (var(&blk.x) + var(&blk.p));
        let tol = 4.0 * (1.0 / n_sym as f64).sqrt(); // ~4 sigma on the pooled variance
        assert!(
            (mc / analytic - 1.0).abs() < tol,
            "mc = {mc}, analytic = {analytic}"
        );
    }

    #[test]
    fn chain_recovers_clean_tone_symbols() {
        // A CW tone at the quantum band centre becomes a constant symbol.
        let cfg = LinkConfig { duty_cycle: 1.0, ..test_cfg() };
        let chain = DspChain::plan(&cfg, cfg.delta_f_ab);
        let n_sym = 100; // 0.69 GHz lands on bin 690
        let n = n_sym * chain.samples_per_symbol();
        let dt = 1.0 / cfg.sample_rate;
        let theta = 0.35;
        let r: Vec<f64> = (0..n)
            .map(|t| {
                2.0 * (2.0 * std::f64::consts::PI * cfg.delta_f_ab * t as f64 * dt + theta).cos()
            })
            .collect();
        let zeros = vec![0.0; n];
        // Pilot trace empty; process only the quantum path.
        let blk = chain
            .process_path(&r, chain.f_quantum, chain.quantum_bw, true)
            .unwrap();
        let _ = zeros;
        for k in 2..n_sym - 2 {
            assert!((blk.x[k] - 2.0 * theta.cos()).abs() < 1e-6);
            // Quantum path: P = -q = -A sin(theta).
            assert!((blk.p[k] + 2.0 * theta.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn pilot_path_keeps_mirror_phase() {
        // A mirror-line pilot cos(2 pi f t - theta) must produce
        // (cos theta, -sin theta) * amplitude in the pilot block, which is
        // the (cos, -sin) convention for beat phase +theta.
        let cfg = test_cfg();
        let chain = DspChain::plan(&cfg, cfg.delta_f_ab);
        let n_sym = 100; // 1.31 GHz lands on bin 1310
        let n = n_sym * chain.samples_per_symbol();
        let dt = 1.0 / cfg.sample_rate;
        let theta = 0.6;
        let f_line = cfg.f_m - cfg.delta_f_ab;
        let r: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f_line * t as f64 * dt - theta).cos())
            .collect();
        let blk = chain
            .process_path(&r, chain.f_pilot, chain.pilot_bw, false)
            .unwrap();
        for k in 2..n_sym - 2 {
            assert!((blk.x[k] - theta.cos()).abs() < 1e-6);
            assert!((blk.p[k] + theta.sin()).abs() < 1e-6);
        }
    }
}
