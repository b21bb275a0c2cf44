//! Experiment orchestration: calibration, seeded block-wise end-to-end
//! runs, pooled estimation, key-rate reporting, and parameter sweeps.
//!
//! Every block derives its own random streams from `(seed, module_tag,
//! block_index)`, so block-parallel execution is bit-identical to
//! sequential execution. One calibration per configuration anchors the
//! SNU scale: a noiseless unit-variance probe measures the chain gain
//! `K0`, the exact Parseval noise gain provides `N0`, and Alice's
//! synthesis amplitude is set to `sqrt(N0) / K0` so the normal linear
//! model holds in shot-noise units by construction.

pub mod config;
pub mod csv;
pub mod waveform_io;

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{apply_channel, laser_phase_walk, PhaseKind, PhaseTrace};
use crate::dsp::{
    compensate_fast, delay_reference, estimate_freq_offset_with_margin,
    estimate_slow_phase, DspChain, DspError,
};
use crate::model::{derive_seed, LinkConfig, ModelError, QuadratureBlock, Role};
use crate::receiver::{calibrate_shot_noise, heterodyne_detect, DetectorParams, RxError,
    ShotNoiseCalibration};
use crate::security::{
    estimate_channel, secret_key_rate, worst_case_bounds, ChannelEstimate, KeyRateReport,
    SecurityError, SecurityInputs, SecurityMode,
};
use crate::transmitter::{draw_gaussian_symbols, synthesize_pilot, synthesize_quantum, TxError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("block {index}: {source}")]
    Block {
        index: u64,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Rx(#[from] RxError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// SNU anchor for one configuration.
#[derive(Debug, Clone)]
pub struct LinkCalibration {
    /// Chain amplitude gain for a unit Alice symbol at eta = 1, T = 1.
    pub k0: f64,
    /// Exact per-quadrature noise variance at symbol level for the
    /// simulated block length (the fast-compensation divisor).
    pub n0: f64,
    /// Alice synthesis amplitude per SNU: `sqrt(n0) / k0`.
    pub unit_amplitude: f64,
    /// Empirical vacuum calibration at the configured calibration length,
    /// for verification against `n0`.
    pub shot: ShotNoiseCalibration,
}

fn detector_from(cfg: &LinkConfig, eta: f64, noise: bool) -> DetectorParams {
    DetectorParams {
        eta,
        v_el: cfg.v_el,
        shot_sigma: cfg.shot_sigma,
        gain: cfg.detector_gain,
        noise_enabled: noise,
        adc_bits: cfg.adc_bits,
        adc_full_scale_rms: cfg.adc_full_scale_rms,
    }
}

fn freq_window(cfg: &LinkConfig) -> (f64, f64) {
    let center = cfg.f_m - cfg.delta_f_ab;
    let span = cfg.freq_search_span_factor * cfg.f_rep;
    (center - span, center + span)
}

/// Calibrates the SNU anchor: a noiseless random-symbol probe through the
/// identity channel measures the chain gain, and the Parseval noise gain at
/// the simulated block length fixes the normalization variance. The
/// empirical vacuum calibration is run alongside as the measured
/// counterpart of the analytic value.
pub fn calibrate_link(cfg: &LinkConfig) -> Result<LinkCalibration, HarnessError> {
    cfg.validate()?;
    let n_probe = cfg.calibration_symbols.max(1_000);
    let probe_cfg = LinkConfig {
        length_km: 0.0,
        pol_isolation_db: f64::INFINITY,
        slow_phase_rate: 0.0,
        linewidth_a: 0.0,
        linewidth_b: 0.0,
        delta_f_drift: 0.0,
        detector_noise: false,
        eta: 1.0,
        sim_symbols_per_block: n_probe,
        ..cfg.clone()
    };
    let probe_seed = derive_seed(cfg.seed, "calib.probe", 0);
    let symbols = draw_gaussian_symbols(n_probe, 1.0, probe_seed)?;
    let n_samples = n_probe * cfg.samples_per_symbol();
    let zero_a = PhaseTrace::zeros(n_samples, PhaseKind::LaserA);
    let zero_b = PhaseTrace::zeros(n_samples, PhaseKind::LaserB);
    let quantum = synthesize_quantum(&symbols, &probe_cfg, &zero_a, 1.0)?;
    let pilot = synthesize_pilot(&probe_cfg, &zero_a, 1.0)?;
    let (sig_ch, pil_ch) = apply_channel(&quantum, &pilot, &probe_cfg, probe_seed)?;
    let det = detector_from(&probe_cfg, 1.0, false);
    let r_sig = heterodyne_detect(&sig_ch, &det, &zero_b, probe_seed)?;
    let r_pil = heterodyne_detect(&pil_ch, &det, &zero_b, probe_seed)?;

    let f_hat = estimate_freq_offset_with_margin(
        &r_pil,
        cfg.sample_rate,
        cfg.f_m,
        freq_window(cfg),
        cfg.peak_margin_db,
    )?;
    let chain = DspChain::plan(cfg, f_hat);
    let raw = chain.process(&r_sig, &r_pil)?;
    let rotated = compensate_fast(&raw.sig, &raw.pilot, 1.0)?;

    // Pooled slope of the probe regression = chain gain for one SNU.
    let x_a = symbols.x_a();
    let p_a = symbols.p_a();
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x_a.iter().zip(&rotated.x).chain(p_a.iter().zip(&rotated.p)) {
        sxy += a * b;
        sxx += a * a;
    }
    if sxx <= 0.0 || sxy <= 0.0 {
        return Err(HarnessError::Calibration(format!(
            "probe regression degenerate: sxy = {sxy}, sxx = {sxx}"
        )));
    }
    let k0 = sxy / sxx;

    let n0 = cfg.shot_sigma * cfg.shot_sigma * chain.noise_gain(cfg.sim_symbols_per_block)?;
    let shot = calibrate_shot_noise(
        &detector_from(cfg, cfg.eta, true),
        &chain,
        cfg.calibration_symbols,
        derive_seed(cfg.seed, "calib.vacuum", 0),
    )?;
    Ok(LinkCalibration { k0, n0, unit_amplitude: n0.sqrt() / k0, shot })
}

// ---------------------------------------------------------------------------
// Block simulation
// ---------------------------------------------------------------------------

/// Everything one simulated block produces.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub alice: QuadratureBlock,
    pub bob: QuadratureBlock,
    /// Estimated frequency offset used by the block's chain.
    pub f_hat: f64,
    /// Per-symbol total compensation phase applied by the fast and slow
    /// stages (diagnostics for phase-tracking verification).
    pub compensation_phase: Vec<f64>,
}

/// Runs synthesize -> channel -> detect -> DSP for one block.
pub fn simulate_block(
    cfg: &LinkConfig,
    cal: &LinkCalibration,
    block: u64,
) -> Result<BlockOutput, HarnessError> {
    let symbols =
        draw_gaussian_symbols(cfg.sim_symbols_per_block, cfg.v_a, derive_seed(cfg.seed, "tx", block))?;
    simulate_block_with_symbols(cfg, cal, block, &symbols)
}

/// Like [`simulate_block`] but with caller-provided symbols (diagnostics:
/// constant-amplitude gauges and the like). `symbols.len()` must equal the
/// configured block size.
pub fn simulate_block_with_symbols(
    cfg: &LinkConfig,
    cal: &LinkCalibration,
    block: u64,
    symbols: &crate::transmitter::GaussianSymbols,
) -> Result<BlockOutput, HarnessError> {
    let n_sym = cfg.sim_symbols_per_block;
    if symbols.len() != n_sym {
        return Err(HarnessError::Config(format!(
            "symbol buffer has {} entries, config block is {}",
            symbols.len(),
            n_sym
        )));
    }
    let per = cfg.samples_per_symbol();
    let n_samples = n_sym * per;
    let dt = 1.0 / cfg.sample_rate;

    let phi_a = laser_phase_walk(
        n_samples,
        cfg.linewidth_a,
        dt,
        derive_seed(cfg.seed, "laser.a", block),
        PhaseKind::LaserA,
    );
    let phi_b = laser_phase_walk(
        n_samples,
        cfg.linewidth_b,
        dt,
        derive_seed(cfg.seed, "laser.b", block),
        PhaseKind::LaserB,
    );
    let quantum = synthesize_quantum(symbols, cfg, &phi_a, cal.unit_amplitude)?;
    let pilot = synthesize_pilot(cfg, &phi_a, cal.unit_amplitude)?;
    let (sig_ch, pil_ch) =
        apply_channel(&quantum, &pilot, cfg, derive_seed(cfg.seed, "channel", block))?;
    drop(quantum);
    drop(pilot);

    let det = detector_from(cfg, cfg.eta, cfg.detector_noise);
    let r_sig = heterodyne_detect(&sig_ch, &det, &phi_b, derive_seed(cfg.seed, "rx.sig", block))?;
    drop(sig_ch);
    let r_pil = heterodyne_detect(&pil_ch, &det, &phi_b, derive_seed(cfg.seed, "rx.ref", block))?;
    drop(pil_ch);

    let f_hat = estimate_freq_offset_with_margin(
        &r_pil,
        cfg.sample_rate,
        cfg.f_m,
        freq_window(cfg),
        cfg.peak_margin_db,
    )?;
    let chain = DspChain::plan(cfg, f_hat);
    let raw = chain.process(&r_sig, &r_pil)?;
    drop(r_sig);
    drop(r_pil);

    let reference = if cfg.pilot_delay_symbols > 0 {
        delay_reference(&raw.pilot, cfg.pilot_delay_symbols)
    } else {
        raw.pilot.clone()
    };
    let mut fast = compensate_fast(&raw.sig, &reference, cal.n0)?;

    // DC block: a phase-locked in-band leak (residual pilot carrier through
    // finite polarization isolation) lands as a constant quadrature offset
    // after the fast compensation; remove it before anything estimates on
    // the data.
    let mean_x = fast.x.iter().sum::<f64>() / fast.x.len() as f64;
    let mean_p = fast.p.iter().sum::<f64>() / fast.p.len() as f64;
    for v in fast.x.iter_mut() {
        *v -= mean_x;
    }
    for v in fast.p.iter_mut() {
        *v -= mean_p;
    }

    // Training mask: evenly spaced disclosed symbols.
    let stride = (1.0 / cfg.training_fraction).round() as usize;
    let mask: Vec<bool> = (0..n_sym).map(|k| k % stride == 0).collect();

    let alice = QuadratureBlock::with_mask(symbols.x_a(), symbols.p_a(), Role::Alice, mask.clone())?;

    // Per-symbol compensation phase before the slow stage: the fast stage
    // rotates the physical signal phasor by arg(pilot pair).
    let mut comp_phase: Vec<f64> =
        reference.p.iter().zip(&reference.x).map(|(p, x)| p.atan2(*x)).collect();

    // Piecewise-constant slow-phase tracking per sub-block.
    let mut bob_x = fast.x;
    let mut bob_p = fast.p;
    let sub = cfg.slow_subblock.max(stride);
    let mut start = 0usize;
    let mut last_delta = 0.0f64;
    while start < n_sym {
        let end = (start + sub).min(n_sym);
        let mut ax = Vec::new();
        let mut ap = Vec::new();
        let mut bx = Vec::new();
        let mut bp = Vec::new();
        for k in start..end {
            if mask[k] {
                ax.push(alice.x[k]);
                ap.push(alice.p[k]);
                bx.push(bob_x[k]);
                bp.push(bob_p[k]);
            }
        }
        let delta = if ax.is_empty() {
            last_delta
        } else {
            estimate_slow_phase(&ax, &ap, &bx, &bp)?
        };
        last_delta = delta;
        let (c, s) = (delta.cos(), delta.sin());
        for k in start..end {
            let (x, p) = (bob_x[k], bob_p[k]);
            bob_x[k] = x * c - p * s;
            bob_p[k] = x * s + p * c;
            comp_phase[k] += delta;
        }
        start = end;
    }
    let bob = QuadratureBlock::with_mask(bob_x, bob_p, Role::Bob, mask)?;
    Ok(BlockOutput { alice, bob, f_hat, compensation_phase: comp_phase })
}

// ---------------------------------------------------------------------------
// Experiment report
// ---------------------------------------------------------------------------

/// One per-block row of the experiment report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRow {
    pub block_index: u64,
    pub eps_hat: f64,
    pub t_hat: f64,
    pub eps_max: f64,
    pub t_min: f64,
}

/// Means and standard deviations over blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean_eps_hat: f64,
    pub std_eps_hat: f64,
    pub mean_t_hat: f64,
    pub std_t_hat: f64,
    pub mean_eps_max: f64,
    pub std_eps_max: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub per_block: Vec<BlockRow>,
    pub summary: Summary,
    pub pooled: ChannelEstimate,
    pub keyrate_asymptotic: KeyRateReport,
    pub keyrate_finite: KeyRateReport,
    pub config_echo: LinkConfig,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sx: f64,
    sy: f64,
    sxy: f64,
    sxx: f64,
    syy: f64,
    m: usize,
}

impl Moments {
    fn accumulate(&mut self, alice: &QuadratureBlock, bob: &QuadratureBlock) {
        for (a, b) in alice.x.iter().zip(&bob.x).chain(alice.p.iter().zip(&bob.p)) {
            self.sx += a;
            self.sy += b;
            self.sxy += a * b;
            self.sxx += a * a;
            self.syy += b * b;
            self.m += 1;
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.sx += other.sx;
        self.sy += other.sy;
        self.sxy += other.sxy;
        self.sxx += other.sxx;
        self.syy += other.syy;
        self.m += other.m;
    }

    fn estimate(&self, eta: f64, v_el: f64) -> Result<ChannelEstimate, SecurityError> {
        let m = self.m as f64;
        if self.m < 2 {
            return Err(SecurityError::Degenerate("pooled sample too small".into()));
        }
        let sxx_c = self.sxx - self.sx * self.sx / m;
        let sxy_c = self.sxy - self.sx * self.sy / m;
        let syy_c = self.syy - self.sy * self.sy / m;
        if sxx_c <= 0.0 {
            return Err(SecurityError::Degenerate("pooled x variance is zero".into()));
        }
        let t_hat = sxy_c / sxx_c;
        let sigma2_hat = ((syy_c - t_hat * sxy_c) / m).max(0.0);
        let transmittance_hat = t_hat * t_hat / eta;
        let eps_hat = (sigma2_hat - 1.0 - v_el) / (eta * transmittance_hat);
        Ok(ChannelEstimate {
            t_hat,
            transmittance_hat,
            sigma2_hat,
            eps_hat,
            m_used: self.m,
            unphysical: transmittance_hat > 1.0 + 1e-6,
        })
    }
}

/// Runs `blocks` end-to-end blocks and aggregates estimates and key rates.
///
/// Parameter estimation pools the non-training symbols of all blocks; the
/// finite-size key rate applies the configured `(N, n, m)` split to the
/// pooled estimate, mirroring the report-from-measurement procedure.
pub fn run_experiment(cfg: &LinkConfig, blocks: u64) -> Result<ExperimentReport, HarnessError> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    if blocks == 0 {
        return Err(HarnessError::Config("need at least one block".into()));
    }
    let cal = calibrate_link(cfg)?;

    let outputs: Vec<(u64, Result<BlockOutput, HarnessError>)> = (0..blocks)
        .into_par_iter()
        .map(|b| (b, simulate_block(cfg, &cal, b)))
        .collect();

    let mut rows = Vec::with_capacity(blocks as usize);
    let mut pooled = Moments::default();
    for (index, out) in outputs {
        let out = out.map_err(|e| HarnessError::Block { index, source: Box::new(e) })?;
        let (_, alice_key) = out.alice.partition_training();
        let (_, bob_key) = out.bob.partition_training();
        let est = estimate_channel(&alice_key, &bob_key, cfg.eta, cfg.v_el)
            .map_err(|e| HarnessError::Block { index, source: Box::new(e.into()) })?;
        let (t_min, eps_max) =
            match worst_case_bounds(&est, cfg.v_a, cfg.eps_pe, cfg.eta, cfg.v_el) {
                Ok(v) => v,
                Err(SecurityError::NotCertifiable(_)) => (0.0, f64::INFINITY),
                Err(e) => {
                    return Err(HarnessError::Block { index, source: Box::new(e.into()) })
                }
            };
        rows.push(BlockRow {
            block_index: index,
            eps_hat: est.eps_hat,
            t_hat: est.transmittance_hat,
            eps_max,
            t_min,
        });
        let mut block_moments = Moments::default();
        block_moments.accumulate(&alice_key, &bob_key);
        pooled.merge(&block_moments);
    }

    let pooled_est = pooled.estimate(cfg.eta, cfg.v_el)?;
    let mean = |f: &dyn Fn(&BlockRow) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let std = |f: &dyn Fn(&BlockRow) -> f64, mu: f64| {
        (rows.iter().map(|r| (f(r) - mu).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
    };
    let me = mean(&|r: &BlockRow| r.eps_hat);
    let mt = mean(&|r: &BlockRow| r.t_hat);
    let mx = mean(&|r: &BlockRow| r.eps_max);
    let summary = Summary {
        mean_eps_hat: me,
        std_eps_hat: std(&|r: &BlockRow| r.eps_hat, me),
        mean_t_hat: mt,
        std_t_hat: std(&|r: &BlockRow| r.t_hat, mt),
        mean_eps_max: mx,
        std_eps_max: std(&|r: &BlockRow| r.eps_max, mx),
    };

    let inputs = |mode: SecurityMode| SecurityInputs {
        v_a: cfg.v_a,
        transmittance: pooled_est.transmittance_hat.min(1.0),
        eps: pooled_est.eps_hat,
        eta: cfg.eta,
        v_el: cfg.v_el,
        beta: cfg.beta,
        n: cfg.key_n,
        m: cfg.est_m,
        block_n: cfg.block_n,
        eps_pe: cfg.eps_pe,
        eps_pa: cfg.eps_pa,
        eps_bar: cfg.eps_bar,
        f_rep: cfg.f_rep,
        mode,
    };
    let keyrate_asymptotic = secret_key_rate(&inputs(SecurityMode::Asymptotic))?;
    let keyrate_finite = secret_key_rate(&inputs(SecurityMode::Finite))?;

    Ok(ExperimentReport {
        per_block: rows,
        summary,
        pooled: pooled_est,
        keyrate_asymptotic,
        keyrate_finite,
        config_echo: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One row of the key-rate-versus-distance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub distance_km: f64,
    pub transmittance: f64,
    pub i_ab: f64,
    pub s_be: f64,
    pub delta_n: f64,
    pub rate_bps: f64,
}

/// Secret key rate over a distance grid at fixed measured excess noise.
/// Pure security-module evaluation; no waveform simulation.
pub fn sweep_distance(
    cfg: &LinkConfig,
    distances_km: &[f64],
    eps_fixed: f64,
    mode: SecurityMode,
) -> Result<Vec<SweepRow>, HarnessError> {
    if distances_km.is_empty() {
        return Err(HarnessError::Config("distance list is empty".into()));
    }
    let mut rows = Vec::with_capacity(distances_km.len());
    for &l in distances_km {
        let t = 10f64.powf(-cfg.alpha_db_per_km * l / 10.0);
        let inp = SecurityInputs {
            v_a: cfg.v_a,
            transmittance: t,
            eps: eps_fixed,
            eta: cfg.eta,
            v_el: cfg.v_el,
            beta: cfg.beta,
            n: cfg.key_n,
            m: cfg.est_m,
            block_n: cfg.block_n,
            eps_pe: cfg.eps_pe,
            eps_pa: cfg.eps_pa,
            eps_bar: cfg.eps_bar,
            f_rep: cfg.f_rep,
            mode,
        };
        let rep = secret_key_rate(&inp)?;
        rows.push(SweepRow {
            distance_km: l,
            transmittance: t,
            i_ab: rep.i_ab,
            s_be: rep.s_be,
            delta_n: rep.delta_n,
            rate_bps: rep.rate_bps,
        });
    }
    Ok(rows)
}

/// Null-rate excess-noise threshold for each distance.
pub fn sweep_threshold(
    cfg: &LinkConfig,
    distances_km: &[f64],
    mode: SecurityMode,
) -> Result<Vec<(f64, f64)>, HarnessError> {
    let mut rows = Vec::with_capacity(distances_km.len());
    for &l in distances_km {
        let t = 10f64.powf(-cfg.alpha_db_per_km * l / 10.0);
        let inp = SecurityInputs {
            v_a: cfg.v_a,
            transmittance: t,
            eps: 0.0,
            eta: cfg.eta,
            v_el: cfg.v_el,
            beta: cfg.beta,
            n: cfg.key_n,
            m: cfg.est_m,
            block_n: cfg.block_n,
            eps_pe: cfg.eps_pe,
            eps_pa: cfg.eps_pa,
            eps_bar: cfg.eps_bar,
            f_rep: cfg.f_rep,
            mode,
        };
        let thr = crate::security::noise_threshold(&inp)?;
        rows.push((l, thr));
    }
    Ok(rows)
}
