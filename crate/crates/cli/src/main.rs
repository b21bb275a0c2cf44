//! `cvqkd` — end-to-end simulation and security calculator for a
//! pilot-tone LLO CV-QKD link.
//!
//! Subcommands:
//! - `simulate`  run seeded end-to-end blocks, emit the per-block noise
//!   table and a key-rate summary
//! - `keyrate`   evaluate the secret-key-rate formula directly from flags
//! - `sweep`     key rate versus distance (CSV)
//! - `threshold` null-rate excess-noise threshold versus distance (CSV)
//! - `calibrate` shot-noise / chain-gain calibration report

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cvqkd_core::harness::config::{config_hash, load_config};
use cvqkd_core::harness::csv::{
    experiment_csv, keyrate_csv, sig9, sweep_csv, threshold_csv,
};
use cvqkd_core::harness::{calibrate_link, run_experiment, sweep_distance, sweep_threshold};
use cvqkd_core::model::LinkConfig;
use cvqkd_core::security::{secret_key_rate, SecurityInputs, SecurityMode};

#[derive(Parser)]
#[command(name = "cvqkd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (flat key = value lines); defaults apply if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Security analysis mode.
    #[arg(long, value_enum, global = true, default_value_t = ModeArg::Asymptotic)]
    mode: ModeArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Asymptotic,
    Finite,
}

impl From<ModeArg> for SecurityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Asymptotic => SecurityMode::Asymptotic,
            ModeArg::Finite => SecurityMode::Finite,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// End-to-end simulation over seeded blocks.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of blocks to simulate.
        #[arg(long, default_value_t = 1)]
        blocks: u64,
    },
    /// Direct key-rate evaluation from parameters.
    Keyrate {
        #[command(flatten)]
        common: Common,
        /// Modulation variance V_A (SNU).
        #[arg(long)]
        va: Option<f64>,
        /// Measured excess noise (SNU).
        #[arg(long)]
        eps: Option<f64>,
        /// Quantum efficiency.
        #[arg(long)]
        eta: Option<f64>,
        /// Electronic-to-shot noise ratio.
        #[arg(long)]
        vel: Option<f64>,
        /// Reconciliation efficiency.
        #[arg(long)]
        beta: Option<f64>,
        /// Fibre length (km).
        #[arg(long)]
        distance_km: Option<f64>,
        /// Fibre attenuation (dB/km).
        #[arg(long)]
        alpha: Option<f64>,
        /// Symbol rate (Hz).
        #[arg(long)]
        frep: Option<f64>,
    },
    /// Key rate versus distance.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Start distance (km).
        #[arg(long, default_value_t = 0.0)]
        from_km: f64,
        /// End distance (km).
        #[arg(long, default_value_t = 60.0)]
        to_km: f64,
        /// Grid step (km).
        #[arg(long, default_value_t = 1.0)]
        step_km: f64,
        /// Fixed measured excess noise for the sweep (SNU).
        #[arg(long, default_value_t = 0.022)]
        eps: f64,
    },
    /// Null-rate excess-noise threshold versus distance.
    Threshold {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5.0)]
        from_km: f64,
        #[arg(long, default_value_t = 50.0)]
        to_km: f64,
        #[arg(long, default_value_t = 5.0)]
        step_km: f64,
    },
    /// Shot-noise and chain-gain calibration report.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve_config(common: &Common) -> Result<LinkConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).map_err(|e| e.to_string())?,
        None => LinkConfig::reference_plan(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(common: &Common, text: &str) -> Result<(), String> {
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|e| e.to_string()),
        None => {
            std::io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string())
        }
    }
}

fn grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, String> {
    if step <= 0.0 || to < from {
        return Err(format!("bad distance grid: from {from} to {to} step {step}"));
    }
    let mut v = Vec::new();
    let mut x = from;
    while x <= to + 1e-9 {
        v.push(x);
        x += step;
    }
    Ok(v)
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, blocks } => {
            let cfg = resolve_config(&common)?;
            let report = run_experiment(&cfg, blocks).map_err(|e| e.to_string())?;
            let mut text = experiment_csv(&report);
            text.push_str(&keyrate_csv(
                &cfg,
                &report.keyrate_asymptotic,
                &report.keyrate_finite,
            ));
            emit(&common, &text)?;
            eprintln!(
                "pooled: T_hat = {}, eps_hat = {} SNU over {} samples ({}s wall)",
                sig9(report.pooled.transmittance_hat),
                sig9(report.pooled.eps_hat),
                report.pooled.m_used,
                sig9(report.wall_time_s),
            );
            Ok(())
        }
        Command::Keyrate {
            common,
            va,
            eps,
            eta,
            vel,
            beta,
            distance_km,
            alpha,
            frep,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(v) = va {
                cfg.v_a = v;
            }
            if let Some(v) = eta {
                cfg.eta = v;
            }
            if let Some(v) = vel {
                cfg.v_el = v;
            }
            if let Some(v) = beta {
                cfg.beta = v;
            }
            if let Some(v) = distance_km {
                cfg.length_km = v;
            }
            if let Some(v) = alpha {
                cfg.alpha_db_per_km = v;
            }
            if let Some(v) = frep {
                cfg.f_rep = v;
            }
            let inp = SecurityInputs {
                v_a: cfg.v_a,
                transmittance: cfg.transmittance(),
                eps: eps.unwrap_or(0.022),
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
                mode: common.mode.into(),
            };
            let rep = secret_key_rate(&inp).map_err(|e| e.to_string())?;
            let mode = match common.mode {
                ModeArg::Asymptotic => "asymptotic",
                ModeArg::Finite => "finite",
            };
            let mut text =
                String::from("mode,I_AB,S_BE,Delta_n,T_eff,eps_eff,R_bps,null_rate\n");
            text.push_str(&format!(
                "# config_hash = {:016x}\n# seed = {}\n",
                config_hash(&cfg),
                cfg.seed
            ));
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                mode,
                sig9(rep.i_ab),
                sig9(rep.s_be),
                sig9(rep.delta_n),
                sig9(rep.t_min),
                sig9(rep.eps_max),
                sig9(rep.rate_bps),
                rep.null_rate
            ));
            emit(&common, &text)
        }
        Command::Sweep { common, from_km, to_km, step_km, eps } => {
            let cfg = resolve_config(&common)?;
            let rows = sweep_distance(&cfg, &grid(from_km, to_km, step_km)?, eps, common.mode.into())
                .map_err(|e| e.to_string())?;
            emit(&common, &sweep_csv(&cfg, &rows))
        }
        Command::Threshold { common, from_km, to_km, step_km } => {
            let cfg = resolve_config(&common)?;
            let rows = sweep_threshold(&cfg, &grid(from_km, to_km, step_km)?, common.mode.into())
                .map_err(|e| e.to_string())?;
            emit(&common, &threshold_csv(&cfg, &rows))
        }
        Command::Calibrate { common } => {
            let cfg = resolve_config(&common)?;
            let cal = calibrate_link(&cfg).map_err(|e| e.to_string())?;
            let mut text = String::from(
                "k0,n0_analytic,n0_measured,electronic_variance,measured_v_el,unit_amplitude\n",
            );
            text.push_str(&format!(
                "# config_hash = {:016x}\n# seed = {}\n",
                config_hash(&cfg),
                cfg.seed
            ));
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sig9(cal.k0),
                sig9(cal.n0),
                sig9(cal.shot.n0),
                sig9(cal.shot.electronic_variance),
                sig9(cal.shot.measured_v_el),
                sig9(cal.unit_amplitude)
            ));
            emit(&common, &text)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
