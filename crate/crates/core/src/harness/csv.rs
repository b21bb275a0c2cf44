//! CSV emission for experiment reports and sweeps.
//!
//! Layout contract: the first line is the header row, comment lines
//! prefixed `#` echo the config hash and seed, then the data rows follow.
//! Floating-point fields carry 9 significant digits, so output is
//! byte-stable for a fixed configuration and seed.

use crate::harness::config::config_hash;
use crate::harness::{ExperimentReport, SweepRow};
use crate::model::LinkConfig;
use crate::security::KeyRateReport;

/// Nine significant digits, scientific notation.
pub fn sig9(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.8e}")
}

fn comment_lines(cfg: &LinkConfig) -> String {
    format!("# config_hash = {:016x}\n# seed = {}\n", config_hash(cfg), cfg.seed)
}

/// Per-block experiment table.
pub fn experiment_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("block_index,eps_hat,T_hat,eps_max,T_min\n");
    out.push_str(&comment_lines(&report.config_echo));
    for r in &report.per_block {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.block_index,
            sig9(r.eps_hat),
            sig9(r.t_hat),
            sig9(r.eps_max),
            sig9(r.t_min)
        ));
    }
    out
}

/// Key-rate rows (asymptotic and finite) for the simulate subcommand.
pub fn keyrate_csv(cfg: &LinkConfig, asym: &KeyRateReport, fin: &KeyRateReport) -> String {
    let mut out =
        String::from("mode,I_AB,S_BE,Delta_n,T_eff,eps_eff,R_bps,null_rate\n");
    out.push_str(&comment_lines(cfg));
    for (mode, rep) in [("asymptotic", asym), ("finite", fin)] {
        out.push_str(&format!(
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
    }
    out
}

/// Distance-sweep table.
pub fn sweep_csv(cfg: &LinkConfig, rows: &[SweepRow]) -> String {
    let mut out = String::from("distance_km,T,I_AB,S_BE,Delta_n,R_bps\n");
    out.push_str(&comment_lines(cfg));
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sig9(r.distance_km),
            sig9(r.transmittance),
            sig9(r.i_ab),
            sig9(r.s_be),
            sig9(r.delta_n),
            sig9(r.rate_bps)
        ));
    }
    out
}

/// Threshold table: null-rate excess noise per distance.
pub fn threshold_csv(cfg: &LinkConfig, rows: &[(f64, f64)]) -> String {
    let mut out = String::from("distance_km,eps_threshold\n");
    out.push_str(&comment_lines(cfg));
    for (l, thr) in rows {
        out.push_str(&format!("{},{}\n", sig9(*l), sig9(*thr)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_is_nine_digits() {
        assert_eq!(sig9(0.31622776601683794), "3.16227766e-1");
        assert_eq!(sig9(7040000.0), "7.04000000e6");
        assert_eq!(sig9(f64::INFINITY), "inf");
    }

    #[test]
    fn header_first_then_comments() {
        let cfg = LinkConfig::reference_plan();
        let rows = crate::harness::sweep_distance(
            &cfg,
            &[5.0, 25.0],
            0.022,
            crate::security::SecurityMode::Asymptotic,
        )
        .unwrap();
        let text = sweep_csv(&cfg, &rows);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "distance_km,T,I_AB,S_BE,Delta_n,R_bps");
        assert!(lines.next().unwrap().starts_with("# config_hash"));
        assert!(lines.next().unwrap().starts_with("# seed"));
        let data: Vec<&str> = lines.collect();
        assert_eq!(data.len(), 2);
        assert!(data[0].split(',').count() == 6);
    }

    #[test]
    fn csv_is_byte_stable() {
        let cfg = LinkConfig::reference_plan();
        let mk = || {
            let rows = crate::harness::sweep_distance(
                &cfg,
                &[10.0, 20.0, 30.0],
                0.022,
                crate::security::SecurityMode::Finite,
            )
            .unwrap();
            sweep_csv(&cfg, &rows)
        };
        assert_eq!(mk(), mk());
    }
}
