//! Flat key-value configuration files with dotted section prefixes.
//!
//! ```text
//! # 25 km link
//! channel.alpha_db_per_km = 0.2
//! channel.length_km = 25
//! rx.eta = 0.56
//! ```
//!
//! Unknown keys are a hard error: silent typos in physics parameters are
//! the main operator hazard. `inf` is accepted for the dB isolation and
//! suppression fields.

use crate::harness::HarnessError;
use crate::model::LinkConfig;

/// All recognized keys, each mapped onto one [`LinkConfig`] field.
const KEYS: &[&str] = &[
    "link.f_rep_hz",
    "link.sample_rate_hz",
    "link.f_m_hz",
    "link.mod_index",
    "link.delta_f_ab_hz",
    "link.delta_f_drift_hz_per_s",
    "laser.linewidth_a_hz",
    "laser.linewidth_b_hz",
    "tx.v_a_snu",
    "tx.a_ref",
    "tx.carrier_suppression_db",
    "tx.duty_cycle",
    "channel.alpha_db_per_km",
    "channel.length_km",
    "channel.pol_isolation_db",
    "channel.slow_phase_rate_rad2_per_s",
    "rx.eta",
    "rx.v_el_snu",
    "rx.detector_noise",
    "rx.detector_gain",
    "rx.shot_sigma",
    "rx.adc_bits",
    "rx.adc_full_scale_rms",
    "dsp.quantum_bw_factor",
    "dsp.pilot_bw_factor",
    "dsp.training_fraction",
    "dsp.slow_subblock",
    "dsp.pilot_delay_symbols",
    "dsp.freq_search_span_factor",
    "dsp.peak_margin_db",
    "dsp.auto_timing",
    "dsp.gate_pilot",
    "security.beta",
    "security.block_n",
    "security.key_n",
    "security.est_m",
    "security.eps_pe",
    "security.eps_pa",
    "security.eps_bar",
    "sim.seed",
    "sim.symbols_per_block",
    "sim.calibration_symbols",
];

fn parse_f64(key: &str, v: &str) -> Result<f64, HarnessError> {
    let s = v.trim();
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("+inf") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>()
        .map_err(|_| HarnessError::Config(format!("key {key}: cannot parse `{v}` as a number")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, HarnessError> {
    v.trim()
        .replace('_', "")
        .parse::<u64>()
        .map_err(|_| HarnessError::Config(format!("key {key}: cannot parse `{v}` as an integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(HarnessError::Config(format!("key {key}: cannot parse `{other}` as a bool"))),
    }
}

/// Parses configuration text on top of the default profile.
pub fn parse_config(text: &str) -> Result<LinkConfig, HarnessError> {
    let mut cfg = LinkConfig::reference_plan();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(HarnessError::Config(format!(
                "line {}: unknown key `{key}`",
                lineno + 1
            )));
        }
        apply_key(&mut cfg, key, value)?;
    }
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Loads and parses a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<LinkConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn apply_key(cfg: &mut LinkConfig, key: &str, v: &str) -> Result<(), HarnessError> {
    match key {
        "link.f_rep_hz" => cfg.f_rep = parse_f64(key, v)?,
        "link.sample_rate_hz" => cfg.sample_rate = parse_f64(key, v)?,
        "link.f_m_hz" => cfg.f_m = parse_f64(key, v)?,
        "link.mod_index" => cfg.mod_index = parse_f64(key, v)?,
        "link.delta_f_ab_hz" => cfg.delta_f_ab = parse_f64(key, v)?,
        "link.delta_f_drift_hz_per_s" => cfg.delta_f_drift = parse_f64(key, v)?,
        "laser.linewidth_a_hz" => cfg.linewidth_a = parse_f64(key, v)?,
        "laser.linewidth_b_hz" => cfg.linewidth_b = parse_f64(key, v)?,
        "tx.v_a_snu" => cfg.v_a = parse_f64(key, v)?,
        "tx.a_ref" => cfg.a_ref = parse_f64(key, v)?,
        "tx.carrier_suppression_db" => cfg.carrier_suppression_db = parse_f64(key, v)?,
        "tx.duty_cycle" => cfg.duty_cycle = parse_f64(key, v)?,
        "channel.alpha_db_per_km" => cfg.alpha_db_per_km = parse_f64(key, v)?,
        "channel.length_km" => cfg.length_km = parse_f64(key, v)?,
        "channel.pol_isolation_db" => cfg.pol_isolation_db = parse_f64(key, v)?,
        "channel.slow_phase_rate_rad2_per_s" => cfg.slow_phase_rate = parse_f64(key, v)?,
        "rx.eta" => cfg.eta = parse_f64(key, v)?,
        "rx.v_el_snu" => cfg.v_el = parse_f64(key, v)?,
        "rx.detector_noise" => cfg.detector_noise = parse_bool(key, v)?,
        "rx.detector_gain" => cfg.detector_gain = parse_f64(key, v)?,
        "rx.shot_sigma" => cfg.shot_sigma = parse_f64(key, v)?,
        "rx.adc_bits" => cfg.adc_bits = parse_u64(key, v)? as u32,
        "rx.adc_full_scale_rms" => cfg.adc_full_scale_rms = parse_f64(key, v)?,
        "dsp.quantum_bw_factor" => cfg.quantum_bw_factor = parse_f64(key, v)?,
        "dsp.pilot_bw_factor" => cfg.pilot_bw_factor = parse_f64(key, v)?,
        "dsp.training_fraction" => cfg.training_fraction = parse_f64(key, v)?,
        "dsp.slow_subblock" => cfg.slow_subblock = parse_u64(key, v)? as usize,
        "dsp.pilot_delay_symbols" => cfg.pilot_delay_symbols = parse_u64(key, v)? as usize,
        "dsp.freq_search_span_factor" => cfg.freq_search_span_factor = parse_f64(key, v)?,
        "dsp.peak_margin_db" => cfg.peak_margin_db = parse_f64(key, v)?,
        "dsp.auto_timing" => cfg.auto_timing = parse_bool(key, v)?,
        "dsp.gate_pilot" => cfg.gate_pilot = parse_bool(key, v)?,
        "security.beta" => cfg.beta = parse_f64(key, v)?,
        "security.block_n" => cfg.block_n = parse_u64(key, v)?,
        "security.key_n" => cfg.key_n = parse_u64(key, v)?,
        "security.est_m" => cfg.est_m = parse_u64(key, v)?,
        "security.eps_pe" => cfg.eps_pe = parse_f64(key, v)?,
        "security.eps_pa" => cfg.eps_pa = parse_f64(key, v)?,
        "security.eps_bar" => cfg.eps_bar = parse_f64(key, v)?,
        "sim.seed" => cfg.seed = parse_u64(key, v)?,
        "sim.symbols_per_block" => cfg.sim_symbols_per_block = parse_u64(key, v)? as usize,
        "sim.calibration_symbols" => cfg.calibration_symbols = parse_u64(key, v)? as usize,
        _ => unreachable!("key list and dispatcher out of sync"),
    }
    Ok(())
}

fn fmt_val(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Canonical echo of the configuration, parseable by [`parse_config`].
pub fn echo_config(cfg: &LinkConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    push("link.f_rep_hz", fmt_val(cfg.f_rep));
    push("link.sample_rate_hz", fmt_val(cfg.sample_rate));
    push("link.f_m_hz", fmt_val(cfg.f_m));
    push("link.mod_index", fmt_val(cfg.mod_index));
    push("link.delta_f_ab_hz", fmt_val(cfg.delta_f_ab));
    push("link.delta_f_drift_hz_per_s", fmt_val(cfg.delta_f_drift));
    push("laser.linewidth_a_hz", fmt_val(cfg.linewidth_a));
    push("laser.linewidth_b_hz", fmt_val(cfg.linewidth_b));
    push("tx.v_a_snu", fmt_val(cfg.v_a));
    push("tx.a_ref", fmt_val(cfg.a_ref));
    push("tx.carrier_suppression_db", fmt_val(cfg.carrier_suppression_db));
    push("tx.duty_cycle", fmt_val(cfg.duty_cycle));
    push("channel.alpha_db_per_km", fmt_val(cfg.alpha_db_per_km));
    push("channel.length_km", fmt_val(cfg.length_km));
    push("channel.pol_isolation_db", fmt_val(cfg.pol_isolation_db));
    push("channel.slow_phase_rate_rad2_per_s", fmt_val(cfg.slow_phase_rate));
    push("rx.eta", fmt_val(cfg.eta));
    push("rx.v_el_snu", fmt_val(cfg.v_el));
    push("rx.detector_noise", cfg.detector_noise.to_string());
    push("rx.detector_gain", fmt_val(cfg.detector_gain));
    push("rx.shot_sigma", fmt_val(cfg.shot_sigma));
    push("rx.adc_bits", cfg.adc_bits.to_string());
    push("rx.adc_full_scale_rms", fmt_val(cfg.adc_full_scale_rms));
    push("dsp.quantum_bw_factor", fmt_val(cfg.quantum_bw_factor));
    push("dsp.pilot_bw_factor", fmt_val(cfg.pilot_bw_factor));
    push("dsp.training_fraction", fmt_val(cfg.training_fraction));
    push("dsp.slow_subblock", cfg.slow_subblock.to_string());
    push("dsp.pilot_delay_symbols", cfg.pilot_delay_symbols.to_string());
    push("dsp.freq_search_span_factor", fmt_val(cfg.freq_search_span_factor));
    push("dsp.peak_margin_db", fmt_val(cfg.peak_margin_db));
    push("dsp.auto_timing", cfg.auto_timing.to_string());
    push("dsp.gate_pilot", cfg.gate_pilot.to_string());
    push("security.beta", fmt_val(cfg.beta));
    push("security.block_n", cfg.block_n.to_string());
    push("security.key_n", cfg.key_n.to_string());
    push("security.est_m", cfg.est_m.to_string());
    push("security.eps_pe", fmt_val(cfg.eps_pe));
    push("security.eps_pa", fmt_val(cfg.eps_pa));
    push("security.eps_bar", fmt_val(cfg.eps_bar));
    push("sim.seed", cfg.seed.to_string());
    push("sim.symbols_per_block", cfg.sim_symbols_per_block.to_string());
    push("sim.calibration_symbols", cfg.calibration_symbols.to_string());
    out
}

/// FNV-1a hash of the canonical configuration echo; stamped into CSV output.
pub fn config_hash(cfg: &LinkConfig) -> u64 {
    let text = echo_config(cfg);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides() {
        let cfg = parse_config(
            "# comment\nchannel.length_km = 10\nrx.eta = 0.7\nsim.seed = 99\n\
             channel.pol_isolation_db = inf\n",
        )
        .unwrap();
        assert_eq!(cfg.length_km, 10.0);
        assert_eq!(cfg.eta, 0.7);
        assert_eq!(cfg.seed, 99);
        assert!(cfg.pol_isolation_db.is_infinite());
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let err = parse_config("channel.alpha = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn malformed_line_is_error() {
        assert!(parse_config("just words\n").is_err());
        assert!(parse_config("rx.eta = banana\n").is_err());
    }

    #[test]
    fn invalid_physics_rejected() {
        // Diverging split must fail validation after parsing.
        assert!(parse_config("security.key_n = 1\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = LinkConfig::reference_plan();
        cfg.length_km = 12.5;
        cfg.seed = 1234;
        let echo = echo_config(&cfg);
        let back = parse_config(&echo).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config_hash(&back), config_hash(&cfg));
    }

    #[test]
    fn hash_changes_with_config() {
        let a = config_hash(&LinkConfig::reference_plan());
        let b = config_hash(&LinkConfig { seed: 2, ..LinkConfig::reference_plan() });
        assert_ne!(a, b);
    }
}
