//! Parameter estimation and secret-key-rate calculus.
//!
//! The link is the normal linear model `y = sqrt(eta T) x + z` with
//! `Var(z) = sigma^2 = eta T eps + 1 + v_el`, everything in shot-noise
//! units. From a channel estimate this module derives worst-case
//! finite-size bounds, the heterodyne mutual information, the Holevo bound
//! through the symplectic eigenvalues of the Gaussian state, the
//! finite-size penalty, and finally the secret key rate.

use thiserror::Error;

use crate::model::{confidence_coefficient, g_func, ModelError, QuadratureBlock};

#[derive(Debug, Error)]
pub enum SecurityError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("channel not certifiable: t_hat - delta_t = {0} < 0")]
    NotCertifiable(f64),
    #[error("transmittance diverged: T = {0}")]
    Divergence(f64),
    #[error("covariance lost physicality: {0}")]
    Unphysical(String),
    #[error("no positive-rate point: raw rate at eps = 0 is {0}")]
    NoThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Regression outcome of the normal linear model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEstimate {
    /// Estimated slope `t = sqrt(eta T)`.
    pub t_hat: f64,
    /// Estimated transmittance `T = t^2 / eta`.
    pub transmittance_hat: f64,
    /// Residual variance around the fit (total noise, SNU).
    pub sigma2_hat: f64,
    /// Excess noise referred to the channel input; may be slightly negative
    /// from finite statistics and is reported unclamped.
    pub eps_hat: f64,
    /// Regression sample count (both quadratures pooled).
    pub m_used: usize,
    /// Estimate exceeds T = 1 beyond tolerance.
    pub unphysical: bool,
}

/// Everything the key-rate formula needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityInputs {
    pub v_a: f64,
    pub transmittance: f64,
    pub eps: f64,
    pub eta: f64,
    pub v_el: f64,
    pub beta: f64,
    /// Key symbols n.
    pub n: u64,
    /// Estimation symbols m.
    pub m: u64,
    /// Total block N = n + m.
    pub block_n: u64,
    pub eps_pe: f64,
    pub eps_pa: f64,
    pub eps_bar: f64,
    /// Symbol rate, Hz.
    pub f_rep: f64,
    pub mode: SecurityMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecurityMode {
    Asymptotic,
    Finite,
}

impl SecurityInputs {
    pub fn validate(&self) -> Result<(), SecurityError> {
        if self.mode == SecurityMode::Finite && self.n + self.m != self.block_n {
            return Err(SecurityError::Domain(format!(
                "finite mode requires n + m = N ({} + {} != {})",
                self.n, self.m, self.block_n
            )));
        }
        for (name, e) in
            [("eps_PE", self.eps_pe), ("eps_PA", self.eps_pa), ("eps_bar", self.eps_bar)]
        {
            if !(e > 0.0 && e < 1.0) {
                return Err(SecurityError::Domain(format!("{name} = {e} not in (0, 1)")));
            }
        }
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0 + 1e-9) {
            return Err(SecurityError::Domain(format!(
                "transmittance {} not in (0, 1]",
                self.transmittance
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(SecurityError::Domain(format!("eta {} not in (0, 1]", self.eta)));
        }
        if self.v_a <= 0.0 {
            return Err(SecurityError::Domain(format!("V_A {} must be positive", self.v_a)));
        }
        Ok(())
    }
}

/// Key-rate report: the deliverable of the security analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateReport {
    /// Heterodyne mutual information, bits/symbol.
    pub i_ab: f64,
    /// Holevo bound, bits/symbol.
    pub s_be: f64,
    /// Finite-size penalty, bits/symbol (0 in asymptotic mode).
    pub delta_n: f64,
    /// Worst-case transmittance used for the Holevo bound.
    pub t_min: f64,
    /// Worst-case excess noise used for the Holevo bound.
    pub eps_max: f64,
    /// Secret key rate in bits/s, clamped at zero.
    pub rate_bps: f64,
    /// Unclamped rate in bits/s (may be negative).
    pub raw_rate_bps: f64,
    /// True when the raw rate was negative or the channel not certifiable.
    pub null_rate: bool,
    /// Symplectic eigenvalues lambda_1..lambda_5.
    pub eigenvalues: [f64; 5],
}

// ---------------------------------------------------------------------------
// Parameter estimation
// ---------------------------------------------------------------------------

/// Pools both quadratures of Alice's and Bob's blocks into one regression
/// sample and fits the normal linear model on centred data.
///
/// Centring removes any residual DC offset the DSP left (for instance a
/// phase-locked carrier leak), which would otherwise bias the noise upward;
/// with zero-mean modulation it changes nothing asymptotically.
pub fn estimate_channel(
    alice: &QuadratureBlock,
    bob: &QuadratureBlock,
    eta: f64,
    v_el: f64,
) -> Result<ChannelEstimate, SecurityError> {
    if alice.len() != bob.len() {
        return Err(SecurityError::Degenerate(format!(
            "alice has {} symbols, bob {}",
            alice.len(),
            bob.len()
        )));
    }
    if alice.len() < 2 {
        return Err(SecurityError::Degenerate("need at least two symbols".into()));
    }
    let m = 2 * alice.len();
    let mean =
        |v: &[f64], w: &[f64]| (v.iter().sum::<f64>() + w.iter().sum::<f64>()) / m as f64;
    let mx = mean(&alice.x, &alice.p);
    let my = mean(&bob.x, &bob.p);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in alice.x.iter().zip(&bob.x).chain(alice.p.iter().zip(&bob.p)) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(SecurityError::Degenerate("sum of squares of x is zero".into()));
    }
    let t_hat = sxy / sxx;
    let mut rss = 0.0;
    for (a, b) in alice.x.iter().zip(&bob.x).chain(alice.p.iter().zip(&bob.p)) {
        let r = (b - my) - t_hat * (a - mx);
        rss += r * r;
    }
    let sigma2_hat = rss / m as f64;
    let transmittance_hat = t_hat * t_hat / eta;
    let eps_hat = (sigma2_hat - 1.0 - v_el) / (eta * transmittance_hat);
    Ok(ChannelEstimate {
        t_hat,
        transmittance_hat,
        sigma2_hat,
        eps_hat,
        m_used: m,
        unphysical: transmittance_hat > 1.0 + 1e-6,
    })
}

// ---------------------------------------------------------------------------
// Worst-case bounds
// ---------------------------------------------------------------------------

/// Worst-case transmittance and excess noise at confidence `1 - eps_PE`:
/// `T_min = (t - dT)^2 / eta` with `dT = z sqrt(sigma^2 / (m V_A))`, and
/// `eps_max = (sigma^2 + dsigma0^2 - 1 - v_el) / (eta T)` with
/// `dsigma0^2 = z sigma^2 sqrt(2) / sqrt(m)`.
pub fn worst_case_bounds(
    est: &ChannelEstimate,
    v_a: f64,
    eps_pe: f64,
    eta: f64,
    v_el: f64,
) -> Result<(f64, f64), SecurityError> {
    if est.m_used < 2 {
        return Err(SecurityError::Degenerate(format!("m_used = {} < 2", est.m_used)));
    }
    if v_a <= 0.0 {
        return Err(SecurityError::Domain(format!("V_A = {v_a} must be positive")));
    }
    let z = confidence_coefficient(eps_pe)?;
    let m = est.m_used as f64;
    let sigma2 = est.sigma2_hat;
    let delta_t = z * (sigma2 / (m * v_a)).sqrt();
    let lowered = est.t_hat - delta_t;
    if lowered < 0.0 {
        return Err(SecurityError::NotCertifiable(lowered));
    }
    let t_min = lowered * lowered / eta;
    let delta_sigma0 = z * sigma2 * std::f64::consts::SQRT_2 / m.sqrt();
    let eps_max = (sigma2 + delta_sigma0 - 1.0 - v_el) / (eta * est.transmittance_hat);
    Ok((t_min, eps_max))
}

// ---------------------------------------------------------------------------
// Information quantities
// ---------------------------------------------------------------------------

fn chi_het(eta: f64, v_el: f64) -> f64 {
    ((2.0 - eta) + 2.0 * v_el) / eta
}

/// Heterodyne mutual information
/// `I_AB = log2 [(V + chi_tot) / (1 + chi_tot)]` with
/// `chi_tot = chi_line + chi_het / T`. Negative measured excess noise is
/// clamped to zero here (and only here).
pub fn mutual_information(
    v_a: f64,
    transmittance: f64,
    eps: f64,
    eta: f64,
    v_el: f64,
) -> Result<f64, SecurityError> {
    if transmittance <= 0.0 {
        return Err(SecurityError::Divergence(transmittance));
    }
    let eps = eps.max(0.0);
    let v = v_a + 1.0;
    let chi_line = 1.0 / transmittance - 1.0 + eps;
    let chi_tot = chi_line + chi_het(eta, v_el) / transmittance;
    Ok(((v + chi_tot) / (1.0 + chi_tot)).log2())
}

/// Holevo bound against collective attacks, with the symplectic eigenvalues
/// of the shared Gaussian state.
///
/// Callers pass the measured `(T, eps)` for the asymptotic bound or the
/// worst-case `(T_min, eps_max)` for the finite-size bound.
pub fn holevo_bound(
    v_a: f64,
    t_eff: f64,
    eps_eff: f64,
    eta: f64,
    v_el: f64,
) -> Result<(f64, [f64; 5]), SecurityError> {
    if t_eff <= 0.0 {
        return Err(SecurityError::Divergence(t_eff));
    }
    let eps_eff = eps_eff.max(0.0);
    let v = v_a + 1.0;
    let t = t_eff;
    let chi_line = 1.0 / t - 1.0 + eps_eff;
    let het = chi_het(eta, v_el);

    let a_cv = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line).powi(2);
    let b_cv = (t * (v * chi_line + 1.0)).powi(2);
    let (l1, l2) = symplectic_pair(a_cv, b_cv)?;

    let denom = t * (v + chi_line + het / t);
    let sqrt_b = b_cv.max(0.0).sqrt();
    let c_num = a_cv * het * het
        + b_cv
        + 1.0
        + 2.0 * t * (v * v - 1.0)
        + 2.0 * het * (v * sqrt_b + t * (v + chi_line));
    let c_cv = c_num / (denom * denom);
    let d_cv = ((v + sqrt_b * het) / denom).powi(2);
    let (l3, l4) = symplectic_pair(c_cv, d_cv)?;

    let s = g_clamped(l1)? + g_clamped(l2)? - g_clamped(l3)? - g_clamped(l4)? - g_clamped(1.0)?;
    // Roundoff can leave a tiny negative residue at physical boundary points.
    let s = if s.abs() < 1e-10 { 0.0 } else { s };
    Ok((s.max(0.0), [l1, l2, l3, l4, 1.0]))
}

/// Solves `lambda^2 = (a +- sqrt(a^2 - 4 b)) / 2` with a small-negative
/// discriminant clamp.
fn symplectic_pair(a: f64, b: f64) -> Result<(f64, f64), SecurityError> {
    let disc = a * a - 4.0 * b;
    if disc < -1e-9 * a.abs().max(1.0) {
        return Err(SecurityError::Unphysical(format!(
            "discriminant {disc} for (A, B) = ({a}, {b})"
        )));
    }
    let root = disc.max(0.0).sqrt();
    let hi = 0.5 * (a + root);
    let lo = 0.5 * (a - root);
    if hi < 0.0 || lo < 0.0 {
        return Err(SecurityError::Unphysical(format!(
            "negative squared eigenvalue for (A, B) = ({a}, {b})"
        )));
    }
    Ok((snap_to_unit(hi.sqrt()), snap_to_unit(lo.sqrt())))
}

/// Eigenvalues of a physical covariance are >= 1; cancellation in the
/// discriminant can leave them up to ~sqrt(machine eps) * A below it.
/// Snap that roundoff sliver back to exactly 1 so boundary cases (lossless
/// channel) collapse cleanly; real violations stay visible.
fn snap_to_unit(lambda: f64) -> f64 {
    if (lambda - 1.0).abs() < 1e-6 {
        1.0
    } else {
        lambda
    }
}

fn g_clamped(lambda: f64) -> Result<f64, SecurityError> {
    let x = 0.5 * (lambda - 1.0);
    if x == 0.0 {
        return Ok(0.0);
    }
    if x < 0.0 {
        return Err(SecurityError::Unphysical(format!(
            "eigenvalue {lambda} below 1 beyond tolerance"
        )));
    }
    Ok(g_func(x)?)
}

/// Finite-size penalty
/// `Delta(n) = 7 sqrt(log2(2 / eps_bar) / n) + (2 / n) log2(1 / eps_PA)`.
pub fn finite_size_penalty(n: u64, eps_bar: f64, eps_pa: f64) -> Result<f64, SecurityError> {
    if n == 0 {
        return Err(SecurityError::Domain("n must be positive".into()));
    }
    for (name, e) in [("eps_bar", eps_bar), ("eps_PA", eps_pa)] {
        if !(e > 0.0 && e < 1.0) {
            return Err(SecurityError::Domain(format!("{name} = {e} not in (0, 1)")));
        }
    }
    let n = n as f64;
    Ok(7.0 * ((2.0 / eps_bar).log2() / n).sqrt() + 2.0 / n * (1.0 / eps_pa).log2())
}

// ---------------------------------------------------------------------------
// Secret key rate
// ---------------------------------------------------------------------------

/// Secret key rate `R = f_rep (n/N) [beta I_AB - S_BE - Delta(n)]`.
///
/// Asymptotic mode evaluates both information terms at the measured
/// parameters with `n/N = 1` and no penalty. Finite mode keeps `I_AB` at the
/// measured point, evaluates the Holevo bound at the worst-case
/// `(T_min, eps_max)`, and subtracts `Delta(n)`.
pub fn secret_key_rate(inp: &SecurityInputs) -> Result<KeyRateReport, SecurityError> {
    inp.validate()?;
    let i_ab = mutual_information(inp.v_a, inp.transmittance, inp.eps, inp.eta, inp.v_el)?;
    let (t_eff, eps_eff, delta_n, prefactor) = match inp.mode {
        SecurityMode::Asymptotic => (inp.transmittance, inp.eps.max(0.0), 0.0, 1.0),
        SecurityMode::Finite => {
            // Build the implied estimate at the measured point and widen it.
            let sigma2 = inp.eta * inp.transmittance * inp.eps.max(0.0) + 1.0 + inp.v_el;
            let est = ChannelEstimate {
                t_hat: (inp.eta * inp.transmittance).sqrt(),
                transmittance_hat: inp.transmittance,
                sigma2_hat: sigma2,
                eps_hat: inp.eps,
                m_used: inp.m as usize,
                unphysical: false,
            };
            match worst_case_bounds(&est, inp.v_a, inp.eps_pe, inp.eta, inp.v_el) {
                Ok((t_min, eps_max)) => (
                    t_min,
                    eps_max,
                    finite_size_penalty(inp.n, inp.eps_bar, inp.eps_pa)?,
                    inp.n as f64 / inp.block_n as f64,
                ),
                Err(SecurityError::NotCertifiable(_)) => {
                    // Estimation interval reaches T = 0: null rate.
                    return Ok(KeyRateReport {
                        i_ab,
                        s_be: f64::INFINITY,
                        delta_n: finite_size_penalty(inp.n, inp.eps_bar, inp.eps_pa)?,
                        t_min: 0.0,
                        eps_max: f64::INFINITY,
                        rate_bps: 0.0,
                        raw_rate_bps: f64::NEG_INFINITY,
                        null_rate: true,
                        eigenvalues: [1.0; 5],
                    });
                }
                Err(e) => return Err(e),
            }
        }
    };
    let (s_be, eigenvalues) = holevo_bound(inp.v_a, t_eff, eps_eff, inp.eta, inp.v_el)?;
    let raw = inp.f_rep * prefactor * (inp.beta * i_ab - s_be - delta_n);
    Ok(KeyRateReport {
        i_ab,
        s_be,
        delta_n,
        t_min: t_eff,
        eps_max: eps_eff,
        rate_bps: raw.max(0.0),
        raw_rate_bps: raw,
        null_rate: raw < 0.0,
        eigenvalues,
    })
}

/// Excess-noise threshold of null key rate at the given link settings:
/// bisects the raw rate over eps to absolute tolerance 1e-5 SNU.
pub fn noise_threshold(inp: &SecurityInputs) -> Result<f64, SecurityError> {
    let rate_at = |eps: f64| -> Result<f64, SecurityError> {
        let probe = SecurityInputs { eps, ..*inp };
        Ok(secret_key_rate(&probe)?.raw_rate_bps)
    };
    let r0 = rate_at(0.0)?;
    if r0 <= 0.0 {
        return Err(SecurityError::NoThreshold(r0));
    }
    let mut lo = 0.0f64;
    let mut hi = 0.5f64;
    let mut iterations = 0;
    while rate_at(hi)? > 0.0 {
        hi *= 2.0;
        iterations += 1;
        if iterations > 64 {
            return Err(SecurityError::Domain("threshold bracket runaway".into()));
        }
    }
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fast-drift laser phase noise `eps_fast = 2 pi V_A (dnu_A + dnu_B) / f_rep`.
pub fn phase_noise_prediction(v_a: f64, lw_a: f64, lw_b: f64, f_rep: f64) -> f64 {
    2.0 * std::f64::consts::PI * v_a * (lw_a + lw_b) / f_rep
}
