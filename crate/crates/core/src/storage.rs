//! Closed-form steady-state model of vacuum-stimulated storage and the
//! conversions between coherent-pulse and single-photon probabilities.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::scan::ScanResult;

/// Fate of an incoming photon: reflected, lost inside the qubit cavity, or scattered by the atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFractions {
    pub p_reflected: f64,
    pub p_cavity_loss: f64,
    pub p_atom_scattered: f64,
}

/// γ_P(Δ) = g_H² κ_H / (κ_H² + (2πΔ)²).
pub fn purcell_rate(g_h: f64, kappa_h: f64, detuning: f64) -> Result<f64> {
    if !(kappa_h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kappa_h must be positive, got {kappa_h}"
        )));
    }
    let d = 2.0 * std::f64::consts::PI * detuning;
    Ok(g_h * g_h * kappa_h / (kappa_h * kappa_h + d * d))
}

/// Probability that the excited atom ends in F = 2: (γ/2 + γ_P)/(γ + γ_P).
pub fn branching_to_f2(gamma: f64, gamma_p: f64) -> Result<f64> {
    if !(gamma > 0.0) || !(gamma_p >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "invalid rates gamma = {gamma}, gamma_p = {gamma_p}"
        )));
    }
    if gamma_p.is_infinite() {
        return Ok(1.0);
    }
    Ok((0.5 * gamma + gamma_p) / (gamma + gamma_p))
}

/// Rates and overlaps entering the steady-state model; all rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub kappa_q: f64,
    pub kappa_1q: f64,
    pub kappa_h: f64,
    /// Effective couplings (reduction already applied).
    pub g_q: f64,
    pub g_h: f64,
    pub mu_fc_sq: f64,
    pub mu_rc_sq: f64,
    pub eta: f64,
}

impl ModelParams {
    pub fn from_config(config: &SystemConfig) -> Self {
        Self {
            gamma: config.gamma(),
            kappa_q: config.qubit_cavity.kappa,
            kappa_1q: config.qubit_cavity.kappa_out,
            kappa_h: config.herald_cavity.kappa,
            g_q: config.g_qubit_eff(),
            g_h: config.g_herald_eff(),
            mu_fc_sq: config.mu_fc_sq,
            mu_rc_sq: config.mu_rc_sq,
            eta: config.eta_herald,
        }
    }

    /// Loss fractions without validation; used inside fits where intermediate
    /// parameter sets may be unphysical.
    pub fn loss_fractions_unchecked(&self, gamma_p: f64) -> LossFractions {
        let gt = self.gamma + gamma_p;
        let eps = 2.0 * gt * (self.kappa_q * self.kappa_1q).sqrt()
            / (self.g_q * self.g_q + self.kappa_q * gt);
        let mu_fc = self.mu_fc_sq.sqrt();
        let mu_rc = self.mu_rc_sq.sqrt();
        let p_c = (self.kappa_q - self.kappa_1q) / self.kappa_q * self.mu_fc_sq * eps * eps;
        let amp = mu_rc - mu_fc * (self.kappa_1q / self.kappa_q).sqrt() * eps;
        let p_r = (1.0 - self.mu_rc_sq) + amp * amp;
        LossFractions {
            p_reflected: p_r,
            p_cavity_loss: p_c,
            p_atom_scattered: 1.0 - p_r - p_c,
        }
    }

    /// (p_s, p_H1) at herald-cavity detuning Δ (Hz).
    pub fn efficiencies_at(&self, detuning: f64) -> (f64, f64) {
        let d = 2.0 * std::f64::consts::PI * detuning;
        let gp = self.g_h * self.g_h * self.kappa_h / (self.kappa_h * self.kappa_h + d * d);
        let pa = self.loss_fractions_unchecked(gp).p_atom_scattered;
        let p_f2 = (0.5 * self.gamma + gp) / (self.gamma + gp);
        (pa * p_f2, pa * gp / (self.gamma + gp) * self.eta)
    }
}

pub fn loss_fractions(config: &SystemConfig, gamma_p: f64) -> Result<LossFractions> {
    let p = ModelParams::from_config(config);
    if p.kappa_1q > p.kappa_q {
        return Err(Error::Inconsistent("kappa_1Q exceeds kappa_Q".into()));
    }
    if !(gamma_p >= 0.0) {
        return Err(Error::InvalidInput("gamma_p must be non-negative".into()));
    }
    let lf = p.loss_fractions_unchecked(gamma_p);
    if lf.p_atom_scattered < -1e-12 {
        return Err(Error::Inconsistent(format!(
            "overlaps imply negative atom scattering probability {}",
            lf.p_atom_scattered
        )));
    }
    Ok(lf)
}

/// Storage and heralding efficiency versus herald-cavity detuning; grid in Hz,
/// returned scans use MHz on the x axis and zero sigma.
pub fn efficiency_curves(config: &SystemConfig, grid: &[f64]) -> Result<(ScanResult, ScanResult)> {
    if grid.is_empty() {
        return Err(Error::Empty("detuning grid".into()));
    }
    let p = ModelParams::from_config(config);
    let mut ps = Vec::with_capacity(grid.len());
    let mut ph = Vec::with_capacity(grid.len());
    for &d in grid {
        let gp = purcell_rate(p.g_h, p.kappa_h, d)?;
        let pa = loss_fractions(config, gp)?.p_atom_scattered.max(0.0);
        ps.push(pa * branching_to_f2(p.gamma, gp)?);
        ph.push(pa * gp / (p.gamma + gp) * p.eta);
    }
    let x: Vec<f64> = grid.iter().map(|d| d / 1e6).collect();
    let zeros = vec![0.0; grid.len()];
    Ok((
        ScanResult::new(
            "storage_efficiency",
            "detuning_MHz",
            x.clone(),
            ps,
            zeros.clone(),
        )?,
        ScanResult::new("heralding_efficiency", "detuning_MHz", x, ph, zeros)?,
    ))
}

/// Which measured quantity a coherent-pulse conversion starts from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConversionInput {
    /// Transfer probability per coherent pulse p_t,n̄.
    Transfer(f64),
    /// Single-photon storage probability p_s.
    Storage(f64),
    /// Herald probability per pulse p_H,n̄ together with p_t,n̄.
    Herald { p_herald: f64, p_transfer: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversions {
    pub p_transfer: f64,
    pub p_storage: f64,
    /// Single-photon heralding probability, present when the input carried a herald rate.
    pub p_herald_single: Option<f64>,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p == 1.0 {
        return Err(Error::Unconvertible(format!(
            "{name} = 1 makes the logarithm singular"
        )));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::OutOfRange {
            name: name.into(),
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// p_s = −ln(1 − p_t)/n̄.
pub fn storage_from_transfer(n_mean: f64, p_transfer: f64) -> Result<f64> {
    check_n(n_mean)?;
    check_prob("p_t", p_transfer)?;
    Ok(-(-p_transfer).ln_1p() / n_mean)
}

/// p_t = 1 − exp(−n̄ p_s).
pub fn transfer_from_storage(n_mean: f64, p_storage: f64) -> Result<f64> {
    check_n(n_mean)?;
    check_prob("p_s", p_storage)?;
    Ok(-(-n_mean * p_storage).exp_m1())
}

/// p_H1 = −(p_H,n̄/n̄)·ln(1 − p_t)/p_t, continuous at p_t → 0.
pub fn herald_single_photon(n_mean: f64, p_herald: f64, p_transfer: f64) -> Result<f64> {
    check_n(n_mean)?;
    check_prob("p_H", p_herald)?;
    check_prob("p_t", p_transfer)?;
    let ratio = if p_transfer < 1e-12 {
        1.0 + 0.5 * p_transfer
    } else {
        -(-p_transfer).ln_1p() / p_transfer
    };
    Ok(p_herald / n_mean * ratio)
}

fn check_n(n_mean: f64) -> Result<()> {
    if n_mean > 0.0 && n_mean.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "mean photon number must be positive, got {n_mean}"
        )))
    }
}

pub fn coherent_conversions(n_mean: f64, input: ConversionInput) -> Result<Conversions> {
    match input {
        ConversionInput::Transfer(pt) => Ok(Conversions {
            p_transfer: pt,
            p_storage: storage_from_transfer(n_mean, pt)?,
            p_herald_single: None,
        }),
        ConversionInput::Storage(ps) => Ok(Conversions {
            p_transfer: transfer_from_storage(n_mean, ps)?,
            p_storage: ps,
            p_herald_single: None,
        }),
        ConversionInput::Herald {
            p_herald,
            p_transfer,
        } => Ok(Conversions {
            p_transfer,
            p_storage: storage_from_transfer(n_mean, p_transfer)?,
            p_herald_single: Some(herald_single_photon(n_mean, p_herald, p_transfer)?),
        }),
    }
}
