//! Spectral and geometric properties of a two-mirror fibre Fabry-Pérot cavity.
//!
//! All functions are pure. Lengths are in metres, angular rates in rad/s and
//! plain frequencies or detunings in Hz.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{RB87, SPEED_OF_LIGHT};
use crate::error::{ensure_positive, Error, Result};

/// Field decay rates and free spectral range of a cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityRates {
    /// Total field decay rate κ (rad/s).
    pub kappa: f64,
    /// Field decay rate through the outcoupling mirror (rad/s).
    pub kappa_out: f64,
    /// Free spectral range (Hz).
    pub fsr: f64,
}

/// κ = πc/(2LF); the outcoupler's share of κ is its transmission over the
/// total round-trip loss 2π/F.
pub fn decay_rates(length: f64, finesse: f64, t_out: f64) -> Result<CavityRates> {
    ensure_positive("length", length)?;
    ensure_positive("finesse", finesse)?;
    ensure_positive("outcoupler transmission", t_out)?;
    let fsr = SPEED_OF_LIGHT / (2.0 * length);
    let kappa = PI * SPEED_OF_LIGHT / (2.0 * length * finesse);
    let round_trip_loss = 2.0 * PI / finesse;
    let share = t_out / round_trip_loss;
    if share > 1.0 {
        return Err(Error::Inconsistent(format!(
            "outcoupler transmission {t_out} exceeds the round-trip loss {round_trip_loss}"
        )));
    }
    Ok(CavityRates {
        kappa,
        kappa_out: kappa * share,
        fsr,
    })
}

/// Gaussian mode of a two-mirror resonator along one transverse axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeGeometry {
    pub waist: f64,
    /// Distance of the waist from the first mirror.
    pub waist_position: f64,
    pub rayleigh_range: f64,
    /// Mode radius at the geometric centre L/2.
    pub centre_radius: f64,
}

/// Standard two-mirror stability relations with gᵢ = 1 − L/Rᵢ.
pub fn resonator_mode(roc1: f64, roc2: f64, length: f64, wavelength: f64) -> Result<ModeGeometry> {
    ensure_positive("roc1", roc1)?;
    ensure_positive("roc2", roc2)?;
    ensure_positive("length", length)?;
    ensure_positive("wavelength", wavelength)?;
    let g1 = 1.0 - length / roc1;
    let g2 = 1.0 - length / roc2;
    let g = g1 * g2;
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::UnstableResonator(g));
    }
    let denom = g1 + g2 - 2.0 * g;
    let waist_sq = (length * wavelength / PI) * (g * (1.0 - g) / (denom * denom)).sqrt();
    let waist_position = length * g2 * (1.0 - g1) / denom;
    let rayleigh_range = PI * waist_sq / wavelength;
    let dz = 0.5 * length - waist_position;
    let centre_sq = waist_sq * (1.0 + (dz / rayleigh_range).powi(2));
    Ok(ModeGeometry {
        waist: waist_sq.sqrt(),
        waist_position,
        rayleigh_range,
        centre_radius: centre_sq.sqrt(),
    })
}

pub fn mode_radius_at_centre(roc1: f64, roc2: f64, length: f64, wavelength: f64) -> Result<f64> {
    resonator_mode(roc1, roc2, length, wavelength).map(|m| m.centre_radius)
}

/// Birefringent round-trip phase and the resulting polarisation-mode splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Birefringence {
    /// Phase per round trip (rad).
    pub phase: f64,
    /// Frequency splitting of the linear eigenmodes (Hz).
    pub splitting: f64,
}

/// Small-phase relation: phase = (λ/2π) Σ (1/R_x − 1/R_y), splitting = phase·FSR/2π.
pub fn birefringence(
    mirror_rocs: &[(f64, f64)],
    wavelength: f64,
    fsr: f64,
) -> Result<Birefringence> {
    ensure_positive("wavelength", wavelength)?;
    ensure_positive("fsr", fsr)?;
    let mut sum = 0.0;
    for &(rx, ry) in mirror_rocs {
        ensure_positive("mirror radius", rx)?;
        ensure_positive("mirror radius", ry)?;
        sum += 1.0 / rx - 1.0 / ry;
    }
    let phase = wavelength / (2.0 * PI) * sum;
    Ok(splitting_from_phase(phase, fsr))
}

pub fn splitting_from_phase(phase: f64, fsr: f64) -> Birefringence {
    Birefringence {
        phase,
        splitting: phase * fsr / (2.0 * PI),
    }
}

/// Atom-cavity coupling g (rad/s) for a mode of radius `mode_radius` and a
/// transition whose dipole is `relative_dipole` times that of the cycling
/// transition: g = d_rel · sqrt(3cλ²γ / (2π² w² L)).
pub fn expected_coupling(
    mode_radius: f64,
    length: f64,
    wavelength: f64,
    relative_dipole: f64,
) -> Result<f64> {
    ensure_positive("mode radius", mode_radius)?;
    ensure_positive("length", length)?;
    ensure_positive("wavelength", wavelength)?;
    if !(relative_dipole >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "relative dipole must be non-negative, got {relative_dipole}"
        )));
    }
    let gamma = RB87.gamma_atom;
    let g_cycling = (3.0 * SPEED_OF_LIGHT * wavelength * wavelength * gamma
        / (2.0 * PI * PI * mode_radius * mode_radius * length))
        .sqrt();
    Ok(relative_dipole * g_cycling)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumModel {
    Lorentzian,
    NormalMode,
}

/// Rates in rad/s; detunings in Hz relative to the probe frequency reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumParams {
    pub kappa: f64,
    pub g: f64,
    pub gamma: f64,
    pub atom_detuning: f64,
    pub cavity_detuning: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpectrum {
    pub detunings: Vec<f64>,
    pub transmission: Vec<f64>,
    pub model: SpectrumModel,
}

/// Un-normalised transmission at probe detuning `detuning` (Hz).
pub fn transmission_at(model: SpectrumModel, p: &SpectrumParams, detuning: f64) -> f64 {
    let dc = 2.0 * PI * (detuning - p.cavity_detuning);
    match model {
        SpectrumModel::Lorentzian => p.kappa * p.kappa / (p.kappa * p.kappa + dc * dc),
        SpectrumModel::NormalMode => {
            let da = 2.0 * PI * (detuning - p.atom_detuning);
            let atom = Complex64::new(p.gamma, da);
            let cav = Complex64::new(p.kappa, dc);
            let t = p.kappa * atom / (cav * atom + p.g * p.g);
            t.norm_sqr()
        }
    }
}

pub fn transmission_spectrum(
    model: SpectrumModel,
    params: &SpectrumParams,
    grid: &[f64],
) -> Result<TransmissionSpectrum> {
    if grid.is_empty() {
        return Err(Error::Empty("detuning grid".into()));
    }
    ensure_positive("kappa", params.kappa)?;
    if params.g < 0.0 {
        return Err(Error::InvalidInput(
            "coupling g must be non-negative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "detuning grid must be strictly increasing".into(),
        ));
    }
    let raw: Vec<f64> = grid
        .iter()
        .map(|&d| transmission_at(model, params, d))
        .collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let transmission = if peak > 0.0 {
        raw.iter().map(|t| t / peak).collect()
    } else {
        raw
    };
    Ok(TransmissionSpectrum {
        detunings: grid.to_vec(),
        transmission,
        model,
    })
}

impl TransmissionSpectrum {
    /// Two-column CSV: detuning_MHz, transmission.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "detuning_MHz,transmission")?;
        for (d, t) in self.detunings.iter().zip(&self.transmission) {
            writeln!(w, "{},{}", d / 1e6, t)?;
        }
        Ok(())
    }
}
