//! Physical constants for the Rb-87 D2 line.

use std::f64::consts::PI;

use serde::Serialize;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Vacuum wavelength of the Rb-87 D2 line in metres.
pub const RB87_D2_WAVELENGTH: f64 = 780.241e-9;
/// Natural linewidth Γ/2π of the 5P3/2 level in Hz.
pub const RB87_D2_NATURAL_LINEWIDTH_HZ: f64 = 6.0666e6;
/// Bohr magneton over Planck's constant in Hz per gauss.
pub const BOHR_MAGNETON_OVER_H: f64 = 1.399_6e6;
/// Landé factor of the F = 2 ground manifold.
pub const G_FACTOR_F2: f64 = 0.5;

/// Immutable bundle of the constants used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalConstants {
    pub speed_of_light: f64,
    pub rb87_d2_wavelength: f64,
    /// Atomic dipole (amplitude) decay rate γ in rad/s, half the natural linewidth.
    pub gamma_atom: f64,
    pub bohr_magneton_over_h: f64,
    pub g_factor_f2: f64,
}

impl PhysicalConstants {
    pub const fn rb87() -> Self {
        Self {
            speed_of_light: SPEED_OF_LIGHT,
            rb87_d2_wavelength: RB87_D2_WAVELENGTH,
            gamma_atom: PI * RB87_D2_NATURAL_LINEWIDTH_HZ,
            bohr_magneton_over_h: BOHR_MAGNETON_OVER_H,
            g_factor_f2: G_FACTOR_F2,
        }
    }

    /// Larmor frequency of the F = 2 manifold in Hz for a field in gauss.
    pub fn larmor_frequency(&self, field_gauss: f64) -> f64 {
        self.g_factor_f2 * self.bohr_magneton_over_h * field_gauss
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::rb87()
    }
}

pub const RB87: PhysicalConstants = PhysicalConstants::rb87();

/// Converts a frequency f (Hz) into an angular rate 2πf.
#[inline]
pub fn angular(freq_hz: f64) -> f64 {
    2.0 * PI * freq_hz
}
