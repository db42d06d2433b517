//! Polarisation qubit states in the circular {R, L} basis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalised Jones vector α|R⟩ + β|L⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    pub alpha: Complex64,
    pub beta: Complex64,
}

/// The six axial states of the Poincaré sphere used as tomography inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axial {
    R,
    L,
    H,
    V,
    D,
    A,
}

/// Measurement bases, each listed as (first outcome, second outcome).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    RL,
    HV,
    DA,
}

impl Axial {
    pub const ALL: [Axial; 6] = [Axial::R, Axial::L, Axial::H, Axial::V, Axial::D, Axial::A];

    pub fn state(self) -> PolarizationState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match self {
            Axial::R => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
            Axial::L => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            Axial::H => (Complex64::new(s, 0.0), Complex64::new(s, 0.0)),
            Axial::V => (Complex64::new(s, 0.0), Complex64::new(-s, 0.0)),
            Axial::D => (Complex64::new(s, 0.0), Complex64::new(0.0, s)),
            Axial::A => (Complex64::new(s, 0.0), Complex64::new(0.0, -s)),
        };
        PolarizationState { alpha: a, beta: b }
    }

    pub fn basis(self) -> Basis {
        match self {
            Axial::R | Axial::L => Basis::RL,
            Axial::H | Axial::V => Basis::HV,
            Axial::D | Axial::A => Basis::DA,
        }
    }

    pub fn orthogonal(self) -> Axial {
        match self {
            Axial::R => Axial::L,
            Axial::L => Axial::R,
            Axial::H => Axial::V,
            Axial::V => Axial::H,
            Axial::D => Axial::A,
            Axial::A => Axial::D,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Axial> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Axial::R => "R",
            Axial::L => "L",
            Axial::H => "H",
            Axial::V => "V",
            Axial::D => "D",
            Axial::A => "A",
        }
    }

    pub fn parse(s: &str) -> Option<Axial> {
        Self::ALL.into_iter().find(|a| a.label() == s)
    }
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::RL, Basis::HV, Basis::DA];

    pub fn outcomes(self) -> [Axial; 2] {
        match self {
            Basis::RL => [Axial::R, Axial::L],
            Basis::HV => [Axial::H, Axial::V],
            Basis::DA => [Axial::D, Axial::A],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::RL => "RL",
            Basis::HV => "HV",
            Basis::DA => "DA",
        }
    }

    pub fn parse(s: &str) -> Option<Basis> {
        Self::ALL.into_iter().find(|b| b.label() == s)
    }
}

impl PolarizationState {
    /// Builds a state, rejecting amplitudes whose norm deviates from one by more than 1e-9.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = alpha.norm_sqr() + beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "polarization norm {norm} differs from 1"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Scales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if !(norm > 0.0) {
            return Err(Error::InvalidInput("zero polarization vector".into()));
        }
        Ok(Self {
            alpha: alpha / norm,
            beta: beta / norm,
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha.norm_sqr() + self.beta.norm_sqr()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &PolarizationState) -> Complex64 {
        self.alpha.conj() * other.alpha + self.beta.conj() * other.beta
    }

    /// Stokes parameters (S1, S2, S3) with S3 = +1 for R.
    pub fn stokes(&self) -> [f64; 3] {
        let c = self.alpha.conj() * self.beta;
        [
            2.0 * c.re,
            2.0 * c.im,
            self.alpha.norm_sqr() - self.beta.norm_sqr(),
        ]
    }
}
