//! Temporal envelopes of the weak coherent write/read pulses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::polarization::PolarizationState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PulseShape {
    /// Flat top with sin² edges of the given rise time (s) on both sides.
    QuasiRectangular { rise_time: f64 },
    /// Intensity samples on an equidistant grid spanning the pulse, linearly interpolated.
    Smooth { samples: Vec<f64> },
}

/// A pulse whose intensity envelope integrates to one over [0, duration];
/// the photon flux is `mean_photon_number * intensity(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseEnvelope {
    pub shape: PulseShape,
    pub duration: f64,
    pub mean_photon_number: f64,
    pub polarization: PolarizationState,
    area: f64,
}

impl PulseEnvelope {
    pub fn new(
        shape: PulseShape,
        duration: f64,
        mean_photon_number: f64,
        polarization: PolarizationState,
    ) -> Result<Self> {
        ensure_positive("pulse duration", duration)?;
        if !(mean_photon_number >= 0.0 && mean_photon_number.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mean photon number must be non-negative, got {mean_photon_number}"
            )));
        }
        if (polarization.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "pulse polarization is not normalised".into(),
            ));
        }
        let area = match &shape {
            PulseShape::QuasiRectangular { rise_time } => {
                if !(*rise_time >= 0.0 && 2.0 * rise_time <= duration) {
                    return Err(Error::InvalidInput(format!(
                        "rise time {rise_time} incompatible with duration {duration}"
                    )));
                }
                duration - rise_time
            }
            PulseShape::Smooth { samples } => {
                if samples.len() < 2 || samples.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::InvalidInput(
                        "smooth pulse needs at least two non-negative samples".into(),
                    ));
                }
                let h = duration / (samples.len() - 1) as f64;
                let area: f64 = samples.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
                if !(area > 0.0) {
                    return Err(Error::InvalidInput("smooth pulse has zero area".into()));
                }
                area
            }
        };
        Ok(Self {
            shape,
            duration,
            mean_photon_number,
            polarization,
            area,
        })
    }

    pub fn with_polarization(&self, polarization: PolarizationState) -> Self {
        Self {
            polarization,
            ..self.clone()
        }
    }

    pub fn with_mean_photon_number(&self, n: f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.duration, n, self.polarization)
    }

    fn raw(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            return 0.0;
        }
        match &self.shape {
            PulseShape::QuasiRectangular { rise_time } => {
                let r = *rise_time;
                let edge = t.min(self.duration - t);
                if r > 0.0 && edge < r {
                    (0.5 * PI * edge / r).sin().powi(2)
                } else {
                    1.0
                }
            }
            PulseShape::Smooth { samples } => {
                let n = samples.len() - 1;
                let x = t / self.duration * n as f64;
                let k = (x.floor() as usize).min(n - 1);
                let f = x - k as f64;
                samples[k] * (1.0 - f) + samples[k + 1] * f
            }
        }
    }

    /// Normalised intensity envelope (1/s).
    pub fn intensity(&self, t: f64) -> f64 {
        self.raw(t) / self.area
    }

    /// Field envelope √intensity (1/√s).
    pub fn amplitude(&self, t: f64) -> f64 {
        self.intensity(t).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::Axial;

    fn integrate(p: &PulseEnvelope) -> f64 {
        let n = 200_000;
        let h = p.duration / n as f64;
        (0..n).map(|k| p.intensity((k as f64 + 0.5) * h) * h).sum()
    }

    #[test]
    fn envelopes_are_normalised() {
        let pol = Axial::R.state();
        for shape in [
            PulseShape::QuasiRectangular { rise_time: 0.0 },
            PulseShape::QuasiRectangular { rise_time: 60e-9 },
            PulseShape::Smooth {
                samples: vec![0.0, 0.3, 1.0, 0.7, 0.2, 0.0],
            },
        ] {
            let p = PulseEnvelope::new(shape, 740e-9, 0.5, pol).unwrap();
            assert!((integrate(&p) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_pulses_rejected() {
        let pol = Axial::R.state();
        let rect = PulseShape::QuasiRectangular { rise_time: 0.0 };
        assert!(PulseEnvelope::new(rect.clone(), 1e-6, -0.1, pol).is_err());
        assert!(PulseEnvelope::new(rect, 0.0, 0.5, pol).is_err());
        assert!(PulseEnvelope::new(
            PulseShape::QuasiRectangular { rise_time: 0.6e-6 },
            1e-6,
            0.5,
            pol
        )
        .is_err());
        assert!(PulseEnvelope::new(
            PulseShape::Smooth {
                samples: vec![0.0, 0.0]
            },
            1e-6,
            0.5,
            pol
        )
        .is_err());
    }

    #[test]
    fn outside_window_is_dark() {
        let p = PulseEnvelope::new(
            PulseShape::QuasiRectangular { rise_time: 10e-9 },
            1e-6,
            1.0,
            Axial::H.state(),
        )
        .unwrap();
        assert_eq!(p.intensity(-1e-9), 0.0);
        assert_eq!(p.intensity(1.1e-6), 0.0);
        assert!((p.intensity(0.5e-6) - 1.0 / 0.99e-6).abs() < 1.0);
    }
}
