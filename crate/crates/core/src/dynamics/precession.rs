//! Larmor precession of the stored F = 2 state in a quasi-static magnetic field.
//!
//! Each trial sees B = (σ·n₁, σ·n₂, B₀ + σ·n₃) with independent standard normal
//! n_i, constant during the storage time. The Hamiltonian is
//! H = 2π·g_F·(μ_B/h)·B·F on the spin-2 manifold, so a field along the
//! quantisation axis advances the relative phase of m = ±1 at 2ν_L.

use nalgebra::SMatrix;
use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

type M5 = SMatrix<C, 5, 5>;

/// Spin-2 operators (F_x, F_y, F_z) in the basis m = −2..=2.
fn spin2() -> [M5; 3] {
    let mut fp = M5::zeros();
    for m in -2..2i32 {
        let v = ((2 * 3 - m * (m + 1)) as f64).sqrt();
        fp[((m + 3) as usize, (m + 2) as usize)] = C::new(v, 0.0);
    }
    let fm = fp.adjoint();
    let fx = (fp + fm) * C::new(0.5, 0.0);
    let fy = (fp - fm) * C::new(0.0, -0.5);
    let mut fz = M5::zeros();
    for m in -2..=2i32 {
        fz[((m + 2) as usize, (m + 2) as usize)] = C::new(m as f64, 0.0);
    }
    [fx, fy, fz]
}

/// Draws the quasi-static field (gauss) seen by one trial.
pub fn sample_field<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> [f64; 3] {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    let s = config.b_noise_sigma;
    let (n1, n2, n3) = (n(), n(), n());
    [s * n1, s * n2, config.b_field + s * n3]
}

/// Unitary exp(−iHt) for a fixed field (gauss) and storage time (s).
pub fn propagator(config: &SystemConfig, field: [f64; 3], time: f64) -> Result<M5> {
    if !(time >= 0.0) || !time.is_finite() {
        return Err(Error::InvalidInput(format!(
            "storage time must be non-negative, got {time}"
        )));
    }
    let f = spin2();
    let w = 2.0 * std::f64::consts::PI * config.constants.larmor_frequency(1.0);
    let mut h = M5::zeros();
    for i in 0..3 {
        h += f[i] * C::new(w * field[i], 0.0);
    }
    Ok((h * C::new(0.0, -time)).exp())
}

/// Applies the storage-time evolution to F = 2 amplitudes (m = −2..=2) with a
/// freshly sampled quasi-static field.
pub fn evolve_storage<R: Rng + ?Sized>(
    state: &[C; 5],
    config: &SystemConfig,
    time: f64,
    rng: &mut R,
) -> Result<[C; 5]> {
    let n: f64 = state.iter().map(|x| x.norm_sqr()).sum();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("stored state has norm² {n}")));
    }
    let field = sample_field(config, rng);
    let u = propagator(config, field, time)?;
    let out = u * nalgebra::SVector::<C, 5>::from_column_slice(state);
    Ok(std::array::from_fn(|i| out[i]))
}
