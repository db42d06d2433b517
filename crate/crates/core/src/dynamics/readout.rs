//! Driven read-out as a quantum-trajectory (Monte-Carlo wave-function) simulation.
//!
//! A classical π field enters through the herald cavity and drives
//! |2,m⟩ ↔ |F'=2,m⟩. The excited state decays into the qubit cavity (σ⁺ to
//! |1,m−1⟩, σ⁻ to |1,m+1⟩), back into the herald-cavity vacuum mode
//! (adiabatically eliminated, complex rate Γ_H,m = g_H,m²/(κ_H + iδ)) or into
//! free space. Because all drive and herald couplings are π, the state splits
//! into five independent 4-dimensional blocks labelled by m:
//! `[|2,m⟩, |F'=2,m⟩, |1,m−1⟩⊗R, |1,m+1⟩⊗L]`.
//!
//! Drive convention: n̄ of the read pulse counts photons coupled into the
//! herald-cavity mode through the outcoupler (fibre mode matching already
//! applied). The resonant intracavity field is a(t) = √(2κ_1H·n̄)·β̂(t)/κ_H with
//! ∫β̂² = 1, and the Rabi frequency of sublevel m is g_H,m·a(t).

use nalgebra::Matrix4;
use num_complex::Complex64 as C;
use rand::Rng;

use super::write::{free_space_collapse, ground_image, Couplings, STEPS_PER_RATE};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::pulse::PulseEnvelope;

/// Integration time after the read pulse.
pub const READ_TAIL: f64 = 200e-9;
/// Steps combined into one cached propagator.
const CHUNK: usize = 16;

type Block = [C; 4];
type State = [Block; 5];

const ZERO: C = C::new(0.0, 0.0);

/// How a read-out attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadoutChannel {
    /// Photon left the qubit cavity through the outcoupler.
    Emitted,
    /// Photon was emitted into the qubit cavity but lost inside it.
    CavityLoss,
    /// Free-space scattering into F = 1.
    FreeSpaceToF1,
    /// Atom still in F = 2 at the end of the drive.
    RemainedInF2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutOutcome {
    pub channel: ReadoutChannel,
    /// Emission time after the start of the read pulse (qubit-cavity and F = 1 events).
    pub time: Option<f64>,
    /// Normalised polarisation density matrix of the emitted photon in the {R, L} basis.
    pub photon: Option<[[C; 2]; 2]>,
    /// Free-space scattering events back into F = 2 before the terminal event.
    pub rescatters: u32,
}

impl ReadoutOutcome {
    /// The atom ended in F = 1 (photon into the qubit cavity or free-space decay).
    pub fn returned_to_f1(&self) -> bool {
        self.channel != ReadoutChannel::RemainedInF2
    }
}

/// Precomputed read-out propagators for one configuration and read pulse.
pub struct ReadoutEngine {
    dt: f64,
    n_steps: usize,
    /// steps[k][b]: propagator over step k for block b.
    steps: Vec<[Matrix4<C>; 5]>,
    chunks: Vec<[Matrix4<C>; 5]>,
    kappa_q: f64,
    escape_q: f64,
    gamma: f64,
    /// Herald-cavity jump amplitude factor √(2κ_H)·g_H,m/(κ_H + iδ) per block.
    herald_jump: [C; 5],
}

fn block_matrix(
    m: i8,
    cp: &Couplings,
    omega: f64,
    kq: f64,
    gamma: f64,
    gamma_h: C,
    delta: f64,
) -> Matrix4<C> {
    let mi = C::new(0.0, -1.0);
    let mut a = Matrix4::<C>::zeros();
    let gh = cp.herald[(m + 2) as usize];
    let om = omega * gh;
    a[(0, 0)] = C::new(0.0, -delta);
    a[(0, 1)] = mi * om;
    a[(1, 0)] = mi * om;
    a[(1, 1)] = -(C::new(gamma, 0.0) + gamma_h);
    let gr = if (m - 1).abs() <= 1 {
        cp.qubit[m as usize][0]
    } else {
        0.0
    };
    let gl = if (m + 1).abs() <= 1 {
        cp.qubit[(m + 2) as usize][1]
    } else {
        0.0
    };
    a[(1, 2)] = mi * gr;
    a[(2, 1)] = mi * gr;
    a[(1, 3)] = mi * gl;
    a[(3, 1)] = mi * gl;
    a[(2, 2)] = C::new(-kq, 0.0);
    a[(3, 3)] = C::new(-kq, 0.0);
    a
}

fn apply(p: &[Matrix4<C>; 5], s: &mut State) {
    for (b, blk) in s.iter_mut().enumerate() {
        if blk.iter().all(|x| *x == ZERO) {
            continue;
        }
        let v = p[b] * nalgebra::Vector4::from_column_slice(blk);
        blk.copy_from_slice(v.as_slice());
    }
}

fn norm_sqr(s: &State) -> f64 {
    s.iter().flatten().map(|x| x.norm_sqr()).sum()
}

impl ReadoutEngine {
    pub fn new(config: &SystemConfig, pulse: &PulseEnvelope) -> Result<Self> {
        Self::with_resolution(config, pulse, STEPS_PER_RATE)
    }

    pub fn with_resolution(
        config: &SystemConfig,
        pulse: &PulseEnvelope,
        steps_per_rate: f64,
    ) -> Result<Self> {
        let kq = config.qubit_cavity.kappa;
        let kh = config.herald_cavity.kappa;
        let k1h = config.herald_cavity.kappa_out;
        let gamma = config.gamma();
        let delta = 2.0 * std::f64::consts::PI * config.herald_detuning;
        let cp = Couplings::from_config(config);
        let field = (2.0 * k1h * pulse.mean_photon_number).sqrt() / kh;
        let denom = C::new(kh, delta);
        let mut gamma_h = [ZERO; 5];
        let mut herald_jump = [ZERO; 5];
        for m in -2..=2i8 {
            let g = cp.herald[(m + 2) as usize];
            gamma_h[(m + 2) as usize] = C::new(g * g, 0.0) / denom;
            herald_jump[(m + 2) as usize] = C::new((2.0 * kh).sqrt() * g, 0.0) / denom;
        }
        let peak = (0..=200)
            .map(|i| pulse.amplitude(pulse.duration * i as f64 / 200.0))
            .fold(0.0, f64::max);
        let mut max_rate: f64 = kq
            .max(gamma + gamma_h.iter().map(|g| g.norm()).fold(0.0, f64::max))
            .max(delta.abs());
        for m in -2..=2i8 {
            let blk = block_matrix(
                m,
                &cp,
                field * peak,
                kq,
                gamma,
                gamma_h[(m + 2) as usize],
                delta,
            );
            for x in blk.iter() {
                max_rate = max_rate.max(x.norm());
            }
        }
        let total = pulse.duration + READ_TAIL;
        let n_steps = ((total * steps_per_rate * max_rate).ceil() as usize).max(1);
        let dt = total / n_steps as f64;
        let mut steps = Vec::with_capacity(n_steps);
        let id = Matrix4::<C>::identity();
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let omegas = [
                field * pulse.amplitude(t),
                field * pulse.amplitude(t + 0.5 * dt),
                field * pulse.amplitude(t + dt),
            ];
            let mut per_block = [Matrix4::<C>::zeros(); 5];
            for m in -2..=2i8 {
                let b = (m + 2) as usize;
                let mk = |om: f64| block_matrix(m, &cp, om, kq, gamma, gamma_h[b], delta);
                let (a0, ah, a1) = (mk(omegas[0]), mk(omegas[1]), mk(omegas[2]));
                let h = C::new(dt, 0.0);
                let k1 = a0;
                let k2 = ah * (id + k1 * (h * 0.5));
                let k3 = ah * (id + k2 * (h * 0.5));
                let k4 = a1 * (id + k3 * h);
                let p = id + (k1 + (k2 + k3) * C::new(2.0, 0.0) + k4) * (h / 6.0);
                if p.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                    return Err(Error::Integration(format!(
                        "non-finite propagator at step {k}"
                    )));
                }
                per_block[b] = p;
            }
            steps.push(per_block);
        }
        let chunks = steps
            .chunks(CHUNK)
            .map(|c| {
                let mut acc = [id; 5];
                for s in c {
                    for b in 0..5 {
                        acc[b] = s[b] * acc[b];
                    }
                }
                acc
            })
            .collect();
        Ok(Self {
            dt,
            n_steps,
            steps,
            chunks,
            kappa_q: kq,
            escape_q: config.qubit_cavity.escape_fraction(),
            gamma,
            herald_jump,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Propagates from step `k` until the norm drops below `r` or the window ends.
    /// Returns the step index after which the jump happens, or None if it survives.
    fn propagate(&self, s: &mut State, mut k: usize, r: f64) -> Option<usize> {
        while k < self.n_steps {
            if k.is_multiple_of(CHUNK) && k + CHUNK <= self.n_steps {
                let mut trial = *s;
                apply(&self.chunks[k / CHUNK], &mut trial);
                if norm_sqr(&trial) > r {
                    *s = trial;
                    k += CHUNK;
                    continue;
                }
            }
            apply(&self.steps[k], s);
            k += 1;
            if norm_sqr(s) <= r {
                return Some(k);
            }
        }
        None
    }

    fn excited(s: &State) -> [C; 5] {
        let mut e = [ZERO; 5];
        for b in 0..5 {
            e[b] = s[b][1];
        }
        e
    }

    /// Unnormalised photon polarisation state per final F = 1 sublevel.
    fn photon_vectors(s: &State) -> [[C; 2]; 3] {
        let mut v = [[ZERO; 2]; 3];
        for ma in -1..=1i8 {
            let i = (ma + 1) as usize;
            v[i][0] = s[(ma + 3) as usize][2];
            v[i][1] = s[(ma + 1) as usize][3];
        }
        v
    }

    /// Simulates the read-out of an F = 2 state (amplitudes m = −2..=2).
    pub fn sample<R: Rng + ?Sized>(&self, atom: &[C; 5], rng: &mut R) -> Result<ReadoutOutcome> {
        let n: f64 = atom.iter().map(|x| x.norm_sqr()).sum();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput(
                "read-out needs a non-zero stored state".into(),
            ));
        }
        let mut s: State = [[ZERO; 4]; 5];
        for b in 0..5 {
            s[b][0] = atom[b] / n.sqrt();
        }
        let mut k = 0;
        let mut rescatters = 0;
        loop {
            let r: f64 = rng.random();
            let Some(kj) = self.propagate(&mut s, k, r) else {
                return Ok(ReadoutOutcome {
                    channel: ReadoutChannel::RemainedInF2,
                    time: None,
                    photon: None,
                    rescatters,
                });
            };
            let time = kj as f64 * self.dt;
            let e = Self::excited(&s);
            let pv = Self::photon_vectors(&s);
            let r_cav = 2.0 * self.kappa_q * pv.iter().flatten().map(|x| x.norm_sqr()).sum::<f64>();
            let herald_img: [C; 5] = std::array::from_fn(|b| self.herald_jump[b] * e[b]);
            let r_her: f64 = herald_img.iter().map(|x| x.norm_sqr()).sum();
            let fs_rate = |f: u8| -> f64 {
                (-1..=1i8)
                    .map(|q| {
                        ground_image(&e, f, q)
                            .iter()
                            .map(|x| x.norm_sqr())
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    * 2.0
                    * self.gamma
            };
            let (r_f1, r_f2) = (fs_rate(1), fs_rate(2));
            let mut u = rng.random::<f64>() * (r_cav + r_her + r_f1 + r_f2);
            if u < r_cav {
                let mut rho = [[ZERO; 2]; 2];
                for v in &pv {
                    for i in 0..2 {
                        for j in 0..2 {
                            rho[i][j] += v[i] * v[j].conj();
                        }
                    }
                }
                let tr = rho[0][0].re + rho[1][1].re;
                for row in &mut rho {
                    for x in row {
                        *x /= tr;
                    }
                }
                let escaped = rng.random::<f64>() < self.escape_q;
                return Ok(ReadoutOutcome {
                    channel: if escaped {
                        ReadoutChannel::Emitted
                    } else {
                        ReadoutChannel::CavityLoss
                    },
                    time: Some(time),
                    photon: Some(rho),
                    rescatters,
                });
            }
            u -= r_cav;
            if u >= r_her && u - r_her < r_f1 {
                return Ok(ReadoutOutcome {
                    channel: ReadoutChannel::FreeSpaceToF1,
                    time: Some(time),
                    photon: None,
                    rescatters,
                });
            }
            let ground = if u < r_her {
                herald_img
            } else {
                rescatters += 1;
                free_space_collapse(&e, 2, rng).0
            };
            let gn: f64 = ground.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if !(gn > 0.0) {
                return Err(Error::Integration("jump produced an empty state".into()));
            }
            s = [[ZERO; 4]; 5];
            for b in 0..5 {
                s[b][0] = ground[b] / gn;
            }
            k = kj;
        }
    }

    /// Deterministic no-jump probability of reaching the end without any event,
    /// used as a consistency check of the propagators.
    pub fn survival(&self, atom: &[C; 5]) -> f64 {
        let mut s: State = [[ZERO; 4]; 5];
        for b in 0..5 {
            s[b][0] = atom[b];
        }
        for c in &self.chunks {
            apply(c, &mut s);
        }
        norm_sqr(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;
    use crate::levels::f2_excited_amplitude;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Sum over free-space channels of |amp|² for an excited sublevel; equals one
    /// for every F' = 2 sublevel on the D2 line.
    fn free_space_total(me: i8) -> f64 {
        let mut t = 0.0;
        for f in 1..=2u8 {
            for q in -1..=1i8 {
                let m = me - q;
                if m.abs() <= f as i8 {
                    t += f2_excited_amplitude(f, m, me).powi(2);
                }
            }
        }
        t
    }

    fn basis_state(m: i8) -> [C; 5] {
        let mut a = [ZERO; 5];
        a[(m + 2) as usize] = C::new(1.0, 0.0);
        a
    }

    #[test]
    fn excited_sublevels_decay_completely() {
        for me in -2..=2 {
            assert!((free_space_total(me) - 1.0).abs() < 1e-12, "m' = {me}");
        }
    }

    #[test]
    fn plus_one_emits_right_circular() {
        let cfg = reference_config();
        let eng = ReadoutEngine::new(&cfg, &cfg.protocol.read).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = 0;
        for _ in 0..300 {
            let out = eng.sample(&basis_state(1), &mut rng).unwrap();
            if let Some(rho) = out.photon {
                if out.rescatters == 0 {
                    assert!((rho[0][0].re - 1.0).abs() < 1e-12);
                    seen += 1;
                }
            }
        }
        assert!(seen > 50);
    }

    #[test]
    fn superposition_maps_to_polarisation() {
        // stored (α, −β) on (|2,1⟩, |2,−1⟩) reads out as αR + βL
        let cfg = reference_config();
        let eng = ReadoutEngine::new(&cfg, &cfg.protocol.read).unwrap();
        let mut atom = [ZERO; 5];
        let (a, b) = (C::new(0.6, 0.0), C::new(0.0, 0.8));
        atom[3] = a;
        atom[1] = -b;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let out = eng.sample(&atom, &mut rng).unwrap();
            if let (Some(rho), 0) = (out.photon, out.rescatters) {
                let fid = (a.conj() * rho[0][0] * a
                    + a.conj() * rho[0][1] * b
                    + b.conj() * rho[1][0] * a
                    + b.conj() * rho[1][1] * b)
                    .re;
                assert!((fid - 1.0).abs() < 1e-9, "fidelity {fid}");
            }
        }
    }

    #[test]
    fn step_halving_converges() {
        let cfg = reference_config();
        let coarse = ReadoutEngine::new(&cfg, &cfg.protocol.read).unwrap();
        let fine =
            ReadoutEngine::with_resolution(&cfg, &cfg.protocol.read, 2.0 * STEPS_PER_RATE).unwrap();
        let atom = basis_state(1);
        assert!((coarse.survival(&atom) - fine.survival(&atom)).abs() < 1e-6);
    }

    #[test]
    fn zero_drive_leaves_atom_in_place() {
        let cfg = reference_config();
        let pulse = cfg.protocol.read.with_mean_photon_number(0.0).unwrap();
        let eng = ReadoutEngine::new(&cfg, &pulse).unwrap();
        assert!((eng.survival(&basis_state(1)) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = eng.sample(&basis_state(-1), &mut rng).unwrap();
        assert_eq!(out.channel, ReadoutChannel::RemainedInF2);
    }

    #[test]
    fn return_probability_near_measured_value() {
        let cfg = reference_config();
        let eng = ReadoutEngine::new(&cfg, &cfg.protocol.read).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 4000;
        let back = (0..n)
            .filter(|_| {
                eng.sample(&basis_state(1), &mut rng)
                    .unwrap()
                    .returned_to_f1()
            })
            .count();
        let p = back as f64 / n as f64;
        assert!((p - 0.92).abs() < 0.03, "P(F=1) = {p}");
    }
}
