//! Single-excitation amplitude model of the write process.
//!
//! Basis (16 amplitudes):
//! * `|1,m⟩ ⊗ σ` with a photon in the qubit cavity, m ∈ {−1,0,1}, σ ∈ {R, L}
//! * `|F'=2, m'⟩`, m' ∈ −2..=2
//! * `|2,m⟩ ⊗ π` with a photon in the herald cavity, m ∈ −2..=2
//!
//! The amplitudes are driven by a single-photon wavepacket coupled through the
//! qubit-cavity outcoupler. Because the equations are linear, the solutions for
//! R and L input are computed once per initial sublevel and any polarisation is
//! a superposition. For a coherent pulse with mean photon number n̄ the
//! transfer events (herald escape, free-space decay into F = 2) form a
//! Poisson process whose intensity is n̄ times the single-photon flux, which
//! reproduces p_t = 1 − exp(−n̄ p_s). Scattering back into F = 1 and photons
//! leaving the qubit cavity are null events that leave the atom in place.

use num_complex::Complex64 as C;
use rand::Rng;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::levels::f2_excited_amplitude;
use crate::polarization::PolarizationState;
use crate::pulse::PulseEnvelope;

const N: usize = 16;
/// Stored components: excited (5) then herald (5).
type Short = [C; 10];

/// Extra integration time after the pulse so all amplitudes have decayed.
pub const WRITE_TAIL: f64 = 400e-9;
/// Steps per inverse fastest rate.
pub const STEPS_PER_RATE: f64 = 50.0;
/// Tolerance for the single-photon probability budget.
pub const NORM_TOLERANCE: f64 = 1e-6;

fn qi(m: i8, pol: usize) -> usize {
    (m + 1) as usize * 2 + pol
}
fn ei(m: i8) -> usize {
    6 + (m + 2) as usize
}
fn hi(m: i8) -> usize {
    11 + (m + 2) as usize
}

/// Which way a write attempt ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteChannel {
    ReflectedOrLost,
    FreeSpaceToF1,
    FreeSpaceToF2,
    Heralded,
    /// Optical pumping left the atom in F = 2; the write pulse does not address it.
    PreparedInF2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteOutcome {
    pub channel: WriteChannel,
    /// Time of the transfer event after the start of the write pulse.
    pub time: Option<f64>,
    /// Normalised F = 2 amplitudes (m = −2..=2) after the transfer.
    pub atom: Option<[C; 5]>,
}

/// Coupling constants of the protocol transitions, CG-weighted.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Couplings {
    /// g for |1,m⟩ ↔ |F'=2, m+1⟩ (R) and |F'=2, m−1⟩ (L), indexed [m+1][pol].
    pub qubit: [[f64; 2]; 3],
    /// g for |2,m⟩ ↔ |F'=2,m⟩ (π), indexed m+2.
    pub herald: [f64; 5],
}

impl Couplings {
    pub fn from_config(config: &SystemConfig) -> Self {
        let ref_q = f2_excited_amplitude(1, 0, 1);
        let ref_h = f2_excited_amplitude(2, 1, 1);
        let mut qubit = [[0.0; 2]; 3];
        for m in -1..=1i8 {
            for (pol, dm) in [(0usize, 1i8), (1, -1)] {
                qubit[(m + 1) as usize][pol] =
                    config.g_qubit_eff() / ref_q * f2_excited_amplitude(1, m, m + dm);
            }
        }
        let mut herald = [0.0; 5];
        for m in -2..=2i8 {
            herald[(m + 2) as usize] =
                config.g_herald_eff() / ref_h * f2_excited_amplitude(2, m, m);
        }
        Self { qubit, herald }
    }
}

struct Branch {
    /// Stored (excited, herald) amplitudes for R and L single-photon input.
    sol: [Vec<Short>; 2],
    /// Cumulative transfer flux integrals ∫ c_i† W c_j dt for i, j ∈ {R, L}.
    cum_rr: Vec<f64>,
    cum_ll: Vec<f64>,
    cum_rl: Vec<C>,
    /// Final free-space-to-F=1 flux integrals (RR, LL, RL).
    f1: (f64, f64, C),
}

/// Precomputed write dynamics for one configuration and pulse envelope.
pub struct WriteEngine {
    dt: f64,
    n_steps: usize,
    kappa_h: f64,
    gamma: f64,
    branches: Vec<Branch>,
}

fn rk4_step(
    a: &[(usize, usize, C)],
    c: &mut [C; N],
    drive: &[C; N],
    f0: f64,
    fh: f64,
    f1: f64,
    dt: f64,
) {
    let deriv = |x: &[C; N], f: f64| -> [C; N] {
        let mut out = [C::new(0.0, 0.0); N];
        for &(i, j, v) in a {
            out[i] += v * x[j];
        }
        for i in 0..N {
            out[i] += drive[i] * f;
        }
        out
    };
    let k1 = deriv(c, f0);
    let mut tmp = *c;
    for i in 0..N {
        tmp[i] = c[i] + k1[i] * (0.5 * dt);
    }
    let k2 = deriv(&tmp, fh);
    for i in 0..N {
        tmp[i] = c[i] + k2[i] * (0.5 * dt);
    }
    let k3 = deriv(&tmp, fh);
    for i in 0..N {
        tmp[i] = c[i] + k3[i] * dt;
    }
    let k4 = deriv(&tmp, f1);
    for i in 0..N {
        c[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
    }
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl WriteEngine {
    pub fn new(config: &SystemConfig, pulse: &PulseEnvelope) -> Result<Self> {
        Self::with_resolution(config, pulse, STEPS_PER_RATE)
    }

    /// `steps_per_rate` sets dt = 1/(steps_per_rate · fastest rate); used by step-halving tests.
    pub fn with_resolution(
        config: &SystemConfig,
        pulse: &PulseEnvelope,
        steps_per_rate: f64,
    ) -> Result<Self> {
        let kq = config.qubit_cavity.kappa;
        let k1q = config.qubit_cavity.kappa_out;
        let kh = config.herald_cavity.kappa;
        let gamma = config.gamma();
        let delta = 2.0 * std::f64::consts::PI * config.herald_detuning;
        let cp = Couplings::from_config(config);
        let mu_in = (config.mu_fc_sq * config.mu_rc_sq).sqrt().sqrt();

        let mut a: Vec<(usize, usize, C)> = Vec::new();
        let mi = C::new(0.0, -1.0);
        for m in -1..=1i8 {
            for pol in 0..2 {
                a.push((qi(m, pol), qi(m, pol), C::new(-kq, 0.0)));
                let me = if pol == 0 { m + 1 } else { m - 1 };
                let g = cp.qubit[(m + 1) as usize][pol];
                if g != 0.0 {
                    a.push((qi(m, pol), ei(me), mi * g));
                    a.push((ei(me), qi(m, pol), mi * g));
                }
            }
        }
        for m in -2..=2i8 {
            a.push((ei(m), ei(m), C::new(-gamma, 0.0)));
            a.push((hi(m), hi(m), C::new(-kh, -delta)));
            let g = cp.herald[(m + 2) as usize];
            if g != 0.0 {
                a.push((ei(m), hi(m), mi * g));
                a.push((hi(m), ei(m), mi * g));
            }
        }
        let max_rate = a.iter().map(|e| e.2.norm()).fold(0.0, f64::max);
        let total = pulse.duration + WRITE_TAIL;
        let n_steps = (total * steps_per_rate * max_rate).ceil() as usize;
        let dt = total / n_steps as f64;

        let mut branches = Vec::with_capacity(3);
        for m0 in -1..=1i8 {
            let mut sols: [Vec<Short>; 2] = [
                Vec::with_capacity(n_steps + 1),
                Vec::with_capacity(n_steps + 1),
            ];
            let mut f1_int = [[C::new(0.0, 0.0); 2]; 2];
            for pol in 0..2 {
                let mut drive = [C::new(0.0, 0.0); N];
                drive[qi(m0, pol)] = C::new((2.0 * k1q).sqrt() * mu_in, 0.0);
                let mut c = [C::new(0.0, 0.0); N];
                let d_idx = qi(m0, pol);
                let in_amp = (2.0 * k1q).sqrt();
                // coupled input that is not absorbed leaves by reflection, which
                // interferes with the field leaking out of the outcoupler
                let mut out_flux = 1.0 - mu_in * mu_in;
                let flux = |c: &[C; N], t: f64| -> f64 {
                    let reflected =
                        (C::new(mu_in * pulse.amplitude(t), 0.0) - c[d_idx] * in_amp).norm_sqr();
                    let q: f64 = (0..6).map(|i| c[i].norm_sqr()).sum();
                    let q_other = q - c[d_idx].norm_sqr();
                    let e: f64 = (6..11).map(|i| c[i].norm_sqr()).sum();
                    let h: f64 = (11..16).map(|i| c[i].norm_sqr()).sum();
                    reflected
                        + 2.0 * k1q * q_other
                        + 2.0 * (kq - k1q) * q
                        + 2.0 * gamma * e
                        + 2.0 * kh * h
                };
                let short_of = |c: &[C; N]| -> Short {
                    let mut s = [C::new(0.0, 0.0); 10];
                    s.copy_from_slice(&c[6..16]);
                    s
                };
                sols[pol].push(short_of(&c));
                let mut f_prev = flux(&c, 0.0);
                for k in 0..n_steps {
                    let t = k as f64 * dt;
                    rk4_step(
                        &a,
                        &mut c,
                        &drive,
                        pulse.amplitude(t),
                        pulse.amplitude(t + 0.5 * dt),
                        pulse.amplitude(t + dt),
                        dt,
                    );
                    if c.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                        return Err(Error::Integration(format!(
                            "non-finite amplitude at step {k}"
                        )));
                    }
                    sols[pol].push(short_of(&c));
                    let f_now = flux(&c, t + dt);
                    out_flux += 0.5 * dt * (f_prev + f_now);
                    f_prev = f_now;
                }
                let norm: f64 = c.iter().map(|x| x.norm_sqr()).sum();
                if (out_flux + norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::NormViolation(out_flux + norm));
                }
            }
            // free-space F=1 flux integrals need the excited amplitudes of both solutions
            let ex = |pol: usize, k: usize| -> &[C] { &sols[pol][k][0..5] };
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = C::new(0.0, 0.0);
                    for k in 0..n_steps {
                        let w0 = dot(ex(i, k), ex(j, k));
                        let w1 = dot(ex(i, k + 1), ex(j, k + 1));
                        acc += (w0 + w1) * (0.5 * dt * gamma);
                    }
                    f1_int[i][j] = acc;
                }
            }
            let mut cum_rr = Vec::with_capacity(n_steps + 1);
            let mut cum_ll = Vec::with_capacity(n_steps + 1);
            let mut cum_rl = Vec::with_capacity(n_steps + 1);
            let rate = |i: usize, j: usize, k: usize| -> C {
                let si = &sols[i][k];
                let sj = &sols[j][k];
                dot(&si[0..5], &sj[0..5]) * gamma + dot(&si[5..10], &sj[5..10]) * (2.0 * kh)
            };
            let (mut rr, mut ll, mut rl) = (0.0, 0.0, C::new(0.0, 0.0));
            cum_rr.push(rr);
            cum_ll.push(ll);
            cum_rl.push(rl);
            for k in 0..n_steps {
                rr += 0.5 * dt * (rate(0, 0, k).re + rate(0, 0, k + 1).re);
                ll += 0.5 * dt * (rate(1, 1, k).re + rate(1, 1, k + 1).re);
                rl += (rate(0, 1, k) + rate(0, 1, k + 1)) * (0.5 * dt);
                cum_rr.push(rr);
                cum_ll.push(ll);
                cum_rl.push(rl);
            }
            branches.push(Branch {
                sol: sols,
                cum_rr,
                cum_ll,
                cum_rl,
                f1: (f1_int[0][0].re, f1_int[1][1].re, f1_int[0][1]),
            });
        }
        Ok(Self {
            dt,
            n_steps,
            kappa_h: kh,
            gamma,
            branches,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    fn branch(&self, m0: i8) -> &Branch {
        &self.branches[(m0 + 1) as usize]
    }

    fn quad(rr: f64, ll: f64, rl: C, p: &PolarizationState) -> f64 {
        rr * p.alpha.norm_sqr() + ll * p.beta.norm_sqr() + 2.0 * (p.alpha.conj() * p.beta * rl).re
    }

    /// Single-photon transfer integral up to grid index k.
    fn cum(&self, b: &Branch, k: usize, p: &PolarizationState) -> f64 {
        Self::quad(b.cum_rr[k], b.cum_ll[k], b.cum_rl[k], p)
    }

    fn state_at(&self, b: &Branch, k: usize, p: &PolarizationState) -> Short {
        let mut s = [C::new(0.0, 0.0); 10];
        for i in 0..10 {
            s[i] = b.sol[0][k][i] * p.alpha + b.sol[1][k][i] * p.beta;
        }
        s
    }

    /// Single-photon probability of a transfer into F = 2 starting from |1, m0⟩.
    pub fn single_photon_transfer(&self, m0: i8, pol: &PolarizationState) -> f64 {
        self.cum(self.branch(m0), self.n_steps, pol)
    }

    /// Single-photon probabilities of (herald-cavity escape, free-space decay into F = 2).
    pub fn single_photon_channels(&self, m0: i8, pol: &PolarizationState) -> (f64, f64) {
        let b = self.branch(m0);
        let mut herald = 0.0;
        let mut prev = self.herald_rate(&self.state_at(b, 0, pol));
        for k in 0..self.n_steps {
            let now = self.herald_rate(&self.state_at(b, k + 1, pol));
            herald += 0.5 * self.dt * (prev + now);
            prev = now;
        }
        (herald, self.single_photon_transfer(m0, pol) - herald)
    }

    fn herald_rate(&self, s: &Short) -> f64 {
        2.0 * self.kappa_h * s[5..10].iter().map(|x| x.norm_sqr()).sum::<f64>()
    }

    fn free_space_f2_rate(&self, s: &Short) -> f64 {
        self.gamma * s[0..5].iter().map(|x| x.norm_sqr()).sum::<f64>()
    }

    /// Probabilities of (heralded, free-space F = 2, no transfer) for a coherent pulse,
    /// obtained by quadrature of the jump-time density; they sum to one.
    pub fn channel_probabilities(
        &self,
        m0: i8,
        pol: &PolarizationState,
        nbar: f64,
    ) -> (f64, f64, f64) {
        let b = self.branch(m0);
        let dens = |k: usize| -> (f64, f64) {
            let s = self.state_at(b, k, pol);
            let surv = (-nbar * self.cum(b, k, pol)).exp();
            (
                nbar * self.herald_rate(&s) * surv,
                nbar * self.free_space_f2_rate(&s) * surv,
            )
        };
        let (mut ph, mut pf) = (0.0, 0.0);
        let mut prev = dens(0);
        for k in 0..self.n_steps {
            let now = dens(k + 1);
            ph += 0.5 * self.dt * (prev.0 + now.0);
            pf += 0.5 * self.dt * (prev.1 + now.1);
            prev = now;
        }
        (ph, pf, (-nbar * self.cum(b, self.n_steps, pol)).exp())
    }

    /// Samples the write outcome for an atom starting in |1, m0⟩.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        m0: i8,
        pol: &PolarizationState,
        nbar: f64,
        rng: &mut R,
    ) -> WriteOutcome {
        let b = self.branch(m0);
        let total = nbar * self.cum(b, self.n_steps, pol);
        let target = -(-rng.random::<f64>()).ln_1p();
        if target >= total || nbar == 0.0 {
            let f1 = nbar * Self::quad(b.f1.0, b.f1.1, b.f1.2, pol);
            let channel = if rng.random::<f64>() < -(-f1).exp_m1() {
                WriteChannel::FreeSpaceToF1
            } else {
                WriteChannel::ReflectedOrLost
            };
            return WriteOutcome {
                channel,
                time: None,
                atom: None,
            };
        }
        let goal = target / nbar;
        let (mut lo, mut hi) = (0usize, self.n_steps);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum(b, mid, pol) <= goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c_lo = self.cum(b, lo, pol);
        let c_hi = self.cum(b, hi, pol);
        let frac = if c_hi > c_lo {
            (goal - c_lo) / (c_hi - c_lo)
        } else {
            0.5
        };
        let time = (lo as f64 + frac) * self.dt;
        let k = if frac < 0.5 { lo } else { hi };
        let s = self.state_at(b, k, pol);
        let rh = self.herald_rate(&s);
        let rf = self.free_space_f2_rate(&s);
        let u = rng.random::<f64>() * (rh + rf);
        if u < rh {
            let mut atom = [C::new(0.0, 0.0); 5];
            atom.copy_from_slice(&s[5..10]);
            WriteOutcome {
                channel: WriteChannel::Heralded,
                time: Some(time),
                atom: Some(normalise(atom)),
            }
        } else {
            let mut excited = [C::new(0.0, 0.0); 5];
            excited.copy_from_slice(&s[0..5]);
            WriteOutcome {
                channel: WriteChannel::FreeSpaceToF2,
                time: Some(time),
                atom: Some(free_space_collapse(&excited, 2, rng).0),
            }
        }
    }
}

pub(crate) fn normalise(mut v: [C; 5]) -> [C; 5] {
    let n: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

/// Projects an excited-state amplitude vector onto ground manifold `f` after a
/// spontaneous photon of random polarisation q; returns the normalised ground
/// amplitudes (indexed m + 2, unused entries zero) and q.
pub(crate) fn free_space_collapse<R: Rng + ?Sized>(
    excited: &[C; 5],
    f: u8,
    rng: &mut R,
) -> ([C; 5], i8) {
    let images: Vec<(i8, [C; 5], f64)> = (-1..=1i8)
        .map(|q| {
            let g = ground_image(excited, f, q);
            let w = g.iter().map(|x| x.norm_sqr()).sum::<f64>();
            (q, g, w)
        })
        .collect();
    let total: f64 = images.iter().map(|x| x.2).sum();
    let mut u = rng.random::<f64>() * total;
    for (q, g, w) in &images {
        if u < *w {
            return (normalise(*g), *q);
        }
        u -= w;
    }
    let last = images
        .iter()
        .rev()
        .find(|x| x.2 > 0.0)
        .unwrap_or(&images[2]);
    (normalise(last.1), last.0)
}

/// L_{f,q} applied to excited amplitudes: ground(m) = amp(f,m; 2',m+q)·e(m+q).
pub(crate) fn ground_image(excited: &[C; 5], f: u8, q: i8) -> [C; 5] {
    let mut g = [C::new(0.0, 0.0); 5];
    let fi = f as i8;
    for m in -fi..=fi {
        let me = m + q;
        if me.abs() <= 2 {
            g[(m + 2) as usize] = excited[(me + 2) as usize] * f2_excited_amplitude(f, m, me);
        }
    }
    g
}
