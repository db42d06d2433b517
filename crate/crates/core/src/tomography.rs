//! Polarisation-qubit state and process tomography.
//!
//! States are 2×2 density matrices in the {R, L} basis. Processes are stored as
//! Choi matrices J = Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|) (input ⊗ output) and reported as χ
//! matrices in the Pauli basis {I, X, Y, Z}, with χ_mn = ⟨⟨σ_m|J|σ_n⟩⟩/4.
//!
//! Reconstruction maximises a multinomial likelihood per (input, basis) cell.
//! Physicality holds by construction: ρ = T†T/tr(T†T) with lower-triangular T,
//! and J = (S⊗I)·T†T·(S⊗I) with S = (Tr_out T†T)^{−1/2}, which is completely
//! positive and trace preserving for every T of full rank. The optimiser is
//! BFGS with Armijo backtracking from a fixed maximally mixed start; it stops
//! when the gradient norm drops below 1e-8, when no descent step changes the
//! objective any more (numerical precision reached), or fails after 10⁴
//! iterations.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{Axial, Basis, PolarizationState};
use crate::stats::CountTable;

pub const MAX_ITERATIONS: usize = 10_000;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const TRACE_TOLERANCE: f64 = 1e-9;
pub const TP_TOLERANCE: f64 = 1e-6;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

fn ket(p: &PolarizationState) -> nalgebra::Vector2<C> {
    nalgebra::Vector2::new(p.alpha, p.beta)
}

fn projector(a: Axial) -> Matrix2<C> {
    let k = ket(&a.state());
    k * k.adjoint()
}

/// Pauli matrices {I, X, Y, Z} in the {R, L} basis.
pub fn paulis() -> [Matrix2<C>; 4] {
    let i = C::new(0.0, 1.0);
    [
        Matrix2::new(ONE, ZERO, ZERO, ONE),
        Matrix2::new(ZERO, ONE, ONE, ZERO),
        Matrix2::new(ZERO, -i, i, ZERO),
        Matrix2::new(ONE, ZERO, ZERO, -ONE),
    ]
}

fn kron(a: &Matrix2<C>, b: &Matrix2<C>) -> Matrix4<C> {
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    m
}

/// |A⟩⟩ = Σ_j |j⟩ ⊗ A|j⟩.
fn vectorize(a: &Matrix2<C>) -> Vector4<C> {
    Vector4::new(a[(0, 0)], a[(1, 0)], a[(0, 1)], a[(1, 1)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(pub Matrix2<C>);

impl DensityMatrix {
    pub fn pure(p: &PolarizationState) -> Self {
        let k = ket(p);
        Self(k * k.adjoint() / C::new(p.norm_sqr(), 0.0))
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix2::identity() * C::new(0.5, 0.0))
    }

    /// Validates Hermiticity, unit trace and positivity within 1e-9.
    pub fn new(m: Matrix2<C>) -> Result<Self> {
        if (m - m.adjoint()).norm() > TRACE_TOLERANCE {
            return Err(Error::Unphysical("density matrix is not Hermitian".into()));
        }
        let tr = m.trace();
        if (tr - ONE).norm() > TRACE_TOLERANCE {
            return Err(Error::Unphysical(format!("density matrix trace {tr}")));
        }
        let min = m.symmetric_eigenvalues().min();
        if min < -TRACE_TOLERANCE {
            return Err(Error::Unphysical(format!("negative eigenvalue {min}")));
        }
        Ok(Self(m))
    }

    pub fn fidelity(&self, p: &PolarizationState) -> f64 {
        let k = ket(p);
        (k.adjoint() * self.0 * k)[(0, 0)].re / p.norm_sqr()
    }

    pub fn probability(&self, outcome: Axial) -> f64 {
        (projector(outcome) * self.0).trace().re
    }

    /// Stokes vector (S₁, S₂, S₃) = (⟨H−V⟩, ⟨D−A⟩, ⟨R−L⟩).
    pub fn stokes(&self) -> [f64; 3] {
        let p = paulis();
        [
            (p[1] * self.0).trace().re,
            (p[2] * self.0).trace().re,
            (p[3] * self.0).trace().re,
        ]
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let d = self.0 - other.0;
        0.5 * d
            .symmetric_eigenvalues()
            .iter()
            .map(|x| x.abs())
            .sum::<f64>()
    }

    pub fn to_json(&self) -> serde_json::Value {
        matrix_json(self.0.as_slice(), 2)
    }
}

fn matrix_json(col_major: &[C], n: usize) -> serde_json::Value {
    let at = |i: usize, j: usize| col_major[j * n + i];
    let re: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| at(i, j).re).collect())
        .collect();
    let im: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| at(i, j).im).collect())
        .collect();
    serde_json::json!({ "re": re, "im": im })
}

/// A qubit channel held as its Choi matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessMatrix {
    choi: Matrix4<C>,
}

impl ProcessMatrix {
    pub fn identity() -> Self {
        Self::from_kraus(&[Matrix2::identity()])
    }

    pub fn from_kraus(kraus: &[Matrix2<C>]) -> Self {
        let mut j = Matrix4::zeros();
        for k in kraus {
            let v = vectorize(k);
            j += v * v.adjoint();
        }
        Self { choi: j }
    }

    /// ρ ↦ (1−p)ρ + p·I/2.
    pub fn depolarizing(p: f64) -> Self {
        let s = paulis();
        let mut kraus = vec![s[0] * C::new((1.0 - 0.75 * p).sqrt(), 0.0)];
        for m in &s[1..] {
            kraus.push(m * C::new((p / 4.0).sqrt(), 0.0));
        }
        Self::from_kraus(&kraus)
    }

    /// Random channel from a Haar-like isometry into a two-dimensional environment.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let g = DMatrix::<C>::from_fn(4, 2, |_, _| C::new(normal.sample(rng), normal.sample(rng)));
        let q = g.qr().q();
        let kraus: Vec<Matrix2<C>> = (0..2)
            .map(|e| {
                Matrix2::new(
                    q[(2 * e, 0)],
                    q[(2 * e, 1)],
                    q[(2 * e + 1, 0)],
                    q[(2 * e + 1, 1)],
                )
            })
            .collect();
        Self::from_kraus(&kraus)
    }

    /// Validates complete positivity and trace preservation.
    pub fn from_choi(choi: Matrix4<C>) -> Result<Self> {
        if (choi - choi.adjoint()).norm() > TP_TOLERANCE {
            return Err(Error::Unphysical("Choi matrix is not Hermitian".into()));
        }
        if choi.symmetric_eigenvalues().min() < -TP_TOLERANCE {
            return Err(Error::Unphysical("Choi matrix is not positive".into()));
        }
        let p = Self { choi };
        if (p.partial_trace_out() - Matrix2::identity()).norm() > TP_TOLERANCE {
            return Err(Error::Unphysical("process is not trace preserving".into()));
        }
        Ok(p)
    }

    pub fn choi(&self) -> &Matrix4<C> {
        &self.choi
    }

    fn partial_trace_out(&self) -> Matrix2<C> {
        let mut y = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                y[(i, j)] = self.choi[(2 * i, 2 * j)] + self.choi[(2 * i + 1, 2 * j + 1)];
            }
        }
        y
    }

    /// E(ρ) = Σ_ij ρ_ij E(|i⟩⟨j|) = Tr_in[(ρᵀ ⊗ I) J].
    pub fn apply(&self, rho: &Matrix2<C>) -> Matrix2<C> {
        let mut out = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out[(k, l)] += rho[(i, j)] * self.choi[(2 * i + k, 2 * j + l)];
                    }
                }
            }
        }
        out
    }

    pub fn output(&self, input: Axial) -> DensityMatrix {
        DensityMatrix(self.apply(&projector(input)))
    }

    /// χ in the Pauli basis {I, X, Y, Z}.
    pub fn chi(&self) -> Matrix4<C> {
        let v: Vec<Vector4<C>> = paulis().iter().map(vectorize).collect();
        Matrix4::from_fn(|m, n| (v[m].adjoint() * self.choi * v[n])[(0, 0)] / 4.0)
    }

    pub fn process_fidelity(&self) -> f64 {
        self.chi()[(0, 0)].re
    }

    pub fn to_json(&self) -> serde_json::Value {
        let chi = self.chi();
        matrix_json(chi.as_slice(), 4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelities {
    /// F_s per axial input in the order R, L, H, V, D, A.
    pub state: [f64; 6],
    pub average_state: f64,
    pub process: f64,
    /// F̄_s − (2F_p + 1)/3.
    pub identity_residual: f64,
}

/// Average state fidelity implied by a process fidelity for a qubit.
pub fn average_from_process(f_p: f64) -> f64 {
    (2.0 * f_p + 1.0) / 3.0
}

pub fn fidelities(process: &ProcessMatrix) -> Fidelities {
    let state: [f64; 6] = std::array::from_fn(|i| {
        let a = Axial::ALL[i];
        process.output(a).fidelity(&a.state())
    });
    let avg = state.iter().sum::<f64>() / 6.0;
    let fp = process.process_fidelity();
    Fidelities {
        state,
        average_state: avg,
        process: fp,
        identity_residual: avg - average_from_process(fp),
    }
}

/// State fidelities of reconstructed outputs with respect to their inputs.
pub fn state_fidelities(outputs: &[(Axial, DensityMatrix)]) -> Result<Vec<f64>> {
    outputs
        .iter()
        .map(|(a, rho)| DensityMatrix::new(rho.0).map(|r| r.fidelity(&a.state())))
        .collect()
}

struct Objective<'a> {
    f: &'a dyn Fn(&DVector<f64>) -> f64,
    grad: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
}

/// Minimises with BFGS; returns the parameters at convergence.
fn bfgs(obj: &Objective, x0: DVector<f64>) -> Result<DVector<f64>> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = (obj.f)(&x);
    let mut g = (obj.grad)(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_ITERATIONS {
        if g.norm() < GRADIENT_TOLERANCE {
            return Ok(x);
        }
        let mut d = -(&h * &g);
        if d.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let xn = &x + &d * step;
            let fxn = (obj.f)(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fxn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            // no representable descent step: the optimum is resolved to machine precision
            return Ok(x);
        };
        let gn = (obj.grad)(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            h = &a * &h * a.transpose() + &s * s.transpose() * rho;
        }
        let stalled =
            (fx - fxn).abs() <= 1e-16 * fx.abs().max(1.0) && s.norm() <= 1e-12 * x.norm().max(1.0);
        x = xn;
        fx = fxn;
        g = gn;
        if stalled {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}

fn lower_triangular<const D: usize>(theta: &[f64]) -> nalgebra::SMatrix<C, D, D> {
    let mut t = nalgebra::SMatrix::<C, D, D>::zeros();
    let mut k = 0;
    for i in 0..D {
        t[(i, i)] = C::new(theta[k], 0.0);
        k += 1;
    }
    for i in 0..D {
        for j in 0..i {
            t[(i, j)] = C::new(theta[k], theta[k + 1]);
            k += 2;
        }
    }
    t
}

fn rho_from_params(theta: &[f64]) -> Matrix2<C> {
    let t = lower_triangular::<2>(theta);
    let a = t.adjoint() * t;
    a / a.trace()
}

/// Maximum-likelihood state from counts in the three bases (RL, HV, DA), each
/// given as (first outcome, second outcome).
pub fn state_mle(counts: &[[u64; 2]; 3]) -> Result<DensityMatrix> {
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Empty("state tomography needs counts".into()));
    }
    let mut terms: Vec<(Matrix2<C>, f64)> = Vec::new();
    for b in Basis::ALL {
        for (o, outcome) in b.outcomes().into_iter().enumerate() {
            let n = counts[b.index()][o];
            if n > 0 {
                terms.push((projector(outcome), n as f64 / total as f64));
            }
        }
    }
    let f = |x: &DVector<f64>| -> f64 {
        let rho = rho_from_params(x.as_slice());
        let mut v = 0.0;
        for (e, w) in &terms {
            let p = (e * rho).trace().re;
            if !(p > 0.0) {
                return f64::INFINITY;
            }
            v -= w * p.ln();
        }
        v
    };
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let t = lower_triangular::<2>(x.as_slice());
        let a = t.adjoint() * t;
        let tr = a.trace().re;
        let rho = a / C::new(tr, 0.0);
        let mut g = Matrix2::<C>::zeros();
        for (e, w) in &terms {
            let p = (e * rho).trace().re;
            g -= e * C::new(w / p, 0.0);
        }
        let gp = (g - Matrix2::identity() * (g * rho).trace()) / C::new(tr, 0.0);
        let m = gp * t.adjoint();
        // ∂f/∂T_ij = 2 Re tr(G' T† dT) → entries of (G'T†)_ji
        let mut out = DVector::zeros(4);
        out[0] = 2.0 * m[(0, 0)].re;
        out[1] = 2.0 * m[(1, 1)].re;
        out[2] = 2.0 * m[(0, 1)].re;
        out[3] = -2.0 * m[(0, 1)].im;
        out
    };
    let x = bfgs(
        &Objective { f: &f, grad: &grad },
        DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
    )?;
    DensityMatrix::new(rho_from_params(x.as_slice()))
}

fn inverse_sqrt(y: &Matrix2<C>) -> Option<Matrix2<C>> {
    let e = y.symmetric_eigen();
    if e.eigenvalues.min() <= 1e-300 {
        return None;
    }
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(|v| C::new(1.0 / v.sqrt(), 0.0)));
    Some(e.eigenvectors * d * e.eigenvectors.adjoint())
}

fn choi_from_params(theta: &[f64]) -> Option<Matrix4<C>> {
    let t = lower_triangular::<4>(theta);
    let j0 = t.adjoint() * t;
    let p = ProcessMatrix { choi: j0 };
    let s = inverse_sqrt(&p.partial_trace_out())?;
    let s4 = kron(&s, &Matrix2::identity());
    Some(s4 * j0 * s4)
}

/// CPTP maximum-likelihood process from a complete 6-input × 3-basis grid.
pub fn process_mle(table: &CountTable) -> Result<ProcessMatrix> {
    if !table.is_complete() {
        return Err(Error::InvalidInput(
            "process tomography needs counts in every input/basis cell".into(),
        ));
    }
    let total = table.total() as f64;
    // measurement operators ρ_aᵀ ⊗ |o⟩⟨o| weighted by N/N_total
    let mut terms: Vec<(Matrix4<C>, f64)> = Vec::new();
    for a in Axial::ALL {
        let rho_t = projector(a).transpose();
        for b in Basis::ALL {
            for (o, outcome) in b.outcomes().into_iter().enumerate() {
                let n = table.counts[a.index()][b.index()][o];
                if n > 0 {
                    terms.push((kron(&rho_t, &projector(outcome)), n as f64 / total));
                }
            }
        }
    }
    let f = |x: &DVector<f64>| -> f64 {
        let Some(j) = choi_from_params(x.as_slice()) else {
            return f64::INFINITY;
        };
        let mut v = 0.0;
        for (e, w) in &terms {
            let p = (e * j).trace().re;
            if !(p > 0.0) {
                return f64::INFINITY;
            }
            v -= w * p.ln();
        }
        v
    };
    let grad = |x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let h = 1e-7 * x[i].abs().max(1e-3);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    };
    let mut x0 = vec![0.0; 16];
    x0[..4].fill(1.0);
    let x = bfgs(&Objective { f: &f, grad: &grad }, DVector::from_vec(x0))?;
    let j = choi_from_params(x.as_slice())
        .ok_or_else(|| Error::Singular("rank-deficient Choi matrix".into()))?;
    ProcessMatrix::from_choi(j)
}

/// Expected outcome probabilities of a channel for every (input, basis) cell.
pub fn cell_probabilities(process: &ProcessMatrix) -> [[[f64; 2]; 3]; 6] {
    let mut p = [[[0.0; 2]; 3]; 6];
    for a in Axial::ALL {
        let out = process.output(a);
        for b in Basis::ALL {
            for (o, outcome) in b.outcomes().into_iter().enumerate() {
                p[a.index()][b.index()][o] = out.probability(outcome).clamp(0.0, 1.0);
            }
        }
    }
    p
}

/// Counts rounded from the exact cell probabilities, `shots` per (input, basis) cell.
pub fn expected_counts(process: &ProcessMatrix, shots: u64) -> CountTable {
    let probs = cell_probabilities(process);
    let mut t = CountTable::default();
    for a in 0..6 {
        for b in 0..3 {
            let k = ((probs[a][b][0] * shots as f64).round() as u64).min(shots);
            t.counts[a][b] = [k, shots - k];
        }
    }
    t
}

/// Multinomial counts with `shots` detections per (input, basis) cell.
pub fn sample_counts<R: Rng + ?Sized>(
    process: &ProcessMatrix,
    shots: u64,
    rng: &mut R,
) -> CountTable {
    let probs = cell_probabilities(process);
    let mut t = CountTable::default();
    for a in 0..6 {
        for b in 0..3 {
            let p = probs[a][b][0];
            let k = rand_distr::Binomial::new(shots, p)
                .expect("valid binomial")
                .sample(rng);
            t.counts[a][b] = [k, shots - k];
        }
    }
    t
}

/// Monte-Carlo spread of a derived quantity: counts are redrawn from normal
/// distributions N(N_ij, √N_ij) (rounded, clipped at zero) and the estimator re-run.
pub fn mc_uncertainty<F>(
    table: &CountTable,
    k_samples: usize,
    seed: u64,
    estimator: F,
) -> Result<f64>
where
    F: Fn(&CountTable) -> Result<f64> + Sync,
{
    if k_samples < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 resamples, got {k_samples}"
        )));
    }
    let results: Vec<Option<f64>> = (0..k_samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            let mut t = *table;
            for c in t.counts.iter_mut().flatten().flatten() {
                let n = *c as f64;
                let x = if n > 0.0 {
                    Normal::new(n, n.sqrt()).expect("finite").sample(&mut rng)
                } else {
                    0.0
                };
                *c = x.round().max(0.0) as u64;
            }
            estimator(&t).ok()
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed > 0 {
        return Err(Error::ResampleFailures {
            failed,
            total: k_samples,
        });
    }
    let v: Vec<f64> = results.into_iter().flatten().collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    Ok((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Poincaré-sphere coordinates of reconstructed outputs, one CSV row per input.
pub fn write_poincare_csv<W: std::io::Write>(
    mut w: W,
    outputs: &[(Axial, DensityMatrix)],
) -> std::io::Result<()> {
    writeln!(w, "input,S1,S2,S3")?;
    for (a, rho) in outputs {
        let s = rho.stokes();
        writeln!(w, "{},{},{},{}", a.label(), s[0], s[1], s[2])?;
    }
    Ok(())
}
