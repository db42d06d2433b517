//! Weighted nonlinear least squares (Levenberg–Marquardt) and the model fits
//! for cavity spectra, the detuning-dependent storage model and coherence data.
//!
//! The damping starts at λ = 1e-3, is divided by 10 after an accepted step and
//! multiplied by 10 after a rejected one. Iteration stops when the accepted
//! step is shorter than 1e-10 (relative to the parameter norm), when λ exceeds
//! 1e16 (no further decrease possible), or after 500 iterations. Parameters are
//! clamped to their bounds at every step.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cavity::{transmission_at, SpectrumModel, SpectrumParams};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::scan::ScanResult;
use crate::stats::Estimate;
use crate::storage::ModelParams;

pub const MAX_ITERATIONS: usize = 500;
pub const STEP_TOLERANCE: f64 = 1e-10;

/// A model y = f(x; p) with optional analytic gradient.
pub trait Model {
    fn names(&self) -> Vec<String>;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// ∂f/∂p; central finite differences unless overridden.
    fn gradient(&self, x: f64, p: &[f64]) -> Vec<f64> {
        finite_difference_gradient(self, x, p)
    }
}

pub fn finite_difference_gradient<M: Model + ?Sized>(m: &M, x: f64, p: &[f64]) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let h = 1e-6 * p[i].abs().max(1e-6);
            q[i] = p[i] + h;
            let fp = m.eval(x, &q);
            q[i] = p[i] - h;
            let fm = m.eval(x, &q);
            q[i] = p[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    /// Row-major covariance matrix.
    pub covariance: Vec<Vec<f64>>,
    /// √(Σ w r²).
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn sigma(&self, i: usize) -> f64 {
        self.covariance[i][i].max(0.0).sqrt()
    }

    pub fn get(&self, name: &str) -> Option<Estimate> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(Estimate::new(self.parameters[i], self.sigma(i)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// w = 1/σ²; the covariance is absolute.
    InverseVariance,
    /// w = 1; the covariance is scaled by the reduced χ².
    Uniform,
}

/// Fits `model` to `data` starting from `init` within `bounds`.
pub fn nls_fit<M: Model + ?Sized>(
    model: &M,
    data: &ScanResult,
    init: &[f64],
    bounds: &[(f64, f64)],
    weighting: Weighting,
) -> Result<FitResult> {
    let k = init.len();
    let n = data.len();
    if bounds.len() != k {
        return Err(Error::InvalidInput(
            "one bound pair per parameter required".into(),
        ));
    }
    if n < k {
        return Err(Error::Insufficient(format!(
            "{n} data points for {k} parameters"
        )));
    }
    for (i, (p, (lo, hi))) in init.iter().zip(bounds).enumerate() {
        if !(lo <= p && p <= hi) {
            return Err(Error::OutOfRange {
                name: format!("initial parameter {i}"),
                value: *p,
                lo: *lo,
                hi: *hi,
            });
        }
    }
    let w: Vec<f64> = match weighting {
        Weighting::InverseVariance => {
            if data.sigma.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidInput(
                    "inverse-variance weighting needs positive sigmas".into(),
                ));
            }
            data.sigma.iter().map(|s| 1.0 / (s * s)).collect()
        }
        Weighting::Uniform => vec![1.0; n],
    };
    let clamp = |p: &mut DVector<f64>| {
        for i in 0..k {
            p[i] = p[i].clamp(bounds[i].0, bounds[i].1);
        }
    };
    let cost = |p: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let r = data.estimate[i] - model.eval(data.x[i], p.as_slice());
                w[i] * r * r
            })
            .sum()
    };
    let normal_eq = |p: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(k, k);
        let mut g = DVector::zeros(k);
        for i in 0..n {
            let jr = model.gradient(data.x[i], p.as_slice());
            let r = data.estimate[i] - model.eval(data.x[i], p.as_slice());
            for u in 0..k {
                g[u] += w[i] * jr[u] * r;
                for v in 0..k {
                    a[(u, v)] += w[i] * jr[u] * jr[v];
                }
            }
        }
        (a, g)
    };

    let mut p = DVector::from_column_slice(init);
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, g) = normal_eq(&p);
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut damped = a.clone();
            for u in 0..k {
                damped[(u, u)] += lambda * a[(u, u)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &p + &step;
            clamp(&mut trial);
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let moved = (&trial - &p).norm();
                p = trial;
                let small =
                    moved <= STEP_TOLERANCE * p.norm().max(STEP_TOLERANCE) || c - ct <= 1e-15 * c;
                c = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no decrease possible at any damping: stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    let (a, _) = normal_eq(&p);
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("JᵀWJ is singular at the solution".into()))?;
    let scale = match weighting {
        Weighting::InverseVariance => 1.0,
        Weighting::Uniform => {
            if n > k {
                c / (n - k) as f64
            } else {
                0.0
            }
        }
    };
    let covariance = (0..k)
        .map(|i| (0..k).map(|j| inv[(i, j)] * scale).collect())
        .collect();
    Ok(FitResult {
        names: model.names(),
        parameters: p.iter().copied().collect(),
        covariance,
        residual_norm: c.sqrt(),
        converged,
        iterations,
    })
}

/// A·/(1 + ((x − x₀)/w)²) + c with x in MHz; w is the half width (κ/2π for a cavity).
pub struct Lorentzian;

impl Model for Lorentzian {
    fn names(&self) -> Vec<String> {
        ["amplitude", "center_mhz", "half_width_mhz", "offset"]
            .map(String::from)
            .to_vec()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let u = (x - p[1]) / p[2];
        p[0] / (1.0 + u * u) + p[3]
    }

    fn gradient(&self, x: f64, p: &[f64]) -> Vec<f64> {
        let u = (x - p[1]) / p[2];
        let d = 1.0 / (1.0 + u * u);
        let common = 2.0 * p[0] * u * d * d / p[2];
        vec![d, common, common * u, 1.0]
    }
}

/// Normal-mode transmission with fixed κ and γ; parameters (amplitude, g/2π, centre) in MHz.
pub struct NormalMode {
    pub kappa: f64,
    pub gamma: f64,
}

impl Model for NormalMode {
    fn names(&self) -> Vec<String> {
        ["amplitude", "g_mhz", "center_mhz"]
            .map(String::from)
            .to_vec()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let sp = SpectrumParams {
            kappa: self.kappa,
            g: 2.0 * PI * p[1] * 1e6,
            gamma: self.gamma,
            atom_detuning: p[2] * 1e6,
            cavity_detuning: p[2] * 1e6,
        };
        p[0] * transmission_at(SpectrumModel::NormalMode, &sp, x * 1e6)
    }
}

/// Peak-at-maximum initial guess and Lorentzian fit of an empty-cavity spectrum (x in MHz).
pub fn fit_lorentzian(data: &ScanResult, weighting: Weighting) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Empty("spectrum".into()));
    }
    let (imax, ymax) =
        data.estimate
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |a, (i, v)| if v > a.1 { (i, v) } else { a },
            );
    let above: Vec<f64> = data
        .x
        .iter()
        .zip(&data.estimate)
        .filter(|(_, y)| **y >= 0.5 * ymax)
        .map(|(x, _)| *x)
        .collect();
    let span = data.x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - data.x.iter().copied().fold(f64::INFINITY, f64::min);
    let hw = ((above.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - above.iter().copied().fold(f64::INFINITY, f64::min))
        / 2.0)
        .max(span * 1e-3);
    nls_fit(
        &Lorentzian,
        data,
        &[ymax, data.x[imax], hw, 0.0],
        &[
            (0.0, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
            (1e-9, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        ],
        weighting,
    )
}

/// Normal-mode fit of a coupled-system spectrum (x in MHz) with κ, γ fixed.
pub fn fit_normal_mode(
    data: &ScanResult,
    kappa: f64,
    gamma: f64,
    g_guess_mhz: f64,
    weighting: Weighting,
) -> Result<FitResult> {
    let ymax = data
        .estimate
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let model = NormalMode { kappa, gamma };
    let probe = model.eval(g_guess_mhz, &[1.0, g_guess_mhz, 0.0]).max(1e-6);
    nls_fit(
        &model,
        data,
        &[ymax / probe, g_guess_mhz, 0.0],
        &[
            (0.0, f64::INFINITY),
            (0.0, f64::INFINITY),
            (f64::NEG_INFINITY, f64::INFINITY),
        ],
        weighting,
    )
}

struct StorageCurve {
    base: ModelParams,
    g_q: f64,
    g_h: f64,
}

impl Model for StorageCurve {
    fn names(&self) -> Vec<String> {
        ["mu_fc_sq", "mu_rc_sq", "coupling_reduction"]
            .map(String::from)
            .to_vec()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let m = ModelParams {
            mu_fc_sq: p[0],
            mu_rc_sq: p[1],
            g_q: self.g_q * p[2],
            g_h: self.g_h * p[2],
            ..self.base
        };
        m.efficiencies_at(x * 1e6).0
    }
}

struct HeraldCurve {
    base: ModelParams,
}

impl Model for HeraldCurve {
    fn names(&self) -> Vec<String> {
        vec!["eta".into()]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        ModelParams {
            eta: p[0],
            ..self.base
        }
        .efficiencies_at(x * 1e6)
        .1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningFit {
    /// (μ_FC², μ_RC², coupling_reduction, η); the η rows include the
    /// propagated storage-stage uncertainty.
    pub combined: FitResult,
    pub storage_stage: FitResult,
    pub herald_stage: FitResult,
}

fn check_detuning_scan(s: &ScanResult, what: &str) -> Result<()> {
    let mut xs = s.x.clone();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::NonIdentifiable(format!(
            "{what} scan has a single detuning"
        )));
    }
    if !s.x.iter().any(|x| x.abs() < 1e-9) || xs.len() < 4 {
        return Err(Error::Insufficient(format!(
            "{what} scan must contain Δ = 0 and at least three other detunings"
        )));
    }
    Ok(())
}

/// Two-stage fit: storage curve → (μ_FC², μ_RC², reduction); heralding curve
/// → η with everything else frozen. Scans have x in MHz. Rates, bare couplings
/// and the initial guesses come from `config`.
pub fn fit_detuning_model(
    storage: &ScanResult,
    heralding: &ScanResult,
    config: &SystemConfig,
    weighting: Weighting,
) -> Result<DetuningFit> {
    check_detuning_scan(storage, "storage")?;
    check_detuning_scan(heralding, "heralding")?;
    let base = ModelParams::from_config(config);
    let sc = StorageCurve {
        base,
        g_q: config.g_qubit,
        g_h: config.g_herald,
    };
    let init = [config.mu_fc_sq, config.mu_rc_sq, config.coupling_reduction];
    let s1 = nls_fit(
        &sc,
        storage,
        &init,
        &[(1e-6, 1.0), (1e-6, 1.0), (1e-3, 1.0)],
        weighting,
    )?;
    let frozen_at = |t: &[f64]| ModelParams {
        mu_fc_sq: t[0],
        mu_rc_sq: t[1],
        g_q: config.g_qubit * t[2],
        g_h: config.g_herald * t[2],
        ..base
    };
    let hc = HeraldCurve {
        base: frozen_at(&s1.parameters),
    };
    let s2 = nls_fit(
        &hc,
        heralding,
        &[config.eta_herald.clamp(1e-6, 1.0)],
        &[(1e-6, 1.0)],
        weighting,
    )?;

    // η̂ is linear in the data for fixed storage parameters; its sensitivity to
    // them carries the storage-stage covariance into η.
    let w: Vec<f64> = match weighting {
        Weighting::InverseVariance => heralding.sigma.iter().map(|s| 1.0 / (s * s)).collect(),
        Weighting::Uniform => vec![1.0; heralding.len()],
    };
    let eta_hat = |t: &[f64]| {
        let m = ModelParams {
            eta: 1.0,
            ..frozen_at(t)
        };
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..heralding.len() {
            let shape = m.efficiencies_at(heralding.x[i] * 1e6).1;
            num += w[i] * heralding.estimate[i] * shape;
            den += w[i] * shape * shape;
        }
        num / den
    };
    let mut grad = [0.0; 3];
    let mut t = s1.parameters.clone();
    for (i, g) in grad.iter_mut().enumerate() {
        let h = 1e-6 * t[i].abs().max(1e-6);
        let p = t[i];
        t[i] = p + h;
        let up = eta_hat(&t);
        t[i] = p - h;
        let down = eta_hat(&t);
        t[i] = p;
        *g = (up - down) / (2.0 * h);
    }
    let mut cov = vec![vec![0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = s1.covariance[i][j];
        }
        let c: f64 = (0..3).map(|j| s1.covariance[i][j] * grad[j]).sum();
        cov[i][3] = c;
        cov[3][i] = c;
    }
    cov[3][3] = s2.covariance[0][0] + (0..3).map(|i| grad[i] * cov[i][3]).sum::<f64>();
    let combined = FitResult {
        names: ["mu_fc_sq", "mu_rc_sq", "coupling_reduction", "eta"]
            .map(String::from)
            .to_vec(),
        parameters: vec![
            s1.parameters[0],
            s1.parameters[1],
            s1.parameters[2],
            s2.parameters[0],
        ],
        covariance: cov,
        residual_norm: (s1.residual_norm.powi(2) + s2.residual_norm.powi(2)).sqrt(),
        converged: s1.converged && s2.converged,
        iterations: s1.iterations + s2.iterations,
    };
    Ok(DetuningFit {
        combined,
        storage_stage: s1,
        herald_stage: s2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceKind {
    /// ½(1 + V₀·e^{−(t/τ)²}·cos(2πf(t − t₀))).
    Oscillating,
    /// F_∞ + A·e^{−(t/τ)²}.
    Decaying,
}

/// ½(1 + V₀ e^{−(t/τ)²} cos(2πf(t − t₀))), t in µs, f in MHz.
pub struct Oscillation;

impl Model for Oscillation {
    fn names(&self) -> Vec<String> {
        ["visibility", "frequency_mhz", "t0_us", "tau_us"]
            .map(String::from)
            .to_vec()
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        0.5 * (1.0 + p[0] * (-(t / p[3]).powi(2)).exp() * (2.0 * PI * p[1] * (t - p[2])).cos())
    }
}

/// F_∞ + A e^{−(t/τ)²}, t in µs.
pub struct GaussianDecay;

impl Model for GaussianDecay {
    fn names(&self) -> Vec<String> {
        ["f_inf", "amplitude", "tau_us"].map(String::from).to_vec()
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * (-(t / p[2]).powi(2)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceFit {
    pub kind: CoherenceKind,
    pub fit: FitResult,
    /// Time (µs) at which the fitted curve falls to the classical bound.
    pub threshold_crossing: Option<Estimate>,
}

/// Least-squares periodogram of 2F − 1: (frequency in MHz, amplitude) of the best sinusoid.
fn periodogram(t: &[f64], y: &[f64], f_max: f64, span: f64) -> (f64, f64) {
    let n_f = ((f_max * span) * 20.0).ceil().max(50.0) as usize;
    let mut best = (0.0, 0.0);
    for i in 1..=n_f {
        let f = f_max * i as f64 / n_f as f64;
        let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ti, yi) in t.iter().zip(y) {
            let (s, c) = (2.0 * PI * f * ti).sin_cos();
            cc += c * c;
            ss += s * s;
            cs += c * s;
            yc += yi * c;
            ys += yi * s;
        }
        let det = cc * ss - cs * cs;
        if det.abs() < 1e-12 {
            continue;
        }
        let a = (yc * ss - ys * cs) / det;
        let b = (ys * cc - yc * cs) / det;
        let amp = (a * a + b * b).sqrt();
        if amp > best.1 {
            best = (f, amp);
        }
    }
    best
}

/// Fits fidelity-vs-storage-time data (x in µs) and reports the threshold crossing
/// of `bound` for the decaying kind.
pub fn fit_coherence(
    data: &ScanResult,
    kind: CoherenceKind,
    bound: f64,
    weighting: Weighting,
) -> Result<CoherenceFit> {
    let t = &data.x;
    let span = t.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - t.iter().copied().fold(f64::INFINITY, f64::min);
    match kind {
        CoherenceKind::Oscillating => {
            if data.len() < 6 {
                return Err(Error::Insufficient(format!(
                    "oscillating fit needs 6 points, got {}",
                    data.len()
                )));
            }
            let mut xs = t.clone();
            xs.sort_by(f64::total_cmp);
            let mut gaps: Vec<f64> = xs
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|g| *g > 0.0)
                .collect();
            gaps.sort_by(f64::total_cmp);
            let nyquist = 0.5 / gaps.get(gaps.len() / 2).copied().unwrap_or(span);
            let y: Vec<f64> = data.estimate.iter().map(|f| 2.0 * f - 1.0).collect();
            let spread = {
                let m = y.iter().sum::<f64>() / y.len() as f64;
                (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
            };
            let noise = data.sigma.iter().map(|s| 2.0 * s).sum::<f64>() / data.len() as f64;
            let (f0, amp) = periodogram(t, &y, nyquist, span);
            if spread < 1e-9 || amp < 1e-9 || amp < 2.0 * noise / (data.len() as f64).sqrt() {
                return Err(Error::NonIdentifiable(format!(
                    "visibility {amp:.3e} consistent with zero; oscillation frequency not identifiable"
                )));
            }
            if f0 >= 0.95 * nyquist {
                return Err(Error::NonIdentifiable(format!(
                    "oscillation at {f0:.3} MHz not resolved by the time grid (Nyquist {nyquist:.3} MHz)"
                )));
            }
            // phase estimate from the first point near the maximum
            let imax = y
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |a, (i, v)| if v > a.1 { (i, v) } else { a },
                )
                .0;
            let period = 1.0 / f0;
            let t0 = t[imax].rem_euclid(period);
            let init = [amp.min(1.0), f0, t0, (10.0 * span).max(1e-3)];
            let fit = nls_fit(
                &Oscillation,
                data,
                &init,
                &[
                    (0.0, 1.0),
                    (0.0, 2.0 * nyquist),
                    (f64::NEG_INFINITY, f64::INFINITY),
                    (1e-6, 1e6),
                ],
                weighting,
            )?;
            Ok(CoherenceFit {
                kind,
                fit,
                threshold_crossing: None,
            })
        }
        CoherenceKind::Decaying => {
            if data.len() < 3 {
                return Err(Error::Insufficient("decay fit needs 3 points".into()));
            }
            let first = data.estimate[t
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |a, (i, v)| if v < a.1 { (i, v) } else { a },
                )
                .0];
            let last = data.estimate[t
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |a, (i, v)| if v > a.1 { (i, v) } else { a },
                )
                .0];
            let init = [
                last.clamp(0.0, 1.0),
                (first - last).clamp(0.0, 1.0),
                (0.5 * span).max(1e-3),
            ];
            let fit = nls_fit(
                &GaussianDecay,
                data,
                &init,
                &[(0.0, 1.0), (0.0, 1.0), (1e-6, 1e6)],
                weighting,
            )?;
            let crossing_of = |p: &[f64]| -> Option<f64> {
                let r = (bound - p[0]) / p[1];
                (r > 0.0 && r < 1.0).then(|| p[2] * (-r.ln()).sqrt())
            };
            let threshold_crossing = crossing_of(&fit.parameters).map(|tc| {
                // delta method with a finite-difference gradient
                let p = &fit.parameters;
                let mut q = p.clone();
                let grad: Vec<f64> = (0..3)
                    .map(|i| {
                        let h = 1e-6 * p[i].abs().max(1e-6);
                        q[i] = p[i] + h;
                        let a = crossing_of(&q).unwrap_or(tc);
                        q[i] = p[i] - h;
                        let b = crossing_of(&q).unwrap_or(tc);
                        q[i] = p[i];
                        (a - b) / (2.0 * h)
                    })
                    .collect();
                let mut var = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        var += grad[i] * fit.covariance[i][j] * grad[j];
                    }
                }
                Estimate::new(tc, var.max(0.0).sqrt())
            });
            Ok(CoherenceFit {
                kind,
                fit,
                threshold_crossing,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;
    use crate::storage::efficiency_curves;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn lorentz_data(noise: f64, seed: u64) -> (ScanResult, [f64; 4]) {
        let truth = [1.0, 2.5, 31.7, 0.02];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..81).map(|i| -120.0 + 3.0 * i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|x| {
                Lorentzian.eval(*x, &truth)
                    + if noise > 0.0 {
                        Normal::new(0.0, noise).unwrap().sample(&mut rng)
                    } else {
                        0.0
                    }
            })
            .collect();
        let s = vec![noise.max(1e-3); x.len()];
        (
            ScanResult::new("t", "detuning_MHz", x, y, s).unwrap(),
            truth,
        )
    }

    #[test]
    fn exact_recovery_without_noise() {
        let (d, truth) = lorentz_data(0.0, 0);
        let f = fit_lorentzian(&d, Weighting::Uniform).unwrap();
        assert!(f.converged);
        for i in 0..4 {
            assert!(
                (f.parameters[i] - truth[i]).abs() < 1e-8 * truth[i].abs().max(1.0),
                "{:?}",
                f.parameters
            );
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (d, _) = lorentz_data(0.01, 3);
        let f = fit_lorentzian(&d, Weighting::InverseVariance).unwrap();
        for x in [-50.0, 0.0, 2.5, 40.0] {
            let a = Lorentzian.gradient(x, &f.parameters);
            let n = finite_difference_gradient(&Lorentzian, x, &f.parameters);
            for i in 0..4 {
                assert!(
                    (a[i] - n[i]).abs() <= 1e-4 * a[i].abs().max(1e-8),
                    "x {x} i {i}: {} vs {}",
                    a[i],
                    n[i]
                );
            }
        }
    }

    #[test]
    fn noisy_fits_cover_truth() {
        let mut inside = 0;
        for seed in 0..40 {
            let (d, truth) = lorentz_data(0.02, seed);
            let f = fit_lorentzian(&d, Weighting::InverseVariance).unwrap();
            if (0..4).all(|i| (f.parameters[i] - truth[i]).abs() < 3.0 * f.sigma(i)) {
                inside += 1;
            }
        }
        assert!(inside >= 36, "{inside}/40 within 3σ");
    }

    #[test]
    fn permutation_and_sigma_scale_invariance() {
        let (d, _) = lorentz_data(0.02, 9);
        let f = fit_lorentzian(&d, Weighting::InverseVariance).unwrap();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.reverse();
        idx.swap(3, 40);
        let perm = ScanResult::new(
            "p",
            "detuning_MHz",
            idx.iter().map(|i| d.x[*i]).collect(),
            idx.iter().map(|i| d.estimate[*i]).collect(),
            idx.iter().map(|i| d.sigma[*i]).collect(),
        )
        .unwrap();
        let g = fit_lorentzian(&perm, Weighting::InverseVariance).unwrap();
        let scaled = ScanResult::new(
            "s",
            "detuning_MHz",
            d.x.clone(),
            d.estimate.clone(),
            d.sigma.iter().map(|s| 3.0 * s).collect(),
        )
        .unwrap();
        let h = fit_lorentzian(&scaled, Weighting::InverseVariance).unwrap();
        for i in 0..4 {
            assert!(
                (f.parameters[i] - g.parameters[i]).abs() < 1e-9 * f.parameters[i].abs().max(1.0)
            );
            assert!(
                (f.parameters[i] - h.parameters[i]).abs() < 1e-7 * f.parameters[i].abs().max(1.0)
            );
        }
    }

    #[test]
    fn bounds_and_preconditions() {
        let (d, _) = lorentz_data(0.0, 0);
        assert!(nls_fit(
            &Lorentzian,
            &d,
            &[1.0, 0.0, 30.0, 0.0],
            &[(0.0, 0.5), (-1e3, 1e3), (1.0, 1e3), (-1.0, 1.0)],
            Weighting::Uniform
        )
        .is_err());
        let f = nls_fit(
            &Lorentzian,
            &d,
            &[0.4, 0.0, 30.0, 0.0],
            &[(0.0, 0.5), (-1e3, 1e3), (1.0, 1e3), (-1.0, 1.0)],
            Weighting::Uniform,
        )
        .unwrap();
        assert!(f.parameters[0] <= 0.5);
        let tiny =
            ScanResult::new("t", "x", vec![0.0, 1.0], vec![1.0, 0.5], vec![0.1, 0.1]).unwrap();
        assert!(fit_lorentzian(&tiny, Weighting::Uniform).is_err());
    }

    #[test]
    fn normal_mode_recovers_coupling() {
        let cfg = reference_config();
        let (kappa, gamma) = (cfg.herald_cavity.kappa, cfg.gamma());
        let model = NormalMode { kappa, gamma };
        let truth = [1.0, 17.8, 0.0];
        let x: Vec<f64> = (0..121).map(|i| -150.0 + 2.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| model.eval(*x, &truth)).collect();
        let d = ScanResult::new("nm", "detuning_MHz", x, y, vec![1e-3; 121]).unwrap();
        let f = fit_normal_mode(&d, kappa, gamma, 12.0, Weighting::Uniform).unwrap();
        assert!((f.parameters[1] - 17.8).abs() < 1e-6, "{:?}", f.parameters);
    }

    fn detuning_scans(cfg: &SystemConfig) -> (ScanResult, ScanResult) {
        let grid: Vec<f64> = [-150.0, -100.0, -60.0, -30.0, 0.0, 30.0, 60.0, 100.0, 150.0]
            .iter()
            .map(|m| m * 1e6)
            .collect();
        let (mut s, mut h) = efficiency_curves(cfg, &grid).unwrap();
        s.sigma = vec![0.03; grid.len()];
        h.sigma = vec![0.01; grid.len()];
        (s, h)
    }

    #[test]
    fn detuning_fit_exact_on_noise_free_curves() {
        let truth = reference_config();
        let (s, h) = detuning_scans(&truth);
        let start = truth
            .modified(|d| {
                d.overlaps.mu_fc_sq = 0.7;
                d.overlaps.mu_rc_sq = 0.9;
                d.coupling.reduction = 0.5;
                d.detection.eta_herald = 0.25;
                d.detection.eta_tolerance = 1.0;
            })
            .unwrap();
        let f = fit_detuning_model(&s, &h, &start, Weighting::InverseVariance).unwrap();
        let want = [0.8, 0.95, 0.6, 0.3];
        for i in 0..4 {
            assert!(
                (f.combined.parameters[i] - want[i]).abs() < 1e-5,
                "{:?}",
                f.combined.parameters
            );
        }
    }

    #[test]
    fn storage_stage_ignores_eta() {
        let truth = reference_config();
        let (s, h) = detuning_scans(&truth);
        let a = fit_detuning_model(&s, &h, &truth, Weighting::InverseVariance).unwrap();
        let mut h2 = h.clone();
        h2.estimate.iter_mut().for_each(|v| *v *= 0.5);
        let b = fit_detuning_model(&s, &h2, &truth, Weighting::InverseVariance).unwrap();
        assert_eq!(a.storage_stage.parameters, b.storage_stage.parameters);
        assert!((b.combined.parameters[3] - 0.15).abs() < 1e-5);
        let single = ScanResult::new(
            "s",
            "detuning_MHz",
            vec![0.0; 4],
            vec![0.5; 4],
            vec![0.03; 4],
        )
        .unwrap();
        assert!(matches!(
            fit_detuning_model(&single, &h, &truth, Weighting::InverseVariance),
            Err(Error::NonIdentifiable(_))
        ));
    }

    #[test]
    fn coherence_fits() {
        let t: Vec<f64> = (0..40).map(|i| 0.5 + i as f64 * 1.0).collect();
        let truth = [0.9, 0.062, 0.0, 60.0];
        let y: Vec<f64> = t.iter().map(|x| Oscillation.eval(*x, &truth)).collect();
        let d = ScanResult::new("c", "storage_time_us", t.clone(), y, vec![0.01; 40]).unwrap();
        let f = fit_coherence(
            &d,
            CoherenceKind::Oscillating,
            0.69,
            Weighting::InverseVariance,
        )
        .unwrap();
        assert!(
            (f.fit.parameters[1] - 0.062).abs() < 1e-6,
            "{:?}",
            f.fit.parameters
        );

        let flat = ScanResult::new(
            "c",
            "storage_time_us",
            t.clone(),
            vec![0.8; 40],
            vec![0.01; 40],
        )
        .unwrap();
        assert!(matches!(
            fit_coherence(
                &flat,
                CoherenceKind::Oscillating,
                0.69,
                Weighting::InverseVariance
            ),
            Err(Error::NonIdentifiable(_))
        ));

        let dec = [0.5, 0.45, 30.0];
        let y: Vec<f64> = t.iter().map(|x| GaussianDecay.eval(*x, &dec)).collect();
        let d = ScanResult::new("c", "storage_time_us", t, y, vec![0.01; 40]).unwrap();
        let f = fit_coherence(
            &d,
            CoherenceKind::Decaying,
            0.69,
            Weighting::InverseVariance,
        )
        .unwrap();
        let tc = f.threshold_crossing.unwrap();
        let want = 30.0 * (-(0.19f64 / 0.45).ln()).sqrt();
        assert!((tc.value - want).abs() < 1e-4, "{tc:?} vs {want}");
        assert!(tc.sigma > 0.0);
    }
}
