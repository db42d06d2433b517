//! Estimators over click datasets: histograms, g², herald conditioning,
//! transfer-probability estimation, truncation sweeps and confidence intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::dynamics::readout::READ_TAIL;
use crate::dynamics::write::WRITE_TAIL;
use crate::dynamics::{ClickDataset, TrialRecord};
use crate::error::{Error, Result};
use crate::polarization::{Axial, Basis};
use crate::scan::ScanResult;
use crate::storage::{herald_single_photon, storage_from_transfer};

/// One-sided 68 % upper bound on a rate with zero observed events is −ln(0.32)/N.
pub const ZERO_COUNT_BOUND: f64 = 1.139;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Herald,
    Readout,
}

impl Stream {
    fn time(self, t: &TrialRecord) -> Option<f64> {
        match self {
            Stream::Herald => t.herald_click.map(|c| c.time),
            Stream::Readout => t.readout_click.map(|c| c.time),
        }
    }

    /// Length of the acquisition window following the pulse start.
    pub fn window(self, config: &SystemConfig) -> f64 {
        match self {
            Stream::Herald => config.protocol.write.duration + WRITE_TAIL,
            Stream::Readout => config.protocol.read.duration + READ_TAIL,
        }
    }
}

/// Value with a 68 % uncertainty; `upper_bound` is set for zero-count estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
    pub upper_bound: Option<f64>,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self {
            value,
            sigma,
            upper_bound: None,
        }
    }
}

/// Counts of read-out clicks indexed by input, measurement basis and outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountTable {
    /// counts[input][basis][outcome], outcome 0 is the first state of the basis.
    pub counts: [[[u64; 2]; 3]; 6],
}

impl CountTable {
    pub fn from_dataset(ds: &ClickDataset) -> Self {
        Self::from_trials(ds.trials.iter())
    }

    pub fn from_trials<'a>(trials: impl Iterator<Item = &'a TrialRecord>) -> Self {
        let mut t = Self::default();
        for r in trials {
            if let Some(c) = r.readout_click {
                t.add(r.input, r.basis, c.outcome, 1);
            }
        }
        t
    }

    pub fn add(&mut self, input: Axial, basis: Basis, outcome: Axial, n: u64) {
        let o = basis
            .outcomes()
            .iter()
            .position(|x| *x == outcome)
            .expect("outcome belongs to basis");
        self.counts[input.index()][basis.index()][o] += n;
    }

    pub fn get(&self, input: Axial, basis: Basis) -> [u64; 2] {
        self.counts[input.index()][basis.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }

    /// (N_∥, N_⊥) for an input measured in its own basis.
    pub fn parallel_perpendicular(&self, input: Axial) -> (u64, u64) {
        let [a, b] = self.get(input, input.basis());
        if input.basis().outcomes()[0] == input {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Every (input, basis) cell has at least one count.
    pub fn is_complete(&self) -> bool {
        self.counts.iter().flatten().all(|c| c[0] + c[1] > 0)
    }

    pub fn scaled(&self, factor: u64) -> Self {
        let mut t = *self;
        for c in t.counts.iter_mut().flatten().flatten() {
            *c *= factor;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliEstimate {
    pub p: f64,
    pub sigma: f64,
    /// p is 0 or 1, so the normal approximation gives zero width.
    pub degenerate: bool,
}

/// p = N_∥/(N_∥ + N_⊥) with the normal-approximation 68 % width.
pub fn bernoulli_ci(n_parallel: u64, n_perpendicular: u64) -> Result<BernoulliEstimate> {
    let n = n_parallel + n_perpendicular;
    if n == 0 {
        return Err(Error::Empty("no counts for Bernoulli estimate".into()));
    }
    let p = n_parallel as f64 / n as f64;
    Ok(BernoulliEstimate {
        p,
        sigma: (p * (1.0 - p) / n as f64).sqrt(),
        degenerate: n_parallel == 0 || n_perpendicular == 0,
    })
}

/// Average over inputs of the per-input Bernoulli fidelity; inputs without counts are skipped.
pub fn average_fidelity(table: &CountTable) -> Result<Estimate> {
    let mut vals = Vec::new();
    for a in Axial::ALL {
        let (p, q) = table.parallel_perpendicular(a);
        if p + q > 0 {
            vals.push(bernoulli_ci(p, q)?);
        }
    }
    if vals.is_empty() {
        return Err(Error::Insufficient(
            "no read-out clicks in the input bases".into(),
        ));
    }
    let n = vals.len() as f64;
    Ok(Estimate::new(
        vals.iter().map(|v| v.p).sum::<f64>() / n,
        vals.iter().map(|v| v.sigma * v.sigma).sum::<f64>().sqrt() / n,
    ))
}

/// Clicks per trial in bins of `bin_width` over the acquisition window of the stream.
pub fn histogram(ds: &ClickDataset, stream: Stream, bin_width: f64) -> Result<ScanResult> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no trials".into()));
    }
    let window = stream.window(&ds.system_config()?);
    let n_bins = (window / bin_width).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    for t in &ds.trials {
        if let Some(x) = stream.time(t) {
            let b = ((x / bin_width).floor() as usize).min(n_bins - 1);
            counts[b] += 1;
        }
    }
    let n = ds.len() as f64;
    ScanResult::new(
        format!("{}_histogram", stream_label(stream)),
        "time_ns",
        (0..n_bins)
            .map(|b| (b as f64 + 0.5) * bin_width * 1e9)
            .collect(),
        counts.iter().map(|c| *c as f64 / n).collect(),
        counts.iter().map(|c| (*c as f64).sqrt() / n).collect(),
    )
}

fn stream_label(s: Stream) -> &'static str {
    match s {
        Stream::Herald => "herald",
        Stream::Readout => "readout",
    }
}

/// Second-order correlation of one click stream on the concatenated timeline
/// (click at trial k, time t ↦ k·T + t with T the trial period).
///
/// Observed ordered pair counts per lag bin are divided by the count expected
/// when every click is independently reassigned to a uniformly random trial
/// (the shuffled-trial baseline), which keeps the in-trial time distribution
/// and removes all correlations between clicks.
pub fn g2(ds: &ClickDataset, stream: Stream, max_lag: f64, bin_width: f64) -> Result<ScanResult> {
    if !(bin_width > 0.0) || !(max_lag >= 0.0) {
        return Err(Error::InvalidInput(
            "g2 needs positive bin width and non-negative max lag".into(),
        ));
    }
    let period = ds.system_config()?.protocol.trial_period;
    g2_clicks(
        &clicks(ds, stream),
        ds.len() as u64,
        period,
        max_lag,
        bin_width,
        stream_label(stream),
    )
}

fn clicks(ds: &ClickDataset, stream: Stream) -> Vec<(u64, f64)> {
    ds.trials
        .iter()
        .filter_map(|t| stream.time(t).map(|x| (t.trial_id, x)))
        .collect()
}

/// g² from (trial index, in-trial time) pairs; trial indices must lie in 0..n_trials
/// up to a common offset.
pub fn g2_clicks(
    clicks: &[(u64, f64)],
    n_trials: u64,
    period: f64,
    max_lag: f64,
    bin_width: f64,
    label: &str,
) -> Result<ScanResult> {
    if clicks.len() < 2 {
        return Err(Error::Insufficient(format!(
            "g2 needs at least two clicks, got {}",
            clicks.len()
        )));
    }
    let k_max = (max_lag / bin_width).round() as i64;
    let n_lags = (2 * k_max + 1) as usize;
    let lag_bin = |d: f64| -> Option<usize> {
        let k = (d / bin_width).round() as i64;
        (k.abs() <= k_max).then_some((k + k_max) as usize)
    };
    let base = clicks.iter().map(|c| c.0).min().unwrap_or(0);
    let mut abs: Vec<f64> = clicks
        .iter()
        .map(|(k, t)| (k - base) as f64 * period + t)
        .collect();
    abs.sort_by(f64::total_cmp);
    let reach = (k_max as f64 + 0.5) * bin_width;
    let mut observed = vec![0.0; n_lags];
    for i in 0..abs.len() {
        for j in i + 1..abs.len() {
            let d = abs[j] - abs[i];
            if d > reach {
                break;
            }
            if let Some(b) = lag_bin(d) {
                observed[b] += 1.0;
            }
            if let Some(b) = lag_bin(-d) {
                observed[b] += 1.0;
            }
        }
    }

    // In-trial time density on a fine grid; expected pairs follow from its autocorrelation.
    let sub = bin_width / 20.0;
    let t_min = clicks.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let t_max = clicks.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let n_sub = ((t_max - t_min) / sub).floor() as usize + 1;
    let mut dens = vec![0.0; n_sub];
    for c in clicks {
        dens[(((c.1 - t_min) / sub).floor() as usize).min(n_sub - 1)] += 1.0;
    }
    let occupied: Vec<(usize, f64)> = dens
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, v)| *v > 0.0)
        .collect();
    let mut auto = vec![0.0; 2 * n_sub - 1];
    for &(a, va) in &occupied {
        for &(b, vb) in &occupied {
            auto[b + n_sub - 1 - a] += va * vb;
        }
    }
    let nt = n_trials as f64;
    let n_span = ((max_lag + bin_width) / period).ceil() as i64 + 1;
    let mut expected = vec![0.0; n_lags];
    for n in -n_span..=n_span {
        if n.unsigned_abs() >= n_trials {
            continue;
        }
        let w = (nt - n.abs() as f64) / (nt * nt);
        for (idx, v) in auto.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let d = n as f64 * period + (idx as f64 - (n_sub - 1) as f64) * sub;
            if let Some(b) = lag_bin(d) {
                expected[b] += w * v;
            }
        }
    }
    // remove self-pairs
    if let Some(b) = lag_bin(0.0) {
        expected[b] -= clicks.len() as f64 / nt;
    }

    let (mut x, mut est, mut sig) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..n_lags {
        if expected[b] > 1e-12 {
            x.push((b as i64 - k_max) as f64 * bin_width * 1e9);
            est.push(observed[b] / expected[b]);
            sig.push(observed[b].max(1.0).sqrt() / expected[b]);
        }
    }
    ScanResult::new(format!("{label}_g2"), "lag_ns", x, est, sig)
}

/// Trials with a herald click and the retained fraction.
pub fn condition_on_herald(ds: &ClickDataset) -> (ClickDataset, f64) {
    let sub = ds.filtered(|t| t.heralded());
    let frac = if ds.is_empty() {
        0.0
    } else {
        sub.len() as f64 / ds.len() as f64
    };
    (sub, frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimates {
    /// Transfer probability per coherent write pulse.
    pub p_transfer: Estimate,
    /// Herald-click probability per coherent write pulse.
    pub p_herald: Estimate,
    /// Single-photon storage efficiency.
    pub p_storage: Estimate,
    /// Single-photon heralding efficiency (including detection).
    pub p_herald_single: Estimate,
    /// Transfer probability from read-out click rates, when both datasets were read out.
    pub p_transfer_readout: Option<Estimate>,
    pub mean_photon_number: f64,
}

fn rate(k: usize, n: usize) -> Estimate {
    let p = k as f64 / n as f64;
    Estimate::new(p, (p * (1.0 - p) / n as f64).sqrt())
}

fn ratio(a: Estimate, b: Estimate) -> Estimate {
    let v = a.value / b.value;
    let rel = ((a.sigma / a.value).powi(2) + (b.sigma / b.value).powi(2)).sqrt();
    Estimate::new(
        v,
        if a.value > 0.0 {
            v * rel
        } else {
            a.sigma / b.value
        },
    )
}

/// Transfer and heralding probabilities from a weak-pulse dataset normalised by
/// a reference dataset whose strong pulses transfer essentially all population.
pub fn estimate_probabilities(
    ds: &ClickDataset,
    reference: &ClickDataset,
) -> Result<ProbabilityEstimates> {
    if ds.is_empty() || reference.is_empty() {
        return Err(Error::Empty(
            "estimate_probabilities needs non-empty datasets".into(),
        ));
    }
    let nbar = ds
        .plan
        .write_nbar
        .unwrap_or(ds.system_config()?.protocol.write.mean_photon_number);
    let n = ds.len();
    let heralds = ds.trials.iter().filter(|t| t.heralded()).count();
    let ref_heralds = reference.trials.iter().filter(|t| t.heralded()).count();
    if ref_heralds == 0 {
        return Err(Error::Insufficient(
            "reference dataset has no herald clicks".into(),
        ));
    }
    let p_h = rate(heralds, n);
    let r_ref = rate(ref_heralds, reference.len());

    let readout_pair = {
        let k = ds
            .trials
            .iter()
            .filter(|t| t.readout_click.is_some())
            .count();
        let kr = reference
            .trials
            .iter()
            .filter(|t| t.readout_click.is_some())
            .count();
        (kr > 0
            && ds.plan.readout == crate::dynamics::ReadoutMode::All
            && reference.plan.readout == ds.plan.readout)
            .then(|| ratio(rate(k, n), rate(kr, reference.len())))
    };

    if heralds == 0 {
        let ub = ZERO_COUNT_BOUND / n as f64;
        let zero = Estimate {
            value: 0.0,
            sigma: 0.0,
            upper_bound: Some(ub),
        };
        let ub_t = ub / r_ref.value;
        return Ok(ProbabilityEstimates {
            p_transfer: Estimate {
                upper_bound: Some(ub_t.min(1.0)),
                ..zero
            },
            p_herald: zero,
            p_storage: Estimate {
                upper_bound: Some(storage_from_transfer(nbar, ub_t.min(1.0 - 1e-12))?),
                ..zero
            },
            p_herald_single: Estimate {
                upper_bound: Some(ub / nbar),
                ..zero
            },
            p_transfer_readout: readout_pair,
            mean_photon_number: nbar,
        });
    }

    let pt = ratio(p_h, r_ref);
    let pt_v = pt.value.min(1.0 - 1e-12);
    let ps = storage_from_transfer(nbar, pt_v)?;
    let dps = 1.0 / (nbar * (1.0 - pt_v));
    let ph1 = herald_single_photon(nbar, p_h.value, pt_v)?;
    // p_H1 = p_H · f(p_t)/n̄ with f = −ln(1−p_t)/p_t
    let f = ph1 * nbar / p_h.value;
    let df = (1.0 / (1.0 - pt_v) - f) / pt_v;
    let ph1_sigma = ((f * p_h.sigma).powi(2) + (p_h.value * df * pt.sigma).powi(2)).sqrt() / nbar;
    Ok(ProbabilityEstimates {
        p_transfer: pt,
        p_herald: p_h,
        p_storage: Estimate::new(ps, dps * pt.sigma),
        p_herald_single: Estimate::new(ph1, ph1_sigma),
        p_transfer_readout: readout_pair,
        mean_photon_number: nbar,
    })
}

/// Fidelity and relative read-out efficiency when only read-out clicks up to
/// each cut time (seconds after the read-pulse start) are kept.
pub fn truncation_sweep(ds: &ClickDataset, cuts: &[f64]) -> Result<(ScanResult, ScanResult)> {
    if cuts.is_empty() {
        return Err(Error::Empty("cut grid".into()));
    }
    let window = Stream::Readout.window(&ds.system_config()?);
    if let Some(c) = cuts
        .iter()
        .find(|c| !(**c > 0.0 && **c <= window * (1.0 + 1e-12)))
    {
        return Err(Error::OutOfRange {
            name: "truncation cut".into(),
            value: *c,
            lo: 0.0,
            hi: window,
        });
    }
    let with_click: Vec<&TrialRecord> = ds
        .trials
        .iter()
        .filter(|t| t.readout_click.is_some())
        .collect();
    if with_click.is_empty() {
        return Err(Error::Insufficient("no read-out clicks".into()));
    }
    let total = with_click.len() as f64;
    let (mut fid, mut fsig, mut eff, mut esig) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &c in cuts {
        let kept: Vec<&TrialRecord> = with_click
            .iter()
            .copied()
            .filter(|t| t.readout_click.is_some_and(|r| r.time <= c))
            .collect();
        let table = CountTable::from_trials(kept.iter().copied());
        match average_fidelity(&table) {
            Ok(f) => {
                fid.push(f.value);
                fsig.push(f.sigma);
            }
            Err(_) => {
                fid.push(f64::NAN);
                fsig.push(0.0);
            }
        }
        let e = kept.len() as f64 / total;
        eff.push(e);
        esig.push((e * (1.0 - e) / total).sqrt());
    }
    let x: Vec<f64> = cuts.iter().map(|c| c * 1e9).collect();
    Ok((
        ScanResult::new("truncated_fidelity", "cut_ns", x.clone(), fid, fsig)?,
        ScanResult::new("relative_efficiency", "cut_ns", x, eff, esig)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSummary {
    pub mean: f64,
    pub sigma: f64,
    /// Number of trials the atom contributed (storage-time weighting).
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    ClosedForm,
    /// Populate the pooled sample with weight-many normal draws per atom and fit a normal.
    MonteCarlo {
        seed: u64,
    },
}

/// Pools per-atom estimates into one normal (mean, total spread).
pub fn aggregate_atoms(atoms: &[AtomSummary], mode: AggregationMode) -> Result<(f64, f64)> {
    if atoms.is_empty() {
        return Err(Error::Empty("no atoms to aggregate".into()));
    }
    if let Some(a) = atoms
        .iter()
        .find(|a| !(a.sigma >= 0.0) || !(a.weight >= 0.0))
    {
        return Err(Error::InvalidInput(format!("invalid atom summary {a:?}")));
    }
    let w_tot: f64 = atoms.iter().map(|a| a.weight).sum();
    if !(w_tot > 0.0) {
        return Err(Error::InvalidInput("total weight is zero".into()));
    }
    match mode {
        AggregationMode::ClosedForm => {
            let mean = atoms.iter().map(|a| a.weight * a.mean).sum::<f64>() / w_tot;
            let second = atoms
                .iter()
                .map(|a| a.weight * (a.sigma * a.sigma + a.mean * a.mean))
                .sum::<f64>()
                / w_tot;
            Ok((mean, (second - mean * mean).max(0.0).sqrt()))
        }
        AggregationMode::MonteCarlo { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
            for a in atoms {
                let k = a.weight.round() as u64;
                let dist =
                    Normal::new(a.mean, a.sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
                for _ in 0..k {
                    let x = dist.sample(&mut rng);
                    n += 1.0;
                    s += x;
                    s2 += x * x;
                }
            }
            if n == 0.0 {
                return Err(Error::InvalidInput("weights round to zero samples".into()));
            }
            let mean = s / n;
            Ok((mean, (s2 / n - mean * mean).max(0.0).sqrt()))
        }
    }
}
