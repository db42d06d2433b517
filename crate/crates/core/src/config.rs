//! Validated system configuration and its TOML document form.
//!
//! Document keys carry their unit as a suffix (`_um`, `_ppm`, `_mhz`, `_ns`,
//! `_us`, `_mg`). Coupling rates are given as g/2π in MHz. Internally all
//! quantities are SI: metres, seconds, rad/s for rates, Hz for detunings and
//! gauss for magnetic fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cavity::decay_rates;
use crate::constants::{angular, PhysicalConstants};
use crate::error::{ensure_positive, ensure_unit_interval, Error, Result};
use crate::polarization::Axial;
use crate::pulse::{PulseEnvelope, PulseShape};

/// Name of the chain element describing escape through the outcoupling mirror.
pub const CAVITY_ESCAPE: &str = "cavity_escape";
/// Allowed absolute mismatch between a declared `cavity_escape` efficiency and κ_out/κ.
pub const ESCAPE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityDocument {
    pub length_um: f64,
    pub finesse: f64,
    pub roc_outcoupler_um: [f64; 2],
    pub roc_backmirror_um: [f64; 2],
    pub t_outcoupler_ppm: f64,
    pub t_backmirror_ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingDocument {
    pub g_qubit_mhz: f64,
    pub g_herald_mhz: f64,
    pub reduction: f64,
    pub herald_detuning_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapDocument {
    pub mu_fc_sq: f64,
    pub mu_rc_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedEfficiency {
    pub name: String,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionDocument {
    pub eta_herald: f64,
    pub eta_tolerance: f64,
    pub herald_chain: Vec<NamedEfficiency>,
    pub readout_chain: Vec<NamedEfficiency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDocument {
    pub b_field_mg: f64,
    pub b_noise_sigma_mg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityDocument {
    pub classical_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseDocument {
    /// `quasi_rectangular` or `smooth`.
    pub shape: String,
    pub duration_ns: f64,
    pub mean_photon_number: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rise_time_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarization: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolDocument {
    pub storage_time_us: f64,
    pub trial_period_us: f64,
    pub reference_mean_photon_number: f64,
    pub prep_error_f1: f64,
    pub prep_error_f2: f64,
    pub write: PulseDocument,
    pub read: PulseDocument,
}

/// Raw configuration document; see `configs/reference.toml` for a complete example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub qubit_cavity: CavityDocument,
    pub herald_cavity: CavityDocument,
    pub coupling: CouplingDocument,
    pub overlaps: OverlapDocument,
    pub detection: DetectionDocument,
    pub field: FieldDocument,
    pub fidelity: FidelityDocument,
    pub protocol: ProtocolDocument,
}

/// Geometry and derived rates of one fibre cavity (SI units).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CavityParams {
    pub length: f64,
    pub finesse: f64,
    pub roc_outcoupler: (f64, f64),
    pub roc_backmirror: (f64, f64),
    pub t_outcoupler: f64,
    pub t_backmirror: f64,
    pub kappa: f64,
    pub kappa_out: f64,
    pub fsr: f64,
}

impl CavityParams {
    pub fn new(
        length: f64,
        finesse: f64,
        roc_outcoupler: (f64, f64),
        roc_backmirror: (f64, f64),
        t_outcoupler: f64,
        t_backmirror: f64,
    ) -> Result<Self> {
        for r in [
            roc_outcoupler.0,
            roc_outcoupler.1,
            roc_backmirror.0,
            roc_backmirror.1,
        ] {
            ensure_positive("mirror radius of curvature", r)?;
        }
        if !(t_backmirror >= 0.0) {
            return Err(Error::InvalidInput(
                "back-mirror transmission must be non-negative".into(),
            ));
        }
        let rates = decay_rates(length, finesse, t_outcoupler)?;
        if rates.kappa_out > rates.kappa {
            return Err(Error::Inconsistent("kappa_out exceeds kappa".into()));
        }
        Ok(Self {
            length,
            finesse,
            roc_outcoupler,
            roc_backmirror,
            t_outcoupler,
            t_backmirror,
            kappa: rates.kappa,
            kappa_out: rates.kappa_out,
            fsr: rates.fsr,
        })
    }

    fn from_document(d: &CavityDocument) -> Result<Self> {
        Self::new(
            d.length_um * 1e-6,
            d.finesse,
            (d.roc_outcoupler_um[0] * 1e-6, d.roc_outcoupler_um[1] * 1e-6),
            (d.roc_backmirror_um[0] * 1e-6, d.roc_backmirror_um[1] * 1e-6),
            d.t_outcoupler_ppm * 1e-6,
            d.t_backmirror_ppm * 1e-6,
        )
    }

    /// Fraction of intracavity decay leaving through the outcoupler.
    pub fn escape_fraction(&self) -> f64 {
        self.kappa_out / self.kappa
    }
}

/// Timing and pulse settings of one write/store/read cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolParams {
    pub write: PulseEnvelope,
    pub read: PulseEnvelope,
    pub reference_mean_photon_number: f64,
    pub storage_time: f64,
    pub trial_period: f64,
    /// Probability that the atom starts in |1, ±1⟩ instead of |1, 0⟩.
    pub prep_error_f1: f64,
    /// Probability that the atom starts in the F = 2 manifold.
    pub prep_error_f2: f64,
}

/// Validated configuration. Fields are derived from the stored document;
/// change them through [`SystemConfig::modified`] so the two stay in sync.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub constants: PhysicalConstants,
    pub qubit_cavity: CavityParams,
    pub herald_cavity: CavityParams,
    /// Unreduced coupling of the |1,0⟩ ↔ |F'=2,±1⟩ transitions to the qubit cavity (rad/s).
    pub g_qubit: f64,
    /// Unreduced coupling of the |2,±1⟩ ↔ |F'=2,±1⟩ π transitions to the herald cavity (rad/s).
    pub g_herald: f64,
    pub coupling_reduction: f64,
    pub mu_fc_sq: f64,
    pub mu_rc_sq: f64,
    /// Herald-cavity detuning from the F=2 ↔ F'=2 transition (Hz).
    pub herald_detuning: f64,
    pub herald_chain: Vec<NamedEfficiency>,
    pub readout_chain: Vec<NamedEfficiency>,
    pub eta_herald: f64,
    pub eta_tolerance: f64,
    /// Guiding field along the quantisation axis (G).
    pub b_field: f64,
    /// Per-component spread of the quasi-static residual field (G).
    pub b_noise_sigma: f64,
    pub classical_fidelity_bound: f64,
    pub protocol: ProtocolParams,
    #[serde(skip)]
    document: ConfigDocument,
}

fn pulse_from_document(name: &str, d: &PulseDocument) -> Result<PulseEnvelope> {
    let shape = match d.shape.as_str() {
        "quasi_rectangular" => PulseShape::QuasiRectangular {
            rise_time: d.rise_time_ns.unwrap_or(0.0) * 1e-9,
        },
        "smooth" => PulseShape::Smooth {
            samples: d
                .samples
                .clone()
                .ok_or_else(|| Error::MissingField(format!("protocol.{name}.samples")))?,
        },
        other => {
            return Err(Error::Parse(format!(
                "unknown pulse shape `{other}` in protocol.{name}"
            )));
        }
    };
    let pol = match &d.polarization {
        None => Axial::R.state(),
        Some(label) => Axial::parse(label)
            .ok_or_else(|| Error::Parse(format!("unknown polarization `{label}`")))?
            .state(),
    };
    PulseEnvelope::new(shape, d.duration_ns * 1e-9, d.mean_photon_number, pol)
}

fn check_chain(label: &str, chain: &[NamedEfficiency]) -> Result<()> {
    for e in chain {
        ensure_unit_interval(&format!("{label}.{}", e.name), e.efficiency)?;
    }
    Ok(())
}

fn check_escape(chain: &[NamedEfficiency], cavity: &CavityParams, label: &str) -> Result<()> {
    if let Some(e) = chain.iter().find(|e| e.name == CAVITY_ESCAPE) {
        let derived = cavity.escape_fraction();
        if (e.efficiency - derived).abs() > ESCAPE_TOLERANCE {
            return Err(Error::Inconsistent(format!(
                "{label} cavity_escape {} differs from kappa_out/kappa = {derived:.4}",
                e.efficiency
            )));
        }
    }
    Ok(())
}

impl SystemConfig {
    pub fn from_document(doc: ConfigDocument) -> Result<Self> {
        let qubit_cavity = CavityParams::from_document(&doc.qubit_cavity)?;
        let herald_cavity = CavityParams::from_document(&doc.herald_cavity)?;
        let c = &doc.coupling;
        if !(c.g_qubit_mhz >= 0.0 && c.g_herald_mhz >= 0.0) {
            return Err(Error::InvalidInput("couplings must be non-negative".into()));
        }
        if !c.herald_detuning_mhz.is_finite() {
            return Err(Error::InvalidInput("herald detuning must be finite".into()));
        }
        ensure_unit_interval("coupling.reduction", c.reduction)?;
        let o = &doc.overlaps;
        ensure_unit_interval("overlaps.mu_fc_sq", o.mu_fc_sq)?;
        ensure_unit_interval("overlaps.mu_rc_sq", o.mu_rc_sq)?;
        let d = &doc.detection;
        ensure_unit_interval("detection.eta_herald", d.eta_herald)?;
        ensure_unit_interval("detection.eta_tolerance", d.eta_tolerance)?;
        check_chain("detection.herald_chain", &d.herald_chain)?;
        check_chain("detection.readout_chain", &d.readout_chain)?;
        check_escape(&d.herald_chain, &herald_cavity, "herald")?;
        check_escape(&d.readout_chain, &qubit_cavity, "readout")?;
        if !d.herald_chain.is_empty() {
            let product: f64 = d.herald_chain.iter().map(|e| e.efficiency).product();
            if (product - d.eta_herald).abs() > d.eta_tolerance {
                return Err(Error::Inconsistent(format!(
                    "eta_herald {} differs from herald chain product {product:.4} by more than {}",
                    d.eta_herald, d.eta_tolerance
                )));
            }
        }
        let f = &doc.field;
        if !f.b_field_mg.is_finite() {
            return Err(Error::InvalidInput("b_field must be finite".into()));
        }
        if !(f.b_noise_sigma_mg >= 0.0) {
            return Err(Error::InvalidInput(
                "b_noise_sigma must be non-negative".into(),
            ));
        }
        ensure_unit_interval("fidelity.classical_bound", doc.fidelity.classical_bound)?;
        let p = &doc.protocol;
        ensure_unit_interval("protocol.prep_error_f1", p.prep_error_f1)?;
        ensure_unit_interval("protocol.prep_error_f2", p.prep_error_f2)?;
        ensure_unit_interval(
            "protocol.prep_error_f1 + prep_error_f2",
            p.prep_error_f1 + p.prep_error_f2,
        )?;
        if !(p.storage_time_us >= 0.0) {
            return Err(Error::InvalidInput(
                "storage time must be non-negative".into(),
            ));
        }
        ensure_positive(
            "protocol.reference_mean_photon_number",
            p.reference_mean_photon_number,
        )?;
        let write = pulse_from_document("write", &p.write)?;
        let read = pulse_from_document("read", &p.read)?;
        let cycle = write.duration + p.storage_time_us * 1e-6 + read.duration;
        if !(p.trial_period_us * 1e-6 >= cycle) {
            return Err(Error::InvalidInput(format!(
                "trial period {} us shorter than one write/store/read cycle",
                p.trial_period_us
            )));
        }
        let protocol = ProtocolParams {
            write,
            read,
            reference_mean_photon_number: p.reference_mean_photon_number,
            storage_time: p.storage_time_us * 1e-6,
            trial_period: p.trial_period_us * 1e-6,
            prep_error_f1: p.prep_error_f1,
            prep_error_f2: p.prep_error_f2,
        };
        Ok(Self {
            constants: PhysicalConstants::rb87(),
            qubit_cavity,
            herald_cavity,
            g_qubit: angular(c.g_qubit_mhz * 1e6),
            g_herald: angular(c.g_herald_mhz * 1e6),
            coupling_reduction: c.reduction,
            mu_fc_sq: o.mu_fc_sq,
            mu_rc_sq: o.mu_rc_sq,
            herald_detuning: c.herald_detuning_mhz * 1e6,
            herald_chain: d.herald_chain.clone(),
            readout_chain: d.readout_chain.clone(),
            eta_herald: d.eta_herald,
            eta_tolerance: d.eta_tolerance,
            b_field: f.b_field_mg * 1e-3,
            b_noise_sigma: f.b_noise_sigma_mg * 1e-3,
            classical_fidelity_bound: doc.fidelity.classical_bound,
            protocol,
            document: doc,
        })
    }

    pub fn document(&self) -> &ConfigDocument {
        &self.document
    }

    /// Applies `edit` to a copy of the document and revalidates.
    pub fn modified(&self, edit: impl FnOnce(&mut ConfigDocument)) -> Result<Self> {
        let mut doc = self.document.clone();
        edit(&mut doc);
        Self::from_document(doc)
    }

    /// Merges a partial TOML document (same key layout) over this configuration.
    pub fn with_overrides(&self, partial: &str) -> Result<Self> {
        let overrides: toml::Table =
            toml::from_str(partial).map_err(|e| Error::Parse(e.to_string()))?;
        let mut base =
            toml::Table::try_from(&self.document).map_err(|e| Error::Parse(e.to_string()))?;
        merge(&mut base, overrides);
        let doc: ConfigDocument = base.try_into().map_err(map_de_error)?;
        Self::from_document(doc)
    }

    /// Qubit-cavity coupling including the position-averaging reduction.
    pub fn g_qubit_eff(&self) -> f64 {
        self.coupling_reduction * self.g_qubit
    }

    pub fn g_herald_eff(&self) -> f64 {
        self.coupling_reduction * self.g_herald
    }

    pub fn gamma(&self) -> f64 {
        self.constants.gamma_atom
    }

    /// Product of the herald-side chain elements after the outcoupler.
    pub fn herald_chain_after_escape(&self) -> Vec<f64> {
        chain_after_escape(&self.herald_chain)
    }

    /// Herald detection efficiency realised by the trial simulation: the derived
    /// cavity escape times the rest of the herald chain.
    pub fn herald_detection_efficiency(&self) -> f64 {
        self.herald_cavity.escape_fraction()
            * self.herald_chain_after_escape().iter().product::<f64>()
    }

    /// Copy with `eta_herald` set to [`Self::herald_detection_efficiency`].
    pub fn with_simulated_eta(&self) -> Result<Self> {
        let eta = self.herald_detection_efficiency();
        self.modified(|d| d.detection.eta_herald = eta)
    }

    pub fn readout_chain_after_escape(&self) -> Vec<f64> {
        chain_after_escape(&self.readout_chain)
    }

    pub fn emit(&self) -> String {
        emit_document(&self.document)
    }
}

fn chain_after_escape(chain: &[NamedEfficiency]) -> Vec<f64> {
    chain
        .iter()
        .filter(|e| e.name != CAVITY_ESCAPE)
        .map(|e| e.efficiency)
        .collect()
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn map_de_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return Error::MissingField(rest[..end].to_string());
        }
    }
    Error::Parse(e.to_string())
}

pub fn parse_document(text: &str) -> Result<ConfigDocument> {
    toml::from_str(text).map_err(map_de_error)
}

pub fn emit_document(doc: &ConfigDocument) -> String {
    toml::to_string(doc).expect("config document serialises")
}

/// Parses and validates a configuration document.
pub fn load_config(text: &str) -> Result<SystemConfig> {
    SystemConfig::from_document(parse_document(text)?)
}

pub fn load_config_file(path: &Path) -> Result<SystemConfig> {
    load_config(&std::fs::read_to_string(path)?)
}

/// Parameters used throughout the crate's tests and as the CLI default.
pub const REFERENCE_CONFIG: &str = include_str!("../../../configs/reference.toml");

pub fn reference_config() -> SystemConfig {
    load_config(REFERENCE_CONFIG).expect("bundled configuration is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity::{expected_coupling, resonator_mode};
    use crate::levels::{LevelScheme, Sublevel};
    use std::f64::consts::PI;

    #[test]
    fn reference_document_loads() {
        let cfg = reference_config();
        assert!((cfg.qubit_cavity.kappa / (2.0 * PI) / 31.7e6 - 1.0).abs() < 0.005);
        assert!((cfg.herald_cavity.kappa / (2.0 * PI) / 59.8e6 - 1.0).abs() < 0.005);
        assert!(cfg.qubit_cavity.kappa_out <= cfg.qubit_cavity.kappa);
    }

    #[test]
    fn round_trip_is_lossless() {
        let cfg = reference_config();
        let again = load_config(&cfg.emit()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.emit(), again.emit());
    }

    #[test]
    fn out_of_range_overlap_rejected() {
        let err = reference_config()
            .with_overrides("[overlaps]\nmu_fc_sq = 1.2")
            .unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }), "{err}");
    }

    #[test]
    fn missing_field_reported() {
        let text = REFERENCE_CONFIG.replace("finesse = 14600.0\n", "");
        assert!(matches!(load_config(&text), Err(Error::MissingField(f)) if f == "finesse"));
    }

    #[test]
    fn inconsistent_eta_rejected() {
        let err = reference_config()
            .with_overrides("[detection]\neta_herald = 0.6")
            .unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)), "{err}");
        let err = reference_config()
            .modified(|d| d.detection.herald_chain[0].efficiency = 0.5)
            .unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)), "{err}");
    }

    #[test]
    fn overrides_merge_nested_tables() {
        let cfg = reference_config()
            .with_overrides("[field]\nb_field_mg = 0.0")
            .unwrap();
        assert_eq!(cfg.b_field, 0.0);
        assert_eq!(cfg.b_noise_sigma, reference_config().b_noise_sigma);
    }

    // The bundled couplings are the waist-based cycling expectation scaled by
    // the protocol transitions' dipole amplitudes.
    #[test]
    fn bundled_couplings_follow_geometry() {
        let cfg = reference_config();
        let scheme = LevelScheme::rb87_d2();
        let lambda = cfg.constants.rb87_d2_wavelength;
        let q = &cfg.qubit_cavity;
        let wq = resonator_mode(q.roc_outcoupler.0, q.roc_backmirror.0, q.length, lambda)
            .unwrap()
            .waist;
        let dq = scheme.amplitude(Sublevel::new(1, 0), Sublevel::new(2, 1));
        let gq = expected_coupling(wq, q.length, lambda, dq).unwrap();
        let h = &cfg.herald_cavity;
        let wx = resonator_mode(h.roc_outcoupler.0, h.roc_backmirror.0, h.length, lambda)
            .unwrap()
            .waist;
        let wy = resonator_mode(h.roc_outcoupler.1, h.roc_backmirror.1, h.length, lambda)
            .unwrap()
            .waist;
        let dh = scheme.amplitude(Sublevel::new(2, 1), Sublevel::new(2, 1));
        let gh = expected_coupling((wx * wy).sqrt(), h.length, lambda, dh).unwrap();
        assert!(
            (cfg.g_qubit / gq - 1.0).abs() < 0.01,
            "{} vs {}",
            cfg.g_qubit,
            gq
        );
        assert!(
            (cfg.g_herald / gh - 1.0).abs() < 0.01,
            "{} vs {}",
            cfg.g_herald,
            gh
        );
    }

    #[test]
    fn trial_period_must_hold_a_cycle() {
        assert!(reference_config()
            .with_overrides("[protocol]\ntrial_period_us = 1.0")
            .is_err());
    }
}
