//! Seeded end-to-end scenarios producing scans, fits, tomography results and a
//! summary report. Every artifact is a deterministic function of
//! (configuration, scenario).

pub mod report;
mod runners;

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::scan::ScanResult;

pub use report::{emit_report, Comparison, Quantity, Relation, Report};
pub use runners::{COHERENCE_FIELD_MG, DETUNING_GRID_MHZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    Spectra,
    WriteReadTomo,
    Coherence,
    DetuningScan,
    G2,
    Truncation,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::Spectra,
        ScenarioName::WriteReadTomo,
        ScenarioName::Coherence,
        ScenarioName::DetuningScan,
        ScenarioName::G2,
        ScenarioName::Truncation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioName::Spectra => "spectra",
            ScenarioName::WriteReadTomo => "write-read-tomo",
            ScenarioName::Coherence => "coherence",
            ScenarioName::DetuningScan => "detuning-scan",
            ScenarioName::G2 => "g2",
            ScenarioName::Truncation => "truncation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.label() == s)
    }

    /// Trial count used when none is given. For `spectra` it is the photon
    /// count per detuning at the empty-cavity peak; for `coherence` and
    /// `detuning-scan` it is per scan point.
    pub fn default_trials(self) -> u64 {
        match self {
            ScenarioName::Spectra => 20_000,
            ScenarioName::WriteReadTomo => 400_000,
            ScenarioName::Coherence => 50_000,
            ScenarioName::DetuningScan => 50_000,
            ScenarioName::G2 => 200_000,
            ScenarioName::Truncation => 400_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    /// Partial TOML merged over the base configuration.
    pub overrides: Option<String>,
    pub n_trials: u64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(name: ScenarioName, n_trials: u64, seed: u64) -> Self {
        Self {
            name,
            overrides: None,
            n_trials,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactData {
    Scan(ScanResult),
    Json(serde_json::Value),
    /// Preformatted text written with the given file extension.
    Text {
        extension: &'static str,
        body: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub stem: String,
    pub data: ArtifactData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

impl ScenarioOutput {
    pub fn scan(&self, stem: &str) -> Option<&ScanResult> {
        self.artifacts.iter().find_map(|a| match &a.data {
            ArtifactData::Scan(s) if a.stem == stem => Some(s),
            _ => None,
        })
    }

    pub fn json(&self, stem: &str) -> Option<&serde_json::Value> {
        self.artifacts.iter().find_map(|a| match &a.data {
            ArtifactData::Json(v) if a.stem == stem => Some(v),
            _ => None,
        })
    }

    /// File names and contents in the requested format, report last.
    pub fn render(&self, format: Format) -> Vec<(String, String)> {
        let mut files: Vec<(String, String)> = self
            .artifacts
            .iter()
            .map(|a| match (&a.data, format) {
                (ArtifactData::Scan(s), Format::Csv) => {
                    let mut buf = Vec::new();
                    let _ = s.write_csv(
                        &mut buf,
                        &[
                            ("scenario", self.report.scenario.clone()),
                            ("seed", self.report.seed.to_string()),
                        ],
                    );
                    (
                        format!("{}.csv", a.stem),
                        String::from_utf8(buf).unwrap_or_default(),
                    )
                }
                (ArtifactData::Scan(s), Format::Json) => (
                    format!("{}.json", a.stem),
                    pretty(&serde_json::to_value(s).unwrap_or_default()),
                ),
                (ArtifactData::Json(v), _) => (format!("{}.json", a.stem), pretty(v)),
                (ArtifactData::Text { extension, body }, _) => {
                    (format!("{}.{extension}", a.stem), body.clone())
                }
            })
            .collect();
        match format {
            Format::Csv => files.push(("summary.txt".into(), emit_report(&self.report))),
            Format::Json => files.push(("summary.json".into(), self.report.to_json())),
        }
        files
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

/// Writes the rendered artifacts into `dir`, creating it when missing.
pub fn write_artifacts(output: &ScenarioOutput, dir: &Path, format: Format) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (name, body) in output.render(format) {
        fs::write(dir.join(&name), body)?;
        names.push(name);
    }
    Ok(names)
}

/// Independent seed for sub-run `tag` of a scenario.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - tag);
    rng.next_u64()
}

pub fn run_scenario(base: &SystemConfig, scenario: &Scenario) -> Result<ScenarioOutput> {
    if scenario.n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    let config = match &scenario.overrides {
        Some(o) => base.with_overrides(o)?,
        None => base.clone(),
    };
    let mut report = Report::new(scenario.name.label(), scenario.seed, scenario.n_trials);
    let artifacts = match scenario.name {
        ScenarioName::Spectra => runners::spectra(&config, scenario, &mut report)?,
        ScenarioName::WriteReadTomo => runners::write_read_tomo(&config, scenario, &mut report)?,
        ScenarioName::Coherence => runners::coherence(&config, scenario, &mut report)?,
        ScenarioName::DetuningScan => runners::detuning_scan(&config, scenario, &mut report)?,
        ScenarioName::G2 => runners::g2(&config, scenario, &mut report)?,
        ScenarioName::Truncation => runners::truncation(&config, scenario, &mut report)?,
    };
    Ok(ScenarioOutput { report, artifacts })
}
