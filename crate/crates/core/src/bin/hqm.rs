use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hqm_core::config::{load_config_file, reference_config};
use hqm_core::error::Result;
use hqm_core::scenario::{
    emit_report, run_scenario, write_artifacts, Format, Scenario, ScenarioName,
};

#[derive(Parser)]
#[command(
    name = "hqm",
    version,
    about = "Heralded single-atom quantum memory scenarios"
)]
struct Cli {
    #[command(subcommand)]
    scenario: Command,
    /// System configuration (TOML); the built-in reference configuration when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Partial TOML merged over the configuration.
    #[arg(long = "override", global = true)]
    overrides: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Number of trials; the scenario default when omitted.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Directory for artifacts; only the summary is printed when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Cavity rates, mode geometry and fitted transmission spectra.
    Spectra,
    /// Write, store, read and tomography of the six axial inputs.
    WriteReadTomo,
    /// Fidelity versus storage time with and without a guiding field.
    Coherence,
    /// Storage and heralding efficiency versus herald-cavity detuning.
    DetuningScan,
    /// Second-order correlation of herald and read-out clicks.
    G2,
    /// Fidelity and efficiency versus read-out truncation time.
    Truncation,
}

#[derive(ValueEnum, Clone, Copy)]
enum FormatArg {
    Csv,
    Json,
}

impl Command {
    fn name(self) -> ScenarioName {
        match self {
            Command::Spectra => ScenarioName::Spectra,
            Command::WriteReadTomo => ScenarioName::WriteReadTomo,
            Command::Coherence => ScenarioName::Coherence,
            Command::DetuningScan => ScenarioName::DetuningScan,
            Command::G2 => ScenarioName::G2,
            Command::Truncation => ScenarioName::Truncation,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => load_config_file(p)?,
        None => reference_config(),
    };
    let name = cli.scenario.name();
    let overrides = cli
        .overrides
        .as_ref()
        .map(std::fs::read_to_string)
        .transpose()?;
    let scenario = Scenario {
        name,
        overrides,
        n_trials: cli.trials.unwrap_or(name.default_trials()),
        seed: cli.seed,
    };
    let output = run_scenario(&config, &scenario)?;
    if let Some(dir) = &cli.out {
        let format = match cli.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        };
        write_artifacts(&output, dir, format)?;
    }
    print!("{}", emit_report(&output.report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
