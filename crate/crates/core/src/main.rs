use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use selfdiff::harness::{
    emit_report, run_scenario, ReportFormat, Scenario, ScenarioKind, FULL_GATES,
};

#[derive(Parser)]
#[command(version, about = "Gated APD self-differencing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its report.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run at least 10^8 gates per point.
        #[arg(long)]
        full: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Write the waveform set of a scenario's configuration.
    Trace {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            full,
            format,
        } => Scenario::from_file(&scenario).and_then(|mut s| {
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if full {
                s.n_gates = s.n_gates.max(FULL_GATES);
            }
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Text => ReportFormat::Text,
            };
            emit_report(&run_scenario(&s)?, format, &out)
        }),
        Command::Trace { scenario, out } => Scenario::from_file(&scenario).and_then(|mut s| {
            s.kind = ScenarioKind::TraceDemo;
            s.sweep = None;
            emit_report(&run_scenario(&s)?, ReportFormat::Csv, &out)
        }),
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
