//! `icsim`: validate and run inter-cloud security scenarios, and
//! summarize previous runs.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icsim_core::report::{self, ReportDocument};
use icsim_core::scenario::{check_scenario, has_errors, Strictness};
use icsim_core::sim::{run_with_mode, EvalMode, RunOutput, SimError};
use icsim_core::{Metrics, Origin};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

#[derive(Parser)]
#[command(name = "icsim", version, about = "Multi-layer inter-cloud session inspection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against every declaration invariant.
    Validate {
        file: PathBuf,
        /// Warn on unknown keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
    },
    /// Run a scenario and write metrics, traces, and the report.
    Run {
        file: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics/traces/report files.
        #[arg(long, default_value = "icsim-out")]
        out: PathBuf,
        /// Metrics series format.
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Pipeline evaluation mode; outputs are byte-identical either way.
        #[arg(long, value_enum, default_value_t = Mode::Sequential)]
        mode: Mode,
        /// Warn on unknown keys instead of rejecting them.
        #[arg(long)]
        lenient: bool,
    },
    /// Print the summary of a previous run directory.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Parallel,
}

impl From<Mode> for EvalMode {
    fn from(mode: Mode) -> EvalMode {
        match mode {
            Mode::Sequential => EvalMode::Sequential,
            Mode::Parallel => EvalMode::Parallel,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { file, lenient } => cmd_validate(&file, strictness(lenient)),
        Command::Run { file, seed, out, format, mode, lenient } => {
            cmd_run(&file, seed, &out, format, mode.into(), strictness(lenient))
        }
        Command::Report { run_dir } => cmd_report(&run_dir),
    };
    ExitCode::from(code)
}

fn strictness(lenient: bool) -> Strictness {
    if lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn cmd_validate(file: &Path, strictness: Strictness) -> u8 {
    let text = match fs::read_to_string(file) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", file.display());
            return EXIT_IO;
        }
    };
    let (_, diags) = check_scenario(&text, strictness);
    for diag in &diags {
        eprintln!("{diag}");
    }
    if has_errors(&diags) {
        eprintln!("{}: invalid", file.display());
        EXIT_VALIDATION
    } else {
        println!("{}: ok", file.display());
        EXIT_OK
    }
}

fn cmd_run(
    file: &Path,
    seed: Option<u64>,
    out: &Path,
    format: Format,
    mode: EvalMode,
    strictness: Strictness,
) -> u8 {
    let text = match fs::read_to_string(file) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", file.display());
            return EXIT_IO;
        }
    };
    let (scenario, diags) = check_scenario(&text, strictness);
    for diag in &diags {
        eprintln!("{diag}");
    }
    let Some(mut scenario) = scenario else {
        return EXIT_VALIDATION;
    };
    if has_errors(&diags) {
        return EXIT_VALIDATION;
    }
    if let Some(seed) = seed {
        scenario.meta.seed = seed;
    }

    let output = match run_with_mode(&scenario, mode) {
        Ok(output) => output,
        Err(SimError::Validation(diags)) => {
            for diag in &diags {
                eprintln!("{diag}");
            }
            return EXIT_VALIDATION;
        }
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_VALIDATION;
        }
    };

    if let Err(err) = fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {err}", out.display());
        return EXIT_IO;
    }
    let report_doc = report::build_report(&scenario, &output.metrics);
    let writes: Vec<(PathBuf, Vec<u8>)> = vec![
        (
            out.join(match format {
                Format::Json => "metrics.json",
                Format::Csv => "metrics.csv",
            }),
            match format {
                Format::Json => report::metrics_json(&output.metrics),
                Format::Csv => report::metrics_csv(&output.metrics),
            },
        ),
        (out.join("traces.json"), report::traces_json(&output.records)),
        (out.join("report.json"), report::report_json(&report_doc)),
    ];
    for (path, bytes) in writes {
        if let Err(err) = fs::write(&path, bytes) {
            eprintln!("error: cannot write {}: {err}", path.display());
            return EXIT_IO;
        }
    }

    print_run_summary(&scenario.meta.name, scenario.meta.seed, &output);
    println!("wrote {}", out.display());
    EXIT_OK
}

fn print_run_summary(name: &str, seed: u64, output: &RunOutput) {
    println!("scenario {name} (seed {seed}): {} sessions", output.records.len());
    print_totals(&output.metrics);
}

fn print_totals(metrics: &Metrics) {
    println!(
        "{:<10} {:>10} {:>11} {:>8} {:>10} {:>12}",
        "origin", "initiated", "authorized", "dropped", "anomalies", "app_accesses"
    );
    for origin in [Origin::Tenant, Origin::Attacker] {
        let totals = metrics.totals(origin);
        println!(
            "{:<10} {:>10} {:>11} {:>8} {:>10} {:>12}",
            origin.name(),
            totals.sessions_initiated,
            totals.sessions_authorized,
            totals.packets_dropped,
            totals.anomaly_reports,
            totals.app_accesses,
        );
        let denied = totals.sessions_denied_by_layer;
        if denied.sum() > 0 {
            println!(
                "           denied: fw={} meta={} vault={} ips={} antimal={}",
                denied.fw, denied.meta, denied.vault, denied.ips, denied.antimal
            );
        }
    }
}

fn cmd_report(run_dir: &Path) -> u8 {
    let path = run_dir.join("report.json");
    let bytes = match fs::read(&path) {
        Ok(bytes) => bytes,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", path.display());
            return EXIT_IO;
        }
    };
    let report: ReportDocument = match serde_json::from_slice(&bytes) {
        Ok(report) => report,
        Err(err) => {
            eprintln!("error: {} is not a report document: {err}", path.display());
            return EXIT_VALIDATION;
        }
    };
    println!(
        "scenario {} (seed {}, {}s simulated, {}s bins)",
        report.config.meta.name,
        report.config.meta.seed,
        report.config.meta.duration,
        report.config.meta.bin_width,
    );
    let mapping: Vec<String> =
        report.nist_mapping.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("nist mapping: {}", mapping.join(" "));
    print_totals(&report.series);
    println!("bins: {}", report.series.bins.len());
    EXIT_OK
}
