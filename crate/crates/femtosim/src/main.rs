//! Command-line front end: single runs, load sweeps, trace export, and the
//! Erlang-B analytical oracle.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use femtosim::cac::Scheme;
use femtosim::metrics::{erlang_b, KpiReport};
use femtosim::scenario::{ScenarioConfig, SchemeChoice};
use femtosim::sim::{run_scenario, RunArtifacts, RunOptions};
use femtosim::sweep::{replication_seeds, run_sweep, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SchemeArg {
    Proposed,
    Baseline,
    Both,
}

impl SchemeArg {
    fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeArg::Proposed => vec![Scheme::Proposed],
            SchemeArg::Baseline => vec![Scheme::Baseline],
            SchemeArg::Both => vec![Scheme::Proposed, Scheme::Baseline],
        }
    }
}

/// Mobile-femtocell handover simulator.
#[derive(Debug, Parser)]
#[command(name = "femtosim", version, about)]
struct Cli {
    /// Scenario file (TOML). Defaults reproduce the reference parameters.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Base random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// Run a load sweep over these per-cell arrival rates (calls/sec),
    /// comma-separated; replications and both-scheme selection apply.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    sweep: Option<Vec<f64>>,

    /// Replications (seeds) per sweep point; defaults to the config value.
    #[arg(long)]
    replications: Option<usize>,

    /// Admission scheme to run.
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,

    /// Write KPI rows as CSV here (stdout otherwise). Sweeps also write
    /// `<stem>_summary.<ext>` next to it.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write handover/FSO step traces here (single runs only).
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Write per-event ledger snapshots here as CSV (single runs only).
    #[arg(long)]
    ledger_csv: Option<PathBuf>,

    /// Print an analytical oracle value and exit: `--oracle erlangb C A`
    /// for C servers at A Erlangs.
    #[arg(long, num_args = 3, value_names = ["KIND", "C", "A"])]
    oracle: Option<Vec<String>>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&*e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn run(cli: Cli) -> CliResult {
    if let Some(oracle) = &cli.oracle {
        return run_oracle(oracle);
    }

    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::from_path(path)?,
        None => ScenarioConfig::table_defaults(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }

    match &cli.sweep {
        Some(lambdas) => run_sweep_mode(&cli, cfg, lambdas),
        None => run_single_mode(&cli, cfg),
    }
}

fn run_oracle(args: &[String]) -> CliResult {
    match args[0].to_ascii_lowercase().as_str() {
        "erlangb" => {
            let servers: u32 = args[1]
                .parse()
                .map_err(|_| format!("C must be an integer, got {}", args[1]))?;
            let load: f64 = args[2]
                .parse()
                .map_err(|_| format!("A must be a number, got {}", args[2]))?;
            if load < 0.0 {
                return Err("offered load must be nonnegative".into());
            }
            println!("{:.6}", erlang_b(servers, load));
            Ok(())
        }
        other => Err(format!("unknown oracle {other}; supported: erlangb").into()),
    }
}

fn run_sweep_mode(cli: &Cli, cfg: ScenarioConfig, lambdas: &[f64]) -> CliResult {
    let schemes = cli.scheme.unwrap_or(SchemeArg::Both).schemes();
    let replications = cli.replications.unwrap_or(cfg.sweep.replications);
    if replications == 0 {
        return Err("at least one replication is required".into());
    }
    let seeds = replication_seeds(cfg.run.seed, replications);
    let outcome = run_sweep(&cfg, lambdas, &seeds, &schemes)?;

    let rows_csv = render_rows(&outcome.rows);
    let summary_csv = render_summary(&outcome.summary);
    match &cli.out {
        Some(path) => {
            write_file(path, &rows_csv)?;
            let summary_path = summary_path_for(path);
            write_file(&summary_path, &summary_csv)?;
            eprintln!(
                "wrote {} rows to {} and {} summary points to {}",
                outcome.rows.len(),
                path.display(),
                outcome.summary.len(),
                summary_path.display()
            );
        }
        None => {
            print!("{rows_csv}");
            for line in summary_csv.lines() {
                println!("# {line}");
            }
        }
    }
    Ok(())
}

fn run_single_mode(cli: &Cli, cfg: ScenarioConfig) -> CliResult {
    let schemes = match cli.scheme {
        Some(arg) => arg.schemes(),
        None => vec![cfg.run.scheme.into()],
    };
    let options = RunOptions {
        collect_traces: cli.trace.is_some(),
        collect_ledger_log: cli.ledger_csv.is_some(),
    };
    let mut reports = Vec::new();
    let mut artifacts: Vec<RunArtifacts> = Vec::new();
    for scheme in schemes {
        let mut run_cfg = cfg.clone();
        run_cfg.run.scheme = match scheme {
            Scheme::Proposed => SchemeChoice::Proposed,
            Scheme::Baseline => SchemeChoice::Baseline,
        };
        let art = run_scenario(&run_cfg, options)?;
        reports.push(art.report.clone());
        artifacts.push(art);
    }

    let rows_csv = render_rows(&reports);
    match &cli.out {
        Some(path) => {
            write_file(path, &rows_csv)?;
            eprintln!("wrote {} rows to {}", reports.len(), path.display());
        }
        None => print!("{rows_csv}"),
    }

    if let Some(path) = &cli.trace {
        let mut text = String::new();
        for art in &artifacts {
            for block in &art.traces {
                text.push_str(&block.render());
            }
        }
        write_file(path, &text)?;
        eprintln!("wrote traces to {}", path.display());
    }

    if let Some(path) = &cli.ledger_csv {
        let mut text = String::from("time_s,cell,occupied_mbps,vacant_mbps,releasable_mbps\n");
        for art in &artifacts {
            for row in &art.ledger_log {
                text.push_str(&format!(
                    "{:.6},{},{:.6},{:.6},{:.6}\n",
                    row.at.as_secs_f64(),
                    row.cell,
                    row.occupied,
                    row.vacant,
                    row.releasable
                ));
            }
        }
        write_file(path, &text)?;
        eprintln!("wrote ledger snapshots to {}", path.display());
    }
    Ok(())
}

fn render_rows(rows: &[KpiReport]) -> String {
    let mut out = String::from(KpiReport::csv_header());
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SummaryRow::csv_header());
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

fn summary_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_summary.{ext}"))
}

fn write_file(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}
