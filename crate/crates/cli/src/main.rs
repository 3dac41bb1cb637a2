use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ris_bc::drivers::Algorithm;
use ris_bc_cli::experiment::reference_table;
use ris_bc_cli::selftest::run_selftest;
use ris_bc_cli::{emit_results, run_experiment, ExperimentSpec, HarnessError, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "risbc", version, about = "Sum-rate experiments for RIS-aided MIMO broadcast channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a spec file.
    Run(RunArgs),
    /// Print the complexity model evaluated on the reference counters.
    ComplexityTable {
        /// Also write the table as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check gradients, monotonicity, duality and projections on small instances.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated subset of ao, aao, apgm.
    #[arg(long, value_delimiter = ',')]
    algos: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    let algos = args
        .algos
        .map(|list| list.iter().map(|s| s.parse::<Algorithm>()).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(|e| HarnessError::Spec(e.to_string()))?;
    spec.apply(&Overrides {
        seed: args.seed,
        realizations: args.realizations,
        algos,
        out: args.out,
    })?;
    let records = run_experiment(&spec, args.workers)?;
    let (detail, summary) = emit_results(&records, &spec.out, &spec.file_stem())?;
    println!("wrote {} rows to {}", records.len(), detail.display());
    println!("summary in {}", summary.display());
    Ok(())
}

fn complexity_table(out: Option<PathBuf>) -> anyhow::Result<()> {
    let rows = reference_table(&ris_bc::scenario::SystemConfig::default())?;
    println!("{:<24} {:>3} {:>5} {:>10}", "links", "K", "algo", "mults");
    for r in &rows {
        println!(
            "{:<24} {:>3} {:>5} {:>10}",
            r.experiment,
            r.sweep_value,
            r.algo,
            r.predicted_mults.unwrap_or_default()
        );
    }
    if let Some(dir) = out {
        let (path, _) = emit_results(&rows, &dir, "complexity_table").context("writing the table")?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::ComplexityTable { out } => match complexity_table(out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Command::Selftest { seed } => match run_selftest(seed) {
            Ok(checks) => {
                for c in &checks {
                    println!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
                }
                if checks.iter().all(|c| c.passed) {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(3)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
