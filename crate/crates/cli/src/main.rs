use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsub_cli::config::threads_from_env;
use fedsub_cli::{analyze, gen_data, merge_test, run, CliError, ExperimentConfig};

/// Personalized federated learning simulator.
#[derive(Parser)]
#[command(name = "fedsub", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment; writes rounds.csv and summary.json to the output directory.
    Run { config: PathBuf },
    /// Print per-class Hopkins statistics of the clients' class prototypes as JSON.
    Analyze { config: PathBuf },
    /// Train two clients alone, average their models, and compare per-class accuracy.
    MergeTest {
        config: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Write the configured dataset as CSV.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = run(&cfg, threads_from_env()?)?;
            if let Some(last) = out.reports.last() {
                eprintln!(
                    "{} rounds; final mean F1 {:.4} [{:.4}, {:.4}]",
                    out.reports.len(),
                    last.f1.mean,
                    last.f1.lower,
                    last.f1.upper
                );
            }
            eprintln!("wrote {} and {}", out.rounds_csv.display(), out.summary_json.display());
        }
        Command::Analyze { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = analyze(&cfg.dataset()?, cfg.seed)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        Command::MergeTest { config, a, b } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", merge_test(&cfg.dataset()?, &cfg, &a, &b)?.table());
        }
        Command::GenData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = gen_data(&cfg, &out)?;
            eprintln!("wrote {} samples from {} clients to {}", ds.total_samples(), ds.clients.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
