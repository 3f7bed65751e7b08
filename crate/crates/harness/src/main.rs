use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optiverify::econ::{payoff_sweep, SweepGrid};
use optiverify::signing::PublicKey;
use optiverify_harness::artifacts::{self, check_receipt_file, write_artifacts};
use optiverify_harness::{replay_verify, run_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "optiverify", version, about = "Scenario runner and auditor tools for optimistic verifiable inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its event log, metrics and artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a scenario and check a log against it line by line.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo payoff sweep, written as CSV.
    EconSweep {
        #[arg(long)]
        grid: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a receipt against a DA dump, re-executing when the scenario config is given.
    VerifyReceipt {
        #[arg(long)]
        receipt: PathBuf,
        #[arg(long)]
        da: PathBuf,
        /// Operator public key in hex; defaults to the keys file next to the dump.
        #[arg(long)]
        pubkey: Option<String>,
        /// Registry file; defaults to the one next to the dump.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Scenario that produced the artifacts, needed for decryption and re-execution.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn run(config: &Path, out: &Path) -> CliResult {
    let config = ScenarioConfig::load(config)?;
    let run = run_scenario(&config)?;
    write_artifacts(&run, out)?;
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&run.metrics)?)?;
    Ok(ExitCode::SUCCESS)
}

fn replay(log: &Path, config: &Path) -> CliResult {
    let config = ScenarioConfig::load(config)?;
    let log = std::fs::read_to_string(log)?;
    match replay_verify(&log, &config) {
        Ok(s) => {
            println!("OK: {} lines, {} receipts, {} inclusion proofs", s.lines, s.receipts_checked, s.inclusions_checked);
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            println!("MISMATCH: {e}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn econ_sweep(grid: &Path, out: Option<&Path>) -> CliResult {
    let grid: SweepGrid = serde_json::from_str(&std::fs::read_to_string(grid)?)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    for row in payoff_sweep(&grid)? {
        csv.serialize(row)?;
    }
    let bytes = csv.into_inner()?;
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => print!("{}", String::from_utf8(bytes)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_receipt(receipt: &Path, da: &Path, pubkey: Option<&str>, registry: Option<&Path>, config: Option<&Path>) -> CliResult {
    let receipt = artifacts::load_receipt(receipt)?;
    let store = artifacts::load_da(da)?;
    let registry = artifacts::load_registry(&registry.map_or_else(|| sibling(da, artifacts::REGISTRY_FILE), Path::to_path_buf))?;
    let keys = match pubkey {
        Some(hex) => vec![hex.parse::<PublicKey>()?],
        None => artifacts::load_keys(&sibling(da, artifacts::KEYS_FILE))?,
    };
    let scenario = config.map(ScenarioConfig::load).transpose()?;
    let check = check_receipt_file(receipt, &store, &registry, &keys, scenario.as_ref())?;
    let v = &check.verdict;
    if !check.reexecuted && v.failed_step == Some(optiverify::receipts::VerifyStep::Decrypt) {
        println!("CHECKED up to decryption (signature, inclusion, epoch); pass --config to re-execute");
        return Ok(ExitCode::SUCCESS);
    }
    println!("{v}");
    if let Some(step) = v.failed_step {
        println!("failed step: {step}");
    }
    Ok(if v.is_verified() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => run(config, out),
        Command::Replay { log, config } => replay(log, config),
        Command::EconSweep { grid, out } => econ_sweep(grid, out.as_deref()),
        Command::VerifyReceipt { receipt, da, pubkey, registry, config } => {
            verify_receipt(receipt, da, pubkey.as_deref(), registry.as_deref(), config.as_deref())
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
