use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coded_rebalance::model::{init_database_with_capacity, verify_balanced, FileSpec};
use coded_rebalance::scenario::{run_scenario_on, sweep_removals, Scenario};
use coded_rebalance::transport::TransportKind;
use coded_rebalance::verify::{canonicalize, check_structural_invariance};
use coded_rebalance::{snapshot, Result};

#[derive(Parser)]
#[command(name = "coded-rebalance", about = "Coded rebalancing simulator for replicated databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Build the initial placement and write it as a state snapshot.
    Init {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        replication: usize,
        #[arg(long)]
        bytes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest node count the database must stay aligned for.
        #[arg(long)]
        max_nodes: Option<usize>,
        /// Snapshot path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario file and print the per-operation report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's transport.
        #[arg(long, value_enum)]
        transport: Option<TransportKind>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Write the final state snapshot here.
        #[arg(long)]
        save_state: Option<PathBuf>,
    },
    /// Remove each node of the scenario's initial database in turn.
    SweepRemovals {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        transport: Option<TransportKind>,
    },
    /// Check a state snapshot.
    Verify {
        #[arg(long)]
        state: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Init { nodes, replication, bytes, seed, max_nodes, out } => {
            let file = FileSpec::new(bytes, seed)?;
            let db = init_database_with_capacity(nodes, replication, file, max_nodes.unwrap_or(nodes))?;
            match out {
                Some(path) => snapshot::save(&db, &path)?,
                None => println!("{}", serde_json::to_string_pretty(&snapshot::Snapshot::capture(&db))?),
            }
            Ok(true)
        }
        Command::Run { scenario, transport, format, save_state } => {
            let mut scenario = Scenario::from_json(&fs::read_to_string(scenario)?)?;
            if let Some(t) = transport {
                scenario.transport = t;
            }
            let mut channel = scenario.transport.open();
            let outcome = run_scenario_on(&scenario, channel.as_mut())?;
            match format {
                Format::Json => println!("{}", outcome.report.to_json()),
                Format::Csv => print!("{}", outcome.report.to_csv()),
            }
            if let Some(error) = &outcome.report.error {
                eprintln!("stopped: {error}");
            }
            if let Some(path) = save_state {
                snapshot::save(&outcome.database, &path)?;
            }
            Ok(outcome.report.pass)
        }
        Command::SweepRemovals { scenario, transport } => {
            let scenario = Scenario::from_json(&fs::read_to_string(scenario)?)?;
            let report = sweep_removals(&scenario, transport.unwrap_or(scenario.transport))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.pass)
        }
        Command::Verify { state } => {
            let db = snapshot::load(&state)?;
            let balance = verify_balanced(&db);
            let invariance = check_structural_invariance(&db);
            let intact = db.reconstruct_file().map(|f| f == db.file().content()).unwrap_or(false);
            println!("nodes: {}", db.node_count());
            println!("replication: {}", db.replication());
            match balance.first() {
                None => println!("balanced: pass"),
                Some(v) => println!("balanced: FAIL ({v})"),
            }
            match &invariance.diff {
                None => println!("invariant: pass"),
                Some(d) => println!("invariant: FAIL ({d})"),
            }
            println!("file: {}", if intact { "pass" } else { "FAIL" });
            println!("{}", canonicalize(&db));
            Ok(balance.passed() && invariance.passed() && intact)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
