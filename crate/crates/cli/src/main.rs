use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use etcoord_cli::{cmd_run, cmd_sweep, cmd_verify};

#[derive(Parser)]
#[command(
    name = "etcoord",
    version,
    about = "Event-triggered time-coordination of path-following vehicles over switching networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv, events.csv, summary.json.
    Run {
        /// Scenario file (JSON, schema 1).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for the run artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override a scenario field, e.g. --set gains.b=4.82 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Check integral connectivity and the theoretical constants/bounds.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the scenario once per value of a numeric parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted path of the swept field, e.g. trigger.c1.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.01,0.03,0.1.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Parallel sweep workers (each run stays single-threaded).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<(), etcoord_cli::CliError> = match cli.command {
        Command::Run { scenario, out, set } => cmd_run(&scenario, &out, &set).map(|summary| {
            println!(
                "run '{}' finished: {} agents, t_f = {}, {} events, final max |γ_i-γ_j| = {:.6}",
                summary.scenario,
                summary.n,
                summary.mission_t_f,
                summary.total_events,
                summary.final_max_pairwise_gamma_gap
            );
            println!("artifacts written to {}", out.display());
        }),
        Command::Verify { scenario, set } => match cmd_verify(&scenario, &set) {
            Err(e) => Err(e),
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report is serializable"));
                if report.mandatory_hold() {
                    Ok(())
                } else {
                    Err(etcoord_cli::CliError {
                        code: 2,
                        message: "one or more mandatory checks failed".into(),
                    })
                }
            }
        },
        Command::Sweep { scenario, param, values, out, jobs, set } => {
            cmd_sweep(&scenario, &param, &values, &out, jobs, &set).map(|rows| {
                for r in &rows {
                    println!(
                        "{} = {}: {} events, final max |γ_i-γ_j| = {:.6}",
                        r.param, r.value, r.total_events, r.final_max_pairwise_gamma_gap
                    );
                }
                println!("aggregate written to {}", out.join("sweep.csv").display());
            })
        }
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
