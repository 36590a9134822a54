use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use engiweave::coordinator::PolicyMode;
use engiweave_cli::{cmd_bench, cmd_emit_model, cmd_replay, cmd_solve, cmd_verify, default_workers, Overrides};

#[derive(Parser)]
#[command(name = "engiweave", version, about = "Feasibility-first multi-agent engineering problem solving")]
struct Cli {
    /// Seed for any randomized test data; sessions are deterministic without it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one coordination session and write its result and trace.
    Solve {
        /// Problem manifest (a record or an array of records).
        problem: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Problem id, required when the manifest holds several records.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<PolicyMode>,
    },
    /// Check a solution file against a blueprint.
    Verify {
        model: PathBuf,
        solution: PathBuf,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every problem of a manifest and write report.json and report.txt.
    Bench {
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<PolicyMode>,
        /// Method label in the text table.
        #[arg(long, default_value = "engiweave")]
        method: String,
    },
    /// Re-print a trace and check its counter snapshots.
    Replay { trace: PathBuf },
    /// Write the interchange document of a blueprint.
    EmitModel {
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<PolicyMode, String> {
    PolicyMode::parse(s).ok_or_else(|| format!("unknown policy `{s}` (rule, remote or fixed)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve { problem, config, id, out, policy } => {
            cmd_solve(&problem, &config, id.as_deref(), &out, &Overrides { policy, seed: cli.seed })
        }
        Command::Verify { model, solution, out } => cmd_verify(&model, &solution, out.as_deref()),
        Command::Bench { manifest, config, out, workers, policy, method } => cmd_bench(
            &manifest,
            &config,
            &out,
            workers.unwrap_or_else(default_workers),
            &method,
            &Overrides { policy, seed: cli.seed },
        ),
        Command::Replay { trace } => cmd_replay(&trace),
        Command::EmitModel { model, out } => cmd_emit_model(&model, out.as_deref()),
    };
    if !outcome.summary.is_empty() {
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        let _ = if outcome.code == 1 {
            writeln!(std::io::stderr(), "{}", outcome.summary)
        } else {
            writeln!(std::io::stdout(), "{}", outcome.summary)
        };
    }
    ExitCode::from(outcome.code)
}
