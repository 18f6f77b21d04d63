use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robustkit_cli::{
    run_experiment_command, run_oracle, run_solve, run_verdict, thread_pool, CliError, ExperimentArgs, OracleArgs,
    SolveArgs, VerdictArgs,
};

#[derive(Parser)]
#[command(name = "robustkit", version, about = "Robust covering approximations with exact small-scale checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and print the solution as JSON.
    Solve(SolveArgs),
    /// Run a seeded suite and write a CSV report.
    Experiment(ExperimentArgs),
    /// Print the exact robust optimum (n ≤ 15).
    Oracle(OracleArgs),
    /// Compare a stored solution with the exact robust optimum.
    Verdict(VerdictArgs),
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => print_json(&thread_pool()?.install(|| run_solve(&args))?),
        Command::Experiment(args) => {
            let rows = run_experiment_command(&args)?;
            eprintln!("wrote {rows} rows to {}", args.out.display());
        }
        Command::Oracle(args) => print_json(&thread_pool()?.install(|| run_oracle(&args))?),
        Command::Verdict(args) => {
            print_json(&thread_pool()?.install(|| run_verdict(&args))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!("{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
