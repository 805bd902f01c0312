use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfc_lab::runner;

#[derive(Parser)]
#[command(
    name = "mfc",
    version,
    about = "Run mean-field control experiments from TOML manifests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the tests selected in a config; exit 0 iff all pass.
    Run { config: PathBuf },
    /// Audit the structural hypotheses of a config's model.
    Audit { config: PathBuf },
    /// Re-run a finished experiment and compare its CSV outputs byte for byte.
    Replay { summary: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    runner::init_workers();
    let result = match cli.command {
        Command::Run { config } => runner::run_file(&config).map(|out| {
            for t in &out.summary.tests {
                let status = if t.pass { "pass" } else { "FAIL" };
                println!(
                    "{status}  {}{}",
                    t.test,
                    t.error
                        .as_ref()
                        .map(|e| format!("  ({e})"))
                        .unwrap_or_default()
                );
            }
            println!("results: {}", out.dir.display());
            out.summary.pass
        }),
        Command::Audit { config } => runner::audit_file(&config).map(|a| {
            println!(
                "{}",
                serde_json::to_string_pretty(&a).expect("audit serializes")
            );
            a.passed
        }),
        Command::Replay { summary } => runner::replay(&summary).map(|r| {
            println!("replayed into {}", r.replay.display());
            for f in &r.mismatched {
                println!("differs: {f}");
            }
            println!(
                "{} of {} CSV files identical",
                r.compared.len() - r.mismatched.len(),
                r.compared.len()
            );
            r.identical()
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
