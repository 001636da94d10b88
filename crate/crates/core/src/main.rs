use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use walknav::cli::{self, AdapterChoice, CliError, RunSpec};

#[derive(Parser)]
#[command(name = "walknav", about = "Run and audit desk-scale navigation episodes")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios (files or directories) for several seeded trials.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Base seed; trial k uses seed + k.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Episode configuration override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
        overrides: Vec<(String, String)>,
        /// `reference` or `replay:<dir>`.
        #[arg(long, default_value = "reference")]
        adapter: AdapterChoice,
        /// Record adapter exchanges under <out>/adapters.
        #[arg(long, requires = "out")]
        record: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a fixture or scenario file.
    Validate { path: PathBuf },
    /// Rebuild the summary table from a run's traces.
    Replay { dir: PathBuf },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match args.command {
        Command::Run {
            scenarios,
            seed,
            trials,
            overrides,
            adapter,
            record,
            out,
        } => {
            let spec = RunSpec {
                scenario_paths: scenarios,
                seed,
                trials,
                overrides,
                adapter,
                record,
                out_dir: out,
            };
            match cli::run(&spec) {
                Ok(report) => {
                    print!("{}", report.summary.table.render());
                    for e in &report.summary.episodes {
                        if let Some(f) = &e.result.failure {
                            eprintln!("{} trial {}: {f}", e.meta.scenario, e.meta.trial);
                        }
                    }
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { path } => match cli::validate(&path) {
            Ok(issues) if issues.is_empty() => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Ok(issues) => {
                for i in issues {
                    eprintln!("{}: {i}", path.display());
                }
                ExitCode::from(2)
            }
            Err(e) => fail(e),
        },
        Command::Replay { dir } => match cli::replay(&dir) {
            Ok(summary) => {
                print!("{}", summary.table.render());
                ExitCode::from(u8::from(summary.any_adapter_failure()))
            }
            Err(e) => fail(e),
        },
    }
}
