use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mechanic_cli::{
    cmd_check, cmd_plot, cmd_run, cmd_sweep, CheckOptions, CliError, PlotOptions, RunOptions,
    Suite, EXIT_CHECK_FAILED, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "mechanic",
    version,
    about = "Learning-rate scale tuning experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Override a config value, e.g. `--set optimizer.lr=0.1`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Grid-search the base optimizer's learning rate without the wrapper.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical verification batteries.
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Inequality samples; other suites scale from it.
        #[arg(short, long, default_value_t = 100_000)]
        n: usize,
        #[arg(short, long, default_value = "runs/check")]
        out: PathBuf,
        #[arg(long, hide = true)]
        inject_violation: bool,
    },
    /// Plot CSV columns as an SVG line chart.
    Plot {
        #[arg(long = "csv", required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        x: Option<String>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            out,
        } => {
            let (record, dir) = cmd_run(&RunOptions {
                config,
                overrides,
                output_dir: out,
            })?;
            println!(
                "{} steps, final loss {:.6e}, final scale {:.6e} -> {}",
                record.steps_run,
                record.final_loss,
                record.final_s_sum(),
                dir.display()
            );
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            grid,
            overrides,
            out,
        } => {
            let outcome = cmd_sweep(
                &RunOptions {
                    config,
                    overrides,
                    output_dir: out,
                },
                &grid,
            )?;
            for (k, e) in outcome.result.entries.iter().enumerate() {
                let mark = if k == outcome.result.best { "*" } else { " " };
                let status = if e.diverged() {
                    "diverged".to_string()
                } else {
                    format!("{:.6e}", e.record.final_loss)
                };
                println!("{mark} eta={:<10} {status}", e.eta);
            }
            println!("-> {}", outcome.dir.join("sweep.csv").display());
            Ok(EXIT_OK)
        }
        Command::Check {
            suite,
            seed,
            n,
            out,
            inject_violation,
        } => {
            let outcome = cmd_check(&CheckOptions {
                suite,
                seed,
                n,
                output_dir: out,
                inject_violation,
            })?;
            for l in &outcome.lines {
                println!(
                    "{} {}: {}",
                    if l.passed { "PASS" } else { "FAIL" },
                    l.name,
                    l.detail
                );
            }
            println!("-> {}", outcome.dir.join("report.txt").display());
            Ok(if outcome.passed() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Plot {
            csv,
            columns,
            out,
            log_y,
            x,
        } => {
            let n = cmd_plot(&PlotOptions {
                csv,
                columns,
                out: out.clone(),
                log_y,
                x_column: x,
            })?;
            println!("{n} series -> {}", out.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
