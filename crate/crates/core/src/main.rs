use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use warpgeo::runner::{self, RunOptions, Status};

#[derive(Parser)]
#[command(
    name = "warpgeo",
    version,
    about = "Numerical checks for warped products and Riemannian maps",
    after_help = "Expressions: coordinates x1..xn, pi, + - * / ^, exp ln sin cos tan sqrt, pow(a, b).\n\
                  `^` is right-associative and binds tighter than a leading minus: -x1^2 = -(x1^2).\n\
                  Exit status: 0 all checks pass, 1 a check failed, 2 configuration error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Override a scenario key, e.g. `--set seed=3` or `--set warped_product.warp="x1^2"`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List manifolds, maps and checks.
    List,
    /// Describe a check.
    Describe { check: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", runner::list_catalog());
            ExitCode::SUCCESS
        }
        Command::Describe { check } => match runner::describe_check(&check) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Run {
            scenario,
            overrides,
            out,
            seed,
        } => {
            let opts = RunOptions {
                overrides,
                out_dir: out,
                seed,
            };
            match runner::run_file(&scenario, &opts) {
                Ok(outcome) => {
                    for c in &outcome.report.checks {
                        let status = match c.status {
                            Status::Pass => "PASS",
                            Status::Fail => "FAIL",
                            Status::NotComputable => "N/A ",
                        };
                        let stamps = if c.stamps.is_empty() {
                            String::new()
                        } else {
                            format!(" [{}]", c.stamps.join(", "))
                        };
                        println!(
                            "{status} {:<26} residual {:.3e} (tol {:.0e}){stamps}",
                            c.name, c.max_residual, c.tolerance
                        );
                        if let Some(m) = &c.message {
                            println!("     {m}");
                        }
                    }
                    println!("report: {}", outcome.report_path.display());
                    ExitCode::from(outcome.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
