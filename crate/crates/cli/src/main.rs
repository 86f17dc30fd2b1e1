use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use polyboltz_cli::commands::{self, ConstantsArgs};
use polyboltz_cli::suites::Suite;

#[derive(Parser)]
#[command(
    name = "polyboltz",
    version,
    about = "Space-homogeneous polyatomic Boltzmann solver"
)]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, env = "POLYBOLTZ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario and write the trajectory CSV, snapshots and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite: kinematics, operator, solver, theorems or constants.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print kappa, rho for the three psi weights and C_a.
    Constants {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        gamma: f64,
        /// unit | constant:V | power:SCALE:EXP | kappa:K | table:PATH
        #[arg(long = "b", default_value = "unit")]
        kernel: String,
        /// Comma-separated a:s pairs for C_a.
        #[arg(long)]
        a_list: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        /// Grid for C_a as lv,nv,imax,ni.
        #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [5.0, 12.0, 12.0, 12.0])]
        grid: Vec<f64>,
    },
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.filter(|n| *n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build_global().context("starting the thread pool")
}

fn dispatch(cli: Cli) -> Result<i32> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Run { config, out, seed } => commands::cmd_run(&config, out.as_deref(), seed),
        Command::Verify { suite, config, out } => {
            commands::cmd_verify(suite, &config, out.as_deref())
        }
        Command::Constants {
            alpha,
            gamma,
            kernel,
            a_list,
            delta,
            m,
            grid,
        } => commands::cmd_constants(&ConstantsArgs {
            alpha,
            gamma,
            delta,
            m,
            kernel,
            a_list,
            grid: [grid[0], grid[1], grid[2], grid[3]],
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
