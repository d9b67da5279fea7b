use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;

use semibs::cli::{parse_config, run};
use semibs::kernel::constants_table;
use semibs::nonlinearity::Nonlinearity;

/// Semilinear Black-Scholes solver by Picard iteration of the Duhamel map.
#[derive(Debug, Parser)]
#[command(name = "semibs", version)]
struct Args {
    /// Run configuration (TOML).
    #[arg(short, long, required_unless_present_any = ["list_nonlinearities", "print_constants_table"])]
    config: Option<PathBuf>,

    /// Overrides `output_dir` from the configuration.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Print the available nonlinearities and exit.
    #[arg(long)]
    list_nonlinearities: bool,

    /// Print the kernel norm constants table and exit.
    #[arg(long)]
    print_constants_table: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if args.list_nonlinearities {
        for (name, description) in Nonlinearity::catalog() {
            println!("{name:<14} {description}");
        }
    }
    if args.print_constants_table {
        println!("{:>6} {:>22} {:>22}  provenance", "p", "C_p", "D_p");
        for row in constants_table() {
            println!("{:>6} {:>22.16e} {:>22.16e}  {}", row.p, row.c_p, row.d_p, row.provenance);
        }
    }
    let Some(path) = args.config else {
        return ExitCode::SUCCESS;
    };

    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            error!("cannot read {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    match run(&cfg) {
        Ok(summary) => {
            for o in &summary.outcomes {
                println!("{:<17} {}  {}", o.task.name(), if o.passed { "PASS" } else { "FAIL" }, o.detail);
            }
            println!("manifest {}", summary.manifest);
            if summary.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
