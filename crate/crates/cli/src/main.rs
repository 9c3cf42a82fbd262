use std::process::ExitCode;

use clap::Parser;
use focal_calib_cli::commands::{run, Cli, UsageError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("FOCAL_CALIB_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: FOCAL_CALIB_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
