use std::process::ExitCode;

use clap::Parser;
use fracstab_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Check lines and verdict summaries are results, so they go to stdout.
            if e.code == fracstab_cli::exit::RUNTIME {
                eprintln!("{e}");
            } else {
                println!("{}", e.message);
                eprintln!("{} error (exit code {})", e.kind, e.code);
            }
            eprintln!("{}", e.record());
            ExitCode::from(e.code)
        }
    }
}
