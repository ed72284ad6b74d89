mod commands;
mod config;
mod output;

use std::process::ExitCode;

use bwlab_core::Error;
use clap::error::ErrorKind;
use clap::Parser;

use config::{Cli, RunConfig};
use output::Sink;

const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("bwlab: {e}");
    ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_SOLVER })
}

fn threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("BWLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("BWLAB_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    if let Err(e) = threads() {
        return exit_for(&e);
    }
    let spec = match cli.global.spec() {
        Ok(s) => s,
        Err(e) => return exit_for(&e),
    };
    let config = RunConfig::new(&cli, spec);
    let mut sink = match Sink::new(cli.global.out.as_deref(), &config) {
        Ok(s) => s,
        Err(e) => return exit_for(&e),
    };
    match commands::run(&cli, spec, &mut sink) {
        Ok(out) => {
            if cli.global.json {
                println!("{}", sink.document(&out.result));
            } else {
                print!("{}", out.summary);
                for p in &sink.written {
                    println!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => exit_for(&e),
    }
}
