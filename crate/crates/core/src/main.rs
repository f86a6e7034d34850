use clap::Parser;
use cloudnav::cli::{render_summary, resolve_config, run_suite, CliArgs};
use cloudnav::Error;
use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let args = CliArgs::parse();
    let cfg = match resolve_config(&args) {
        Ok(cfg) => cfg,
        Err(Error::Config(messages)) => {
            eprintln!("configuration error:");
            for m in &messages {
                eprintln!("  {m}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_suite(&cfg) {
        Ok(summary) => {
            // The artifacts are on disk by now; a reader closing the pipe
            // early (e.g. `| head`) must not turn the run into a failure.
            match writeln!(io::stdout().lock(), "{}", render_summary(&cfg, &summary)) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
