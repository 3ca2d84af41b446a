use clap::Parser;
use lanser_core::mockls::{serve, Outcome, Script};
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

/// Scriptable LSP server fixture speaking the base protocol on stdio.
#[derive(Parser)]
#[command(name = "lanser-mockls", version)]
struct Args {
    /// JSON behaviour script; the default script answers every request neutrally.
    #[arg(long)]
    script: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let script = match &args.script {
        None => Script::default(),
        Some(path) => match std::fs::read_to_string(path).map(|t| Script::from_json(&t)) {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => {
                eprintln!("lanser-mockls: bad script {}: {e}", path.display());
                return ExitCode::from(2);
            }
            Err(e) => {
                eprintln!("lanser-mockls: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
    };
    let stdin = BufReader::new(io::stdin());
    match serve(&script, stdin, io::stdout().lock()) {
        Ok(Outcome::Exit) | Ok(Outcome::EndOfInput) => ExitCode::SUCCESS,
        Ok(Outcome::Crash) => std::process::exit(3),
        Err(e) => {
            eprintln!("lanser-mockls: {e}");
            ExitCode::FAILURE
        }
    }
}
