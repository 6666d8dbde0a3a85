use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use nctc_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let result = run(cli, &mut input, &mut out);
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(code), Ok(())) => ExitCode::from(code as u8),
        (Err(e), _) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        (_, Err(e)) => {
            eprintln!("error: writing output: {e}");
            ExitCode::FAILURE
        }
    }
}
