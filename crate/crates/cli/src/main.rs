//! `ckn`: batch front end of the numerical laboratory.
//!
//! Exit codes: 0 success, 1 i/o, 2 invalid parameters or flags, 3 numerical failure.

mod commands;
mod config;

use std::io::Write;

use commands::{CliError, Report};
use config::{config_pairs, expand_args, parse_from, Command, Format};
use serde_json::json;

fn dispatch(cmd: &Command) -> Result<Report, CliError> {
    match cmd {
        Command::Params(a) => commands::params(a),
        Command::Profile(a) => commands::profile(a),
        Command::Shoot(a) => commands::shoot(a),
        Command::Minimize(a) => commands::minimize(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Flow(a) => commands::flow(a),
        Command::Selection(a) => commands::selection(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}

fn render(cmd: &Command, report: Report) -> String {
    let version = env!("CARGO_PKG_VERSION");
    match cmd.output().format {
        Format::Json => {
            let doc = json!({
                "schema": cmd.schema(),
                "version": version,
                "config": cmd,
                "result": report.json,
            });
            serde_json::to_string_pretty(&doc).expect("serializes") + "\n"
        }
        Format::Csv => {
            let mut out = format!("# schema={}\n# version={version}\n", cmd.schema());
            for (k, v) in config_pairs(cmd) {
                out.push_str(&format!("# {k}={v}\n"));
            }
            out + &report.csv
        }
    }
}

fn run(cmd: &Command) -> Result<(), CliError> {
    let text = render(cmd, dispatch(cmd)?);
    match &cmd.output().output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() {
    let args = match expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let cli = parse_from(args).unwrap_or_else(|e| e.exit());
    if let Err(e) = run(&cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
