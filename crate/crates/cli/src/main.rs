use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod commands;
mod spec;
mod table;

use commands::Command;
use spec::{parse_spec_file, parse_tokens, usage, ExperimentSpec, UsageError};

/// Runs one tightbox experiment and writes its results as CSV.
///
/// Parameters are `key=value` tokens (lists comma-separated). A spec file
/// holds the same tokens one per line and may also set `command=...`;
/// tokens on the command line override it.
#[derive(Parser, Debug)]
#[command(name = "tightbox", version)]
struct Cli {
    /// Command name (optional with a spec file that sets command=...),
    /// followed by key=value parameters. Commands: init-width-sweep,
    /// init-depth-sweep, relu-factor, reconstruction-sweep, train,
    /// tightness-eval, sabr-xi-sweep, pi-audit, certify-batch
    args: Vec<String>,

    #[arg(long)]
    spec_file: Option<PathBuf>,

    /// Output CSV path; stdout when absent
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn resolve(cli: &Cli) -> Result<(Command, ExperimentSpec), UsageError> {
    let mut given = Vec::new();
    if let Some(path) = &cli.spec_file {
        let text = std::fs::read_to_string(path).map_err(|e| usage!("cannot read {}: {e}", path.display()))?;
        given = parse_spec_file(&text)?;
    }
    let mut params = cli.args.as_slice();
    let mut command = None;
    if let Some(first) = params.first().filter(|a| !a.contains('=')) {
        command = Some(Command::from_name(first).ok_or_else(|| usage!("unknown command '{first}'"))?);
        params = &params[1..];
    }
    given.extend(parse_tokens(params.iter().map(String::as_str))?);
    if let Some((_, name)) = given.iter().find(|(k, _)| k == "command") {
        let from_file = Command::from_name(name).ok_or_else(|| usage!("unknown command '{name}'"))?;
        command = command.or(Some(from_file));
    }
    given.retain(|(k, _)| k != "command");
    let command = command.ok_or_else(|| usage!("no command given (argument or command=... in the spec file)"))?;
    let spec = ExperimentSpec::resolve(command.name(), &command.defaults(), &given)?;
    Ok((command, spec))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let (command, spec) = resolve(cli)?;
    let table = command.run(&spec)?;
    match &cli.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            table.write_csv(&spec, &mut w)?;
            w.flush()?;
        }
        None => table.write_csv(&spec, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
