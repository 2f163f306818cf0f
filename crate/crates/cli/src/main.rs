mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgAction, CommandFactory, Parser};
use dcnet::model::parse_kv;

use args::Cli;

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed input: exit 2.
    Input(anyhow::Error),
    /// Non-finite values, divergence or a failed gradient check: exit 3.
    Numerical(anyhow::Error),
    /// Anything else, e.g. a generated puzzle the oracle rejects: exit 1.
    Failed(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Numerical(e) | Failure::Failed(e) => e,
        }
    }
}

/// Re-parses `raw` with the config file's entries appended for every flag
/// not given on the command line.
fn apply_config_file(raw: Vec<OsString>, cli: Cli) -> Result<Cli, Failure> {
    let Some(path) = cli.config_file.clone() else {
        return Ok(cli);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Input(anyhow::anyhow!("{}: {e}", path.display())))?;
    let entries = parse_kv(&text).map_err(|e| Failure::Input(anyhow::anyhow!("{}: {e}", path.display())))?;
    let matches = Cli::command().try_get_matches_from(&raw).unwrap_or_else(|e| e.exit());
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let mut argv = raw;
    for (key, value) in entries {
        let key = key.replace('_', "-");
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && a.get_id() != "config_file")
            .ok_or_else(|| {
                Failure::Input(anyhow::anyhow!("{}: unknown key {key:?} for `{name}`", path.display()))
            })?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => argv.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(Failure::Input(anyhow::anyhow!(
                        "{}: {key} must be true or false, got {other:?}",
                        path.display()
                    )))
                }
            }
        } else {
            argv.push(format!("--{key}").into());
            argv.push(value.into());
        }
    }
    Ok(Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit()))
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let cli = Cli::try_parse_from(&raw).unwrap_or_else(|e| e.exit());
    let result = apply_config_file(raw, cli).and_then(commands::run);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
