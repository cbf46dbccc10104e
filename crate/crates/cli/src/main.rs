//! `acmap` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

/// Invalid flag values or combinations, detected before any work starts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const SUBCOMMANDS: [&str; 5] = ["simulate", "map", "train", "eval", "inspect"];

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<acmap::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

fn config_path(argv: &[OsString]) -> Result<Option<(usize, usize, String)>> {
    for (i, a) in argv.iter().enumerate() {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            let v = argv
                .get(i + 1)
                .ok_or_else(|| UsageError("--config needs a file".into()))?;
            return Ok(Some((i, 2, v.to_string_lossy().into_owned())));
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Ok(Some((i, 1, v.to_string())));
        }
    }
    Ok(None)
}

/// Flags stored in a JSON config file, as argv tokens.
fn config_flags(path: &str) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("--config {path}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| UsageError(format!("--config {path}: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| UsageError(format!("--config {path}: expected a JSON object of flag values")))?;
    let mut flags = Vec::new();
    for (key, v) in obj {
        let flag = format!("--{}", key.trim_start_matches('-').replace('_', "-"));
        let text = match v {
            serde_json::Value::Bool(true) => {
                flags.push(flag.into());
                continue;
            }
            serde_json::Value::Bool(false) | serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|x| x.as_str().map(str::to_string).unwrap_or_else(|| x.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            serde_json::Value::Object(_) => {
                return Err(UsageError(format!("--config {path}: value of '{key}' must not be an object")).into())
            }
        };
        flags.push(format!("{flag}={text}").into());
    }
    Ok(flags)
}

/// Splices config-file flags in right after the subcommand so that flags on the
/// command line, which come later, override them.
fn expand_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((at, width, path)) = config_path(&argv)? else {
        return Ok(argv);
    };
    argv.drain(at..at + width);
    let flags = config_flags(&path)?;
    let pos = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map_or(argv.len(), |i| i + 1);
    argv.splice(pos..pos, flags);
    Ok(argv)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be ≥ 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, cli.seed),
        Command::Map(a) => commands::map(a),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Eval(a) => commands::eval(a, cli.seed),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn run(argv: Vec<OsString>) -> u8 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 1,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os().collect()))
}
