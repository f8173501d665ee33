//! Experiment harness for `kplab-core`: config files, field files, and the
//! batch commands behind the `kplab` binary.
//!
//! A run resolves a config (file plus `--key value` overrides), executes the
//! command, and writes `<output>/<command>.csv`, `<output>/<command>.json`
//! and the resolved `<output>/<command>.cfg`. Every file carries the SHA-256
//! of the resolved config. Without an output directory the JSON document
//! goes to stdout.
//!
//! Exit codes: 0 when every acceptance check passes, 2 on a violation, 1 on
//! malformed input.

pub mod commands;
pub mod config;
pub mod format;
pub mod par;

pub use kplab_core as core;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use commands::{Outcome, RunError};
use config::{Command, ConfigText, ExperimentConfig, UsageError};
use serde_json::json;

/// Command-line overrides, config file and thread count of one invocation.
#[derive(Clone, Debug, Default)]
pub struct Invocation {
    pub command: String,
    pub config: Option<PathBuf>,
    pub threads: usize,
    pub overrides: Vec<(String, String)>,
}

/// Splits `--key value` / `--key=value` pairs. `--config` and `--threads`
/// are picked out wherever they appear.
pub fn parse_overrides(args: &[String], inv: &mut Invocation) -> Result<(), UsageError> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(UsageError(format!("expected '--key value', got '{a}'")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (config::flag_key(k), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| UsageError(format!("flag '--{flag}' needs a value")))?;
                (config::flag_key(flag), v.clone())
            }
        };
        match key.as_str() {
            "config" => inv.config = Some(PathBuf::from(value)),
            "threads" => {
                inv.threads = value
                    .parse()
                    .ok()
                    .filter(|t| *t >= 1)
                    .ok_or_else(|| UsageError(format!("flag '--threads': expected a positive integer, got '{value}'")))?
            }
            _ => inv.overrides.push((key, value)),
        }
    }
    Ok(())
}

/// Resolves the config an invocation describes. `validate` checks the
/// config it is given: a probe or sweep file keeps its own command.
pub fn resolve(inv: &Invocation) -> Result<ExperimentConfig, UsageError> {
    let cmd: Command = inv.command.parse()?;
    let file = match &inv.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read config '{}': {e}", p.display())))?;
            config::parse_text(&text)?
        }
        None => ConfigText::default(),
    };
    match (cmd, file.command) {
        (Command::Validate, Some(target @ (Command::Probe | Command::Sweep))) => config::resolve(target, &file, &inv.overrides),
        (Command::Validate, Some(Command::Validate) | None) => config::resolve(cmd, &file, &inv.overrides),
        (Command::Validate, Some(other)) => Err(UsageError(format!(
            "validate checks probe and sweep configs; this file is for '{}'",
            other.as_str()
        ))),
        (_, Some(fc)) if fc != cmd => Err(UsageError(format!(
            "config file is for '{}', not '{}'",
            fc.as_str(),
            cmd.as_str()
        ))),
        _ => config::resolve(cmd, &file, &inv.overrides),
    }
}

/// The JSON document written for a run.
pub fn document(cfg: &ExperimentConfig, out: &Outcome) -> serde_json::Value {
    json!({
        "command": cfg.command.as_str(),
        "config": { "seed": cfg.seed, "params": cfg.params },
        "config_hash": cfg.hash(),
        "status": if out.violations.is_empty() { "pass" } else { "violation" },
        "violations": out.violations,
        "summary": out.summary,
    })
}

fn csv_bytes(hash: &str, out: &Outcome) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let mut header = out.table.header.clone();
    header.push("config_hash".into());
    w.write_record(&header)?;
    for row in &out.table.rows {
        w.write_record(row.iter().map(String::as_str).chain([hash]))?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Writes the outputs of a finished run into `dir` (`name` is the file stem).
pub fn write_outputs(dir: &Path, name: &str, cfg: &ExperimentConfig, out: &Outcome) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash();
    let csv = csv_bytes(&hash, out).map_err(std::io::Error::other)?;
    fs::write(dir.join(format!("{name}.csv")), csv)?;
    let mut doc = serde_json::to_string_pretty(&document(cfg, out)).map_err(std::io::Error::other)?;
    doc.push('\n');
    fs::write(dir.join(format!("{name}.json")), doc)?;
    fs::write(dir.join(format!("{name}.cfg")), format!("# config_hash = {hash}\n{}", cfg.canonical()))?;
    for (fname, f) in &out.fields {
        let mut buf = Vec::new();
        format::write_binary(&mut buf, f).map_err(std::io::Error::other)?;
        fs::write(dir.join(format!("{name}_{fname}.bin")), buf)?;
    }
    Ok(())
}

/// Runs one invocation end to end and returns the process exit code.
/// Diagnostics go to `err`, the JSON document to `stdout` when no output
/// directory is configured.
pub fn execute(inv: &Invocation, stdout: &mut impl Write, err: &mut impl Write) -> i32 {
    let cfg = match resolve(inv) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let validating = inv.command == "validate";
    let result = if validating {
        commands::run(&ExperimentConfig { command: Command::Validate, ..cfg.clone() }, inv.threads)
    } else {
        commands::run(&cfg, inv.threads)
    };
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let name = if validating { "validate" } else { cfg.command.as_str() };
    match &cfg.output {
        Some(dir) => {
            if let Err(e) = write_outputs(dir, name, &cfg, &out) {
                let _ = writeln!(err, "error: writing outputs to '{}': {e}", dir.display());
                return 1;
            }
        }
        None => {
            let doc = serde_json::to_string_pretty(&document(&cfg, &out)).expect("serializable");
            let _ = writeln!(stdout, "{doc}");
        }
    }
    for v in &out.violations {
        let _ = writeln!(err, "violation: {v}");
    }
    out.exit_code()
}

/// Convenience for tests and scripts: run and keep the outcome.
pub fn run_config(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, RunError> {
    commands::run(cfg, threads)
}
