use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kplab::{execute, parse_overrides, Invocation};

/// Reproducible experiments for KP-II type equations on the three-torus.
///
/// Every parameter can be set in the config file section of the command or
/// overridden with `--key value` (hyphens and underscores are equivalent).
#[derive(Parser, Debug)]
#[command(name = "kplab", version)]
struct Cli {
    /// count | resonance | norms | probe | sweep | solve | picard | validate
    command: String,
    /// Config file (`key = value` lines, one `[command]` section).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    /// Parameter overrides: `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut inv = Invocation { command: cli.command, config: cli.config, threads: cli.threads as usize, overrides: Vec::new() };
    if let Err(e) = parse_overrides(&cli.overrides, &mut inv) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let code = execute(&inv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code as u8)
}
