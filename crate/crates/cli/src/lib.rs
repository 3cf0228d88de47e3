//! Command-line driver: every subcommand is a thin composition of
//! `microreg` operations that writes its results, plus a `run.json`
//! manifest, under `--out`.

pub mod args;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::Parser;

use crate::args::{Cli, Command, ReplayArgs};
use crate::config::Settings;
pub use crate::error::{exit, CliError};
use crate::manifest::{Manifest, MANIFEST};

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match run(cli, &argv[1..]) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

/// Runs a parsed command. `args` is the command line without the program
/// name and is recorded in the manifest.
pub fn run(cli: Cli, args: &[String]) -> Result<(), CliError> {
    if let Command::Replay(r) = &cli.command {
        return replay(r, cli.out.as_deref());
    }
    let settings = Settings::resolve(cli.config.as_deref(), cli.seed, cli.variant, cli.out.as_deref())?;
    let mut inputs = match &cli.command {
        Command::Synth(a) => commands::synth(a, &settings)?,
        Command::Calibrate(a) => commands::calibrate(a, &settings)?,
        Command::Reconstruct(a) => commands::reconstruct(a, &settings)?,
        Command::Register(a) => commands::register_cmd(a, &settings)?,
        Command::Evaluate(a) => commands::evaluate(a, &settings)?,
        Command::Bench(a) => commands::bench(a, &settings)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    inputs.extend(settings.inputs.iter().cloned());
    let m = Manifest {
        tool: "microreg".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        args: manifest::template_args(args),
        seed: settings.seed,
        inputs: manifest::digest_inputs(&inputs)?,
        outputs: manifest::digest_outputs(&settings.out)?,
    };
    microreg::io::write_json(&settings.out.join(MANIFEST), &m)?;
    Ok(())
}

fn replay(r: &ReplayArgs, out: Option<&Path>) -> Result<(), CliError> {
    let m: Manifest = microreg::io::read_json(&r.manifest)?;
    for input in &m.inputs {
        let digest = manifest::sha256_file(&input.path)?;
        if digest != input.sha256 {
            return Err(CliError::Mismatch(format!("input {} changed since the run", input.path.display())));
        }
    }
    let out: PathBuf = match out {
        Some(o) => o.to_path_buf(),
        None => {
            let recorded = r.manifest.parent().unwrap_or(Path::new("."));
            let name = recorded.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned());
            recorded.with_file_name(format!("{name}.replay"))
        }
    };
    let args = manifest::instantiate_args(&m.args, &out);
    let argv: Vec<String> = std::iter::once(m.tool.clone()).chain(args.iter().cloned()).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Parse(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Invalid("a manifest cannot record a replay".into()));
    }
    run(cli, &args)?;
    let problems = manifest::diff(&m.outputs, &manifest::digest_outputs(&out)?);
    if !problems.is_empty() {
        return Err(CliError::Mismatch(problems.join("; ")));
    }
    println!("replay ok: {} outputs identical in {}", m.outputs.len(), out.display());
    Ok(())
}
