//! `gtta`: fit, predict, distill, count and analyze from the command line.

mod args;
mod commands;
mod config;
mod provenance;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use args::{Cli, Command};
use provenance::Outcome;

fn run_command(cmd: &Command) -> Result<Option<Outcome>> {
    Ok(Some(match cmd {
        Command::Synth(a) => commands::synth(a)?,
        Command::Train(a) => commands::train(a)?,
        Command::Fit(a) => commands::fit(a)?,
        Command::Predict(a) => commands::predict(a)?,
        Command::AutoSigma(a) => commands::auto_sigma(a)?,
        Command::Distill(a) => commands::distill_cmd(a)?,
        Command::Count(a) => commands::count_cmd(a)?,
        Command::Targets(a) => commands::targets(a)?,
        Command::Analyze(a) => commands::analyze(a)?,
        Command::Replay(a) => {
            replay(&a.provenance, a.out.as_deref())?;
            return Ok(None);
        }
    }))
}

fn execute(cmd: &Command, argv: Vec<String>) -> Result<Option<provenance::Provenance>> {
    let Some(outcome) = run_command(cmd)? else {
        return Ok(None);
    };
    let config = serde_json::to_value(cmd)?;
    Ok(Some(provenance::record(&outcome, argv, config)?))
}

/// Reruns the recorded command and checks every output hash.
fn replay(path: &std::path::Path, out: Option<&std::path::Path>) -> Result<()> {
    let recorded = provenance::load(path)?;
    let mut argv = recorded.argv.clone();
    if let Some(dir) = out {
        let pos = argv
            .iter()
            .position(|a| a == "--out")
            .context("recorded command has no --out")?;
        argv[pos + 1] = dir.display().to_string();
    }
    let cli = Cli::try_parse_from(std::iter::once("gtta".to_string()).chain(argv.iter().cloned()))
        .context("recorded command no longer parses")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("refusing to replay a replay");
    }
    let fresh = execute(&cli.command, argv)?.expect("recorded commands produce outputs");
    let mut mismatched = Vec::new();
    for (name, digest) in &recorded.outputs {
        if fresh.outputs.get(name) != Some(digest) {
            mismatched.push(name.clone());
        }
    }
    if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() {
        bail!("replay differs in {:?}", mismatched);
    }
    println!("replay verified {} artifacts", recorded.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let argv = match config::merge(raw) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli.command, provenance::canonical_argv(&argv)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
