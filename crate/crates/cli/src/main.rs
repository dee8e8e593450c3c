#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Parser;

use args::{BenchCommand, Cli, Command, PolyCommand};
use commands::{user, Outcome, UserError};
use manifest::Manifest;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(None)) => ExitCode::SUCCESS,
        Ok(Ok(Some(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(e)) => match e.downcast_ref::<UserError>() {
            Some(u) => {
                eprintln!("error: {u}");
                ExitCode::from(1)
            }
            None => {
                eprintln!("internal error: {e:?}");
                ExitCode::from(2)
            }
        },
        Err(_) => {
            eprintln!("internal error: panic (see message above)");
            ExitCode::from(2)
        }
    }
}

/// Runs a command and writes its manifest. Returns a message when results
/// were written but the run should still fail.
fn run(cli: Cli) -> Result<Option<String>> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(user("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let (mut command, manifest_path) = match cli.command {
        Command::Replay(r) => {
            let m = Manifest::read(&r.manifest).map_err(|e| user(format!("{e:#}")))?;
            let mut command = m.command;
            if let Some(out) = r.out {
                redirect(&mut command, out);
            }
            (command, cli.manifest)
        }
        c => (c, cli.manifest),
    };
    commands::resolve(&mut command)?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let mut outcome = execute(&command)?;
    let mut manifest = Manifest {
        tool: "difflik".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        threads: cli.threads,
        seed: outcome.seed,
        inputs: std::mem::take(&mut outcome.inputs),
        outputs: std::mem::take(&mut outcome.outputs),
        started,
        wall_time_seconds: 0.0,
    };
    let target = manifest_target(&manifest, manifest_path, &outcome);
    manifest.wall_time_seconds = clock.elapsed().as_secs_f64();
    if let Some(p) = &target {
        manifest.write(p)?;
    }
    if let Some(dir) = outcome.staged.take() {
        dir.commit()?;
    }
    Ok(outcome.failure)
}

fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Expand(a) => commands::expand(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Bench(BenchCommand::Density(a)) => commands::bench_density(a),
        Command::Bench(BenchCommand::Mle(a)) => commands::bench_mle(a),
        Command::Poly(PolyCommand::Debug(a)) => commands::poly_debug(a),
        Command::Replay(_) => Err(user("a manifest cannot record another replay")),
    }
}

/// Points the recorded command at a new output location.
fn redirect(command: &mut Command, out: PathBuf) {
    match command {
        Command::Expand(a) => a.out = Some(out),
        Command::Fit(a) => a.out = Some(out),
        Command::Simulate(a) => a.out = out,
        Command::Bench(BenchCommand::Density(a)) => a.common.out = out,
        Command::Bench(BenchCommand::Mle(a)) => a.common.out = out,
        Command::Poly(PolyCommand::Debug(a)) => a.out = Some(out),
        Command::Replay(_) => {}
    }
}

/// `manifest.json` inside an output directory, `<file>.manifest.json` next
/// to a single output file; nothing for stdout output unless `--manifest`
/// names a path.
fn manifest_target(manifest: &Manifest, explicit: Option<PathBuf>, outcome: &Outcome) -> Option<PathBuf> {
    if explicit.is_some() {
        return explicit;
    }
    if let Some(dir) = &outcome.staged {
        return Some(dir.path().join("manifest.json"));
    }
    let primary: Option<&Path> = match &manifest.command {
        Command::Expand(a) => a.out.as_deref(),
        Command::Fit(a) => a.out.as_deref(),
        Command::Simulate(a) => Some(&a.out),
        Command::Poly(PolyCommand::Debug(a)) => a.out.as_deref(),
        _ => None,
    };
    primary.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}
