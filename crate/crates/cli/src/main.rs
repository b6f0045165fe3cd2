mod config;
mod pipelines;
mod report;
mod store;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::Config;
use crate::pipelines::{execute, tasks, Cell, Task};
use crate::report::ReportRow;
use crate::store::{Manifest, Metadata};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "homlab", version, about = "Run and report homlab experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config, resuming from the output directory.
    Run { config: PathBuf },
    /// Re-aggregate `rows.csv` of an output directory.
    Report { dir: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

/// Machine-readable diagnostic on stderr.
fn diagnostic(kind: &str, err: &anyhow::Error) {
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    let doc = serde_json::json!({ "error": kind, "message": format!("{err:#}"), "causes": chain });
    eprintln!("{doc}");
}

fn workers(cfg: &Config) -> Result<usize> {
    if let Ok(v) = std::env::var("HOMLAB_WORKERS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("HOMLAB_WORKERS={v:?} is not a positive integer"))?;
        if n == 0 {
            bail!("HOMLAB_WORKERS must be positive");
        }
        return Ok(n);
    }
    Ok(cfg.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Plan {
    cfg: Config,
    workers: usize,
    tasks: Vec<Vec<Task>>,
}

fn plan(path: &Path) -> Result<Plan> {
    let cfg = config::load(path)?;
    let workers = workers(&cfg)?;
    let tasks = cfg
        .experiments
        .iter()
        .map(|e| tasks(e).with_context(|| format!("experiment {:?}", e.id())))
        .collect::<Result<_>>()?;
    Ok(Plan {
        cfg,
        workers,
        tasks,
    })
}

fn validate(path: &Path) -> ExitCode {
    match plan(path) {
        Ok(p) => {
            let doc = serde_json::json!({
                "ok": true,
                "experiments": p.cfg.experiments.len(),
                "cells": p.tasks.iter().map(Vec::len).sum::<usize>(),
                "workers": p.workers,
            });
            println!("{doc}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            diagnostic("config", &e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn run(path: &Path) -> ExitCode {
    let plan = match plan(path) {
        Ok(p) => p,
        Err(e) => {
            diagnostic("config", &e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match execute_plan(&plan) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            diagnostic("io", &e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn execute_plan(plan: &Plan) -> Result<bool> {
    let started = Instant::now();
    let started_unix = unix_now();
    let dir = &plan.cfg.output;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = Manifest::load(dir, &plan.cfg.experiments)?;

    let mut pending: Vec<(usize, &Task)> = Vec::new();
    for (i, (exp, ts)) in plan.cfg.experiments.iter().zip(&plan.tasks).enumerate() {
        for t in ts {
            if manifest.get(exp.id(), &t.key()).is_none() {
                pending.push((i, t));
            }
        }
    }
    let total: usize = plan.tasks.iter().map(Vec::len).sum();
    let reused = total - pending.len();
    eprintln!(
        "homlab: {} cells to run, {reused} reused, {} workers",
        pending.len(),
        plan.workers
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()?;
    let (tx, rx) = mpsc::channel::<(usize, Cell)>();
    let experiments = &plan.cfg.experiments;
    // a single collector owns the manifest and serializes every write
    manifest = std::thread::scope(|s| -> Result<Manifest> {
        let collector = s.spawn(move || -> Result<Manifest> {
            for (i, cell) in rx {
                let id = experiments[i].id();
                if let Some(err) = &cell.error {
                    eprintln!("homlab: {id} {} refused: {err}", cell.task.key());
                }
                manifest.insert(id, cell);
                manifest.save(dir)?;
            }
            Ok(manifest)
        });
        pool.install(|| {
            pending.par_iter().for_each_with(tx, |tx, (i, t)| {
                let cell = execute(&experiments[*i], t);
                // the collector only stops early on an i/o error, reported below
                let _ = tx.send((*i, cell));
            });
        });
        collector.join().expect("collector panicked")
    })?;
    manifest.save(dir)?;

    let mut rows: Vec<ReportRow> = Vec::new();
    for (exp, ts) in experiments.iter().zip(&plan.tasks) {
        let cells: Vec<Cell> = ts
            .iter()
            .filter_map(|t| manifest.get(exp.id(), &t.key()).cloned())
            .collect();
        store::write_cells(dir, exp.id(), &cells)?;
        rows.extend(report::rows_for(exp, &cells)?);
    }
    report::write_rows(&dir.join("rows.csv"), &rows)?;
    let summary = report::emit(dir, &rows)?;
    store::write_metadata(
        dir,
        &Metadata {
            homlab_version: env!("CARGO_PKG_VERSION"),
            started_unix,
            finished_unix: unix_now(),
            elapsed_seconds: started.elapsed().as_secs_f64(),
            workers: plan.workers,
            cells_run: pending.len(),
            cells_reused: reused,
        },
    )?;
    report::print(&summary);
    Ok(summary.all_pass)
}

fn report_dir(dir: &Path) -> ExitCode {
    let res = report::read_rows(&dir.join("rows.csv")).and_then(|rows| report::emit(dir, &rows));
    match res {
        Ok(summary) => {
            report::print(&summary);
            if summary.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            diagnostic("report", &e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => run(&config),
        Command::Report { dir } => report_dir(&dir),
        Command::Validate { config } => validate(&config),
    }
}
