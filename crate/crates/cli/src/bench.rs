//! Corpus benchmark: every `*.json` instance in a directory against every
//! requested goal, one CSV row per pair. Fairness columns are recomputed
//! from the returned allocation, not read off the solver report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use fairshare::mms::{mms_exact, MmsError, MmsRecord};
use fairshare::solvers::SolveError;
use fairshare::verify::{check_ef1, check_efx, check_mms_ratio};
use fairshare::{solve, Goal, Instance, Ratio, SolverConfig};
use serde::Serialize;

use crate::io::{read_instance, to_json};
use crate::CliError;

pub const HEADER: [&str; 11] = [
    "instance_id",
    "goal",
    "epsilon",
    "delta",
    "mms_ratio",
    "efx_pass",
    "ef1_pass",
    "pool_size",
    "iterations",
    "wall_millis",
    "status",
];

/// One CSV row. Optional fields are empty when the run did not produce them;
/// `mms_ratio` is also empty when the instance is past the exact cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub instance_id: String,
    pub goal: Goal,
    pub epsilon: Ratio,
    pub delta: Ratio,
    pub mms_ratio: Option<String>,
    pub efx_pass: Option<bool>,
    pub ef1_pass: Option<bool>,
    pub pool_size: Option<usize>,
    pub iterations: Option<usize>,
    pub wall_millis: Option<u128>,
    pub status: String,
}

pub struct BenchArgs<'a> {
    pub corpus: &'a Path,
    pub goals: &'a [Goal],
    pub config: SolverConfig,
    pub jobs: usize,
    /// Directory receiving `<id>.<goal>.trace.json` files.
    pub trace_dir: Option<&'a Path>,
}

/// Instance files in `dir`, sorted by file name.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn instance_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn status_of(e: &SolveError) -> &'static str {
    match e {
        SolveError::Invariant { .. } => "invariant-breach",
        SolveError::Mms(MmsError::CapExceeded { .. }) => "cap-exceeded",
        _ => "invalid",
    }
}

fn run_one(path: &Path, args: &BenchArgs<'_>) -> Vec<BenchRow> {
    let id = instance_id(path);
    let cfg = &args.config;
    let blank = |goal: Goal, status: String| BenchRow {
        instance_id: id.clone(),
        goal,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        mms_ratio: None,
        efx_pass: None,
        ef1_pass: None,
        pool_size: None,
        iterations: None,
        wall_millis: None,
        status,
    };
    let inst = match read_instance(path) {
        Ok(inst) => inst,
        Err(_) => return args.goals.iter().map(|&g| blank(g, "unreadable".into())).collect(),
    };
    let records = exact_records(&inst, cfg.exact_cap);
    args.goals
        .iter()
        .map(|&goal| {
            let start = Instant::now();
            let run = solve(&inst, goal, cfg);
            let wall = start.elapsed().as_millis();
            match run {
                Err(e) => BenchRow { wall_millis: Some(wall), ..blank(goal, status_of(&e).into()) },
                Ok(report) => {
                    if let Some(dir) = args.trace_dir {
                        // Trace files are best-effort; the row still records the run.
                        let _ = fs::write(dir.join(format!("{id}.{goal}.trace.json")), to_json(&report.trace));
                    }
                    let x = &report.allocation;
                    let alpha = cfg.alpha();
                    let mms_ratio = records
                        .as_ref()
                        .and_then(|r| check_mms_ratio(&inst, x, r).ok())
                        .map(|f| f.to_string());
                    BenchRow {
                        mms_ratio,
                        efx_pass: Some(check_efx(&inst, x, alpha).is_ok()),
                        ef1_pass: Some(check_ef1(&inst, x, alpha).is_ok()),
                        pool_size: Some(x.pool.len()),
                        iterations: Some(report.iterations),
                        wall_millis: Some(wall),
                        ..blank(goal, "ok".into())
                    }
                }
            }
        })
        .collect()
}

/// Exact MMS for the verification columns, `None` past the cap.
fn exact_records(inst: &Instance, cap: usize) -> Option<Vec<MmsRecord>> {
    (0..inst.agents()).map(|i| mms_exact(inst, i, inst.agents(), cap).ok()).collect()
}

/// Runs instances on up to `jobs` workers; rows come back in corpus order.
pub fn run(args: &BenchArgs<'_>) -> Result<Vec<BenchRow>, CliError> {
    let files = corpus_files(args.corpus)?;
    let slots: Mutex<Vec<Option<Vec<BenchRow>>>> = Mutex::new(vec![None; files.len()]);
    let next = AtomicUsize::new(0);
    let workers = args.jobs.clamp(1, files.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = files.get(k) else { break };
                let rows = run_one(path, args);
                slots.lock().expect("worker panicked")[k] = Some(rows);
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    Ok(slots.into_iter().flat_map(|r| r.expect("every slot filled")).collect())
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
