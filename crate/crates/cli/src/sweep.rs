//! Sweep orchestration. Every pretraining job and every cell runs in its own
//! child process (`sweep-worker`); this process is the only writer of the
//! manifest and the tables.
//!
//! Layout of the output directory:
//!
//! ```text
//! manifest.json        configuration fingerprint and completed cells
//! encoders/<arm>-rep<R>.bin
//! cells/<arm>-n<N>-rep<R>.json
//! sweep_partial.csv    rows in completion order, removed when done
//! sweep.csv            all rows in canonical order
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{mpsc, Mutex};

use chronocon::analysis::{
    pretrain_arm, rep_seed, run_cell, write_sweep_table, Arm, Cell, SweepRow, SweepSpec,
};
use chronocon::cohort::Split;
use chronocon::model::ModelBundle;
use serde::{Deserialize, Serialize};

use crate::args::{SweepArgs, WorkerArgs};
use crate::context::{write_atomic, write_json, Context};
use crate::CliResult;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: String,
    completed: Vec<String>,
}

#[derive(Debug, Clone)]
enum Job {
    Pretrain { arm: Arm, rep: usize },
    Cell(Cell),
}

struct Layout {
    manifest: PathBuf,
    encoders: PathBuf,
    cells: PathBuf,
    partial: PathBuf,
    table: PathBuf,
}

impl Layout {
    fn new(dir: &Path) -> Self {
        Self {
            manifest: dir.join("manifest.json"),
            encoders: dir.join("encoders"),
            cells: dir.join("cells"),
            partial: dir.join("sweep_partial.csv"),
            table: dir.join("sweep.csv"),
        }
    }

    fn encoder(&self, arm: Arm, rep: usize) -> PathBuf {
        self.encoders.join(format!("{arm}-rep{rep}.bin"))
    }

    fn cell(&self, cell: Cell) -> PathBuf {
        self.cells.join(format!("{cell}.json"))
    }
}

fn shares_pretraining(arm: Arm) -> bool {
    arm != Arm::Scratch && !arm.needs_labels_for_pretraining()
}

fn read_row(path: &Path) -> Option<SweepRow> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn append_partial(path: &Path, row: &SweepRow) -> CliResult<()> {
    let mut buf = Vec::new();
    write_sweep_table(std::slice::from_ref(row), &mut buf)?;
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let text = String::from_utf8(buf)?;
    let body = if fresh {
        text.as_str()
    } else {
        text.split_once('\n').map(|(_, rest)| rest).unwrap_or("")
    };
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn run_job(ctx: &Context, layout: &Layout, job: &Job) -> Result<(), String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let mut cmd = Command::new(exe);
    cmd.args(ctx.child_args())
        .arg("sweep-worker")
        .env("CHRONOCON_THREADS", "1")
        .stdout(Stdio::null());
    match job {
        Job::Pretrain { arm, rep } => {
            cmd.args(["--arm", &arm.to_string(), "--rep", &rep.to_string(), "--encoder"])
                .arg(layout.encoder(*arm, *rep));
        }
        Job::Cell(cell) => {
            cmd.args([
                "--arm",
                &cell.arm.to_string(),
                "--rep",
                &cell.rep.to_string(),
                "--n-labeled",
                &cell.n_labeled.to_string(),
                "--encoder",
            ])
            .arg(layout.encoder(cell.arm, cell.rep))
            .arg("--out")
            .arg(layout.cell(*cell));
        }
    }
    let status = cmd.status().map_err(|e| format!("spawning worker: {e}"))?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("worker exited with {status}"))
    }
}

/// Runs `jobs` on up to `n` concurrent workers and reports each outcome to
/// `done` on the calling thread, in completion order.
fn run_pool(
    ctx: &Context,
    layout: &Layout,
    jobs: Vec<Job>,
    n: usize,
    mut done: impl FnMut(&Job, Result<(), String>) -> CliResult<()>,
) -> CliResult<()> {
    let total = jobs.len();
    let queue = Mutex::new(jobs.into_iter());
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| -> CliResult<()> {
        for _ in 0..n.min(total) {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").next();
                let Some(job) = next else { break };
                let outcome = run_job(ctx, layout, &job);
                if tx.send((job, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (job, outcome) in rx {
            done(&job, outcome)?;
        }
        Ok(())
    })
}

pub fn sweep(ctx: &Context, args: &SweepArgs) -> CliResult<()> {
    let mut config = ctx.config.clone();
    if let Some(arms) = &args.arms {
        config.sweep.arms = arms.iter().map(|a| a.to_string()).collect();
    }
    if let Some(n) = &args.n_labeled {
        config.sweep.n_labeled = n.clone();
    }
    if let Some(r) = args.repetitions {
        config.sweep.repetitions = r;
    }
    config.validate()?;
    let spec = SweepSpec::from_config(&config.sweep)?;
    let cohort = ctx.cohort()?;
    spec.validate(cohort.patients_in(Split::Train).len())?;

    let layout = Layout::new(&ctx.out_dir);
    if args.fresh {
        for dir in [&layout.cells, &layout.encoders] {
            if dir.exists() {
                fs::remove_dir_all(dir)?;
            }
        }
        for file in [&layout.manifest, &layout.partial, &layout.table] {
            if file.exists() {
                fs::remove_file(file)?;
            }
        }
    }
    let mut fingerprint = config.to_toml();
    if let Some(p) = &ctx.cohort_path {
        fingerprint.push_str(&format!("# cohort file: {}\n", p.display()));
    }
    if let Ok(text) = fs::read_to_string(&layout.manifest) {
        let old: Manifest = serde_json::from_str(&text)?;
        if old.config != fingerprint {
            return Err(format!(
                "{} belongs to a sweep with a different configuration; pass --fresh to discard it",
                layout.manifest.display()
            )
            .into());
        }
    }
    fs::create_dir_all(&layout.cells)?;
    fs::create_dir_all(&layout.encoders)?;

    let cells = spec.cells();
    let mut rows: BTreeMap<Cell, SweepRow> = BTreeMap::new();
    for &cell in &cells {
        if let Some(row) = read_row(&layout.cell(cell)) {
            rows.insert(cell, row);
        }
    }
    let pending: Vec<Cell> = cells.iter().copied().filter(|c| !rows.contains_key(c)).collect();
    log::info!(
        "{} cells, {} already complete, {} to run on {} worker(s)",
        cells.len(),
        rows.len(),
        pending.len(),
        ctx.jobs
    );

    let needed: BTreeSet<(Arm, usize)> = pending
        .iter()
        .filter(|c| shares_pretraining(c.arm))
        .map(|c| (c.arm, c.rep))
        .filter(|&(arm, rep)| !layout.encoder(arm, rep).exists())
        .collect();
    let mut failed_pretraining: BTreeMap<(Arm, usize), String> = BTreeMap::new();
    let pretrain_jobs = needed
        .iter()
        .map(|&(arm, rep)| Job::Pretrain { arm, rep })
        .collect();
    run_pool(ctx, &layout, pretrain_jobs, ctx.jobs, |job, outcome| {
        if let (Job::Pretrain { arm, rep }, Err(e)) = (job, outcome) {
            log::warn!("pretraining {arm} rep {rep} failed: {e}");
            failed_pretraining.insert((*arm, *rep), e);
        }
        Ok(())
    })?;

    let mut failures: BTreeMap<Cell, SweepRow> = BTreeMap::new();
    let mut cell_jobs = Vec::new();
    for cell in pending {
        let seed = rep_seed(config.train.seed, cell.rep);
        match failed_pretraining.get(&(cell.arm, cell.rep)) {
            Some(e) => {
                failures.insert(
                    cell,
                    SweepRow::empty(cell, seed, format!("error: pretraining failed: {e}")),
                );
            }
            None => cell_jobs.push(Job::Cell(cell)),
        }
    }
    let mut completed: BTreeSet<String> = rows.keys().map(|c| c.to_string()).collect();
    run_pool(ctx, &layout, cell_jobs, ctx.jobs, |job, outcome| {
        let Job::Cell(cell) = job else { return Ok(()) };
        let row = match outcome.and_then(|_| {
            read_row(&layout.cell(*cell)).ok_or_else(|| "worker wrote no result".to_string())
        }) {
            Ok(row) => {
                completed.insert(cell.to_string());
                write_json(
                    &layout.manifest,
                    &Manifest {
                        config: fingerprint.clone(),
                        completed: completed.iter().cloned().collect(),
                    },
                )?;
                rows.insert(*cell, row.clone());
                row
            }
            Err(e) => {
                log::warn!("cell {cell} failed: {e}");
                let row = SweepRow::empty(*cell, rep_seed(config.train.seed, cell.rep), format!("error: {e}"));
                failures.insert(*cell, row.clone());
                row
            }
        };
        log::info!("finished {cell} ({})", row.status);
        append_partial(&layout.partial, &row)
    })?;
    write_json(
        &layout.manifest,
        &Manifest {
            config: fingerprint,
            completed: completed.into_iter().collect(),
        },
    )?;

    let table: Vec<SweepRow> = cells
        .iter()
        .filter_map(|c| rows.get(c).or_else(|| failures.get(c)).cloned())
        .collect();
    let mut buf = Vec::new();
    write_sweep_table(&table, &mut buf)?;
    write_atomic(&layout.table, &buf)?;
    if layout.partial.exists() {
        fs::remove_file(&layout.partial)?;
    }
    let n_failed = table.iter().filter(|r| !r.is_ok()).count();
    log::info!("wrote {} ({} rows, {} failed)", layout.table.display(), table.len(), n_failed);
    Ok(())
}

/// One pretraining job, or one cell when `--n-labeled` is given.
pub fn worker(ctx: &Context, args: &WorkerArgs) -> CliResult<()> {
    let cohort = ctx.cohort()?;
    match args.n_labeled {
        None => {
            let encoder = pretrain_arm(&cohort, args.arm, args.rep, &ctx.config)?
                .ok_or("the scratch arm has no pretraining stage")?;
            let bundle = ModelBundle {
                encoder,
                decoder: None,
                regressor: None,
                meta: BTreeMap::from([
                    ("arm".to_string(), args.arm.to_string()),
                    ("rep".to_string(), args.rep.to_string()),
                ]),
            };
            write_atomic(&args.encoder, &bundle.to_bytes())
        }
        Some(n) => {
            let cell = Cell {
                arm: args.arm,
                n_labeled: n,
                rep: args.rep,
            };
            let pretrained = if shares_pretraining(cell.arm) {
                Some(ModelBundle::load(&args.encoder)?.encoder)
            } else {
                None
            };
            let row = run_cell(&cohort, cell, &ctx.config, pretrained.as_ref());
            let out = args.out.clone().ok_or("--out is required for a cell")?;
            write_json(&out, &row)
        }
    }
}
