//! Single-anneal work items, the `runs.csv` cache and parallel execution.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::{algorithm_seed, ExperimentConfig};
use crate::error::{invalid, Error, Result};
use crate::evolution::{default_dt, simulate_with_dt};
use crate::exact::enumerate;
use crate::hamiltonian::{AlgorithmKind, AlgorithmSpec};
use crate::instances::ising_instance;
use crate::metrics::{success_probability, tts, RESOLVABLE_P};
use crate::schedules::{Schedule, ScheduleKind};

/// Run cache shared by all studies writing to the same directory.
pub const RUNS_FILE: &str = "runs.csv";

const HEADER: [&str; 9] = ["seed", "n", "algorithm", "schedule", "t_f", "p_success", "tts", "excluded", "wall_time"];

/// Studies abort when more than this fraction of runs fail.
const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Cache key of one anneal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunKey {
    pub seed: u64,
    pub n: usize,
    pub algorithm: AlgorithmKind,
    pub schedule: ScheduleKind,
    pub t_f: f64,
}

impl Eq for RunKey {}

impl Ord for RunKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.n, self.seed, self.algorithm, self.schedule)
            .cmp(&(other.n, other.seed, other.algorithm, other.schedule))
            .then(self.t_f.total_cmp(&other.t_f))
    }
}

impl PartialOrd for RunKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub n: usize,
    pub algorithm: AlgorithmKind,
    pub schedule: ScheduleKind,
    pub t_f: f64,
    pub p_success: f64,
    /// `+∞` when `p = 0`.
    pub tts: f64,
    /// `p` below [`RESOLVABLE_P`]; left out of scaling fits.
    pub excluded: bool,
    /// Seconds; the only column allowed to differ between reruns.
    pub wall_time: f64,
}

impl RunRecord {
    pub fn key(&self) -> RunKey {
        RunKey { seed: self.seed, n: self.n, algorithm: self.algorithm, schedule: self.schedule, t_f: self.t_f }
    }

    fn to_row(&self) -> [String; 9] {
        let tts = if self.tts.is_finite() { self.tts.to_string() } else { "inf".to_string() };
        [
            self.seed.to_string(),
            self.n.to_string(),
            self.algorithm.label().to_string(),
            self.schedule.label().to_string(),
            self.t_f.to_string(),
            self.p_success.to_string(),
            tts,
            self.excluded.to_string(),
            format!("{:.6}", self.wall_time),
        ]
    }

    fn from_row(row: &csv::StringRecord) -> Result<Self> {
        if row.len() != HEADER.len() {
            return Err(invalid(format!("run record has {} fields, expected {}", row.len(), HEADER.len())));
        }
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|_| invalid(format!("bad {} value {:?}", HEADER[i], &row[i])))
        };
        let schedule = match &row[3] {
            "forward" => ScheduleKind::Forward,
            "reverse" => ScheduleKind::Reverse,
            other => return Err(invalid(format!("unknown schedule {other:?}"))),
        };
        Ok(Self {
            seed: row[0].parse().map_err(|_| invalid(format!("bad seed {:?}", &row[0])))?,
            n: row[1].parse().map_err(|_| invalid(format!("bad n {:?}", &row[1])))?,
            algorithm: AlgorithmKind::from_label(&row[2])
                .ok_or_else(|| invalid(format!("unknown algorithm {:?}", &row[2])))?,
            schedule,
            t_f: num(4)?,
            p_success: num(5)?,
            tts: num(6)?,
            excluded: row[7].parse().map_err(|_| invalid(format!("bad excluded flag {:?}", &row[7])))?,
            wall_time: num(8)?,
        })
    }
}

pub fn write_runs_csv<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in records {
        out.write_record(r.to_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_runs_csv<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(invalid(format!("unexpected run CSV header {:?}", header.iter().collect::<Vec<_>>())));
    }
    rdr.records().map(|row| RunRecord::from_row(&row?)).collect()
}

pub(crate) fn write_runs_file(path: &Path, records: &[RunRecord]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    write_runs_csv(fs::File::create(&tmp)?, records)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// One anneal to perform.
#[derive(Clone, Copy, Debug)]
pub(crate) struct WorkItem {
    pub key: RunKey,
    /// Initial basis state for reverse anneals.
    pub seed_state: Option<usize>,
}

impl WorkItem {
    pub fn forward(seed: u64, n: usize, algorithm: AlgorithmKind, t_f: f64) -> Self {
        Self { key: RunKey { seed, n, algorithm, schedule: ScheduleKind::Forward, t_f }, seed_state: None }
    }

    pub fn reverse(seed: u64, n: usize, algorithm: AlgorithmKind, t_f: f64, seed_state: usize) -> Self {
        Self {
            key: RunKey { seed, n, algorithm, schedule: ScheduleKind::Reverse, t_f },
            seed_state: Some(seed_state),
        }
    }
}

/// Outcome of [`execute`]: records in work-item order plus bookkeeping.
#[derive(Debug, Default)]
pub(crate) struct Batch {
    pub records: Vec<RunRecord>,
    pub failures: Vec<String>,
    /// Largest norm drift over runs computed in this batch (cached runs
    /// carry none).
    pub max_norm_drift: f64,
    pub fresh: usize,
    pub cached: usize,
}

fn run_one(item: &WorkItem, cfg: &ExperimentConfig) -> Result<(RunRecord, f64)> {
    let start = Instant::now();
    let k = item.key;
    let problem = ising_instance(k.seed, k.n)?;
    let spectrum = enumerate(&problem)?;
    let algo = AlgorithmSpec::for_problem(k.algorithm, &problem, k.t_f, algorithm_seed(k.seed))?;
    let schedule = Schedule::new(k.schedule, k.t_f, cfg.reverse)?;
    let dt = cfg.dt.unwrap_or_else(|| default_dt(k.t_f));
    let run = simulate_with_dt(&problem, &algo, &schedule, item.seed_state, dt)?;
    let p = success_probability(&run.state, &spectrum);
    let record = RunRecord {
        seed: k.seed,
        n: k.n,
        algorithm: k.algorithm,
        schedule: k.schedule,
        t_f: k.t_f,
        p_success: p,
        tts: tts(p, k.t_f)?.value(),
        excluded: p < RESOLVABLE_P,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((record, run.norm_drift))
}

/// Runs every item not already in `<output_dir>/runs.csv` on a pool of
/// `cfg.workers` threads. The cache is rewritten after each chunk so an
/// interrupted study resumes where it stopped. Failed runs are reported
/// and left out of the cache; more than 5% failures abort.
pub(crate) fn execute(cfg: &ExperimentConfig, items: &[WorkItem]) -> Result<Batch> {
    fs::create_dir_all(&cfg.output_dir)?;
    let cache_path = cfg.output_dir.join(RUNS_FILE);
    let mut cache: BTreeMap<RunKey, RunRecord> = BTreeMap::new();
    if cache_path.exists() {
        for r in read_runs_csv(fs::File::open(&cache_path)?)? {
            cache.insert(r.key(), r);
        }
    }

    let mut todo: Vec<WorkItem> = Vec::new();
    let mut queued = std::collections::BTreeSet::new();
    for item in items {
        if !cache.contains_key(&item.key) && queued.insert(item.key) {
            todo.push(*item);
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let mut batch = Batch { cached: items.len() - todo.len(), fresh: todo.len(), ..Batch::default() };
    let mut failed = 0usize;
    let chunk = (cfg.workers * 16).max(64);
    for part in todo.chunks(chunk) {
        let results: Vec<Result<(RunRecord, f64)>> =
            pool.install(|| part.par_iter().map(|item| run_one(item, cfg)).collect());
        for (item, res) in part.iter().zip(results) {
            match res {
                Ok((rec, drift)) => {
                    batch.max_norm_drift = batch.max_norm_drift.max(drift);
                    cache.insert(rec.key(), rec);
                }
                Err(e) => {
                    failed += 1;
                    let k = item.key;
                    batch.failures.push(format!(
                        "seed {} n {} {} {} t_f {}: {e}",
                        k.seed,
                        k.n,
                        k.algorithm,
                        k.schedule.label(),
                        k.t_f
                    ));
                }
            }
        }
        let all: Vec<RunRecord> = cache.values().cloned().collect();
        write_runs_file(&cache_path, &all)?;
        if failed as f64 > MAX_FAILURE_FRACTION * items.len() as f64 {
            return Err(Error::TooManyFailures { failed, total: items.len() });
        }
    }

    batch.records = items.iter().filter_map(|item| cache.get(&item.key).cloned()).collect();
    Ok(batch)
}
