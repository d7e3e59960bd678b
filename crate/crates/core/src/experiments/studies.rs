//! The five studies and their output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::runner::{execute, write_runs_file, Batch, RunRecord, WorkItem};
use super::{algorithm_seed, instance_seed, ExperimentConfig, Study};
use crate::error::{invalid, Error, Result};
use crate::evolution::{spectrum_trace, MAX_SPECTRUM_QUBITS};
use crate::exact::{enumerate, is_hard_instance, local_minima_of, HardnessReport, LocalMinimum};
use crate::hamiltonian::{AlgorithmKind, AlgorithmSpec};
use crate::instances::ising_instance;
use crate::metrics::{advantage_ratio, fit_scaling};
use crate::schedules::ScheduleKind;

/// Per-directory study summary, keyed by study label.
pub const SUMMARY_FILE: &str = "summary.json";

/// One fitted exponent, `mean TTS(N) ≈ 2^(β + αN)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub algorithm: String,
    pub schedule: String,
    pub t_f: f64,
    pub alpha: f64,
    pub beta: f64,
    pub residual: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub instances_per_n: usize,
    /// Runs left out because `p` was unresolvably small.
    pub excluded: usize,
}

/// Arithmetic-mean TTS of one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub algorithm: String,
    pub schedule: String,
    pub t_f: f64,
    pub n: usize,
    pub mean_tts: f64,
    pub log2_mean_tts: f64,
    pub instances: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub algorithm: String,
    pub t_f: f64,
    pub p_forward: f64,
    pub p_reverse: f64,
    /// `+∞` (JSON `null`) when the forward probability is exactly zero.
    pub ratio: f64,
}

/// Reverse-anneal start state for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedChoice {
    pub seed: u64,
    pub n: usize,
    pub state: usize,
    pub energy: f64,
    /// No non-global local minimum; the lowest excited state was used.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub algorithm: String,
    pub file: String,
    pub min_gap: f64,
    pub min_gap_location: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyDetails {
    None,
    ForwardSuccess {
        n: usize,
        /// Fraction of instances where each algorithm's `p` exceeds Standard's.
        better_than_standard: BTreeMap<String, f64>,
    },
    ReverseRatio {
        instance_seed: u64,
        n: usize,
        candidates_examined: usize,
        local_minimum: LocalMinimum,
        hardness: HardnessReport,
        points: Vec<RatioPoint>,
        /// Share of (algorithm, t_f) points with `R > 1`.
        fraction_above_one: f64,
    },
    ReverseScaling {
        /// Instances per size without a non-global local minimum.
        fallbacks: BTreeMap<usize, usize>,
    },
    Spectrum {
        instance_seed: u64,
        n: usize,
        traces: Vec<TraceSummary>,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub study: Study,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
    pub fits: Vec<FitRow>,
    pub means: Vec<MeanRow>,
    pub warnings: Vec<String>,
    /// Over runs computed by this invocation.
    pub max_norm_drift: f64,
    pub fresh_runs: usize,
    pub cached_runs: usize,
    pub files: Vec<String>,
    pub details: StudyDetails,
}

impl StudyReport {
    fn new(study: Study, batch: Batch) -> Self {
        let mut warnings = Vec::new();
        if !batch.failures.is_empty() {
            warnings.push(format!("{} runs failed", batch.failures.len()));
            warnings.extend(batch.failures);
        }
        Self {
            study,
            records: batch.records,
            fits: Vec::new(),
            means: Vec::new(),
            warnings,
            max_norm_drift: batch.max_norm_drift,
            fresh_runs: batch.fresh,
            cached_runs: batch.cached,
            files: Vec::new(),
            details: StudyDetails::None,
        }
    }

    pub fn fit(&self, algorithm: AlgorithmKind, schedule: ScheduleKind) -> Option<&FitRow> {
        self.fits.iter().find(|f| f.algorithm == algorithm.label() && f.schedule == schedule.label())
    }
}

type Group = (AlgorithmKind, ScheduleKind, u64);

/// Per-(algorithm, schedule, t_f) mean TTS per size and exponent fits.
/// Runs flagged `excluded` are dropped before averaging; groups with fewer
/// than three usable sizes get a warning instead of a fit.
pub fn fit_records(records: &[RunRecord]) -> (Vec<FitRow>, Vec<MeanRow>, Vec<String>) {
    let mut groups: BTreeMap<Group, BTreeMap<usize, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm, r.schedule, r.t_f.to_bits()))
            .or_default()
            .entry(r.n)
            .or_default()
            .push(r);
    }
    let mut fits = Vec::new();
    let mut means = Vec::new();
    let mut warnings = Vec::new();
    for ((algorithm, schedule, t_bits), by_n) in groups {
        let t_f = f64::from_bits(t_bits);
        let name = format!("{} {} t_f={}", algorithm, schedule.label(), t_f);
        let mut points = Vec::new();
        let mut excluded_total = 0;
        let mut per_n = 0;
        for (&n, runs) in &by_n {
            let used: Vec<f64> = runs.iter().filter(|r| !r.excluded).map(|r| r.tts).collect();
            let excluded = runs.len() - used.len();
            excluded_total += excluded;
            per_n = per_n.max(runs.len());
            if used.is_empty() {
                warnings.push(format!("{name}: every run at n={n} excluded"));
                continue;
            }
            let mean = used.iter().sum::<f64>() / used.len() as f64;
            means.push(MeanRow {
                algorithm: algorithm.label().to_string(),
                schedule: schedule.label().to_string(),
                t_f,
                n,
                mean_tts: mean,
                log2_mean_tts: mean.log2(),
                instances: used.len(),
                excluded,
            });
            points.push((n, mean));
        }
        if excluded_total > 0 {
            warnings.push(format!("{name}: {excluded_total} runs excluded (p < 1e-9)"));
        }
        match fit_scaling(&points) {
            Ok(f) => fits.push(FitRow {
                algorithm: algorithm.label().to_string(),
                schedule: schedule.label().to_string(),
                t_f,
                alpha: f.alpha,
                beta: f.beta,
                residual: f.residual,
                n_min: f.n_min,
                n_max: f.n_max,
                instances_per_n: per_n,
                excluded: excluded_total,
            }),
            Err(e) => warnings.push(format!("{name}: no fit ({e})")),
        }
    }
    (fits, means, warnings)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn finish(cfg: &ExperimentConfig, mut report: StudyReport) -> Result<StudyReport> {
    let label = cfg.study.label();
    if cfg.study != Study::Spectrum {
        let runs = format!("{label}_runs.csv");
        write_runs_file(&cfg.output_dir.join(&runs), &report.records)?;
        report.files.insert(0, runs);
    }
    if !report.means.is_empty() {
        let f = format!("{label}_means.csv");
        write_rows(&cfg.output_dir.join(&f), &report.means)?;
        report.files.push(f);
    }
    if !report.fits.is_empty() {
        let f = format!("{label}_fits.csv");
        write_rows(&cfg.output_dir.join(&f), &report.fits)?;
        report.files.push(f);
    }
    let path = cfg.output_dir.join(SUMMARY_FILE);
    let mut summary: BTreeMap<String, serde_json::Value> = if path.exists() {
        serde_json::from_str(&fs::read_to_string(&path)?)?
    } else {
        BTreeMap::new()
    };
    summary.insert(label.to_string(), serde_json::to_value(&report)?);
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(report)
}

fn seeds_for(cfg: &ExperimentConfig, n: usize) -> Vec<u64> {
    (0..cfg.instances).map(|i| instance_seed(cfg.master_seed, n, i)).collect()
}

fn reverse_algorithms(cfg: &ExperimentConfig, warnings: &mut Vec<String>) -> Vec<AlgorithmKind> {
    cfg.algorithms
        .iter()
        .copied()
        .filter(|&k| {
            let experimental = matches!(k, AlgorithmKind::Cdqa | AlgorithmKind::Inhomogeneous);
            if experimental && !cfg.experimental_reverse {
                warnings.push(format!("{k} skipped under reverse annealing (enable experimental_reverse)"));
            }
            !experimental || cfg.experimental_reverse
        })
        .collect()
}

fn prepare(cfg: &ExperimentConfig, study: Study) -> Result<ExperimentConfig> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.study = study;
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

/// Forward anneals of every algorithm on every instance, with per-algorithm
/// exponent fits.
pub fn run_forward_scaling(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let cfg = prepare(cfg, Study::ForwardScaling)?;
    let mut items = Vec::new();
    for &n in &cfg.n_range {
        for seed in seeds_for(&cfg, n) {
            for &k in &cfg.algorithms {
                for &t_f in &cfg.t_f {
                    items.push(WorkItem::forward(seed, n, k, t_f));
                }
            }
        }
    }
    let mut report = StudyReport::new(Study::ForwardScaling, execute(&cfg, &items)?);
    let (fits, means, warnings) = fit_records(&report.records);
    report.fits = fits;
    report.means = means;
    report.warnings.extend(warnings);
    finish(&cfg, report)
}

/// Per-instance forward success probabilities of all algorithms on one
/// instance set, plus a wide table for scatter plots.
pub fn run_forward_success(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let cfg = prepare(cfg, Study::ForwardSuccess)?;
    let n = cfg.n_range[0];
    let t_f = cfg.t_f[0];
    if cfg.n_range.len() > 1 || cfg.t_f.len() > 1 {
        return Err(invalid("forward_success takes a single size and a single t_f"));
    }
    let seeds = seeds_for(&cfg, n);
    let mut algorithms = cfg.algorithms.clone();
    if !algorithms.contains(&AlgorithmKind::Standard) {
        algorithms.insert(0, AlgorithmKind::Standard);
    }
    let items: Vec<WorkItem> = seeds
        .iter()
        .flat_map(|&s| algorithms.iter().map(move |&k| WorkItem::forward(s, n, k, t_f)))
        .collect();
    let mut report = StudyReport::new(Study::ForwardSuccess, execute(&cfg, &items)?);

    let mut by_seed: BTreeMap<u64, BTreeMap<AlgorithmKind, f64>> = BTreeMap::new();
    for r in &report.records {
        by_seed.entry(r.seed).or_default().insert(r.algorithm, r.p_success);
    }
    let mut better = BTreeMap::new();
    for &k in algorithms.iter().filter(|&&k| k != AlgorithmKind::Standard) {
        let (mut wins, mut total) = (0usize, 0usize);
        for ps in by_seed.values() {
            if let (Some(p), Some(s)) = (ps.get(&k), ps.get(&AlgorithmKind::Standard)) {
                total += 1;
                wins += usize::from(p > s);
            }
        }
        if total > 0 {
            better.insert(k.label().to_string(), wins as f64 / total as f64);
        }
    }

    let file = "forward_success_wide.csv".to_string();
    let mut w = csv::Writer::from_path(cfg.output_dir.join(&file))?;
    let mut header = vec!["seed".to_string()];
    header.extend(algorithms.iter().map(|k| k.label().to_string()));
    w.write_record(&header)?;
    for seed in &seeds {
        let ps = by_seed.get(seed);
        let mut row = vec![seed.to_string()];
        row.extend(algorithms.iter().map(|k| {
            ps.and_then(|m| m.get(k)).map_or_else(|| "nan".to_string(), f64::to_string)
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    report.files.push(file);
    report.details = StudyDetails::ForwardSuccess { n, better_than_standard: better };
    finish(&cfg, report)
}

/// Designated hard instance: the supplied seed, or the first hard candidate
/// `(master_seed, n, i)` for `i < search_budget`.
fn designate_hard_instance(cfg: &ExperimentConfig, n: usize) -> Result<(u64, HardnessReport, usize)> {
    if let Some(seed) = cfg.instance_seed {
        let report = is_hard_instance(&ising_instance(seed, n)?, &cfg.hardness)?;
        return Ok((seed, report, 1));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let (mut with_minimum, mut best_p) = (0usize, f64::INFINITY);
    let candidates: Vec<usize> = (0..cfg.search_budget).collect();
    for chunk in candidates.chunks(cfg.workers.max(1) * 2) {
        let reports: Vec<Result<(u64, HardnessReport)>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| {
                    let seed = instance_seed(cfg.master_seed, n, i);
                    Ok((seed, is_hard_instance(&ising_instance(seed, n)?, &cfg.hardness)?))
                })
                .collect()
        });
        for (&i, r) in chunk.iter().zip(reports) {
            let (seed, report) = r?;
            if report.local_minimum.is_some() {
                with_minimum += 1;
            }
            if let Some(p) = report.p_forward {
                best_p = best_p.min(p);
            }
            if report.hard {
                return Ok((seed, report, i + 1));
            }
        }
    }
    Err(Error::NoHardInstance {
        tried: cfg.search_budget,
        diagnostics: format!(
            "n={n}: {with_minimum} candidates had a non-global local minimum; lowest forward p at t_f={} was {best_p} (threshold {})",
            cfg.hardness.t_probe, cfg.hardness.p_threshold
        ),
    })
}

/// Forward vs reverse success on a hard instance across `t_f`, reverse
/// runs starting in its lowest non-global local minimum.
pub fn run_reverse_ratio(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let cfg = prepare(cfg, Study::ReverseRatio)?;
    let n = cfg.n_range[0];
    let mut warnings = Vec::new();
    let (seed, hardness, examined) = designate_hard_instance(&cfg, n)?;
    let minimum = hardness
        .local_minimum
        .ok_or_else(|| invalid(format!("instance {seed} has no non-global local minimum")))?;
    if !hardness.hard {
        warnings.push(format!("supplied instance {seed} does not meet the hardness threshold"));
    }
    let algorithms = reverse_algorithms(&cfg, &mut warnings);
    let mut items = Vec::new();
    for &k in &algorithms {
        for &t_f in &cfg.t_f {
            items.push(WorkItem::forward(seed, n, k, t_f));
            items.push(WorkItem::reverse(seed, n, k, t_f, minimum.state));
        }
    }
    let mut report = StudyReport::new(Study::ReverseRatio, execute(&cfg, &items)?);
    report.warnings.extend(warnings);

    let lookup: BTreeMap<_, f64> = report.records.iter().map(|r| (r.key(), r.p_success)).collect();
    let mut points = Vec::new();
    for item in items.chunks(2) {
        if let (Some(&p_f), Some(&p_r)) = (lookup.get(&item[0].key), lookup.get(&item[1].key)) {
            points.push(RatioPoint {
                algorithm: item[0].key.algorithm.label().to_string(),
                t_f: item[0].key.t_f,
                p_forward: p_f,
                p_reverse: p_r,
                ratio: advantage_ratio(p_r, p_f).value(),
            });
        }
    }
    let above = points.iter().filter(|p| p.ratio > 1.0).count();
    let fraction_above_one = if points.is_empty() { 0.0 } else { above as f64 / points.len() as f64 };

    let file = "reverse_ratio.csv".to_string();
    let mut w = csv::Writer::from_path(cfg.output_dir.join(&file))?;
    w.write_record(["algorithm", "t_f", "p_forward", "p_reverse", "ratio"])?;
    for p in &points {
        let ratio = if p.ratio.is_finite() { p.ratio.to_string() } else { "inf".to_string() };
        w.write_record([p.algorithm.clone(), p.t_f.to_string(), p.p_forward.to_string(), p.p_reverse.to_string(), ratio])?;
    }
    for &t_f in &cfg.t_f {
        w.write_record(["reference".to_string(), t_f.to_string(), String::new(), String::new(), "1".to_string()])?;
    }
    w.flush()?;
    report.files.push(file);
    report.details = StudyDetails::ReverseRatio {
        instance_seed: seed,
        n,
        candidates_examined: examined,
        local_minimum: minimum,
        hardness,
        points,
        fraction_above_one,
    };
    finish(&cfg, report)
}

fn seed_choice(seed: u64, n: usize) -> Result<SeedChoice> {
    let spectrum = enumerate(&ising_instance(seed, n)?)?;
    if let Some(m) = local_minima_of(&spectrum, true).first() {
        return Ok(SeedChoice { seed, n, state: m.state, energy: m.energy, fallback: false });
    }
    let state = spectrum
        .lowest_excited_state()
        .ok_or_else(|| invalid(format!("instance {seed} has no excited state")))?;
    Ok(SeedChoice { seed, n, state, energy: spectrum.energies[state], fallback: true })
}

/// Reverse anneals from each instance's lowest non-global local minimum
/// (lowest excited state when there is none), plus forward Standard QA as
/// the baseline.
pub fn run_reverse_scaling(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let cfg = prepare(cfg, Study::ReverseScaling)?;
    let mut warnings = Vec::new();
    let algorithms = reverse_algorithms(&cfg, &mut warnings);
    let mut choices = Vec::new();
    let mut fallbacks = BTreeMap::new();
    let mut items = Vec::new();
    for &n in &cfg.n_range {
        let mut fell_back = 0;
        for seed in seeds_for(&cfg, n) {
            let choice = seed_choice(seed, n)?;
            fell_back += usize::from(choice.fallback);
            for &t_f in &cfg.t_f {
                items.push(WorkItem::forward(seed, n, AlgorithmKind::Standard, t_f));
                for &k in &algorithms {
                    items.push(WorkItem::reverse(seed, n, k, t_f, choice.state));
                }
            }
            choices.push(choice);
        }
        fallbacks.insert(n, fell_back);
        if fell_back > 0 {
            warnings.push(format!("n={n}: {fell_back} instances without a local minimum used the lowest excited state"));
        }
    }
    let mut report = StudyReport::new(Study::ReverseScaling, execute(&cfg, &items)?);
    report.warnings.extend(warnings);
    let (fits, means, fit_warnings) = fit_records(&report.records);
    report.fits = fits;
    report.means = means;
    report.warnings.extend(fit_warnings);
    let file = "reverse_scaling_seeds.csv".to_string();
    write_rows(&cfg.output_dir.join(&file), &choices)?;
    report.files.push(file);
    report.details = StudyDetails::ReverseScaling { fallbacks };
    finish(&cfg, report)
}

/// Lowest levels of the quasi-static Hamiltonian of the designated instance.
pub fn run_spectrum(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let cfg = prepare(cfg, Study::Spectrum)?;
    let n = cfg.n_range[0];
    if n > MAX_SPECTRUM_QUBITS {
        return Err(Error::ResourceLimit { what: "qubit count", value: n, limit: MAX_SPECTRUM_QUBITS });
    }
    let seed = match cfg.instance_seed {
        Some(s) => s,
        None => designate_hard_instance(&cfg, n)?.0,
    };
    let problem = ising_instance(seed, n)?;
    let t_f = cfg.t_f[0];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let traces = pool.install(|| {
        cfg.algorithms
            .par_iter()
            .map(|&k| {
                let algo = AlgorithmSpec::for_problem(k, &problem, t_f, algorithm_seed(seed))?;
                spectrum_trace(&problem, &algo, cfg.grid_points, cfg.levels)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut report = StudyReport::new(Study::Spectrum, Batch::default());
    let mut summaries = Vec::new();
    for trace in traces {
        let file = format!("spectrum_{}.csv", trace.algorithm);
        trace.write_csv(fs::File::create(cfg.output_dir.join(&file))?)?;
        report.files.push(file.clone());
        summaries.push(TraceSummary {
            algorithm: trace.algorithm.label().to_string(),
            file,
            min_gap: trace.min_gap,
            min_gap_location: trace.min_gap_location,
            notes: trace.notes,
        });
    }
    report.details = StudyDetails::Spectrum { instance_seed: seed, n, traces: summaries };
    finish(&cfg, report)
}

pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    match cfg.study {
        Study::ForwardScaling => run_forward_scaling(cfg),
        Study::ForwardSuccess => run_forward_success(cfg),
        Study::ReverseRatio => run_reverse_ratio(cfg),
        Study::ReverseScaling => run_reverse_scaling(cfg),
        Study::Spectrum => run_spectrum(cfg),
    }
}
