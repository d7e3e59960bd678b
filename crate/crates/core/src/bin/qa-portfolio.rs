use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qa_portfolio::exact::enumerate;
use qa_portfolio::experiments::{
    fit_records, instance_seed, read_runs_csv, run_study, ExperimentConfig, FitRow, Study, SUMMARY_FILE,
};
use qa_portfolio::instances::{generate_instance, qubo_to_ising, to_qubo, InstanceRecord};
use qa_portfolio::{Error, Result};

#[derive(Parser)]
#[command(name = "qa-portfolio", version, about = "Quantum-annealing variants on portfolio-optimization instances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the instances of a seed grid as JSON.
    Generate(Common),
    /// Forward TTS scaling of every algorithm.
    ForwardScaling(Common),
    /// Per-instance forward success probabilities.
    ForwardSuccess(Common),
    /// Reverse/forward advantage ratio on a hard instance.
    ReverseRatio(Common),
    /// Reverse-annealing TTS scaling.
    ReverseScaling(Common),
    /// Low-lying spectrum of the designated instance.
    Spectrum(Common),
    /// Fit exponents to a runs CSV.
    Fit {
        /// Runs CSV (e.g. results/forward_scaling_runs.csv).
        runs: PathBuf,
    },
    /// Print the exponent tables of an output directory.
    Report {
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// JSON file with ExperimentConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sizes, e.g. `4,6,8` or `4-10`.
    #[arg(long, value_parser = parse_sizes)]
    n_range: Option<Sizes>,
    #[arg(long)]
    instances: Option<usize>,
    /// Anneal times, comma separated.
    #[arg(long, value_delimiter = ',')]
    tf: Option<Vec<f64>>,
    #[arg(long)]
    workers: Option<usize>,
    /// Paper-scale grid (500 instances, N up to 12).
    #[arg(long)]
    full: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
struct Sizes(Vec<usize>);

fn parse_sizes(s: &str) -> std::result::Result<Sizes, String> {
    let bad = |_| format!("invalid size list {s:?}");
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        return Ok(Sizes((a..=b).collect()));
    }
    s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>().map(Sizes)
}

impl Common {
    fn config(&self, study: Study) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
                cfg.study = study;
                cfg
            }
            None if self.full => ExperimentConfig::full(study),
            None => ExperimentConfig::desk(study),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(n) = &self.n_range {
            cfg.n_range = n.0.clone();
        }
        if let Some(i) = self.instances {
            cfg.instances = i;
        }
        if let Some(t) = &self.tf {
            cfg.t_f = t.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct GeneratedInstance {
    n: usize,
    index: usize,
    seed: u64,
    ground_energy: f64,
    ground_states: Vec<usize>,
    #[serde(flatten)]
    record: InstanceRecord,
}

fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut out = Vec::new();
    for &n in &cfg.n_range {
        for index in 0..cfg.instances {
            let seed = instance_seed(cfg.master_seed, n, index);
            let portfolio = generate_instance(seed, n)?;
            let ising = qubo_to_ising(&to_qubo(&portfolio)?);
            let spectrum = enumerate(&ising)?;
            out.push(GeneratedInstance {
                n,
                index,
                seed,
                ground_energy: spectrum.ground_energy,
                ground_states: spectrum.ground_states,
                record: InstanceRecord { portfolio, ising },
            });
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("instances.json");
    fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(path)
}

fn print_fits(fits: &[FitRow]) {
    println!("{:<20} {:<8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>9}", "algorithm", "schedule", "t_f", "alpha", "beta", "resid", "N", "excluded");
    for f in fits {
        println!(
            "{:<20} {:<8} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>6} {:>9}",
            f.algorithm,
            f.schedule,
            f.t_f,
            f.alpha,
            f.beta,
            f.residual,
            format!("{}-{}", f.n_min, f.n_max),
            f.excluded
        );
    }
}

fn report(out: &Path) -> Result<()> {
    let summary: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE))?)?;
    for (study, value) in &summary {
        println!("== {study}");
        let fits: Vec<FitRow> = serde_json::from_value(value["fits"].clone()).unwrap_or_default();
        if !fits.is_empty() {
            print_fits(&fits);
        }
        if let Some(d) = value.get("details").filter(|d| d["kind"] != "none") {
            let mut d = d.clone();
            if let Some(obj) = d.as_object_mut() {
                obj.remove("points");
            }
            println!("{}", serde_json::to_string_pretty(&d)?);
        }
        for w in value["warnings"].as_array().into_iter().flatten() {
            println!("warning: {}", w.as_str().unwrap_or_default());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (study, common) = match cli.command {
        Command::Generate(c) => {
            let path = generate(&c.config(Study::ForwardScaling)?)?;
            println!("wrote {}", path.display());
            return Ok(());
        }
        Command::Fit { runs } => {
            let records = read_runs_csv(fs::File::open(&runs)?)?;
            let (fits, _, warnings) = fit_records(&records);
            print_fits(&fits);
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            return Ok(());
        }
        Command::Report { out } => return report(&out),
        Command::ForwardScaling(c) => (Study::ForwardScaling, c),
        Command::ForwardSuccess(c) => (Study::ForwardSuccess, c),
        Command::ReverseRatio(c) => (Study::ReverseRatio, c),
        Command::ReverseScaling(c) => (Study::ReverseScaling, c),
        Command::Spectrum(c) => (Study::Spectrum, c),
    };
    let cfg = common.config(study)?;
    let rep = run_study(&cfg)?;
    println!(
        "{}: {} runs ({} computed, {} cached), max norm drift {:e}",
        study.label(),
        rep.records.len(),
        rep.fresh_runs,
        rep.cached_runs,
        rep.max_norm_drift
    );
    if !rep.fits.is_empty() {
        print_fits(&rep.fits);
    }
    for w in rep.warnings.iter().take(20) {
        eprintln!("warning: {w}");
    }
    println!("outputs in {}: {}", cfg.output_dir.display(), rep.files.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
