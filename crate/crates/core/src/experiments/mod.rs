//! Batch studies: forward TTS scaling, forward success comparison,
//! hard-instance reverse/forward advantage ratio, reverse TTS scaling and
//! spectrum traces.
//!
//! Every study is a deterministic function of its [`ExperimentConfig`].
//! Individual anneals are cached in `runs.csv` inside the output directory,
//! keyed by `(seed, n, algorithm, schedule, t_f)`, so interrupted studies
//! resume without recomputation and studies sharing a directory share runs.

mod runner;
mod studies;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exact::HardnessProbe;
use crate::hamiltonian::AlgorithmKind;
use crate::schedules::ReverseParams;

pub use runner::{read_runs_csv, write_runs_csv, RunKey, RunRecord, RUNS_FILE};
pub use studies::{
    fit_records, run_forward_scaling, run_forward_success, run_reverse_ratio, run_reverse_scaling,
    run_spectrum, run_study, FitRow, MeanRow, RatioPoint, SeedChoice, StudyDetails, StudyReport, TraceSummary,
    SUMMARY_FILE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    ForwardScaling,
    ForwardSuccess,
    ReverseRatio,
    ReverseScaling,
    Spectrum,
}

impl Study {
    pub fn label(self) -> &'static str {
        match self {
            Study::ForwardScaling => "forward_scaling",
            Study::ForwardSuccess => "forward_success",
            Study::ReverseRatio => "reverse_ratio",
            Study::ReverseScaling => "reverse_scaling",
            Study::Spectrum => "spectrum",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub study: Study,
    pub n_range: Vec<usize>,
    pub instances: usize,
    /// Anneal times; the ratio study sweeps all of them, the others use each.
    pub t_f: Vec<f64>,
    pub algorithms: Vec<AlgorithmKind>,
    pub reverse: ReverseParams,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Step override; `None` uses `min(1e−3, t_f/2000)`.
    pub dt: Option<f64>,
    pub workers: usize,
    /// Allow CD-QA and inhomogeneous driving in reverse studies.
    pub experimental_reverse: bool,
    pub hardness: HardnessProbe,
    /// Candidates examined when searching for a hard instance.
    pub search_budget: usize,
    /// Use this instance seed instead of searching / deriving one.
    pub instance_seed: Option<u64>,
    pub grid_points: usize,
    pub levels: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(Study::ForwardScaling)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults (N = 4..10, 100 instances).
    pub fn desk(study: Study) -> Self {
        let mut cfg = Self {
            study,
            n_range: vec![4, 6, 8, 10],
            instances: 100,
            t_f: vec![1.0],
            algorithms: AlgorithmKind::ALL.to_vec(),
            reverse: ReverseParams::default(),
            master_seed: 2024,
            output_dir: PathBuf::from("results"),
            dt: None,
            workers: 1,
            experimental_reverse: false,
            hardness: HardnessProbe::default(),
            search_budget: 400,
            instance_seed: None,
            grid_points: 400,
            levels: 4,
        };
        match study {
            Study::ForwardScaling => {}
            Study::ForwardSuccess => cfg.n_range = vec![10],
            Study::ReverseRatio | Study::Spectrum => {
                cfg.n_range = vec![10];
                cfg.instances = 1;
                cfg.t_f = (1..=10).map(f64::from).collect();
                cfg.algorithms = AlgorithmKind::REVERSE.to_vec();
                if study == Study::Spectrum {
                    cfg.algorithms = vec![AlgorithmKind::Standard];
                }
            }
            Study::ReverseScaling => cfg.algorithms = AlgorithmKind::REVERSE.to_vec(),
        }
        cfg
    }

    /// Paper-scale grid: 500 instances, N = 4..12.
    pub fn full(study: Study) -> Self {
        let mut cfg = Self::desk(study);
        cfg.instances = match study {
            Study::ReverseRatio | Study::Spectrum => 1,
            _ => 500,
        };
        cfg.n_range = match study {
            Study::ForwardScaling | Study::ReverseScaling => (4..=12).collect(),
            _ => vec![12],
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_range.is_empty() || self.n_range.iter().any(|&n| n == 0 || n > crate::MAX_STATE_QUBITS) {
            return Err(invalid(format!(
                "n_range must be non-empty with sizes in 1..={}",
                crate::MAX_STATE_QUBITS
            )));
        }
        if self.instances == 0 {
            return Err(invalid("instances must be positive"));
        }
        if self.t_f.is_empty() || self.t_f.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(invalid("t_f values must be positive"));
        }
        if self.algorithms.is_empty() {
            return Err(invalid("at least one algorithm required"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(invalid("dt must be positive"));
            }
        }
        if self.workers == 0 {
            return Err(invalid("workers must be positive"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E9B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Instance seed for `(master_seed, n, index)`; identical for every
/// algorithm and study.
pub fn instance_seed(master_seed: u64, n: usize, index: usize) -> u64 {
    mix64(mix64(mix64(master_seed) ^ n as u64) ^ index as u64)
}

/// Seed for the per-instance algorithm draws (coupler signs, frequencies).
pub fn algorithm_seed(instance_seed: u64) -> u64 {
    mix64(instance_seed ^ 0xA16A_11E5)
}
