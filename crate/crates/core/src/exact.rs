//! Brute-force enumeration of the diagonal problem Hamiltonian.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolution::{self, spectrum_trace, SpectrumTrace};
use crate::hamiltonian::AlgorithmSpec;
use crate::instances::IsingProblem;
use crate::metrics::success_probability;
use crate::schedules::Schedule;
use crate::MAX_ENUM_SPINS;

/// Absolute tolerance for treating two normalized energies as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSpectrum {
    pub energies: Vec<f64>,
    pub ground_energy: f64,
    pub ground_states: Vec<usize>,
    /// `None` when every configuration is degenerate with the ground state.
    pub first_excited_energy: Option<f64>,
}

impl ClassicalSpectrum {
    pub fn n(&self) -> usize {
        self.energies.len().trailing_zeros() as usize
    }

    pub fn is_ground(&self, index: usize) -> bool {
        self.energies[index] <= self.ground_energy + DEGENERACY_TOL
    }

    /// Lowest-energy configuration that is not a ground state.
    pub fn lowest_excited_state(&self) -> Option<usize> {
        (0..self.energies.len())
            .filter(|&k| !self.is_ground(k))
            .min_by(|&a, &b| self.energies[a].total_cmp(&self.energies[b]).then(a.cmp(&b)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMinimum {
    pub state: usize,
    pub energy: f64,
    /// Smallest energy increase over all single-spin flips.
    pub basin_gap: f64,
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ENUM_SPINS {
        return Err(Error::ResourceLimit { what: "spin count", value: n, limit: MAX_ENUM_SPINS });
    }
    Ok(())
}

/// Energies of all `2ⁿ` configurations.
///
/// Built incrementally: index `k` with highest set bit `b` is reached from
/// `k ^ (1 << b)` by flipping spin `b` from +1 to −1, and in that parent all
/// spins above `b` are still +1.
pub fn enumerate(problem: &IsingProblem) -> Result<ClassicalSpectrum> {
    let n = problem.n();
    check_size(n)?;
    let dim = 1usize << n;
    let mut energies = vec![0.0; dim];
    energies[0] = problem.constant()
        + problem.h().iter().sum::<f64>()
        + problem.edges().iter().map(|e| e.2).sum::<f64>();
    for b in 0..n {
        let top = 1usize << b;
        let hb = problem.h()[b];
        let upper: f64 = (b + 1..n).map(|j| problem.coupling(b, j)).sum();
        for low in 0..top {
            let mut field = hb + upper;
            for j in 0..b {
                let zj = if low >> j & 1 == 0 { 1.0 } else { -1.0 };
                field += problem.coupling(b, j) * zj;
            }
            energies[top | low] = energies[low] - 2.0 * field;
        }
    }
    Ok(spectrum_from_energies(energies))
}

pub(crate) fn spectrum_from_energies(energies: Vec<f64>) -> ClassicalSpectrum {
    let ground_energy = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let ground_states: Vec<usize> = (0..energies.len())
        .filter(|&k| energies[k] <= ground_energy + DEGENERACY_TOL)
        .collect();
    let first_excited_energy = energies
        .iter()
        .copied()
        .filter(|&e| e > ground_energy + DEGENERACY_TOL)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.min(e))));
    ClassicalSpectrum { energies, ground_energy, ground_states, first_excited_energy }
}

/// All configurations stable under single-spin flips, sorted by energy
/// (ties by index). With `exclude_ground`, degenerate global minima are
/// dropped so the first entry is the preferred reverse-annealing seed.
pub fn local_minima(problem: &IsingProblem, exclude_ground: bool) -> Result<Vec<LocalMinimum>> {
    let spectrum = enumerate(problem)?;
    Ok(local_minima_of(&spectrum, exclude_ground))
}

pub fn local_minima_of(spectrum: &ClassicalSpectrum, exclude_ground: bool) -> Vec<LocalMinimum> {
    let n = spectrum.n();
    let e = &spectrum.energies;
    let mut out: Vec<LocalMinimum> = (0..e.len())
        .filter_map(|k| {
            let basin_gap = (0..n)
                .map(|i| e[k ^ (1 << i)] - e[k])
                .fold(f64::INFINITY, f64::min);
            let basin_gap = if n == 0 { 0.0 } else { basin_gap };
            if basin_gap < -DEGENERACY_TOL {
                return None;
            }
            if exclude_ground && spectrum.is_ground(k) {
                return None;
            }
            Some(LocalMinimum { state: k, energy: e[k], basin_gap: basin_gap.max(0.0) })
        })
        .collect();
    out.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.state.cmp(&b.state)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardnessProbe {
    pub p_threshold: f64,
    pub t_probe: f64,
    /// Grid used for the gap diagnostic of instances that qualify.
    pub gap_grid_points: usize,
}

impl Default for HardnessProbe {
    fn default() -> Self {
        Self { p_threshold: 0.2, t_probe: 10.0, gap_grid_points: 100 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HardnessReport {
    pub hard: bool,
    /// Lowest non-global local minimum, if any.
    pub local_minimum: Option<LocalMinimum>,
    /// Forward standard-QA success probability at `t_probe`; not computed
    /// when no local minimum exists.
    pub p_forward: Option<f64>,
    pub min_gap: Option<f64>,
    pub min_gap_location: Option<f64>,
}

/// An instance is hard when it has a non-global local minimum and forward
/// standard QA at `t_probe` succeeds with probability below `p_threshold`.
/// The gap diagnostic is only computed for hard instances.
pub fn is_hard_instance(problem: &IsingProblem, probe: &HardnessProbe) -> Result<HardnessReport> {
    if !(probe.p_threshold > 0.0 && probe.p_threshold <= 1.0) {
        return Err(invalid("p_threshold must lie in (0, 1]"));
    }
    let spectrum = enumerate(problem)?;
    let local_minimum = local_minima_of(&spectrum, true).into_iter().next();
    let mut report = HardnessReport {
        hard: false,
        local_minimum,
        p_forward: None,
        min_gap: None,
        min_gap_location: None,
    };
    if report.local_minimum.is_none() {
        return Ok(report);
    }
    let p = forward_standard_probability(problem, &spectrum, probe.t_probe)?;
    report.p_forward = Some(p);
    report.hard = p < probe.p_threshold;
    if report.hard {
        let trace: SpectrumTrace =
            spectrum_trace(problem, &AlgorithmSpec::standard(), probe.gap_grid_points, 2)?;
        report.min_gap = Some(trace.min_gap);
        report.min_gap_location = Some(trace.min_gap_location);
    }
    Ok(report)
}

fn forward_standard_probability(
    problem: &IsingProblem,
    spectrum: &ClassicalSpectrum,
    t_f: f64,
) -> Result<f64> {
    let schedule = Schedule::forward(t_f)?;
    let run = evolution::simulate(problem, &AlgorithmSpec::standard(), &schedule, None)?;
    Ok(success_probability(&run.state, spectrum))
}
