//! Fixed-step fourth-order propagation of `i ∂ψ/∂t = H(t) ψ` (ħ = 1) and
//! quasi-static spectra for gap diagnostics.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::{AlgorithmKind, AlgorithmSpec, Hamiltonian, Operator};
use crate::instances::IsingProblem;
use crate::schedules::{Schedule, ScheduleKind};
use crate::{C64, MAX_STATE_QUBITS};

/// Largest allowed norm drift before final renormalization.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// How many times a failed propagation is retried with half the step.
pub const MAX_STEP_HALVINGS: usize = 6;
/// Largest qubit count for dense diagonalization.
pub const MAX_SPECTRUM_QUBITS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(n: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != 1usize << n {
            return Err(invalid(format!("{} amplitudes for {n} qubits", amplitudes.len())));
        }
        Ok(Self { n, amplitudes })
    }

    /// `|+⟩^⊗n`.
    pub fn uniform(n: usize) -> Result<Self> {
        check_qubits(n)?;
        let a = (0.5f64).powf(n as f64 / 2.0);
        Self::new(n, vec![C64::new(a, 0.0); 1 << n])
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_qubits(n)?;
        if index >= 1 << n {
            return Err(invalid(format!("basis index {index} out of range for {n} qubits")));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n];
        amplitudes[index] = C64::new(1.0, 0.0);
        Self::new(n, amplitudes)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            .norm_sqr()
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

fn check_qubits(n: usize) -> Result<()> {
    if n > MAX_STATE_QUBITS {
        return Err(Error::ResourceLimit { what: "qubit count", value: n, limit: MAX_STATE_QUBITS });
    }
    Ok(())
}

/// Forward anneals start in the driver ground state; reverse anneals start
/// in the designated classical configuration.
pub fn initial_state(n: usize, schedule: &Schedule, seed_state: Option<usize>) -> Result<StateVector> {
    match schedule.kind {
        ScheduleKind::Forward => StateVector::uniform(n),
        ScheduleKind::Reverse => {
            let idx = seed_state.ok_or_else(|| invalid("reverse anneal needs a seed state"))?;
            StateVector::basis(n, idx)
        }
    }
}

/// Default step: `min(1e−3, t_f / 2000)`.
pub fn default_dt(t_f: f64) -> f64 {
    (t_f / 2000.0).min(1e-3)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Rescale the final state to unit norm (drift is checked first).
    pub renormalize: bool,
    /// Fail when the drift exceeds [`NORM_TOLERANCE`].
    pub check_norm: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { renormalize: true, check_norm: true }
    }
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub state: StateVector,
    /// Largest `|‖ψ(t)‖ − ‖ψ(0)‖|` over all steps.
    pub norm_drift: f64,
    pub steps: usize,
    pub dt: f64,
}

/// Classical RK4 with `ceil(t_f / dt)` equal steps; stage times are
/// `t_f · k / steps` so runs are bit-reproducible.
pub fn evolve<O: Operator + ?Sized>(
    h: &O,
    psi0: &StateVector,
    t_f: f64,
    dt: f64,
    opts: EvolveOptions,
) -> Result<Evolution> {
    if !(t_f > 0.0) || !(dt > 0.0) {
        return Err(invalid("t_f and dt must be positive"));
    }
    if dt > t_f {
        return Err(invalid(format!("dt = {dt} exceeds t_f = {t_f}")));
    }
    let dim = h.dim();
    if psi0.amplitudes.len() != dim {
        return Err(invalid("state and operator dimensions differ"));
    }
    let steps = ((t_f / dt) - 1e-9).ceil().max(1.0) as usize;
    let step = t_f / steps as f64;
    let half = 0.5 * step;
    let minus_i = C64::new(0.0, -1.0);

    let mut psi = psi0.amplitudes.clone();
    let norm0 = norm(&psi);
    let zero = C64::new(0.0, 0.0);
    let mut k = vec![zero; dim];
    let mut stage = vec![zero; dim];
    let mut acc = vec![zero; dim];
    let mut drift = 0.0_f64;

    for s in 0..steps {
        let t0 = t_f * s as f64 / steps as f64;
        let t1 = t_f * (s + 1) as f64 / steps as f64;
        let tm = 0.5 * (t0 + t1);

        // k1
        h.apply(t0, &psi, &mut k)?;
        for i in 0..dim {
            let ki = k[i] * minus_i;
            acc[i] = ki;
            stage[i] = psi[i] + ki * half;
        }
        // k2
        h.apply(tm, &stage, &mut k)?;
        for i in 0..dim {
            let ki = k[i] * minus_i;
            acc[i] += ki * 2.0;
            stage[i] = psi[i] + ki * half;
        }
        // k3
        h.apply(tm, &stage, &mut k)?;
        for i in 0..dim {
            let ki = k[i] * minus_i;
            acc[i] += ki * 2.0;
            stage[i] = psi[i] + ki * step;
        }
        // k4
        h.apply_end(t1, &stage, &mut k)?;
        let w = step / 6.0;
        for i in 0..dim {
            psi[i] += (acc[i] + k[i] * minus_i) * w;
        }
        drift = drift.max((norm(&psi) - norm0).abs());
    }

    if opts.check_norm && drift > NORM_TOLERANCE {
        return Err(Error::StepSize { drift, dt: step });
    }
    if opts.renormalize {
        let nrm = norm(&psi);
        if nrm > 0.0 {
            let scale = norm0 / nrm;
            psi.iter_mut().for_each(|a| *a *= scale);
        }
    }
    Ok(Evolution { state: StateVector { n: psi0.n, amplitudes: psi }, norm_drift: drift, steps, dt: step })
}

/// [`evolve`], halving `dt` on norm-drift failures up to
/// [`MAX_STEP_HALVINGS`] times.
pub fn evolve_with_retry<O: Operator + ?Sized>(
    h: &O,
    psi0: &StateVector,
    t_f: f64,
    dt: f64,
) -> Result<Evolution> {
    let mut dt = dt;
    let mut last = None;
    for _ in 0..=MAX_STEP_HALVINGS {
        match evolve(h, psi0, t_f, dt, EvolveOptions::default()) {
            Err(e @ Error::StepSize { .. }) => {
                last = Some(e);
                dt *= 0.5;
            }
            other => return other,
        }
    }
    Err(last.expect("loop ran at least once"))
}

/// Assembles and propagates one anneal with the default step.
pub fn simulate(
    problem: &IsingProblem,
    algo: &AlgorithmSpec,
    schedule: &Schedule,
    seed_state: Option<usize>,
) -> Result<Evolution> {
    simulate_with_dt(problem, algo, schedule, seed_state, default_dt(schedule.t_f))
}

pub fn simulate_with_dt(
    problem: &IsingProblem,
    algo: &AlgorithmSpec,
    schedule: &Schedule,
    seed_state: Option<usize>,
    dt: f64,
) -> Result<Evolution> {
    let h = Hamiltonian::assemble(problem, algo, schedule)?;
    let psi0 = initial_state(problem.n(), schedule, seed_state)?;
    evolve_with_retry(&h, &psi0, schedule.t_f, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    pub algorithm: AlgorithmKind,
    pub grid: Vec<f64>,
    /// Lowest `k` eigenvalues at each grid point, ascending.
    pub levels: Vec<Vec<f64>>,
    pub min_gap: f64,
    pub min_gap_location: f64,
    pub notes: Vec<String>,
}

impl SpectrumTrace {
    /// CSV with columns `s, E_0, …, E_{k−1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let k = self.levels.first().map_or(0, Vec::len);
        let mut header = vec!["s".to_string()];
        header.extend((0..k).map(|i| format!("E_{i}")));
        out.write_record(&header)?;
        for (s, row) in self.grid.iter().zip(&self.levels) {
            let mut rec = vec![s.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sorted eigenvalues of a Hermitian matrix (real path when possible).
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut ev: Vec<f64> = if m.iter().all(|c| c.im == 0.0) {
        m.map(|c| c.re).symmetric_eigenvalues().iter().copied().collect()
    } else {
        m.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
    };
    ev.sort_by(f64::total_cmp);
    ev
}

/// Lowest `k` levels of the quasi-static `H(s)` on `grid_points` equally
/// spaced values of `s ∈ [0, 1]`, with the minimum ground-state gap.
pub fn spectrum_trace(
    problem: &IsingProblem,
    algo: &AlgorithmSpec,
    grid_points: usize,
    k: usize,
) -> Result<SpectrumTrace> {
    let n = problem.n();
    if n > MAX_SPECTRUM_QUBITS {
        return Err(Error::ResourceLimit { what: "qubit count", value: n, limit: MAX_SPECTRUM_QUBITS });
    }
    if k < 2 {
        return Err(invalid("need at least two levels for a gap"));
    }
    if grid_points < 2 {
        return Err(invalid("need at least two grid points"));
    }
    let k = k.min(1 << n);
    let mut grid = Vec::with_capacity(grid_points);
    let mut levels = Vec::with_capacity(grid_points);
    let mut min_gap = f64::INFINITY;
    let mut min_gap_location = 0.0;
    for g in 0..grid_points {
        let s = g as f64 / (grid_points - 1) as f64;
        let h = Hamiltonian::quasi_static(problem, algo, s)?;
        let ev = hermitian_eigenvalues(&h.to_dense(0.0)?);
        let gap = (ev[1] - ev[0]).max(0.0);
        if gap < min_gap {
            min_gap = gap;
            min_gap_location = s;
        }
        grid.push(s);
        levels.push(ev[..k].to_vec());
    }
    let mut notes = Vec::new();
    if algo.kind.is_rfqa() {
        notes.push("oscillating fields frozen at their mean (sine terms set to 0)".to_string());
    }
    if algo.kind == AlgorithmKind::Cdqa {
        notes.push("counter-diabatic term omitted (quasi-static, zero rate)".to_string());
    }
    Ok(SpectrumTrace { algorithm: algo.kind, grid, levels, min_gap, min_gap_location, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate;
    use crate::hamiltonian::{driver_field, StaticOperator, TermKind};
    use crate::instances::ising_instance;
    use crate::metrics::success_probability;

    #[test]
    fn initial_states() {
        let f = Schedule::forward(1.0).unwrap();
        let r = Schedule::reverse(1.0).unwrap();
        let u = initial_state(2, &f, None).unwrap();
        assert!(u.amplitudes().iter().all(|a| (a - C64::new(0.5, 0.0)).norm() < 1e-15));
        let b = initial_state(3, &r, Some(5)).unwrap();
        assert_eq!(b.probability(5), 1.0);
        assert!(initial_state(3, &r, None).is_err());
        assert!(initial_state(3, &r, Some(8)).is_err());

        let h0 = driver_field(4).unwrap();
        let psi = initial_state(4, &f, None).unwrap();
        let mut out = vec![C64::new(0.0, 0.0); 16];
        h0.apply(0.0, psi.amplitudes(), &mut out).unwrap();
        for (o, p) in out.iter().zip(psi.amplitudes()) {
            assert!((o + p * 4.0).norm() < 1e-14);
        }
    }

    #[test]
    fn single_qubit_rotation() {
        let h = StaticOperator::new(1, vec![(TermKind::XField(0), -1.0)], None).unwrap();
        let psi0 = StateVector::basis(1, 0).unwrap();
        let t = std::f64::consts::FRAC_PI_2;
        let out = evolve(&h, &psi0, t, 1e-3, EvolveOptions::default()).unwrap();
        assert!((out.state.probability(1) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn diagonal_evolution_only_rotates_phases() {
        let p = ising_instance(3, 3).unwrap();
        let diag = crate::hamiltonian::problem_diagonal(&p).unwrap();
        let h = StaticOperator::new(3, vec![(TermKind::DiagonalZ, 1.0)], Some(diag.clone())).unwrap();
        let amps: Vec<C64> = (0..8).map(|k| C64::new(1.0 + k as f64, 0.5 * k as f64)).collect();
        let nrm = norm(&amps);
        let psi0 = StateVector::new(3, amps.iter().map(|a| a / nrm).collect()).unwrap();
        let t = 1.7;
        let out = evolve(&h, &psi0, t, 1e-3, EvolveOptions::default()).unwrap();
        for k in 0..8 {
            let expect = psi0.amplitudes()[k] * C64::from_polar(1.0, -diag[k] * t);
            assert!((out.state.amplitudes()[k] - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let h = driver_field(1).unwrap();
        let psi = StateVector::basis(1, 0).unwrap();
        assert!(evolve(&h, &psi, 1.0, 2.0, EvolveOptions::default()).is_err());
        assert!(evolve(&h, &psi, 0.0, 0.1, EvolveOptions::default()).is_err());
        let psi2 = StateVector::basis(2, 0).unwrap();
        assert!(evolve(&h, &psi2, 1.0, 0.1, EvolveOptions::default()).is_err());
    }

    #[test]
    fn coarse_step_triggers_retry() {
        // dt = 0.5 on ‖H‖ = 8 drifts far beyond tolerance; the retry loop
        // halves until the drift is acceptable or gives up with StepSize.
        let h = StaticOperator::new(1, vec![(TermKind::XField(0), -8.0)], None).unwrap();
        let psi = StateVector::basis(1, 0).unwrap();
        assert!(matches!(
            evolve(&h, &psi, 1.0, 0.5, EvolveOptions::default()),
            Err(Error::StepSize { .. })
        ));
        let ok = evolve_with_retry(&h, &psi, 1.0, 0.05).unwrap();
        assert!(ok.dt < 0.05);
        assert!(ok.norm_drift <= NORM_TOLERANCE);
    }

    #[test]
    fn step_halving_converges() {
        for n in [4, 6, 8] {
            let p = ising_instance(40 + n as u64, n).unwrap();
            let spec = enumerate(&p).unwrap();
            let sched = Schedule::forward(1.0).unwrap();
            let algo = AlgorithmSpec::standard();
            let a = simulate_with_dt(&p, &algo, &sched, None, 1e-3).unwrap();
            let b = simulate_with_dt(&p, &algo, &sched, None, 5e-4).unwrap();
            let pa = success_probability(&a.state, &spec);
            let pb = success_probability(&b.state, &spec);
            assert!((pa - pb).abs() < 1e-6, "n={n}: {pa} vs {pb}");
        }
    }

    #[test]
    fn linearity_without_renormalization() {
        let p = ising_instance(12, 4).unwrap();
        let sched = Schedule::forward(1.0).unwrap();
        let algo = AlgorithmSpec::for_problem(AlgorithmKind::RfqaD, &p, 1.0, 3).unwrap();
        let h = Hamiltonian::assemble(&p, &algo, &sched).unwrap();
        let opts = EvolveOptions { renormalize: false, check_norm: false };
        let p1 = StateVector::basis(4, 3).unwrap();
        let p2 = StateVector::uniform(4).unwrap();
        let (a, b) = (C64::new(0.3, -0.7), C64::new(1.1, 0.2));
        let mix: Vec<C64> =
            p1.amplitudes().iter().zip(p2.amplitudes()).map(|(x, y)| a * x + b * y).collect();
        let mix = StateVector::new(4, mix).unwrap();
        let e1 = evolve(&h, &p1, 1.0, 1e-3, opts).unwrap().state;
        let e2 = evolve(&h, &p2, 1.0, 1e-3, opts).unwrap().state;
        let em = evolve(&h, &mix, 1.0, 1e-3, opts).unwrap().state;
        for k in 0..16 {
            let lin = a * e1.amplitudes()[k] + b * e2.amplitudes()[k];
            assert!((em.amplitudes()[k] - lin).norm() < 1e-8);
        }
    }

    #[test]
    fn spectrum_endpoints() {
        let p = ising_instance(6, 4).unwrap();
        let tr = spectrum_trace(&p, &AlgorithmSpec::standard(), 11, 4).unwrap();
        assert!((tr.levels[0][0] + 4.0).abs() < 1e-10);
        assert!((tr.levels[0][1] - tr.levels[0][0] - 2.0).abs() < 1e-10);
        let mut classical = enumerate(&p).unwrap().energies;
        classical.sort_by(f64::total_cmp);
        for (a, b) in tr.levels[10].iter().zip(&classical) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(tr.min_gap >= 0.0);
        for row in &tr.levels {
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,E_0,E_1,E_2,E_3\n"));
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn spectrum_limits() {
        let p = ising_instance(6, 4).unwrap();
        assert!(spectrum_trace(&p, &AlgorithmSpec::standard(), 11, 1).is_err());
        let big = IsingProblem::new(vec![0.1; 13], &[], 0.0).unwrap();
        assert!(matches!(
            spectrum_trace(&big, &AlgorithmSpec::standard(), 3, 2),
            Err(Error::ResourceLimit { .. })
        ));
    }
}
