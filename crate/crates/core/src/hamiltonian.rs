//! Time-dependent annealing Hamiltonians for every algorithm variant,
//! applied matrix-free to dense state vectors.
//!
//! Basis index bit `i` is site `i`; bit value 0 is σᶻ = +1. All Hamiltonians
//! share the same diagonal payload (the classical problem energies) and
//! differ in their 1- and 2-local off-diagonal terms:
//!
//! | kind            | H(t)                                                       |
//! |-----------------|------------------------------------------------------------|
//! | standard        | (1−s) H₀ + s H_P                                           |
//! | coupler_*       | (1−s) H₀ + s H_P + (1−s) s H_I                              |
//! | inhomogeneous   | −Σ Γ_i(s) σˣ_i + s H_P                                     |
//! | rfqa_m          | −(1−s) Σ (1 + ᾱ sin 2πf_i t) σˣ_i + s H_P                  |
//! | rfqa_d          | −(1−s) Σ [cos θ_i σˣ_i + sin θ_i σʸ_i] + s H_P, θ_i = ᾱ sin 2πf_i t |
//! | cdqa            | (1−λ) H₀ + λ H_P + Σ α_i σʸ_i                               |
//!
//! with `H₀ = −Σ σˣ_i`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instances::IsingProblem;
use crate::schedules::{gamma_unchecked, CdControl, Schedule, ScheduleKind};
use crate::{C64, MAX_STATE_QUBITS};

/// Default RFQA oscillation amplitude ᾱ.
pub const DEFAULT_RFQA_AMPLITUDE: f64 = 0.15;
/// Default inhomogeneous-driving exponent r.
pub const DEFAULT_INHOMOGENEOUS_R: f64 = 0.5;
/// Transverse-field sign convention for the CD coefficient (`H₀ = h_x Σσˣ`).
pub const DRIVER_H_X: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Standard,
    CouplerFerro,
    CouplerAntiferro,
    CouplerMixed,
    Inhomogeneous,
    RfqaM,
    RfqaD,
    Cdqa,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 8] = [
        AlgorithmKind::Standard,
        AlgorithmKind::CouplerFerro,
        AlgorithmKind::CouplerMixed,
        AlgorithmKind::CouplerAntiferro,
        AlgorithmKind::Inhomogeneous,
        AlgorithmKind::RfqaM,
        AlgorithmKind::RfqaD,
        AlgorithmKind::Cdqa,
    ];

    /// The six variants compared under reverse annealing.
    pub const REVERSE: [AlgorithmKind; 6] = [
        AlgorithmKind::Standard,
        AlgorithmKind::CouplerFerro,
        AlgorithmKind::CouplerMixed,
        AlgorithmKind::CouplerAntiferro,
        AlgorithmKind::RfqaM,
        AlgorithmKind::RfqaD,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmKind::Standard => "standard",
            AlgorithmKind::CouplerFerro => "coupler_ferro",
            AlgorithmKind::CouplerAntiferro => "coupler_antiferro",
            AlgorithmKind::CouplerMixed => "coupler_mixed",
            AlgorithmKind::Inhomogeneous => "inhomogeneous",
            AlgorithmKind::RfqaM => "rfqa_m",
            AlgorithmKind::RfqaD => "rfqa_d",
            AlgorithmKind::Cdqa => "cdqa",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }

    pub fn is_rfqa(self) -> bool {
        matches!(self, AlgorithmKind::RfqaM | AlgorithmKind::RfqaD)
    }

    pub fn is_coupler(self) -> bool {
        matches!(
            self,
            AlgorithmKind::CouplerFerro | AlgorithmKind::CouplerAntiferro | AlgorithmKind::CouplerMixed
        )
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One annealing variant with its drawn parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    /// `r_ij ∈ {−1, +1}` per coupler edge (mixed coupler only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupler_signs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfqa_amplitude: Option<f64>,
    /// Per-spin oscillation frequencies `f_i` (RFQA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfqa_frequencies: Option<Vec<f64>>,
    pub inhomogeneous_r: f64,
    pub rng_seed: u64,
}

impl AlgorithmSpec {
    pub fn standard() -> Self {
        Self::bare(AlgorithmKind::Standard, 0)
    }

    fn bare(kind: AlgorithmKind, rng_seed: u64) -> Self {
        Self {
            kind,
            coupler_signs: None,
            rfqa_amplitude: None,
            rfqa_frequencies: None,
            inhomogeneous_r: DEFAULT_INHOMOGENEOUS_R,
            rng_seed,
        }
    }

    /// Builds a variant for `problem`, drawing mixed-coupler signs
    /// (uniform on {−1, +1}) and RFQA frequencies (uniform on
    /// `[0.5, 1.5] / t_f`) from `rng_seed`.
    pub fn for_problem(kind: AlgorithmKind, problem: &IsingProblem, t_f: f64, rng_seed: u64) -> Result<Self> {
        if !(t_f > 0.0) {
            return Err(invalid("t_f must be positive"));
        }
        let mut spec = Self::bare(kind, rng_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        match kind {
            AlgorithmKind::CouplerMixed => {
                let signs = (0..problem.edges().len())
                    .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                spec.coupler_signs = Some(signs);
            }
            AlgorithmKind::RfqaM | AlgorithmKind::RfqaD => {
                spec.rfqa_amplitude = Some(DEFAULT_RFQA_AMPLITUDE);
                let freqs = (0..problem.n()).map(|_| rng.gen_range(0.5..1.5) / t_f).collect();
                spec.rfqa_frequencies = Some(freqs);
            }
            _ => {}
        }
        Ok(spec)
    }

    pub fn validate(&self, problem: &IsingProblem) -> Result<()> {
        let mixed = self.kind == AlgorithmKind::CouplerMixed;
        match (&self.coupler_signs, mixed) {
            (Some(signs), true) => {
                let edges = problem.edges().len();
                if signs.len() != edges {
                    return Err(invalid(format!("{} coupler signs for {edges} edges", signs.len())));
                }
                if signs.iter().any(|&r| r != 1.0 && r != -1.0) {
                    return Err(invalid("coupler signs must be ±1"));
                }
            }
            (None, true) => return Err(invalid("mixed coupler requires signs")),
            (Some(_), false) => return Err(invalid("coupler signs only apply to the mixed coupler")),
            (None, false) => {}
        }
        let rfqa = self.kind.is_rfqa();
        match (self.rfqa_amplitude, &self.rfqa_frequencies, rfqa) {
            (Some(a), Some(f), true) => {
                if !(a > 0.0) {
                    return Err(invalid("RFQA amplitude must be positive"));
                }
                if f.len() != problem.n() || f.iter().any(|&v| !(v > 0.0)) {
                    return Err(invalid("RFQA needs one positive frequency per spin"));
                }
            }
            (_, _, true) => return Err(invalid("RFQA requires amplitude and frequencies")),
            (None, None, false) => {}
            (_, _, false) => return Err(invalid("RFQA fields only apply to RFQA kinds")),
        }
        if !(self.inhomogeneous_r > 0.0) {
            return Err(invalid("inhomogeneous exponent must be positive"));
        }
        Ok(())
    }
}

/// Coupler family for [`coupler_term`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplerKind {
    Ferro,
    Antiferro,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    /// Problem Hamiltonian diagonal.
    DiagonalZ,
    XField(usize),
    YField(usize),
    XXPair(usize, usize),
    /// `cos φ σˣ + sin φ σʸ` on one site, `φ` supplied by the term's phase.
    XYDressed(usize),
}

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OperatorTerm {
    pub kind: TermKind,
    pub coefficient: Coefficient,
    pub phase: Option<Coefficient>,
}

impl fmt::Debug for OperatorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorTerm").field("kind", &self.kind).finish_non_exhaustive()
    }
}

/// Anything that maps a state to `H(t)ψ`.
pub trait Operator {
    fn dim(&self) -> usize;
    /// Writes `H(t) psi` into `out`.
    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()>;

    /// `H(t)ψ` with one-sided limits from the left where `H` jumps; used
    /// for evaluations at the end of an integration step.
    fn apply_end(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        self.apply(t, psi, out)
    }
}

/// `out[k] += f(k) · psi[k ^ mask]`, where `f(k)` is `lo` or `hi` depending
/// on bit `site` of `k`. Works in contiguous chunks of `2^(lowest mask bit)`
/// so the inner loop vectorizes.
#[inline]
fn accumulate_flip(out: &mut [C64], psi: &[C64], mask: usize, site: usize, lo: C64, hi: C64) {
    let chunk = 1usize << mask.trailing_zeros();
    let bit = 1usize << site;
    for start in (0..out.len()).step_by(chunk) {
        let src = start ^ mask;
        let f = if start & bit == 0 { lo } else { hi };
        for (o, p) in out[start..start + chunk].iter_mut().zip(&psi[src..src + chunk]) {
            *o += p * f;
        }
    }
}

/// Real-coefficient variant of [`accumulate_flip`].
#[inline]
fn accumulate_flip_real(out: &mut [C64], psi: &[C64], mask: usize, c: f64) {
    let chunk = 1usize << mask.trailing_zeros();
    for start in (0..out.len()).step_by(chunk) {
        let src = start ^ mask;
        for (o, p) in out[start..start + chunk].iter_mut().zip(&psi[src..src + chunk]) {
            *o += p * c;
        }
    }
}

/// Accumulates `c · P ψ` into `out` for one Pauli term.
#[inline]
fn accumulate(kind: TermKind, c: f64, phase: f64, diagonal: &[f64], psi: &[C64], out: &mut [C64]) {
    if c == 0.0 {
        return;
    }
    match kind {
        TermKind::DiagonalZ => {
            for ((o, p), d) in out.iter_mut().zip(psi).zip(diagonal) {
                *o += p * (c * d);
            }
        }
        TermKind::XField(i) => accumulate_flip_real(out, psi, 1 << i, c),
        TermKind::XXPair(i, j) => accumulate_flip_real(out, psi, (1 << i) | (1 << j), c),
        // σʸ|0⟩ = i|1⟩, σʸ|1⟩ = −i|0⟩
        TermKind::YField(i) => accumulate_flip(out, psi, 1 << i, i, C64::new(0.0, -c), C64::new(0.0, c)),
        TermKind::XYDressed(i) => {
            accumulate_flip(out, psi, 1 << i, i, C64::from_polar(c, -phase), C64::from_polar(c, phase))
        }
    }
}

fn check_qubits(n: usize) -> Result<()> {
    if n > MAX_STATE_QUBITS {
        return Err(Error::ResourceLimit { what: "qubit count", value: n, limit: MAX_STATE_QUBITS });
    }
    Ok(())
}

/// Diagonal of `H_P`: entry `k` is the classical energy of configuration `k`.
pub fn problem_diagonal(problem: &IsingProblem) -> Result<Vec<f64>> {
    let n = problem.n();
    check_qubits(n)?;
    let dim = 1usize << n;
    let mut diag = vec![problem.constant(); dim];
    let sign = |k: usize, i: usize| if k >> i & 1 == 0 { 1.0 } else { -1.0 };
    for (i, &h) in problem.h().iter().enumerate() {
        for (k, d) in diag.iter_mut().enumerate() {
            *d += h * sign(k, i);
        }
    }
    for (i, j, v) in problem.edges() {
        for (k, d) in diag.iter_mut().enumerate() {
            *d += v * sign(k, i) * sign(k, j);
        }
    }
    Ok(diag)
}

/// A time-independent sum of Pauli terms.
#[derive(Clone, Debug)]
pub struct StaticOperator {
    n: usize,
    terms: Vec<(TermKind, f64)>,
    diagonal: Vec<f64>,
}

impl StaticOperator {
    pub fn new(n: usize, terms: Vec<(TermKind, f64)>, diagonal: Option<Vec<f64>>) -> Result<Self> {
        check_qubits(n)?;
        let dim = 1usize << n;
        let diagonal = diagonal.unwrap_or_default();
        if terms.iter().any(|t| t.0 == TermKind::DiagonalZ) && diagonal.len() != dim {
            return Err(invalid("diagonal term needs a 2ⁿ diagonal"));
        }
        Ok(Self { n, terms, diagonal })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(TermKind, f64)] {
        &self.terms
    }
}

impl Operator for StaticOperator {
    fn dim(&self) -> usize {
        1 << self.n
    }

    fn apply(&self, _t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        out.fill(C64::new(0.0, 0.0));
        for &(kind, c) in &self.terms {
            accumulate(kind, c, 0.0, &self.diagonal, psi, out);
        }
        Ok(())
    }
}

/// `H₀ = −Σ σˣ_i`.
pub fn driver_field(n: usize) -> Result<StaticOperator> {
    StaticOperator::new(n, (0..n).map(|i| (TermKind::XField(i), -1.0)).collect(), None)
}

/// Transverse coupler `H_I` over `edges`: −1 per pair (ferro), +1 (antiferro),
/// or the supplied `r_ij` (mixed).
pub fn coupler_term(
    n: usize,
    kind: CouplerKind,
    signs: Option<&[f64]>,
    edges: &[(usize, usize)],
) -> Result<StaticOperator> {
    let weights: Vec<f64> = match kind {
        CouplerKind::Ferro => vec![-1.0; edges.len()],
        CouplerKind::Antiferro => vec![1.0; edges.len()],
        CouplerKind::Mixed => {
            let s = signs.ok_or_else(|| invalid("mixed coupler requires signs"))?;
            if s.len() != edges.len() {
                return Err(invalid("one sign per coupler edge required"));
            }
            s.to_vec()
        }
    };
    let terms = edges
        .iter()
        .zip(weights)
        .map(|(&(i, j), w)| (TermKind::XXPair(i, j), w))
        .collect();
    StaticOperator::new(n, terms, None)
}

/// Counter-diabatic σʸ coefficients, already multiplied by `λ̇`:
///
/// `α_i = −h_x h_i λ̇ / (2 [h_x² (λ−1)² + λ² (h_i² + Σ_{j≠i} J_ij²)])`.
///
/// This is the exact minimizer of `Tr[G²]` with `G = λ̇ ∂_λH + i[A, H]` and
/// `A = Σ α_i σʸ_i`. A vanishing denominator yields 0 for that site.
pub fn cd_alpha(problem: &IsingProblem, h_x: f64, lambda: f64, lambda_dot: f64) -> Vec<f64> {
    let norms = problem.coupling_norms();
    problem
        .h()
        .iter()
        .zip(&norms)
        .map(|(&h, &jj)| cd_alpha_site(h, jj, h_x, lambda, lambda_dot))
        .collect()
}

#[inline]
fn cd_alpha_site(h: f64, coupling_norm: f64, h_x: f64, lambda: f64, lambda_dot: f64) -> f64 {
    if lambda_dot == 0.0 {
        return 0.0;
    }
    let denom = 2.0 * (h_x * h_x * (lambda - 1.0).powi(2) + lambda * lambda * (h * h + coupling_norm));
    if denom == 0.0 {
        0.0
    } else {
        -h_x * h * lambda_dot / denom
    }
}

/// Source of the interpolation parameter and its rate.
#[derive(Clone, Copy, Debug)]
enum Control {
    Schedule(Schedule),
    Cd(CdControl),
    /// Quasi-static: fixed parameter, zero rate, oscillations at their mean.
    Frozen(f64),
}

impl Control {
    fn t_f(&self) -> Option<f64> {
        match self {
            Control::Schedule(s) => Some(s.t_f),
            Control::Cd(c) => Some(c.t_f),
            Control::Frozen(_) => None,
        }
    }

    /// `(s, ds/dt)`; `t` has been domain-checked by the caller.
    fn at(&self, t: f64) -> (f64, f64) {
        match self {
            Control::Schedule(s) => s.s_and_rate(t).unwrap_or((s.s_of_t(s.t_f).unwrap_or(1.0), 0.0)),
            Control::Cd(c) => c.lambda_of_t(t).unwrap_or((1.0, 0.0)),
            Control::Frozen(s) => (*s, 0.0),
        }
    }

    fn oscillates(&self) -> bool {
        !matches!(self, Control::Frozen(_))
    }

    fn check(&self, t: f64) -> Result<()> {
        match self {
            Control::Schedule(s) => s.s_of_t(t).map(|_| ()),
            Control::Cd(c) => c.lambda_of_t(t).map(|_| ()),
            Control::Frozen(_) => Ok(()),
        }
    }
}

/// `H(t)` for one (problem, algorithm, schedule) triple.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    n: usize,
    kind: AlgorithmKind,
    diagonal: Arc<Vec<f64>>,
    terms: Vec<OperatorTerm>,
    control: Control,
    /// `(h_i, Σ_j J_ij²)` per site, CD-QA only.
    cd_fields: Vec<(f64, f64)>,
}

impl Hamiltonian {
    /// Assembles `H(t)` on `[0, schedule.t_f]`. CD-QA under a forward
    /// schedule follows `λ(t)`; under a reverse schedule it follows `s(t)`.
    pub fn assemble(problem: &IsingProblem, algo: &AlgorithmSpec, schedule: &Schedule) -> Result<Self> {
        let control = match (algo.kind, schedule.kind) {
            (AlgorithmKind::Cdqa, ScheduleKind::Forward) => Control::Cd(CdControl::new(schedule.t_f)?),
            _ => Control::Schedule(*schedule),
        };
        Self::build(problem, algo, control)
    }

    /// Hamiltonian frozen at parameter `s`: oscillating fields at their mean
    /// (sine terms zero) and the CD term absent (zero rate).
    pub fn quasi_static(problem: &IsingProblem, algo: &AlgorithmSpec, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid(format!("s = {s} outside [0, 1]")));
        }
        Self::build(problem, algo, Control::Frozen(s))
    }

    fn build(problem: &IsingProblem, algo: &AlgorithmSpec, control: Control) -> Result<Self> {
        algo.validate(problem)?;
        let n = problem.n();
        let diagonal = Arc::new(problem_diagonal(problem)?);
        let mut terms = Vec::new();
        let term = |kind: TermKind, f: Coefficient| OperatorTerm { kind, coefficient: f, phase: None };

        terms.push(term(TermKind::DiagonalZ, Arc::new(move |t| control.at(t).0)));

        match algo.kind {
            AlgorithmKind::Standard | AlgorithmKind::Cdqa => {
                for i in 0..n {
                    terms.push(term(TermKind::XField(i), Arc::new(move |t| -(1.0 - control.at(t).0))));
                }
            }
            AlgorithmKind::CouplerFerro | AlgorithmKind::CouplerAntiferro | AlgorithmKind::CouplerMixed => {
                for i in 0..n {
                    terms.push(term(TermKind::XField(i), Arc::new(move |t| -(1.0 - control.at(t).0))));
                }
                let edges: Vec<(usize, usize)> = problem.edges().iter().map(|e| (e.0, e.1)).collect();
                let coupler_kind = match algo.kind {
                    AlgorithmKind::CouplerFerro => CouplerKind::Ferro,
                    AlgorithmKind::CouplerAntiferro => CouplerKind::Antiferro,
                    _ => CouplerKind::Mixed,
                };
                let coupler = coupler_term(n, coupler_kind, algo.coupler_signs.as_deref(), &edges)?;
                for &(kind, w) in coupler.terms() {
                    terms.push(term(
                        kind,
                        Arc::new(move |t| {
                            let s = control.at(t).0;
                            (1.0 - s) * s * w
                        }),
                    ));
                }
            }
            AlgorithmKind::Inhomogeneous => {
                let r = algo.inhomogeneous_r;
                for i in 0..n {
                    terms.push(term(
                        TermKind::XField(i),
                        Arc::new(move |t| -gamma_unchecked(n, i + 1, control.at(t).0, r)),
                    ));
                }
            }
            AlgorithmKind::RfqaM => {
                let amp = algo.rfqa_amplitude.expect("validated");
                let freqs = algo.rfqa_frequencies.clone().expect("validated");
                for (i, f) in freqs.into_iter().enumerate() {
                    terms.push(term(
                        TermKind::XField(i),
                        Arc::new(move |t| {
                            let osc = if control.oscillates() { (2.0 * PI * f * t).sin() } else { 0.0 };
                            -(1.0 - control.at(t).0) * (1.0 + amp * osc)
                        }),
                    ));
                }
            }
            AlgorithmKind::RfqaD => {
                let amp = algo.rfqa_amplitude.expect("validated");
                let freqs = algo.rfqa_frequencies.clone().expect("validated");
                for (i, f) in freqs.into_iter().enumerate() {
                    terms.push(OperatorTerm {
                        kind: TermKind::XYDressed(i),
                        coefficient: Arc::new(move |t| -(1.0 - control.at(t).0)),
                        phase: Some(Arc::new(move |t| {
                            if control.oscillates() {
                                amp * (2.0 * PI * f * t).sin()
                            } else {
                                0.0
                            }
                        })),
                    });
                }
            }
        }

        if algo.kind == AlgorithmKind::Cdqa {
            let norms = problem.coupling_norms();
            for (i, (&h, &jj)) in problem.h().iter().zip(&norms).enumerate() {
                terms.push(term(
                    TermKind::YField(i),
                    Arc::new(move |t| {
                        let (lambda, rate) = control.at(t);
                        cd_alpha_site(h, jj, DRIVER_H_X, lambda, rate)
                    }),
                ));
            }
        }

        let cd_fields = if algo.kind == AlgorithmKind::Cdqa {
            problem.h().iter().copied().zip(problem.coupling_norms()).collect()
        } else {
            Vec::new()
        };
        Ok(Self { n, kind: algo.kind, diagonal, terms, control, cd_fields })
    }

    /// The CD coefficients depend on `ds/dt`, which jumps at the
    /// reverse-schedule kinks; recompute them with the left derivative.
    fn left_coefficients(&self, t: f64) -> Result<Vec<(TermKind, f64, f64)>> {
        let mut coeffs = self.coefficients(t)?;
        if let (AlgorithmKind::Cdqa, Control::Schedule(schedule)) = (self.kind, self.control) {
            let (lambda, rate) = schedule.s_and_rate_left(t)?;
            let cd = coeffs.iter_mut().filter(|c| matches!(c.0, TermKind::YField(_)));
            for ((_, c, _), (&h, &jj)) in cd.zip(self.cd_fields.iter().map(|f| (&f.0, &f.1))) {
                *c = cd_alpha_site(h, jj, DRIVER_H_X, lambda, rate);
            }
        }
        Ok(coeffs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn terms(&self) -> &[OperatorTerm] {
        &self.terms
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Total anneal time, `None` for quasi-static Hamiltonians.
    pub fn t_f(&self) -> Option<f64> {
        self.control.t_f()
    }

    /// `(term, coefficient, phase)` at time `t`.
    pub fn coefficients(&self, t: f64) -> Result<Vec<(TermKind, f64, f64)>> {
        self.control.check(t)?;
        Ok(self
            .terms
            .iter()
            .map(|term| {
                let phase = term.phase.as_ref().map_or(0.0, |p| p(t));
                (term.kind, (term.coefficient)(t), phase)
            })
            .collect())
    }

    /// Materializes `H(t)` by applying it to every basis vector.
    pub fn to_dense(&self, t: f64) -> Result<DMatrix<C64>> {
        dense_of(self, t)
    }
}

impl Operator for Hamiltonian {
    fn dim(&self) -> usize {
        1 << self.n
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        let coeffs = self.coefficients(t)?;
        out.fill(C64::new(0.0, 0.0));
        for (kind, c, phase) in coeffs {
            accumulate(kind, c, phase, &self.diagonal, psi, out);
        }
        Ok(())
    }

    fn apply_end(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        let coeffs = self.left_coefficients(t)?;
        out.fill(C64::new(0.0, 0.0));
        for (kind, c, phase) in coeffs {
            accumulate(kind, c, phase, &self.diagonal, psi, out);
        }
        Ok(())
    }
}

/// Dense matrix of any operator at time `t` (column `k` is `H e_k`).
pub fn dense_of<O: Operator + ?Sized>(op: &O, t: f64) -> Result<DMatrix<C64>> {
    let dim = op.dim();
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = vec![C64::new(0.0, 0.0); dim];
    let mut col = vec![C64::new(0.0, 0.0); dim];
    for k in 0..dim {
        e[k] = C64::new(1.0, 0.0);
        op.apply(t, &e, &mut col)?;
        for (r, v) in col.iter().enumerate() {
            m[(r, k)] = *v;
        }
        e[k] = C64::new(0.0, 0.0);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate;
    use crate::instances::ising_instance;

    fn uniform(n: usize) -> Vec<C64> {
        vec![C64::new((0.5f64).powf(n as f64 / 2.0), 0.0); 1 << n]
    }

    fn pauli_x() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]).map(|v| C64::new(v, 0.0))
    }

    /// `I ⊗ … ⊗ P_site ⊗ … ⊗ I` with site 0 as the least significant bit.
    fn embed(p: &DMatrix<C64>, site: usize, n: usize) -> DMatrix<C64> {
        let mut m = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for q in (0..n).rev() {
            let f = if q == site { p.clone() } else { DMatrix::identity(2, 2) };
            m = m.kronecker(&f);
        }
        m
    }

    #[test]
    fn diagonal_examples() {
        let p = IsingProblem::new(vec![1.0], &[], 0.0).unwrap();
        assert_eq!(problem_diagonal(&p).unwrap(), vec![1.0, -1.0]);
        let p = IsingProblem::new(vec![0.0, 0.0], &[(0, 1, 1.0)], 0.0).unwrap();
        assert_eq!(problem_diagonal(&p).unwrap(), vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn diagonal_matches_enumeration() {
        for n in 1..=10 {
            let p = ising_instance(500 + n as u64, n).unwrap();
            let d = problem_diagonal(&p).unwrap();
            let e = enumerate(&p).unwrap().energies;
            for (a, b) in d.iter().zip(&e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let big = IsingProblem::new(vec![0.0; MAX_STATE_QUBITS + 1], &[], 0.0).unwrap();
        assert!(problem_diagonal(&big).is_err());
    }

    #[test]
    fn driver_eigenvalue_on_uniform_state() {
        for n in [1, 3, 5] {
            let h0 = driver_field(n).unwrap();
            let psi = uniform(n);
            let mut out = vec![C64::new(0.0, 0.0); 1 << n];
            h0.apply(0.0, &psi, &mut out).unwrap();
            for (o, p) in out.iter().zip(&psi) {
                assert!((o - p * -(n as f64)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn driver_matches_dense_two_qubits() {
        let dense = -(embed(&pauli_x(), 0, 2) + embed(&pauli_x(), 1, 2));
        let m = dense_of(&driver_field(2).unwrap(), 0.0).unwrap();
        assert!((m - dense).norm() < 1e-15);
    }

    #[test]
    fn ferro_and_antiferro_spectra() {
        let f = dense_of(&coupler_term(2, CouplerKind::Ferro, None, &[(0, 1)]).unwrap(), 0.0).unwrap();
        let a = dense_of(&coupler_term(2, CouplerKind::Antiferro, None, &[(0, 1)]).unwrap(), 0.0).unwrap();
        let mut ef: Vec<f64> = f.map(|c| c.re).symmetric_eigenvalues().iter().copied().collect();
        ef.sort_by(f64::total_cmp);
        assert_eq!(ef.iter().map(|v| v.round()).collect::<Vec<_>>(), vec![-1.0, -1.0, 1.0, 1.0]);
        assert!((f + a).norm() < 1e-15);
    }

    #[test]
    fn mixed_coupler_matches_dense_and_is_reproducible() {
        let p = ising_instance(21, 3).unwrap();
        let a = AlgorithmSpec::for_problem(AlgorithmKind::CouplerMixed, &p, 1.0, 99).unwrap();
        let b = AlgorithmSpec::for_problem(AlgorithmKind::CouplerMixed, &p, 1.0, 99).unwrap();
        assert_eq!(a, b);
        let signs = a.coupler_signs.unwrap();
        let edges: Vec<(usize, usize)> = p.edges().iter().map(|e| (e.0, e.1)).collect();
        let op = coupler_term(3, CouplerKind::Mixed, Some(&signs), &edges).unwrap();
        let mut dense = DMatrix::zeros(8, 8);
        for (&(i, j), &r) in edges.iter().zip(&signs) {
            dense += (embed(&pauli_x(), i, 3) * embed(&pauli_x(), j, 3)) * C64::new(r, 0.0);
        }
        assert!((dense_of(&op, 0.0).unwrap() - dense).norm() < 1e-14);
        assert!(coupler_term(3, CouplerKind::Mixed, None, &edges).is_err());
    }

    #[test]
    fn cd_alpha_closed_form_example() {
        let p = IsingProblem::new(vec![1.0], &[], 0.0).unwrap();
        assert_eq!(cd_alpha(&p, -1.0, 0.5, 1.0), vec![1.0]);
        assert_eq!(cd_alpha(&p, -1.0, 0.3, 0.0), vec![0.0]);
        let zero = IsingProblem::new(vec![0.0], &[], 0.0).unwrap();
        assert_eq!(cd_alpha(&zero, -1.0, 1.0, 1.0), vec![0.0]);
    }

    #[test]
    fn standard_endpoints() {
        let p = ising_instance(4, 3).unwrap();
        let sched = Schedule::forward(2.0).unwrap();
        let h = Hamiltonian::assemble(&p, &AlgorithmSpec::standard(), &sched).unwrap();
        let h0 = dense_of(&driver_field(3).unwrap(), 0.0).unwrap();
        let hp = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            8,
            problem_diagonal(&p).unwrap().into_iter().map(|v| C64::new(v, 0.0)),
        ));
        assert!((h.to_dense(0.0).unwrap() - h0).norm() < 1e-14);
        assert!((h.to_dense(2.0).unwrap() - hp).norm() < 1e-14);
        assert!(h.to_dense(2.5).is_err());
    }

    #[test]
    fn rfqa_m_at_zero_matches_standard() {
        let p = ising_instance(8, 3).unwrap();
        let sched = Schedule::forward(1.0).unwrap();
        let algo = AlgorithmSpec::for_problem(AlgorithmKind::RfqaM, &p, 1.0, 5).unwrap();
        let a = Hamiltonian::assemble(&p, &algo, &sched).unwrap().to_dense(0.0).unwrap();
        let b = Hamiltonian::assemble(&p, &AlgorithmSpec::standard(), &sched)
            .unwrap()
            .to_dense(0.0)
            .unwrap();
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let p = ising_instance(8, 3).unwrap();
        let mut algo = AlgorithmSpec::for_problem(AlgorithmKind::CouplerMixed, &p, 1.0, 5).unwrap();
        algo.coupler_signs.as_mut().unwrap().pop();
        assert!(algo.validate(&p).is_err());
        let mut algo = AlgorithmSpec::standard();
        algo.rfqa_amplitude = Some(0.1);
        assert!(algo.validate(&p).is_err());
        let mut algo = AlgorithmSpec::for_problem(AlgorithmKind::RfqaD, &p, 1.0, 5).unwrap();
        algo.rfqa_frequencies = None;
        assert!(algo.validate(&p).is_err());
        assert!(Hamiltonian::quasi_static(&p, &AlgorithmSpec::standard(), 1.5).is_err());
    }

    #[test]
    fn labels_round_trip() {
        for k in AlgorithmKind::ALL {
            assert_eq!(AlgorithmKind::from_label(k.label()), Some(k));
        }
    }
}
