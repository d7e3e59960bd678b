//! Random mean-variance portfolio instances and their lowering to QUBO and
//! normalized Ising form.
//!
//! Spin convention (global): `x = (1 - z) / 2`, where `z` is the σᶻ
//! eigenvalue. In a basis-state index, bit `i` set to 0 means `z_i = +1`
//! (asset `i` not selected).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Largest asset count accepted by [`generate_instance`].
pub const MAX_ASSETS: usize = 24;

/// Risk aversion used for generated instances.
pub const DEFAULT_RISK_AVERSION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub n: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub q: f64,
    pub seed: u64,
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("portfolio needs at least one asset"));
        }
        if self.mu.len() != self.n || self.sigma.len() != self.n {
            return Err(invalid("mu and sigma must have n entries"));
        }
        for (i, row) in self.sigma.iter().enumerate() {
            if row.len() != self.n {
                return Err(invalid(format!("sigma row {i} has wrong length")));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != self.sigma[j][i] {
                    return Err(invalid(format!("sigma not symmetric at ({i}, {j})")));
                }
            }
        }
        if !(self.q >= 0.0) {
            return Err(invalid("risk aversion q must be >= 0"));
        }
        Ok(())
    }
}

/// Minimization-form QUBO: energy of `x ∈ {0,1}ⁿ` is `xᵀQx + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuboProblem {
    pub n: usize,
    pub q: Vec<Vec<f64>>,
    pub offset: f64,
}

impl QuboProblem {
    pub fn energy(&self, bits: u64) -> f64 {
        let mut e = self.offset;
        for i in 0..self.n {
            if bits >> i & 1 == 0 {
                continue;
            }
            for j in 0..self.n {
                if bits >> j & 1 == 1 {
                    e += self.q[i][j];
                }
            }
        }
        e
    }
}

/// Diagonal problem Hamiltonian `Σ h_i z_i + Σ_{i<j} J_ij z_i z_j + C`.
///
/// Couplings are stored densely (row-major, `n × n`) but only `i < j`
/// entries may be nonzero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IsingJson", into = "IsingJson")]
pub struct IsingProblem {
    n: usize,
    h: Vec<f64>,
    j: Vec<f64>,
    constant: f64,
    scale: f64,
}

impl IsingProblem {
    /// Builds an unnormalized problem (`scale = 1`). Couplings are given as
    /// `(i, j, value)` with `i != j`; they are folded onto `i < j`.
    pub fn new(h: Vec<f64>, couplings: &[(usize, usize, f64)], constant: f64) -> Result<Self> {
        let n = h.len();
        let mut j = vec![0.0; n * n];
        for &(a, b, v) in couplings {
            if a == b || a >= n || b >= n {
                return Err(invalid(format!("bad coupling index ({a}, {b}) for n = {n}")));
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            j[lo * n + hi] += v;
        }
        Ok(Self { n, h, j, constant, scale: 1.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Coupling between spins `a` and `b` (symmetric lookup).
    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => self.j[a * self.n + b],
            std::cmp::Ordering::Greater => self.j[b * self.n + a],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Nonzero couplings `(i, j, J_ij)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                let v = self.j[a * self.n + b];
                if v != 0.0 {
                    out.push((a, b, v));
                }
            }
        }
        out
    }

    /// `Σ_{j≠i} J_ij²` for each site.
    pub fn coupling_norms(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|k| self.coupling(i, k).powi(2)).sum())
            .collect()
    }

    /// Classical energy of the spin configuration encoded by `index`.
    pub fn energy(&self, index: u64) -> f64 {
        let spin = |i: usize| if index >> i & 1 == 0 { 1.0 } else { -1.0 };
        let mut e = self.constant;
        for i in 0..self.n {
            let zi = spin(i);
            e += self.h[i] * zi;
            for k in i + 1..self.n {
                e += self.j[i * self.n + k] * zi * spin(k);
            }
        }
        e
    }

    /// Largest coefficient magnitude over `h` and `J`.
    pub fn max_coefficient(&self) -> f64 {
        self.h
            .iter()
            .chain(self.j.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Divides all coefficients by `max(|h|, |J|)` and records the factor.
    pub fn normalized(mut self) -> Self {
        let m = self.max_coefficient();
        if m > 0.0 {
            self.h.iter_mut().for_each(|v| *v /= m);
            self.j.iter_mut().for_each(|v| *v /= m);
            self.constant /= m;
            self.scale *= m;
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct IsingJson {
    n: usize,
    h: Vec<f64>,
    #[serde(rename = "J")]
    couplings: Vec<(usize, usize, f64)>,
    constant: f64,
    scale: f64,
}

impl From<IsingProblem> for IsingJson {
    fn from(p: IsingProblem) -> Self {
        Self { n: p.n, couplings: p.edges(), h: p.h, constant: p.constant, scale: p.scale }
    }
}

impl TryFrom<IsingJson> for IsingProblem {
    type Error = crate::Error;

    fn try_from(v: IsingJson) -> Result<Self> {
        if v.h.len() != v.n {
            return Err(invalid("h length does not match n"));
        }
        let mut p = IsingProblem::new(v.h, &v.couplings, v.constant)?;
        p.scale = v.scale;
        Ok(p)
    }
}

/// Draws a random instance: `μ_i ~ U(0,1)`, `Σ = F Fᵀ / n` with
/// `F_ij ~ U(-1,1)`, `q = 0.5`. Deterministic in `(seed, n)`.
pub fn generate_instance(seed: u64, n: usize) -> Result<PortfolioSpec> {
    if n == 0 || n > MAX_ASSETS {
        return Err(invalid(format!("asset count {n} outside 1..={MAX_ASSETS}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let f: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut sigma = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = f[i].iter().zip(&f[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            sigma[i][j] = v;
            sigma[j][i] = v;
        }
    }
    Ok(PortfolioSpec { n, mu, sigma, q: DEFAULT_RISK_AVERSION, seed })
}

/// Maximizing `Σ μ_i x_i − q Σ σ_ij x_i x_j` is minimizing `xᵀQx` with
/// `Q_ii = −μ_i + q σ_ii` and `Q_ij = q σ_ij`.
pub fn to_qubo(spec: &PortfolioSpec) -> Result<QuboProblem> {
    spec.validate()?;
    let n = spec.n;
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            q[i][j] = spec.q * spec.sigma[i][j];
        }
        q[i][i] -= spec.mu[i];
    }
    Ok(QuboProblem { n, q, offset: 0.0 })
}

/// Substitutes `x_i = (1 − z_i)/2` and normalizes so `max(|h|,|J|) = 1`.
pub fn qubo_to_ising(qubo: &QuboProblem) -> IsingProblem {
    ising_unnormalized(qubo).normalized()
}

/// The exact substitution without normalization (`scale = 1`).
pub fn ising_unnormalized(qubo: &QuboProblem) -> IsingProblem {
    let n = qubo.n;
    let mut h = vec![0.0; n];
    let mut couplings = Vec::new();
    let mut constant = qubo.offset;
    for i in 0..n {
        let qii = qubo.q[i][i];
        h[i] -= qii / 2.0;
        constant += qii / 2.0;
        for j in i + 1..n {
            // x_i x_j appears twice in xᵀQx for a symmetric Q.
            let w = (qubo.q[i][j] + qubo.q[j][i]) / 2.0;
            if w != 0.0 {
                couplings.push((i, j, w / 2.0));
                h[i] -= w / 2.0;
                h[j] -= w / 2.0;
                constant += w / 2.0;
            }
        }
    }
    IsingProblem::new(h, &couplings, constant).expect("indices are in range")
}

/// Convenience: generate, lower and normalize in one go.
pub fn ising_instance(seed: u64, n: usize) -> Result<IsingProblem> {
    let spec = generate_instance(seed, n)?;
    Ok(qubo_to_ising(&to_qubo(&spec)?))
}

/// Serialized pair of a portfolio instance and its Ising lowering.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub portfolio: PortfolioSpec,
    pub ising: IsingProblem,
}
