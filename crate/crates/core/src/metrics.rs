//! Success probability, time-to-solution, reverse-annealing advantage ratio
//! and exponential scaling fits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evolution::StateVector;
use crate::exact::ClassicalSpectrum;

/// Target cumulative success for TTS.
pub const TTS_TARGET: f64 = 0.99;
/// Success probabilities at or above `1 − EXACT_SUCCESS_TOL` count as exact.
pub const EXACT_SUCCESS_TOL: f64 = 1e-12;
/// Runs with `p` below this are excluded from scaling fits.
pub const RESOLVABLE_P: f64 = 1e-9;

/// Total population on all degenerate ground states.
pub fn success_probability(psi: &StateVector, spectrum: &ClassicalSpectrum) -> f64 {
    spectrum.ground_states.iter().map(|&k| psi.probability(k)).sum::<f64>().min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Tts {
    Finite(f64),
    /// `p = 1`: a single anneal suffices; carries `t_f`.
    ExactSuccess(f64),
    /// `p = 0`.
    Infinite,
}

impl Tts {
    pub fn value(self) -> f64 {
        match self {
            Tts::Finite(v) | Tts::ExactSuccess(v) => v,
            Tts::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        !matches!(self, Tts::Infinite)
    }
}

/// `t_f · ln(1 − 0.99) / ln(1 − p)`.
pub fn tts(p: f64, t_f: f64) -> Result<Tts> {
    if !(t_f > 0.0) {
        return Err(invalid("t_f must be positive"));
    }
    if p.is_nan() {
        return Err(invalid("p is NaN"));
    }
    if p <= 0.0 {
        return Ok(Tts::Infinite);
    }
    if p >= 1.0 - EXACT_SUCCESS_TOL {
        return Ok(Tts::ExactSuccess(t_f));
    }
    Ok(Tts::Finite(t_f * (-TTS_TARGET).ln_1p() / (-p).ln_1p()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ratio {
    Finite(f64),
    /// Forward success was exactly zero.
    Infinite { p_reverse: f64, p_forward: f64 },
}

impl Ratio {
    pub fn value(self) -> f64 {
        match self {
            Ratio::Finite(r) => r,
            Ratio::Infinite { .. } => f64::INFINITY,
        }
    }
}

/// `R = P_r / P_f`.
pub fn advantage_ratio(p_reverse: f64, p_forward: f64) -> Ratio {
    if p_forward > 0.0 {
        Ratio::Finite(p_reverse / p_forward)
    } else {
        Ratio::Infinite { p_reverse, p_forward }
    }
}

/// Least-squares fit of `TTS(N) = 2^(β + αN)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    /// RMS of the log₂ residuals.
    pub residual: f64,
    pub n_min: usize,
    pub n_max: usize,
}

pub fn fit_scaling(points: &[(usize, f64)]) -> Result<ScalingFit> {
    if points.iter().any(|p| !(p.1.is_finite() && p.1 > 0.0)) {
        return Err(invalid("scaling fit needs finite positive TTS values"));
    }
    let mut sizes: Vec<usize> = points.iter().map(|p| p.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(invalid(format!("scaling fit needs >= 3 distinct sizes, got {}", sizes.len())));
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y - beta - alpha * x).powi(2)).sum::<f64>() / m).sqrt();
    Ok(ScalingFit { alpha, beta, residual, n_min: sizes[0], n_max: *sizes.last().unwrap() })
}
