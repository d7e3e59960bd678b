//! Annealing control functions: forward and reverse `s(t)`, the
//! counter-diabatic control `λ(t)`, and the per-site inhomogeneous field
//! `Γ_i(s)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative slack accepted at the ends of `[0, t_f]` (integrator stage times
/// are computed as `t_f * k / steps` and can overshoot by an ulp).
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Forward,
    Reverse,
}

impl ScheduleKind {
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::Forward => "forward",
            ScheduleKind::Reverse => "reverse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseParams {
    pub s_pause: f64,
    pub ramp_fraction: f64,
}

impl Default for ReverseParams {
    fn default() -> Self {
        Self { s_pause: 0.5, ramp_fraction: 0.1 }
    }
}

/// Piecewise-linear annealing path `s(t)` on `[0, t_f]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub t_f: f64,
    #[serde(default)]
    pub reverse: ReverseParams,
}

impl Schedule {
    pub fn forward(t_f: f64) -> Result<Self> {
        Self::new(ScheduleKind::Forward, t_f, ReverseParams::default())
    }

    pub fn reverse(t_f: f64) -> Result<Self> {
        Self::new(ScheduleKind::Reverse, t_f, ReverseParams::default())
    }

    pub fn new(kind: ScheduleKind, t_f: f64, reverse: ReverseParams) -> Result<Self> {
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(invalid(format!("t_f must be positive, got {t_f}")));
        }
        if !(0.0..=1.0).contains(&reverse.s_pause) {
            return Err(invalid("s_pause must lie in [0, 1]"));
        }
        if !(reverse.ramp_fraction > 0.0 && reverse.ramp_fraction <= 0.5) {
            return Err(invalid("ramp_fraction must lie in (0, 0.5]"));
        }
        Ok(Self { kind, t_f, reverse })
    }

    fn check(&self, t: f64) -> Result<f64> {
        clamp_domain(t, self.t_f)
    }

    pub fn s_of_t(&self, t: f64) -> Result<f64> {
        let t = self.check(t)?;
        Ok(self.s_unchecked(t))
    }

    /// `(s, ds/dt)`. At the reverse-schedule kinks the right derivative is
    /// returned.
    pub fn s_and_rate(&self, t: f64) -> Result<(f64, f64)> {
        let t = self.check(t)?;
        let rate = match self.kind {
            ScheduleKind::Forward => 1.0 / self.t_f,
            ScheduleKind::Reverse => {
                let ReverseParams { s_pause, ramp_fraction } = self.reverse;
                let ramp = ramp_fraction * self.t_f;
                let slope = (1.0 - s_pause) / ramp;
                if t < ramp {
                    -slope
                } else if t < self.t_f - ramp {
                    0.0
                } else {
                    slope
                }
            }
        };
        Ok((self.s_unchecked(t), rate))
    }

    /// Like [`Schedule::s_and_rate`] but with the left derivative at kinks,
    /// for evaluations at the end of an integration step.
    pub fn s_and_rate_left(&self, t: f64) -> Result<(f64, f64)> {
        let (s, rate) = self.s_and_rate(t)?;
        if self.kind == ScheduleKind::Reverse {
            let ramp = self.reverse.ramp_fraction * self.t_f;
            let slope = (1.0 - self.reverse.s_pause) / ramp;
            let t = t.clamp(0.0, self.t_f);
            if t == ramp {
                return Ok((s, -slope));
            }
            if t == self.t_f - ramp {
                return Ok((s, 0.0));
            }
        }
        Ok((s, rate))
    }

    fn s_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Forward => (t / self.t_f).clamp(0.0, 1.0),
            ScheduleKind::Reverse => {
                let ReverseParams { s_pause, ramp_fraction } = self.reverse;
                let ramp = ramp_fraction * self.t_f;
                let s = if t <= ramp {
                    1.0 - (1.0 - s_pause) * t / ramp
                } else if t < self.t_f - ramp {
                    s_pause
                } else {
                    s_pause + (1.0 - s_pause) * (t - (self.t_f - ramp)) / ramp
                };
                s.clamp(0.0, 1.0)
            }
        }
    }
}

fn clamp_domain(t: f64, t_f: f64) -> Result<f64> {
    let slack = DOMAIN_SLACK * t_f.max(1.0);
    if !(t >= -slack && t <= t_f + slack) {
        return Err(Error::Domain { t, t_f });
    }
    Ok(t.clamp(0.0, t_f))
}

/// `λ(t) = sin²[(π/2) sin²(πt / 2T)]`, which has zero slope at both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdControl {
    pub t_f: f64,
}

impl CdControl {
    pub fn new(t_f: f64) -> Result<Self> {
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(invalid(format!("t_f must be positive, got {t_f}")));
        }
        Ok(Self { t_f })
    }

    /// `(λ, dλ/dt)`.
    pub fn lambda_of_t(&self, t: f64) -> Result<(f64, f64)> {
        let t = clamp_domain(t, self.t_f)?;
        let v = PI * t / (2.0 * self.t_f);
        let u = 0.5 * PI * v.sin().powi(2);
        let lambda = u.sin().powi(2);
        // dλ/dt = sin(2u) · du/dt,  du/dt = (π/2)·sin(2v)·π/(2T)
        let rate = (2.0 * u).sin() * (2.0 * v).sin() * PI * PI / (4.0 * self.t_f);
        Ok((lambda, rate))
    }
}

/// Breakpoint `s_i = (1 − i/N)^(1/r)`, with `s_0 = 1`.
pub fn gamma_breakpoint(n: usize, i: usize, r: f64) -> f64 {
    (1.0 - i as f64 / n as f64).max(0.0).powf(1.0 / r)
}

/// Transverse-field amplitude on site `i` (1-based) for inhomogeneous
/// driving. Site `N` switches off first and site 1 last.
pub fn gamma_i(n: usize, i: usize, s: f64, r: f64) -> Result<f64> {
    if n == 0 || i == 0 || i > n {
        return Err(invalid(format!("site {i} outside 1..={n}")));
    }
    if !(r > 0.0) {
        return Err(invalid("exponent r must be positive"));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(format!("s = {s} outside [0, 1]")));
    }
    Ok(gamma_unchecked(n, i, s, r))
}

pub(crate) fn gamma_unchecked(n: usize, i: usize, s: f64, r: f64) -> f64 {
    let lower = gamma_breakpoint(n, i, r);
    let upper = gamma_breakpoint(n, i - 1, r);
    let g = if s < lower {
        1.0
    } else if s <= upper {
        n as f64 * (1.0 - s.powf(r)) + (1.0 - i as f64)
    } else {
        0.0
    };
    g.clamp(0.0, 1.0)
}
