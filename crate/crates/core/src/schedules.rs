//! Learning-rate schedules and the weighted averaged iterate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    /// `η_t = 4 / (μK(t + a))`, `a = max{100, 40 t0} (L/μ)^1.5`
    StronglyConvex {
        mu: f64,
        l: f64,
        k: usize,
        t0: f64,
        a: f64,
    },
    /// `η = c0 √(N / (K T L (1 + ν̄)))`
    NonConvexConstant { eta: f64 },
    /// `η_t = η0 / t`
    ExperimentalDecay { eta0: f64 },
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, "must be finite and positive"))
    }
}

impl LrSchedule {
    pub fn strongly_convex(mu: f64, l: f64, k: usize, t0: f64) -> Result<Self> {
        positive("mu", mu)?;
        positive("l", l)?;
        if mu > l {
            return Err(Error::invalid("mu", format!("mu = {mu} exceeds L = {l}")));
        }
        if k == 0 {
            return Err(Error::invalid("k", "need at least one local step"));
        }
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(Error::invalid("t0", "must be finite and non-negative"));
        }
        let a = f64::max(100.0, 40.0 * t0) * (l / mu).powf(1.5);
        let s = LrSchedule::StronglyConvex { mu, l, k, t0, a };
        // the analysis needs η_t ≤ 1/(25KL); η_t is decreasing so t = 1 decides
        let eta1 = s.eta(1)?;
        if eta1 > 1.0 / (25.0 * k as f64 * l) {
            return Err(Error::invalid(
                "t0",
                format!(
                    "eta_1 = {eta1} exceeds 1/(25KL) = {}",
                    1.0 / (25.0 * k as f64 * l)
                ),
            ));
        }
        Ok(s)
    }

    pub fn nonconvex_constant(
        n: usize,
        k: usize,
        rounds: usize,
        l: f64,
        nu_bar: f64,
        c0: f64,
    ) -> Result<Self> {
        if n == 0 || k == 0 || rounds == 0 {
            return Err(Error::invalid("n", "N, K and T must be at least 1"));
        }
        positive("l", l)?;
        if !(nu_bar.is_finite() && nu_bar >= 0.0) {
            return Err(Error::invalid("nu_bar", "must be finite and non-negative"));
        }
        if !(c0 > 0.0 && c0 <= 1.0) {
            return Err(Error::invalid("c0", "must lie in (0, 1]"));
        }
        let eta = c0 * (n as f64 / (k as f64 * rounds as f64 * l * (1.0 + nu_bar))).sqrt();
        positive("eta", eta)?;
        Ok(LrSchedule::NonConvexConstant { eta })
    }

    pub fn experimental_decay(eta0: f64) -> Result<Self> {
        positive("eta0", eta0)?;
        Ok(LrSchedule::ExperimentalDecay { eta0 })
    }

    pub fn eta(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::invalid("t", "rounds start at 1"));
        }
        let t = t as f64;
        let v = match *self {
            LrSchedule::StronglyConvex { mu, k, a, .. } => 4.0 / (mu * k as f64 * (t + a)),
            LrSchedule::NonConvexConstant { eta } => eta,
            LrSchedule::ExperimentalDecay { eta0 } => eta0 / t,
        };
        positive("eta", v)?;
        Ok(v)
    }

    /// Shift `a` of the strongly convex schedule.
    pub fn shift(&self) -> Option<f64> {
        match *self {
            LrSchedule::StronglyConvex { a, .. } => Some(a),
            _ => None,
        }
    }
}

/// Weighted average `w̄_T = (1/W_T) Σ (t+a−1)(t+a−2) w_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedIterate {
    a: f64,
    weighted_sum: Vec<f64>,
    total_weight: f64,
    seen: usize,
}

impl AveragedIterate {
    pub fn new(a: f64, dim: usize) -> Self {
        AveragedIterate {
            a,
            weighted_sum: vec![0.0; dim],
            total_weight: 0.0,
            seen: 0,
        }
    }

    pub fn weight(&self, t: usize) -> f64 {
        let t = t as f64;
        (t + self.a - 1.0) * (t + self.a - 2.0)
    }

    pub fn observe(&mut self, t: usize, w: &ParamVector) -> Result<()> {
        if t != self.seen + 1 {
            return Err(Error::RoundOutOfOrder {
                expected: self.seen + 1,
                got: t,
            });
        }
        if w.dim() != self.weighted_sum.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weighted_sum.len(),
                got: w.dim(),
            });
        }
        let c = self.weight(t);
        for (s, v) in self.weighted_sum.iter_mut().zip(w.as_slice()) {
            *s += c * v;
        }
        self.total_weight += c;
        self.seen = t;
        Ok(())
    }

    pub fn current(&self) -> Result<ParamVector> {
        if self.seen == 0 || self.total_weight == 0.0 {
            return Err(Error::EmptyAverage);
        }
        Ok(ParamVector::from_raw(
            self.weighted_sum
                .iter()
                .map(|s| s / self.total_weight)
                .collect(),
        ))
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn rounds_seen(&self) -> usize {
        self.seen
    }
}

/// `W_T = (1/3)T³ + (a−1)T² + (a² − 2a + 2/3)T`
pub fn total_weight_closed_form(a: f64, rounds: usize) -> f64 {
    let t = rounds as f64;
    t.powi(3) / 3.0 + (a - 1.0) * t * t + (a * a - 2.0 * a + 2.0 / 3.0) * t
}

/// One minimum-`T` requirement of the non-convex rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundCondition {
    pub name: &'static str,
    pub required: f64,
    pub holds: bool,
}

/// `T ≥ max{32αLNK, 16LNK, 8KNν_max²(L² + ρδ)/L}`, reported term by term.
#[allow(clippy::too_many_arguments)]
pub fn nonconvex_round_conditions(
    rounds: usize,
    alpha: f64,
    l: f64,
    n: usize,
    k: usize,
    nu_max: f64,
    rho: f64,
    delta: f64,
) -> Vec<RoundCondition> {
    let nk = (n * k) as f64;
    let t = rounds as f64;
    [
        ("32*alpha*L*N*K", 32.0 * alpha * l * nk),
        ("16*L*N*K", 16.0 * l * nk),
        (
            "8*K*N*nu_max^2*(L^2+rho*delta)/L",
            8.0 * nk * nu_max * nu_max * (l * l + rho * delta) / l,
        ),
    ]
    .into_iter()
    .map(|(name, required)| RoundCondition {
        name,
        required,
        holds: t >= required,
    })
    .collect()
}
