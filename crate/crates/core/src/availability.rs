//! Device participation: active-set generators, inactive-round bookkeeping
//! and the Bernoulli-model bounds.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{device_streams, Purpose, RandomStream};

/// Devices able to respond within a round. Members are sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub round: usize,
    members: Vec<usize>,
}

impl ActiveSet {
    pub fn new(round: usize, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        ActiveSet { round, members }
    }

    pub fn all(round: usize, n: usize) -> Self {
        ActiveSet {
            round,
            members: (0..n).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn is_full(&self, n: usize) -> bool {
        self.members.len() == n && self.members.last().is_none_or(|&m| m + 1 == n)
    }

    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.members {
            if i < n {
                m[i] = true;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AvailabilityModel {
    Full {
        n: usize,
    },
    IidBernoulli {
        p: Vec<f64>,
    },
    Periodic {
        period: Vec<usize>,
        phase: Vec<usize>,
    },
    /// Maximal-delay schedule under `τ(t,i) ≤ t0 + t/b`.
    AdversarialLinear {
        n: usize,
        t0: f64,
        b: f64,
    },
    TraceReplay {
        n: usize,
        trace: Vec<ActiveSet>,
    },
}

impl AvailabilityModel {
    pub fn bernoulli(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("p", "need at least one device"));
        }
        if p.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::invalid("p", "every probability must lie in (0, 1]"));
        }
        Ok(AvailabilityModel::IidBernoulli { p })
    }

    pub fn periodic(period: Vec<usize>, phase: Vec<usize>) -> Result<Self> {
        if period.is_empty() || period.len() != phase.len() {
            return Err(Error::invalid(
                "period",
                "need one period and one phase per device",
            ));
        }
        if period.contains(&0) {
            return Err(Error::invalid("period", "periods must be at least 1"));
        }
        Ok(AvailabilityModel::Periodic { period, phase })
    }

    pub fn adversarial(n: usize, t0: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "need at least one device"));
        }
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(Error::invalid("t0", "must be finite and non-negative"));
        }
        if !(b.is_finite() && b > 1.0) {
            return Err(Error::invalid("b", "must be finite and greater than 1"));
        }
        Ok(AvailabilityModel::AdversarialLinear { n, t0, b })
    }

    pub fn trace(n: usize, trace: Vec<ActiveSet>) -> Result<Self> {
        validate_trace(n, &trace)?;
        Ok(AvailabilityModel::TraceReplay { n, trace })
    }

    pub fn n(&self) -> usize {
        match self {
            AvailabilityModel::Full { n }
            | AvailabilityModel::AdversarialLinear { n, .. }
            | AvailabilityModel::TraceReplay { n, .. } => *n,
            AvailabilityModel::IidBernoulli { p } => p.len(),
            AvailabilityModel::Periodic { period, .. } => period.len(),
        }
    }

    /// Participation probabilities, when the model has them.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            AvailabilityModel::Full { n } => Some(vec![1.0; *n]),
            AvailabilityModel::IidBernoulli { p } => Some(p.clone()),
            _ => None,
        }
    }

    /// Per-device caps `ν_i` with `τ(t,i) ≤ ν_i` for every round, when the
    /// model guarantees one.
    pub fn declared_nu(&self) -> Option<Vec<f64>> {
        match self {
            AvailabilityModel::Full { n } => Some(vec![0.0; *n]),
            AvailabilityModel::Periodic { period, .. } => {
                Some(period.iter().map(|&p| (p - 1) as f64).collect())
            }
            AvailabilityModel::TraceReplay { n, trace } => {
                let mut tracker = TauTracker::new(*n);
                for a in trace {
                    tracker.update(a).ok()?;
                }
                Some(
                    tracker
                        .per_device_max_inclusive()
                        .iter()
                        .map(|&v| v as f64)
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// Stateful generator of `A(1), A(2), …` for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AvailabilityProcess {
    model: AvailabilityModel,
    streams: Vec<RandomStream>,
    /// generator-side τ for the adversarial schedule
    adv_tau: Vec<u64>,
    next_round: usize,
}

impl AvailabilityProcess {
    pub fn new(model: AvailabilityModel, seed: u64) -> Self {
        let n = model.n();
        AvailabilityProcess {
            streams: device_streams(seed, Purpose::Availability, n),
            adv_tau: vec![0; n],
            model,
            next_round: 1,
        }
    }

    pub fn model(&self) -> &AvailabilityModel {
        &self.model
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Draws `A(t)` for the next round. Round 1 is always every device.
    pub fn next_active_set(&mut self) -> Result<ActiveSet> {
        let t = self.next_round;
        let n = self.model.n();
        let set = match &self.model {
            AvailabilityModel::TraceReplay { trace, .. } => trace
                .get(t - 1)
                .cloned()
                .ok_or(Error::EndOfTrace { round: t })?,
            _ if t == 1 => ActiveSet::all(1, n),
            AvailabilityModel::Full { .. } => ActiveSet::all(t, n),
            AvailabilityModel::IidBernoulli { p } => {
                let members = p
                    .iter()
                    .zip(self.streams.iter_mut())
                    .enumerate()
                    .filter_map(|(i, (&pi, rng))| (rng.random::<f64>() < pi).then_some(i))
                    .collect();
                ActiveSet { round: t, members }
            }
            AvailabilityModel::Periodic { period, phase } => {
                let members = (0..n)
                    .filter(|&i| (t as i64 - phase[i] as i64).rem_euclid(period[i] as i64) == 0)
                    .collect();
                ActiveSet { round: t, members }
            }
            AvailabilityModel::AdversarialLinear { t0, b, .. } => {
                let limit = t0 + t as f64 / b;
                let members = (0..n)
                    .filter(|&i| (self.adv_tau[i] + 1) as f64 > limit)
                    .collect();
                ActiveSet { round: t, members }
            }
        };
        if let AvailabilityModel::AdversarialLinear { .. } = self.model {
            for (i, tau) in self.adv_tau.iter_mut().enumerate() {
                *tau = if set.contains(i) { 0 } else { *tau + 1 };
            }
        }
        self.next_round += 1;
        Ok(set)
    }
}

/// Generates rounds `1..=rounds` of a model.
pub fn generate_trace(
    model: &AvailabilityModel,
    rounds: usize,
    seed: u64,
) -> Result<Vec<ActiveSet>> {
    let mut proc = AvailabilityProcess::new(model.clone(), seed);
    (0..rounds).map(|_| proc.next_active_set()).collect()
}

/// Summary statistics of `τ(t,i)` over a range of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauStats {
    pub tau_bar: f64,
    pub tau_max: u64,
    /// mean over devices of the squared per-device maximum
    pub d_max_bar: f64,
    pub nu_bar: f64,
    pub nu_max: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct TauAccum {
    sum: u128,
    max: Vec<u64>,
}

impl TauAccum {
    fn stats(&self, n: usize, rounds: usize) -> TauStats {
        let tau_max = self.max.iter().copied().max().unwrap_or(0);
        let nu_bar = self.max.iter().map(|&m| m as f64).sum::<f64>() / n as f64;
        let d_max_bar = self
            .max
            .iter()
            .map(|&m| (m as f64) * (m as f64))
            .sum::<f64>()
            / n as f64;
        TauStats {
            tau_bar: if rounds == 0 {
                0.0
            } else {
                self.sum as f64 / (n as f64 * rounds as f64)
            },
            tau_max,
            d_max_bar,
            nu_bar,
            nu_max: tau_max,
        }
    }
}

/// Incremental `τ(t,i)`: zero when active, otherwise one more than last round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTracker {
    n: usize,
    round: usize,
    tau: Vec<u64>,
    /// rounds 1..T−1
    committed: TauAccum,
    /// rounds 1..T
    inclusive: TauAccum,
}

impl TauTracker {
    pub fn new(n: usize) -> Self {
        TauTracker {
            n,
            round: 0,
            tau: vec![0; n],
            committed: TauAccum {
                sum: 0,
                max: vec![0; n],
            },
            inclusive: TauAccum {
                sum: 0,
                max: vec![0; n],
            },
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Last observed round `T`.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn tau(&self) -> &[u64] {
        &self.tau
    }

    pub fn sum_tau(&self) -> u128 {
        self.inclusive.sum
    }

    pub fn per_device_max_inclusive(&self) -> &[u64] {
        &self.inclusive.max
    }

    pub fn update(&mut self, active: &ActiveSet) -> Result<()> {
        if active.round != self.round + 1 {
            return Err(Error::RoundOutOfOrder {
                expected: self.round + 1,
                got: active.round,
            });
        }
        if let Some(&bad) = active.members.iter().find(|&&i| i >= self.n) {
            return Err(Error::DeviceOutOfRange { id: bad, n: self.n });
        }
        if active.round == 1 && !active.is_full(self.n) {
            let missing = (0..self.n).find(|&i| !active.contains(i)).unwrap_or(0);
            return Err(Error::IncompleteFirstRound { device: missing });
        }
        self.committed = self.inclusive.clone();
        let mask = active.mask(self.n);
        for (i, tau) in self.tau.iter_mut().enumerate() {
            *tau = if mask[i] { 0 } else { *tau + 1 };
            self.inclusive.sum += *tau as u128;
            self.inclusive.max[i] = self.inclusive.max[i].max(*tau);
        }
        self.round = active.round;
        Ok(())
    }

    /// Statistics over rounds `1..T−1`, matching the `τ̄_T`, `τ_max,T`
    /// summation limits.
    pub fn stats(&self) -> Result<TauStats> {
        if self.round < 2 {
            return Err(Error::NotEnoughData {
                what: "rounds",
                needed: 2,
                got: self.round,
            });
        }
        Ok(self.committed.stats(self.n, self.round - 1))
    }

    /// Statistics over every observed round `1..T` (all zeros before round 1).
    pub fn stats_inclusive(&self) -> TauStats {
        self.inclusive.stats(self.n, self.round)
    }
}

/// Result of checking `τ(t,i) ≤ t0 + t/b` along a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDelayCheck {
    pub holds: bool,
    /// first `(round, device)` that breaks the bound
    pub first_violation: Option<(usize, usize)>,
}

/// `b = 40 (L/μ)^1.5`
pub fn assumption4_b(l: f64, mu: f64) -> f64 {
    40.0 * (l / mu).powf(1.5)
}

pub fn check_linear_delay(
    n: usize,
    trace: &[ActiveSet],
    t0: f64,
    b: f64,
) -> Result<LinearDelayCheck> {
    let mut tracker = TauTracker::new(n);
    for a in trace {
        tracker.update(a)?;
        let limit = t0 + a.round as f64 / b;
        if let Some(i) = tracker.tau.iter().position(|&tau| tau as f64 > limit) {
            return Ok(LinearDelayCheck {
                holds: false,
                first_violation: Some((a.round, i)),
            });
        }
    }
    Ok(LinearDelayCheck {
        holds: true,
        first_violation: None,
    })
}

/// Replays the τ recursion and tests `τ(t,i) ≤ t0 + t/b` with `b = 40(L/μ)^1.5`.
pub fn check_assumption4(
    n: usize,
    trace: &[ActiveSet],
    t0: f64,
    l: f64,
    mu: f64,
) -> Result<LinearDelayCheck> {
    check_linear_delay(n, trace, t0, assumption4_b(l, mu))
}

/// `P(τ(t,i) ≥ k)` under Bernoulli participation with probability `p`:
/// a geometric tail truncated at `t`.
pub fn bernoulli_tau_tail(p: f64, k: u64, t: usize) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", "must lie in (0, 1]"));
    }
    if k as u128 >= t as u128 {
        return Ok(0.0);
    }
    Ok((1.0 - p).powi(k as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernoulliBounds {
    /// `1 + (1/p_min)(2 ln T + ln N + ln(π²/(6δ)))`
    pub tau_max_bound: f64,
    /// `(1/N) Σ 1/p_i`
    pub tau_bar_bound_shape: f64,
}

fn check_probabilities(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::invalid("p", "need at least one device"));
    }
    if p.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::invalid("p", "every probability must lie in (0, 1]"));
    }
    Ok(p.iter().copied().fold(f64::INFINITY, f64::min))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    Ok(())
}

pub fn bernoulli_bounds(p: &[f64], rounds: usize, delta: f64) -> Result<BernoulliBounds> {
    let p_min = check_probabilities(p)?;
    check_delta(delta)?;
    if rounds == 0 {
        return Err(Error::invalid("rounds", "must be at least 1"));
    }
    let n = p.len() as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let tau_max_bound =
        1.0 + (2.0 * (rounds as f64).ln() + n.ln() + (pi2 / (6.0 * delta)).ln()) / p_min;
    let tau_bar_bound_shape = p.iter().map(|v| 1.0 / v).sum::<f64>() / n;
    Ok(BernoulliBounds {
        tau_max_bound,
        tau_bar_bound_shape,
    })
}

/// Smallest `t0` for which the high-probability Bernoulli bound implies
/// `τ(t,i) ≤ t0 + t/b` for all `t`:
/// `(2/p_min)(ln(2b/p_min) − 1) + (1/p_min) ln(π²N/(6δ)) + 1`.
pub fn bernoulli_t0(p: &[f64], l: f64, mu: f64, delta: f64) -> Result<f64> {
    let p_min = check_probabilities(p)?;
    check_delta(delta)?;
    let b = assumption4_b(l, mu);
    let n = p.len() as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let t0 =
        2.0 / p_min * ((2.0 * b / p_min).ln() - 1.0) + (pi2 * n / (6.0 * delta)).ln() / p_min + 1.0;
    Ok(t0.max(0.0))
}

fn validate_trace(n: usize, trace: &[ActiveSet]) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one device"));
    }
    let mut tracker = TauTracker::new(n);
    for a in trace {
        tracker.update(a)?;
    }
    Ok(())
}

/// Writes the line-oriented trace format:
/// `N=<int> T=<int>` then `t:<round> active:<ids>` per round.
pub fn write_trace(n: usize, trace: &[ActiveSet]) -> String {
    let mut out = format!("N={} T={}\n", n, trace.len());
    for a in trace {
        let ids: Vec<String> = a.members.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "t:{} active:{}", a.round, ids.join(","));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<(usize, Vec<ActiveSet>)> {
    let perr = |line: usize, reason: &str| Error::TraceParse {
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.split('\n').enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header"))?;
    let mut parts = header.trim_end_matches('\r').split(' ');
    let n = parts
        .next()
        .and_then(|s| s.strip_prefix("N="))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| perr(1, "expected `N=<int>`"))?;
    let rounds = parts
        .next()
        .and_then(|s| s.strip_prefix("T="))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| perr(1, "expected `T=<int>`"))?;
    if parts.next().is_some() {
        return Err(perr(1, "unexpected text after header"));
    }
    let mut trace = Vec::with_capacity(rounds);
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let (t_part, a_part) = raw
            .split_once(' ')
            .ok_or_else(|| perr(line_no, "expected `t:<int> active:<ids>`"))?;
        let t = t_part
            .strip_prefix("t:")
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| perr(line_no, "bad round field"))?;
        if t != trace.len() + 1 {
            return Err(perr(line_no, "rounds must be consecutive from 1"));
        }
        let ids = a_part
            .strip_prefix("active:")
            .ok_or_else(|| perr(line_no, "bad active field"))?;
        let members = if ids.is_empty() {
            Vec::new()
        } else {
            ids.split(',')
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| perr(line_no, "bad device id"))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if members.iter().any(|&i| i >= n) {
            return Err(perr(line_no, "device id out of range"));
        }
        if t == 1 && ActiveSet::new(1, members.clone()).len() != n {
            return Err(perr(line_no, "round 1 must list every device"));
        }
        trace.push(ActiveSet::new(t, members));
    }
    if trace.len() != rounds {
        return Err(perr(1, "T does not match the number of rounds"));
    }
    Ok((n, trace))
}
