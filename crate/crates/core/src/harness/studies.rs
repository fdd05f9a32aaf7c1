//! Rate-slope fitting and the Monte Carlo studies of waiting times and
//! inactive-round statistics.

use rand::seq::index::sample;
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use crate::availability::{bernoulli_bounds, AvailabilityModel, AvailabilityProcess, TauTracker};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Least-squares slope of `ln value` against `ln t` over `t ∈ [lo, hi]`.
pub fn fit_rate_slope(stream: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = stream
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .collect();
    if pts.len() < 10 {
        return Err(Error::NotEnoughData {
            what: "points in the fit window",
            needed: 10,
            got: pts.len(),
        });
    }
    if let Some(&(t, v)) = pts
        .iter()
        .find(|&&(t, v)| !(t > 0.0 && v > 0.0 && v.is_finite()))
    {
        return Err(Error::invalid(
            "stream",
            format!("non-positive point ({t}, {v}) in the fit window"),
        ));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(t, v)| (a + t.ln(), b + v.ln()));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, v) in &pts {
        let dx = t.ln() - mx;
        sxy += dx * (v.ln() - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("stream", "all points share one t"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaitStudy {
    pub mean_wait: f64,
    pub stderr: f64,
    /// `(S/N)/p_min`
    pub lower_bound: f64,
}

/// Wall-rounds per global update of device-sampling FedAvg under Bernoulli
/// participation: `S` of `N` devices drawn without replacement, the update
/// waits until each has been active once.
pub fn waiting_time_study(
    n: usize,
    s: usize,
    p: &[f64],
    trials: usize,
    seed: u64,
) -> Result<WaitStudy> {
    if n == 0 || p.len() != n {
        return Err(Error::invalid(
            "p",
            format!("expected {n} probabilities, got {}", p.len()),
        ));
    }
    if s == 0 || s > n {
        return Err(Error::invalid("s", format!("need 1 <= S <= N = {n}")));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let geo = p
        .iter()
        .map(|&pi| {
            Geometric::new(pi)
                .map_err(|_| Error::invalid("p", "every probability must lie in (0, 1]"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = substream(seed, Purpose::Study, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let picked = sample(&mut rng, n, s);
        // Geometric counts failures before the first success
        let wait = picked
            .iter()
            .map(|i| geo[i].sample(&mut rng) + 1)
            .max()
            .unwrap_or(1) as f64;
        sum += wait;
        sum_sq += wait * wait;
    }
    let m = trials as f64;
    let mean_wait = sum / m;
    let stderr = if trials > 1 {
        ((sum_sq - m * mean_wait * mean_wait).max(0.0) / (m - 1.0) / m).sqrt()
    } else {
        0.0
    };
    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(WaitStudy {
        mean_wait,
        stderr,
        lower_bound: (s as f64 / n as f64) / p_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub device: usize,
    pub p: f64,
    pub k: u64,
    pub empirical: f64,
    pub expected: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauStudy {
    pub traces: usize,
    pub rounds: usize,
    pub tau_max_bound: f64,
    pub tau_bar_shape: f64,
    /// fraction of traces with `τ_max,T` within the bound
    pub within_bound: f64,
    /// mean over traces of `τ̄_T / ((1/N) Σ 1/p_i)`
    pub mean_ratio: f64,
    pub tail: Vec<TailPoint>,
}

/// Bernoulli traces of `rounds` rounds: the tail of `τ(T,i)` against the
/// truncated geometric law, and how `τ_max,T`, `τ̄_T` compare with their
/// high-probability bounds.
pub fn tau_study(
    p: &[f64],
    rounds: usize,
    traces: usize,
    delta: f64,
    max_k: u64,
    seed: u64,
) -> Result<TauStudy> {
    if traces == 0 {
        return Err(Error::invalid("traces", "need at least one trace"));
    }
    if rounds < 2 {
        return Err(Error::invalid("rounds", "need at least 2 rounds"));
    }
    let bounds = bernoulli_bounds(p, rounds, delta)?;
    let model = AvailabilityModel::bernoulli(p.to_vec())?;
    let n = p.len();
    let kmax = max_k.min(rounds as u64 - 1);
    let mut counts = vec![vec![0usize; kmax as usize + 1]; n];
    let mut within = 0usize;
    let mut ratio_sum = 0.0;
    for j in 0..traces {
        let mut proc = AvailabilityProcess::new(model.clone(), seed.wrapping_add(j as u64));
        let mut tracker = TauTracker::new(n);
        for _ in 0..rounds {
            tracker.update(&proc.next_active_set()?)?;
        }
        let stats = tracker.stats_inclusive();
        if stats.tau_max as f64 <= bounds.tau_max_bound {
            within += 1;
        }
        ratio_sum += stats.tau_bar / bounds.tau_bar_bound_shape;
        for (i, &tau) in tracker.tau().iter().enumerate() {
            for k in 0..=kmax.min(tau) {
                counts[i][k as usize] += 1;
            }
        }
    }
    let m = traces as f64;
    let mut tail = Vec::with_capacity(n * (kmax as usize + 1));
    for (i, row) in counts.iter().enumerate() {
        for (k, &c) in row.iter().enumerate() {
            let expected = crate::availability::bernoulli_tau_tail(p[i], k as u64, rounds)?;
            tail.push(TailPoint {
                device: i,
                p: p[i],
                k: k as u64,
                empirical: c as f64 / m,
                expected,
                stderr: (expected * (1.0 - expected) / m).sqrt(),
            });
        }
    }
    Ok(TauStudy {
        traces,
        rounds,
        tau_max_bound: bounds.tau_max_bound,
        tau_bar_shape: bounds.tau_bar_bound_shape,
        within_bound: within as f64 / m,
        mean_ratio: ratio_sum / m,
        tail,
    })
}
