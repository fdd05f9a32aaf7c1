//! Server-side aggregation rules and device-side local SGD.
//!
//! Every aggregate is formed with an exactly rounded sum over devices taken
//! in ascending device order, then divided by the count and scaled by the
//! step size. Two rules that average the same set of updates therefore move
//! the model by bit-identical amounts.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::availability::ActiveSet;
use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::rng::RandomStream;
use crate::schedules::LrSchedule;
use crate::vector::{exact_sum, two_sum, ExactSum, ParamVector};

/// Accumulated gradient `(1/η)(w − w_K)` returned by a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub device: usize,
    pub value: ParamVector,
    pub produced_at: usize,
}

/// Runs `k` local SGD steps from `w` and returns the update together with
/// the final local iterate `w_K`. The update is the running sum of the
/// sampled gradients rather than `(w − w_K)/η`.
pub fn local_pass(
    instance: &ProblemInstance,
    device: usize,
    w: &ParamVector,
    eta: f64,
    k: usize,
    round: usize,
    rng: &mut RandomStream,
) -> Result<(LocalUpdate, ParamVector)> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid("eta", "must be finite and positive"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "need at least one local step"));
    }
    instance.device(device)?;
    if w.dim() != instance.dim() {
        return Err(Error::DimensionMismatch {
            expected: instance.dim(),
            got: w.dim(),
        });
    }
    let d = instance.dim();
    let mut iterate = w.as_slice().to_vec();
    let mut total = vec![0.0; d];
    let mut g = vec![0.0; d];
    for _ in 0..k {
        instance.stoch_grad_into(device, &iterate, rng, &mut g);
        for ((x, s), gj) in iterate.iter_mut().zip(total.iter_mut()).zip(&g) {
            *x -= eta * gj;
            *s += gj;
        }
        if iterate.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { round });
        }
    }
    Ok((
        LocalUpdate {
            device,
            value: ParamVector::from_raw(total),
            produced_at: round,
        },
        ParamVector::from_raw(iterate),
    ))
}

pub fn local_update(
    instance: &ProblemInstance,
    device: usize,
    w: &ParamVector,
    eta: f64,
    k: usize,
    round: usize,
    rng: &mut RandomStream,
) -> Result<LocalUpdate> {
    local_pass(instance, device, w, eta, k, round, rng).map(|(u, _)| u)
}

/// `w ← w − η · (sum / count)` coordinate-wise.
fn apply_step(
    w: &mut ParamVector,
    eta: f64,
    sum: &[f64],
    count: usize,
    round: usize,
) -> Result<()> {
    let c = count as f64;
    for (wj, sj) in w.as_mut_slice().iter_mut().zip(sum) {
        *wj -= eta * (sj / c);
    }
    if w.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { round })
    }
}

fn check_round(expected: usize, active: &ActiveSet, n: usize) -> Result<()> {
    if active.round != expected {
        return Err(Error::RoundOutOfOrder {
            expected,
            got: active.round,
        });
    }
    if let Some(&bad) = active.members().iter().find(|&&i| i >= n) {
        return Err(Error::DeviceOutOfRange { id: bad, n });
    }
    if active.round == 1 && !active.is_full(n) {
        let missing = (0..n).find(|&i| !active.contains(i)).unwrap_or(0);
        return Err(Error::IncompleteFirstRound { device: missing });
    }
    Ok(())
}

/// What happened during one wall-round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// devices that ran local SGD
    pub computed: usize,
    /// whether the global model moved
    pub updated: bool,
}

/// MIFA with the full update array `{G^i}` held by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MifaServerState {
    pub w: ParamVector,
    pub g: Vec<ParamVector>,
    /// completed rounds
    pub t: usize,
}

impl MifaServerState {
    pub fn new(w: ParamVector, n: usize) -> Self {
        let d = w.dim();
        MifaServerState {
            w,
            g: vec![ParamVector::zeros(d); n],
            t: 0,
        }
    }

    /// Refreshes `G^i` for active devices at `w_t`, then steps with the
    /// average of the whole array. An empty active set still steps.
    pub fn round(
        &mut self,
        active: &ActiveSet,
        eta: f64,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
    ) -> Result<RoundOutcome> {
        let n = self.g.len();
        check_round(self.t + 1, active, n)?;
        let t = active.round;
        for &i in active.members() {
            self.g[i] = local_update(instance, i, &self.w, eta, k, t, &mut noise[i])?.value;
        }
        let sum = exact_sum(self.w.dim(), self.g.iter().map(ParamVector::as_slice));
        apply_step(&mut self.w, eta, &sum, n, t)?;
        self.t = t;
        Ok(RoundOutcome {
            computed: active.len(),
            updated: true,
        })
    }
}

/// Server half of the memory-distributed MIFA: one accumulated vector.
///
/// The server keeps `Σ_i G^i` as an exact expansion, so `Ḡ` rounds to the
/// same bits as a fresh average of the update array would.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaServer {
    pub w: ParamVector,
    sum: ExactSum,
    n: usize,
}

impl DeltaServer {
    /// `Ḡ = (1/N) Σ_i G^i`
    pub fn gbar(&self) -> ParamVector {
        let n = self.n as f64;
        ParamVector::from_raw(self.sum.value().into_iter().map(|s| s / n).collect())
    }

    /// Folds one device difference `G_new − G_old`, received as an
    /// error-free `(hi, lo)` pair.
    fn receive(&mut self, hi: &[f64], lo: &[f64]) {
        self.sum.add(hi);
        self.sum.add(lo);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaServerState {
    pub server: DeltaServer,
    /// each device's previously transmitted update, kept on the device
    pub device_memory: Vec<ParamVector>,
    pub t: usize,
}

impl DeltaServerState {
    pub fn new(w: ParamVector, n: usize) -> Self {
        let d = w.dim();
        DeltaServerState {
            server: DeltaServer {
                w,
                sum: ExactSum::new(d),
                n,
            },
            device_memory: vec![ParamVector::zeros(d); n],
            t: 0,
        }
    }

    pub fn w(&self) -> &ParamVector {
        &self.server.w
    }

    pub fn gbar(&self) -> ParamVector {
        self.server.gbar()
    }

    pub fn round(
        &mut self,
        active: &ActiveSet,
        eta: f64,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
    ) -> Result<RoundOutcome> {
        let n = self.device_memory.len();
        check_round(self.t + 1, active, n)?;
        let t = active.round;
        let d = self.server.w.dim();
        let mut hi = vec![0.0; d];
        let mut lo = vec![0.0; d];
        for &i in active.members() {
            let fresh = local_update(instance, i, &self.server.w, eta, k, t, &mut noise[i])?.value;
            for j in 0..d {
                (hi[j], lo[j]) = two_sum(fresh[j], -self.device_memory[i][j]);
            }
            self.server.receive(&hi, &lo);
            self.device_memory[i] = fresh;
        }
        let sum = self.server.sum.value();
        apply_step(&mut self.server.w, eta, &sum, n, t)?;
        self.t = t;
        Ok(RoundOutcome {
            computed: active.len(),
            updated: true,
        })
    }
}

/// Normalization of the importance-sampling rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsNormalization {
    /// divide by `|A(t)|`, as written in the baseline algorithm box
    #[default]
    ActiveCount,
    /// divide by `N`, which makes the expected step unbiased
    TotalCount,
}

/// Stateless server of the biased and importance-sampling baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAvgServerState {
    pub w: ParamVector,
    pub t: usize,
    /// global updates applied so far
    pub updates: usize,
    n: usize,
}

impl FedAvgServerState {
    pub fn new(w: ParamVector, n: usize) -> Self {
        FedAvgServerState {
            w,
            t: 0,
            updates: 0,
            n,
        }
    }

    fn fresh_updates(
        &self,
        active: &ActiveSet,
        eta: f64,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
    ) -> Result<Vec<LocalUpdate>> {
        active
            .members()
            .iter()
            .map(|&i| local_update(instance, i, &self.w, eta, k, active.round, &mut noise[i]))
            .collect()
    }

    /// `w ← w − (η/|A|) Σ_{i∈A} G^i`; no-op on an empty active set.
    pub fn biased_round(
        &mut self,
        active: &ActiveSet,
        eta: f64,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
    ) -> Result<RoundOutcome> {
        check_round(self.t + 1, active, self.n)?;
        self.t = active.round;
        if active.is_empty() {
            return Ok(RoundOutcome::default());
        }
        let ups = self.fresh_updates(active, eta, instance, k, noise)?;
        let sum = exact_sum(self.w.dim(), ups.iter().map(|u| u.value.as_slice()));
        apply_step(&mut self.w, eta, &sum, active.len(), active.round)?;
        self.updates += 1;
        Ok(RoundOutcome {
            computed: ups.len(),
            updated: true,
        })
    }

    /// Importance-weighted step with `G^i / p_i`.
    #[allow(clippy::too_many_arguments)]
    pub fn importance_round(
        &mut self,
        active: &ActiveSet,
        eta: f64,
        p: &[f64],
        normalization: IsNormalization,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
    ) -> Result<RoundOutcome> {
        check_round(self.t + 1, active, self.n)?;
        if p.len() != self.n || p.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "p",
                "need a positive probability per device",
            ));
        }
        self.t = active.round;
        if active.is_empty() {
            return Ok(RoundOutcome::default());
        }
        let ups = self.fresh_updates(active, eta, instance, k, noise)?;
        let weighted: Vec<Vec<f64>> = ups
            .iter()
            .map(|u| u.value.as_slice().iter().map(|v| v / p[u.device]).collect())
            .collect();
        let sum = exact_sum(self.w.dim(), weighted.iter().map(Vec::as_slice));
        let count = match normalization {
            IsNormalization::ActiveCount => active.len(),
            IsNormalization::TotalCount => self.n,
        };
        apply_step(&mut self.w, eta, &sum, count, active.round)?;
        self.updates += 1;
        Ok(RoundOutcome {
            computed: ups.len(),
            updated: true,
        })
    }
}

/// FedAvg with device sampling: select `S` devices, freeze `w`, wait until
/// every selected device has responded, then step with `η_{t'}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingServerState {
    pub w: ParamVector,
    pub pending: Vec<usize>,
    pub collected: Vec<LocalUpdate>,
    /// wall-rounds completed
    pub t: usize,
    /// global update counter, starting at 1
    pub t_prime: usize,
    /// wall-rounds taken by each completed global update
    pub waits: Vec<usize>,
    window_start: usize,
    s: usize,
    n: usize,
}

impl SamplingServerState {
    pub fn new(w: ParamVector, n: usize, s: usize) -> Result<Self> {
        if s == 0 || s > n {
            return Err(Error::invalid(
                "s",
                format!("need 1 <= S <= N = {n}, got {s}"),
            ));
        }
        Ok(SamplingServerState {
            w,
            pending: Vec::new(),
            collected: Vec::new(),
            t: 0,
            t_prime: 1,
            waits: Vec::new(),
            window_start: 0,
            s,
            n,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.s
    }

    /// Wall-rounds spent in the currently open window.
    pub fn open_window(&self) -> usize {
        if self.pending.is_empty() {
            0
        } else {
            self.t + 1 - self.window_start
        }
    }

    /// Device compute uses the wall-round step `η_t`; the server step uses
    /// `η_{t'}`.
    pub fn round(
        &mut self,
        active: &ActiveSet,
        schedule: &LrSchedule,
        instance: &ProblemInstance,
        k: usize,
        noise: &mut [RandomStream],
        selector: &mut RandomStream,
    ) -> Result<RoundOutcome> {
        check_round(self.t + 1, active, self.n)?;
        let t = active.round;
        if self.pending.is_empty() {
            let mut chosen = sample(selector, self.n, self.s).into_vec();
            chosen.sort_unstable();
            self.pending = chosen;
            self.window_start = t;
        }
        let eta_local = schedule.eta(t)?;
        let mut computed = 0;
        let mut still = Vec::with_capacity(self.pending.len());
        for &i in &self.pending {
            if active.contains(i) {
                let u = local_update(instance, i, &self.w, eta_local, k, t, &mut noise[i])?;
                self.collected.push(u);
                computed += 1;
            } else {
                still.push(i);
            }
        }
        self.pending = still;
        self.t = t;
        let mut updated = false;
        if self.pending.is_empty() {
            self.collected.sort_by_key(|u| u.device);
            let sum = exact_sum(
                self.w.dim(),
                self.collected.iter().map(|u| u.value.as_slice()),
            );
            let eta = schedule.eta(self.t_prime)?;
            apply_step(&mut self.w, eta, &sum, self.s, t)?;
            self.collected.clear();
            self.waits.push(t + 1 - self.window_start);
            self.t_prime += 1;
            updated = true;
        }
        Ok(RoundOutcome { computed, updated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic_from_parts, make_quadratic_instance};
    use crate::rng::{device_streams, substream, Purpose};
    use nalgebra::DMatrix;

    fn two_quadratics(sigma: f64) -> ProblemInstance {
        make_quadratic_from_parts(
            vec![DMatrix::from_element(1, 1, 1.0); 2],
            vec![vec![-1.0], vec![1.0]],
            sigma,
        )
        .unwrap()
    }

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn single_step_without_noise_is_gradient() {
        let inst = make_quadratic_instance(3, 4, 1.0, 3.0, 0.0, 1.0, 2).unwrap();
        let w = v(&[0.5, -0.1, 0.2, 1.0]);
        let mut rng = substream(0, Purpose::GradientNoise, 0);
        let u = local_update(&inst, 1, &w, 0.05, 1, 1, &mut rng).unwrap();
        assert_eq!(u.value, inst.grad(1, &w).unwrap());
    }

    #[test]
    fn two_step_manual_unroll() {
        let inst =
            make_quadratic_from_parts(vec![DMatrix::from_element(1, 1, 1.0)], vec![vec![0.0]], 0.0)
                .unwrap();
        let mut rng = substream(0, Purpose::GradientNoise, 0);
        let (u, end) = local_pass(&inst, 0, &v(&[1.0]), 0.1, 2, 1, &mut rng).unwrap();
        assert!((u.value[0] - 1.9).abs() < 1e-15);
        assert!((end[0] - 0.81).abs() < 1e-15);
        assert!(((1.0 - end[0]) / 0.1 - 1.9).abs() < 1e-12);
    }

    #[test]
    fn update_times_eta_is_displacement() {
        let inst = make_quadratic_instance(4, 3, 1.0, 4.0, 0.8, 2.0, 3).unwrap();
        let mut rng = substream(7, Purpose::GradientNoise, 0);
        for trial in 0..20 {
            let w = v(&[trial as f64 * 0.1, -0.3, 0.7]);
            let eta = 0.01 + 0.002 * trial as f64;
            let (u, end) = local_pass(&inst, trial % 4, &w, eta, 7, 1, &mut rng).unwrap();
            let disp = w.sub(&end);
            for j in 0..3 {
                assert!((u.value[j] * eta - disp[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_signalled() {
        let inst = make_quadratic_instance(1, 1, 1.0, 1.0, 0.0, 0.0, 0).unwrap();
        let mut rng = substream(0, Purpose::GradientNoise, 0);
        let r = local_pass(&inst, 0, &v(&[1.0]), 1e200, 3, 4, &mut rng);
        assert_eq!(r.unwrap_err(), Error::Diverged { round: 4 });
    }

    #[test]
    fn mifa_reuses_stale_update() {
        // σ = 0, K = 1, η = 0.1; device 1 misses round 2
        let inst = two_quadratics(0.0);
        let mut noise = device_streams(0, Purpose::GradientNoise, 2);
        let mut s = MifaServerState::new(v(&[0.5]), 2);
        let eta = 0.1;
        s.round(&ActiveSet::all(1, 2), eta, &inst, 1, &mut noise)
            .unwrap();
        // w2 = 0.5 − 0.1·((0.5+1) + (0.5−1))/2 = 0.45
        assert!((s.w[0] - 0.45).abs() < 1e-15);
        s.round(&ActiveSet::new(2, vec![0]), eta, &inst, 1, &mut noise)
            .unwrap();
        // G0 = 0.45+1 = 1.45 fresh, G1 = −0.5 stale: w3 = 0.45 − 0.1·0.475
        assert_eq!(s.g[1][0], -0.5);
        assert!((s.w[0] - (0.45 - 0.1 * 0.475)).abs() < 1e-15);
    }

    #[test]
    fn mifa_rejects_incomplete_first_round() {
        let inst = two_quadratics(0.0);
        let mut noise = device_streams(0, Purpose::GradientNoise, 2);
        let mut s = MifaServerState::new(v(&[0.0]), 2);
        let r = s.round(&ActiveSet::new(1, vec![0]), 0.1, &inst, 1, &mut noise);
        assert_eq!(r.unwrap_err(), Error::IncompleteFirstRound { device: 1 });
        let r = s.round(&ActiveSet::all(3, 2), 0.1, &inst, 1, &mut noise);
        assert!(matches!(r, Err(Error::RoundOutOfOrder { .. })));
    }

    #[test]
    fn mifa_steps_on_empty_active_set() {
        let inst = two_quadratics(0.0);
        let mut noise = device_streams(0, Purpose::GradientNoise, 2);
        let mut s = MifaServerState::new(v(&[0.3]), 2);
        s.round(&ActiveSet::all(1, 2), 0.1, &inst, 1, &mut noise)
            .unwrap();
        let before = s.w[0];
        s.round(&ActiveSet::new(2, vec![]), 0.1, &inst, 1, &mut noise)
            .unwrap();
        assert_ne!(s.w[0], before);
    }

    #[test]
    fn delta_first_round_matches_naive() {
        let inst = make_quadratic_instance(5, 3, 1.0, 4.0, 0.5, 2.0, 1).unwrap();
        let w = v(&[0.2, 0.2, -0.4]);
        let mut a = MifaServerState::new(w.clone(), 5);
        let mut b = DeltaServerState::new(w, 5);
        let mut na = device_streams(3, Purpose::GradientNoise, 5);
        let mut nb = device_streams(3, Purpose::GradientNoise, 5);
        a.round(&ActiveSet::all(1, 5), 0.05, &inst, 3, &mut na)
            .unwrap();
        b.round(&ActiveSet::all(1, 5), 0.05, &inst, 3, &mut nb)
            .unwrap();
        assert_eq!(&a.w, b.w());
        assert_eq!(b.device_memory, a.g);
    }

    #[test]
    fn delta_gbar_tracks_device_memory() {
        let inst = make_quadratic_instance(4, 2, 1.0, 2.0, 1.0, 1.0, 5).unwrap();
        let mut s = DeltaServerState::new(ParamVector::zeros(2), 4);
        let mut noise = device_streams(1, Purpose::GradientNoise, 4);
        let sets = [vec![0, 1, 2, 3], vec![1], vec![], vec![0, 3], vec![2, 3]];
        for (k, m) in sets.iter().enumerate() {
            s.round(&ActiveSet::new(k + 1, m.clone()), 0.1, &inst, 2, &mut noise)
                .unwrap();
            let direct = exact_sum(2, s.device_memory.iter().map(ParamVector::as_slice));
            let gbar = s.gbar();
            for j in 0..2 {
                assert_eq!(gbar[j], direct[j] / 4.0);
            }
        }
    }

    #[test]
    fn biased_moves_toward_active_device() {
        let inst = two_quadratics(0.0);
        let mut noise = device_streams(0, Purpose::GradientNoise, 2);
        let mut s = FedAvgServerState::new(v(&[0.0]), 2);
        s.biased_round(&ActiveSet::all(1, 2), 0.1, &inst, 1, &mut noise)
            .unwrap();
        assert_eq!(s.w[0], 0.0);
        let out = s
            .biased_round(&ActiveSet::new(2, vec![0]), 0.1, &inst, 1, &mut noise)
            .unwrap();
        // ∇f_0(0) = 0 − (−1) = 1
        assert_eq!(s.w[0], -0.1);
        assert!(out.updated);
        let out = s
            .biased_round(&ActiveSet::new(3, vec![]), 0.1, &inst, 1, &mut noise)
            .unwrap();
        assert_eq!(s.w[0], -0.1);
        assert!(!out.updated);
        assert_eq!(s.updates, 2);
    }

    #[test]
    fn importance_sampling_expectation_by_enumeration() {
        // exhaustive over the four outcomes of two Bernoulli devices
        // (round index 2 so the first-round rule does not apply)
        let inst = two_quadratics(0.0);
        let w = v(&[0.3]);
        let p = [0.4, 0.7];
        let g = [inst.grad(0, &w).unwrap()[0], inst.grad(1, &w).unwrap()[0]];
        let eta = 0.1;
        let mut expect_total = 0.0;
        let mut expect_active = 0.0;
        for mask in 0..4u8 {
            let members: Vec<usize> = (0..2).filter(|i| mask & (1 << i) != 0).collect();
            let prob: f64 = (0..2)
                .map(|i| {
                    if mask & (1 << i) != 0 {
                        p[i]
                    } else {
                        1.0 - p[i]
                    }
                })
                .product();
            for (norm, acc) in [
                (IsNormalization::TotalCount, &mut expect_total),
                (IsNormalization::ActiveCount, &mut expect_active),
            ] {
                let mut s = FedAvgServerState::new(w.clone(), 2);
                s.t = 1;
                let mut noise = device_streams(0, Purpose::GradientNoise, 2);
                s.importance_round(
                    &ActiveSet::new(2, members.clone()),
                    eta,
                    &p,
                    norm,
                    &inst,
                    1,
                    &mut noise,
                )
                .unwrap();
                *acc += prob * (w[0] - s.w[0]);
            }
        }
        let unbiased = eta / 2.0 * (g[0] + g[1]);
        assert!((expect_total - unbiased).abs() < 1e-15);
        assert!((expect_active - unbiased).abs() > 1e-3);
    }

    #[test]
    fn importance_with_unit_probabilities_equals_biased() {
        let inst = make_quadratic_instance(3, 2, 1.0, 2.0, 0.4, 1.0, 0).unwrap();
        let mut a = FedAvgServerState::new(v(&[1.0, -1.0]), 3);
        let mut b = a.clone();
        let mut na = device_streams(2, Purpose::GradientNoise, 3);
        let mut nb = device_streams(2, Purpose::GradientNoise, 3);
        for t in 1..=20 {
            let act = ActiveSet::all(t, 3);
            a.biased_round(&act, 0.05, &inst, 2, &mut na).unwrap();
            b.importance_round(
                &act,
                0.05,
                &[1.0; 3],
                IsNormalization::TotalCount,
                &inst,
                2,
                &mut nb,
            )
            .unwrap();
        }
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn sampling_waits_for_selected_devices() {
        let inst = two_quadratics(0.0);
        let sched = LrSchedule::experimental_decay(0.1).unwrap();
        let mut s = SamplingServerState::new(v(&[0.0]), 2, 2).unwrap();
        let mut noise = device_streams(0, Purpose::GradientNoise, 2);
        let mut sel = substream(0, Purpose::DeviceSampling, 0);
        s.round(
            &ActiveSet::all(1, 2),
            &sched,
            &inst,
            1,
            &mut noise,
            &mut sel,
        )
        .unwrap();
        assert_eq!(s.t_prime, 2);
        let frozen = s.w.clone();
        let o = s
            .round(
                &ActiveSet::new(2, vec![0]),
                &sched,
                &inst,
                1,
                &mut noise,
                &mut sel,
            )
            .unwrap();
        assert!(!o.updated);
        assert_eq!(s.w, frozen);
        assert_eq!(s.pending, vec![1]);
        s.round(
            &ActiveSet::new(3, vec![]),
            &sched,
            &inst,
            1,
            &mut noise,
            &mut sel,
        )
        .unwrap();
        assert_eq!(s.w, frozen);
        let o = s
            .round(
                &ActiveSet::new(4, vec![1]),
                &sched,
                &inst,
                1,
                &mut noise,
                &mut sel,
            )
            .unwrap();
        assert!(o.updated);
        assert_eq!(s.t_prime, 3);
        assert_eq!(s.waits, vec![1, 3]);
        assert!(SamplingServerState::new(v(&[0.0]), 2, 3).is_err());
    }
}
