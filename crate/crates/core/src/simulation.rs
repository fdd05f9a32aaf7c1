//! Round-by-round orchestration of one run, per-round metrics and
//! checkpoint/resume.

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    DeltaServerState, FedAvgServerState, IsNormalization, MifaServerState, RoundOutcome,
    SamplingServerState,
};
use crate::availability::{ActiveSet, AvailabilityModel, AvailabilityProcess, TauTracker};
use crate::error::{Error, Result};
use crate::problems::ProblemInstance;
use crate::rng::{device_streams, substream, Purpose, RandomStream};
use crate::schedules::{AveragedIterate, LrSchedule};
use crate::vector::ParamVector;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Mifa,
    MifaDelta,
    BiasedFedavg,
    IsFedavg {
        #[serde(default)]
        normalization: IsNormalization,
    },
    SamplingFedavg {
        s: usize,
    },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Mifa => "mifa",
            AlgorithmSpec::MifaDelta => "mifa_delta",
            AlgorithmSpec::BiasedFedavg => "biased_fedavg",
            AlgorithmSpec::IsFedavg { .. } => "is_fedavg",
            AlgorithmSpec::SamplingFedavg { .. } => "sampling_fedavg",
        }
    }
}

impl std::str::FromStr for AlgorithmSpec {
    type Err = Error;

    /// `mifa`, `mifa_delta`, `biased_fedavg`, `is_fedavg`,
    /// `is_fedavg:total_count`, `sampling_fedavg:<S>`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config {
            key: "algorithms".into(),
            reason: format!("unknown algorithm `{s}`"),
        };
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        Ok(match (head, arg) {
            ("mifa", None) => AlgorithmSpec::Mifa,
            ("mifa_delta", None) => AlgorithmSpec::MifaDelta,
            ("biased_fedavg", None) => AlgorithmSpec::BiasedFedavg,
            ("is_fedavg", None | Some("active_count")) => AlgorithmSpec::IsFedavg {
                normalization: IsNormalization::ActiveCount,
            },
            ("is_fedavg", Some("total_count")) => AlgorithmSpec::IsFedavg {
                normalization: IsNormalization::TotalCount,
            },
            ("sampling_fedavg", Some(n)) => AlgorithmSpec::SamplingFedavg {
                s: n.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub algorithm: AlgorithmSpec,
    pub schedule: LrSchedule,
    /// `T`: the run executes rounds `1..T−1` and reports `w_1..w_T`
    pub rounds: usize,
    pub local_steps: usize,
    pub seed: u64,
    pub init: ParamVector,
}

/// Metrics of the iterate `w_t`, taken after `t − 1` wall-rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    pub t_prime: usize,
    /// `f(w_t) − f*` for convex families, `‖∇f(w_t)‖²` otherwise
    pub f_gap: Option<f64>,
    /// `f(w̄_t) − f*` under the strongly convex schedule
    pub avg_gap: Option<f64>,
    pub grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    /// over rounds `1..t−1`
    pub tau_bar: f64,
    pub tau_max: u64,
    pub oracle_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetadata {
    pub a: Option<f64>,
    pub eta_first: f64,
    pub eta_last: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<RoundMetrics>,
    /// wall-round at which the run diverged
    pub diverged_at: Option<usize>,
    pub final_avg_gap: Option<f64>,
    pub metadata: RunMetadata,
    pub trace: Vec<ActiveSet>,
    /// sampling FedAvg only: wall-rounds per completed global update
    pub waits: Vec<usize>,
}

impl Trajectory {
    pub fn is_partial(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn last(&self) -> &RoundMetrics {
        self.rows.last().expect("a trajectory has at least one row")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Server {
    Mifa(MifaServerState),
    Delta(DeltaServerState),
    Biased(FedAvgServerState),
    Importance {
        state: FedAvgServerState,
        p: Vec<f64>,
        normalization: IsNormalization,
    },
    Sampling(SamplingServerState),
}

impl Server {
    fn w(&self) -> &ParamVector {
        match self {
            Server::Mifa(s) => &s.w,
            Server::Delta(s) => s.w(),
            Server::Biased(s) | Server::Importance { state: s, .. } => &s.w,
            Server::Sampling(s) => &s.w,
        }
    }

    fn t_prime(&self) -> usize {
        match self {
            Server::Mifa(s) => s.t + 1,
            Server::Delta(s) => s.t + 1,
            Server::Biased(s) | Server::Importance { state: s, .. } => s.updates + 1,
            Server::Sampling(s) => s.t_prime,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimState {
    version: u32,
    spec: RunSpec,
    server: Server,
    availability: AvailabilityProcess,
    noise: Vec<RandomStream>,
    selector: RandomStream,
    tracker: TauTracker,
    avg: Option<AveragedIterate>,
    oracle_calls: u64,
    /// running minimum, absent before the first row
    min_grad_sq: Option<f64>,
    next_row: usize,
    diverged_at: Option<usize>,
    trace: Vec<ActiveSet>,
}

/// One run in progress. Borrowing the instance keeps checkpoints small: an
/// instance is regenerated from its parameters, never serialized.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    instance: &'a ProblemInstance,
    state: SimState,
}

impl<'a> Simulation<'a> {
    pub fn new(
        instance: &'a ProblemInstance,
        model: AvailabilityModel,
        spec: RunSpec,
    ) -> Result<Self> {
        let n = instance.n();
        if model.n() != n {
            return Err(Error::invalid(
                "availability",
                format!(
                    "model covers {} devices but the instance has {n}",
                    model.n()
                ),
            ));
        }
        if spec.rounds < 2 {
            return Err(Error::invalid("rounds", "need T >= 2"));
        }
        if spec.local_steps == 0 {
            return Err(Error::invalid("local_steps", "need K >= 1"));
        }
        if spec.init.dim() != instance.dim() {
            return Err(Error::DimensionMismatch {
                expected: instance.dim(),
                got: spec.init.dim(),
            });
        }
        let w = spec.init.clone();
        let server = match &spec.algorithm {
            AlgorithmSpec::Mifa => Server::Mifa(MifaServerState::new(w, n)),
            AlgorithmSpec::MifaDelta => Server::Delta(DeltaServerState::new(w, n)),
            AlgorithmSpec::BiasedFedavg => Server::Biased(FedAvgServerState::new(w, n)),
            AlgorithmSpec::IsFedavg { normalization } => {
                let p = model.probabilities().ok_or_else(|| {
                    Error::invalid(
                        "algorithm",
                        "importance sampling needs participation probabilities",
                    )
                })?;
                Server::Importance {
                    state: FedAvgServerState::new(w, n),
                    p,
                    normalization: *normalization,
                }
            }
            AlgorithmSpec::SamplingFedavg { s } => {
                Server::Sampling(SamplingServerState::new(w, n, *s)?)
            }
        };
        let avg = match (spec.schedule.shift(), instance.optimum()) {
            (Some(a), Some(_)) => Some(AveragedIterate::new(a, instance.dim())),
            _ => None,
        };
        let seed = spec.seed;
        Ok(Simulation {
            instance,
            state: SimState {
                version: CHECKPOINT_VERSION,
                server,
                availability: AvailabilityProcess::new(model, seed),
                noise: device_streams(seed, Purpose::GradientNoise, n),
                selector: substream(seed, Purpose::DeviceSampling, 0),
                tracker: TauTracker::new(n),
                avg,
                oracle_calls: 0,
                min_grad_sq: None,
                next_row: 1,
                diverged_at: None,
                trace: Vec::new(),
                spec,
            },
        })
    }

    pub fn spec(&self) -> &RunSpec {
        &self.state.spec
    }

    pub fn w(&self) -> &ParamVector {
        self.state.server.w()
    }

    pub fn diverged_at(&self) -> Option<usize> {
        self.state.diverged_at
    }

    pub fn is_finished(&self) -> bool {
        self.state.diverged_at.is_some() || self.state.next_row > self.state.spec.rounds
    }

    /// Mifa update array, for audits.
    pub fn update_array(&self) -> Option<&[ParamVector]> {
        match &self.state.server {
            Server::Mifa(s) => Some(&s.g),
            Server::Delta(s) => Some(&s.device_memory),
            _ => None,
        }
    }

    pub fn metadata(&self) -> Result<RunMetadata> {
        let s = &self.state.spec.schedule;
        Ok(RunMetadata {
            a: s.shift(),
            eta_first: s.eta(1)?,
            eta_last: s.eta(self.state.spec.rounds)?,
        })
    }

    fn execute_round(&mut self) -> Result<RoundOutcome> {
        let st = &mut self.state;
        let active = st.availability.next_active_set()?;
        st.tracker.update(&active)?;
        let t = active.round;
        let k = st.spec.local_steps;
        let sched = st.spec.schedule;
        let inst = self.instance;
        let out = match &mut st.server {
            Server::Mifa(s) => s.round(&active, sched.eta(t)?, inst, k, &mut st.noise),
            Server::Delta(s) => s.round(&active, sched.eta(t)?, inst, k, &mut st.noise),
            Server::Biased(s) => s.biased_round(&active, sched.eta(t)?, inst, k, &mut st.noise),
            Server::Importance {
                state,
                p,
                normalization,
            } => state.importance_round(
                &active,
                sched.eta(t)?,
                p,
                *normalization,
                inst,
                k,
                &mut st.noise,
            ),
            Server::Sampling(s) => {
                s.round(&active, &sched, inst, k, &mut st.noise, &mut st.selector)
            }
        }?;
        st.oracle_calls += (k * out.computed) as u64;
        st.trace.push(active);
        Ok(out)
    }

    fn metrics(&mut self, t: usize) -> Result<RoundMetrics> {
        let inst = self.instance;
        let st = &mut self.state;
        let w = st.server.w().clone();
        let grad_norm_sq = inst.global_grad(&w)?.norm_sq();
        let min_grad_norm_sq = st.min_grad_sq.map_or(grad_norm_sq, |m| m.min(grad_norm_sq));
        st.min_grad_sq = Some(min_grad_norm_sq);
        let f_gap = if inst.family().is_convex() {
            inst.suboptimality(&w).ok()
        } else {
            Some(grad_norm_sq)
        };
        let avg_gap = match &mut st.avg {
            Some(avg) => {
                avg.observe(t, &w)?;
                Some(inst.suboptimality(&avg.current()?)?)
            }
            None => None,
        };
        let tau = st.tracker.stats_inclusive();
        Ok(RoundMetrics {
            t,
            t_prime: st.server.t_prime(),
            f_gap,
            avg_gap,
            grad_norm_sq,
            min_grad_norm_sq,
            tau_bar: tau.tau_bar,
            tau_max: tau.tau_max,
            oracle_calls: st.oracle_calls,
        })
    }

    /// Emits the next row: `w_1` first, then one wall-round per call.
    /// Returns `None` once `w_T` was reported or the run diverged.
    pub fn step(&mut self) -> Result<Option<RoundMetrics>> {
        if self.is_finished() {
            return Ok(None);
        }
        let t = self.state.next_row;
        if t > 1 {
            match self.execute_round() {
                Ok(_) => {}
                Err(Error::Diverged { round }) => {
                    self.state.diverged_at = Some(round);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            }
        }
        let m = self.metrics(t)?;
        self.state.next_row += 1;
        Ok(Some(m))
    }

    pub fn run_to_end(mut self) -> Result<Trajectory> {
        let mut rows = Vec::with_capacity(self.state.spec.rounds);
        while let Some(m) = self.step()? {
            rows.push(m);
        }
        self.finish(rows)
    }

    fn finish(self, rows: Vec<RoundMetrics>) -> Result<Trajectory> {
        let metadata = self.metadata()?;
        let final_avg_gap = rows.last().and_then(|r| r.avg_gap);
        let waits = match &self.state.server {
            Server::Sampling(s) => s.waits.clone(),
            _ => Vec::new(),
        };
        Ok(Trajectory {
            rows,
            diverged_at: self.state.diverged_at,
            final_avg_gap,
            metadata,
            trace: self.state.trace,
            waits,
        })
    }

    /// Lossless JSON dump of everything but the instance.
    pub fn checkpoint(&self) -> Result<String> {
        serde_json::to_string(&self.state).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn restore(instance: &'a ProblemInstance, checkpoint: &str) -> Result<Self> {
        let state: SimState =
            serde_json::from_str(checkpoint).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                state.version
            )));
        }
        if state.noise.len() != instance.n() || state.spec.init.dim() != instance.dim() {
            return Err(Error::Checkpoint(
                "checkpoint does not match the instance".into(),
            ));
        }
        Ok(Simulation { instance, state })
    }
}

/// Runs `T` rounds of one algorithm and collects the trajectory.
pub fn run(
    instance: &ProblemInstance,
    model: AvailabilityModel,
    spec: RunSpec,
) -> Result<Trajectory> {
    Simulation::new(instance, model, spec)?.run_to_end()
}
