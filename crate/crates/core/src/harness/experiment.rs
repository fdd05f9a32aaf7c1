//! Multi-seed runs and their per-round aggregate.

use serde::Serialize;

use crate::availability::AvailabilityModel;
use crate::error::Result;
use crate::problems::ProblemInstance;
use crate::schedules::{nonconvex_round_conditions, LrSchedule, RoundCondition};
use crate::simulation::{run, AlgorithmSpec, RoundMetrics, RunMetadata, Trajectory};
use crate::vector::ParamVector;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanErr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanErr {
    fn of(values: &[f64]) -> MeanErr {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        MeanErr { mean, stderr }
    }

    fn of_optional(values: &[Option<f64>]) -> Option<MeanErr> {
        let v: Option<Vec<f64>> = values.iter().copied().collect();
        v.map(|v| MeanErr::of(&v))
    }
}

/// Mean and standard error across seeds of one wall-round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub t: usize,
    pub t_prime: MeanErr,
    pub f_gap: Option<MeanErr>,
    pub avg_gap: Option<MeanErr>,
    pub grad_norm_sq: MeanErr,
    pub min_grad_norm_sq: MeanErr,
    pub tau_bar: MeanErr,
    pub tau_max: MeanErr,
    pub oracle_calls: MeanErr,
    /// some seed diverged, so the aggregate stops early
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algorithm: &'static str,
    pub seeds: Vec<u64>,
    pub run: RunMetadata,
    /// the non-convex minimum-`T` requirements, when that schedule is used
    pub round_conditions: Vec<RoundCondition>,
    pub diverged: Vec<(u64, usize)>,
    pub truncated: bool,
    pub final_avg_gap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    pub runs: Vec<Trajectory>,
    pub aggregate: Vec<AggregateRow>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn is_partial(&self) -> bool {
        self.summary.truncated
    }
}

/// Aggregates streams by wall-round, truncated to the shortest.
pub fn aggregate(runs: &[Trajectory]) -> Vec<AggregateRow> {
    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let partial = runs.iter().any(Trajectory::is_partial);
    (0..len)
        .map(|i| {
            let rows: Vec<&RoundMetrics> = runs.iter().map(|r| &r.rows[i]).collect();
            let col = |f: fn(&RoundMetrics) -> f64| {
                MeanErr::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let opt = |f: fn(&RoundMetrics) -> Option<f64>| {
                MeanErr::of_optional(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            AggregateRow {
                t: rows[0].t,
                t_prime: col(|r| r.t_prime as f64),
                f_gap: opt(|r| r.f_gap),
                avg_gap: opt(|r| r.avg_gap),
                grad_norm_sq: col(|r| r.grad_norm_sq),
                min_grad_norm_sq: col(|r| r.min_grad_norm_sq),
                tau_bar: col(|r| r.tau_bar),
                tau_max: col(|r| r.tau_max as f64),
                oracle_calls: col(|r| r.oracle_calls as f64),
                partial,
            }
        })
        .collect()
}

struct Prepared {
    instance: ProblemInstance,
    model: AvailabilityModel,
    schedule: LrSchedule,
    init: ParamVector,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let instance = cfg.build_instance()?;
    let model = cfg.build_availability()?;
    let schedule = cfg.build_schedule(&instance, &model)?;
    let init = cfg.init(instance.dim())?;
    Ok(Prepared {
        instance,
        model,
        schedule,
        init,
    })
}

#[cfg(feature = "parallel")]
fn run_seeds<F>(seeds: &[u64], f: F) -> Result<Vec<Trajectory>>
where
    F: Fn(u64) -> Result<Trajectory> + Sync + Send,
{
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_seeds<F>(seeds: &[u64], f: F) -> Result<Vec<Trajectory>>
where
    F: Fn(u64) -> Result<Trajectory>,
{
    seeds.iter().map(|&s| f(s)).collect()
}

fn execute(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    algorithm: &AlgorithmSpec,
) -> Result<ExperimentResult> {
    let seeds = cfg.run.seeds.clone();
    let mut cfg = cfg.clone();
    cfg.algorithm = algorithm.clone();
    let runs = run_seeds(&seeds, |seed| {
        run(
            &prep.instance,
            prep.model.clone(),
            cfg.run_spec(prep.schedule, prep.init.clone(), seed),
        )
    })?;
    let aggregate = aggregate(&runs);
    let c = prep.instance.constants();
    let round_conditions = match prep.schedule {
        LrSchedule::NonConvexConstant { .. } => {
            let nu_max = prep
                .model
                .declared_nu()
                .map(|nu| nu.into_iter().fold(0.0, f64::max))
                .unwrap_or_else(|| {
                    runs.iter()
                        .map(|r| r.last().tau_max as f64)
                        .fold(0.0, f64::max)
                });
            nonconvex_round_conditions(
                cfg.run.rounds,
                c.alpha.unwrap_or(0.0),
                c.l,
                prep.instance.n(),
                cfg.run.local_steps,
                nu_max,
                c.rho,
                c.delta,
            )
        }
        _ => Vec::new(),
    };
    let summary = Summary {
        algorithm: algorithm.name(),
        seeds: seeds.clone(),
        run: runs[0].metadata,
        round_conditions,
        diverged: seeds
            .iter()
            .zip(&runs)
            .filter_map(|(&s, r)| r.diverged_at.map(|t| (s, t)))
            .collect(),
        truncated: runs.iter().any(Trajectory::is_partial),
        final_avg_gap: runs.iter().map(|r| r.final_avg_gap).collect(),
    };
    Ok(ExperimentResult {
        seeds,
        runs,
        aggregate,
        summary,
    })
}

/// Runs every seed of the configured algorithm.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prep = prepare(cfg)?;
    execute(cfg, &prep, &cfg.algorithm)
}

/// Runs several algorithms on one instance. Availability depends only on
/// the seed, so every algorithm sees the same `A(t)` sequence per seed.
pub fn compare(
    cfg: &ExperimentConfig,
    algorithms: &[AlgorithmSpec],
) -> Result<Vec<ExperimentResult>> {
    let prep = prepare(cfg)?;
    algorithms.iter().map(|a| execute(cfg, &prep, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sigma: f64, availability: &str, seeds: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
[problem]
family = "quadratic"
n = 4
d = 2
mu = 1.0
l = 2.0
sigma = {sigma}

[availability]
{availability}

[algorithm]
kind = "mifa"

[schedule]
kind = "experimental_decay"
eta0 = 0.2

[run]
rounds = 40
local_steps = 2
seeds = {seeds}
"#
        ))
        .unwrap()
    }

    #[test]
    fn one_seed_aggregate_is_the_stream() {
        let r = run_experiment(&cfg(
            0.5,
            "kind = \"bernoulli\"\np_range = [0.3, 1.0]",
            "[7]",
        ))
        .unwrap();
        for (a, row) in r.aggregate.iter().zip(&r.runs[0].rows) {
            assert_eq!(a.f_gap.unwrap().mean, row.f_gap.unwrap());
            assert_eq!(a.f_gap.unwrap().stderr, 0.0);
            assert_eq!(a.oracle_calls.mean, row.oracle_calls as f64);
        }
    }

    #[test]
    fn deterministic_setting_has_zero_spread() {
        let r = run_experiment(&cfg(0.0, "kind = \"full\"", "[1, 2, 3, 4, 5]")).unwrap();
        for run in &r.runs[1..] {
            assert_eq!(run.rows, r.runs[0].rows);
        }
        assert!(r.aggregate.iter().all(|a| a.f_gap.unwrap().stderr == 0.0));
    }

    #[test]
    fn noisy_seeds_spread_inside_envelope() {
        let r = run_experiment(&cfg(0.5, "kind = \"full\"", "[1, 2, 3, 4, 5]")).unwrap();
        for (i, a) in r.aggregate.iter().enumerate().skip(1) {
            let vals: Vec<f64> = r.runs.iter().map(|t| t.rows[i].f_gap.unwrap()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = a.f_gap.unwrap();
            assert!(m.stderr > 0.0);
            assert!(lo <= m.mean && m.mean <= hi);
        }
    }

    #[test]
    fn compare_shares_availability() {
        let c = cfg(0.5, "kind = \"bernoulli\"\np_range = [0.2, 0.9]", "[3, 4]");
        let algs = [
            AlgorithmSpec::Mifa,
            AlgorithmSpec::BiasedFedavg,
            AlgorithmSpec::SamplingFedavg { s: 2 },
        ];
        let res = compare(&c, &algs).unwrap();
        for r in &res[1..] {
            for (a, b) in r.runs.iter().zip(&res[0].runs) {
                assert_eq!(a.trace, b.trace);
            }
        }
    }
}
