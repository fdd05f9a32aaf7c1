//! Browser bindings: three small experiments a static page can drive.
//! Every entry point takes and returns JSON so the page needs no glue
//! beyond `JSON.parse`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use mifa_sim::harness::config::linspace;
use mifa_sim::harness::{
    compare, tau_study, waiting_time_study, AvailabilitySpec, ExperimentConfig, ProblemSpec,
    RunSection, ScheduleSpec,
};
use mifa_sim::simulation::AlgorithmSpec;

/// Most points a curve sends to the page.
const MAX_POINTS: usize = 400;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRequest {
    pub n: usize,
    pub d: usize,
    /// participation probabilities spread over `[p_min, 1]`
    pub p_min: f64,
    pub rounds: usize,
    pub local_steps: usize,
    pub eta0: f64,
    pub sigma: f64,
    pub heterogeneity: f64,
    pub seed: u64,
    /// names as on the command line, e.g. `sampling_fedavg:5`
    pub algorithms: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub algorithm: String,
    pub t: Vec<usize>,
    pub t_prime: Vec<usize>,
    pub gap: Vec<f64>,
}

fn thin(len: usize) -> Vec<usize> {
    if len <= MAX_POINTS {
        return (0..len).collect();
    }
    // log-spaced indices, so early rounds stay visible on a log axis
    let mut idx: Vec<usize> = (0..MAX_POINTS)
        .map(|j| ((len as f64).powf(j as f64 / (MAX_POINTS - 1) as f64) - 1.0).round() as usize)
        .map(|i| i.min(len - 1))
        .collect();
    idx.dedup();
    idx
}

/// Suboptimality curves of several algorithms on one quadratic instance,
/// with availability shared across algorithms.
pub fn compare_curves(req: &CompareRequest) -> Result<Vec<Curve>, String> {
    let algorithms: Vec<AlgorithmSpec> = req
        .algorithms
        .iter()
        .map(|a| a.parse().map_err(|e: mifa_sim::Error| e.to_string()))
        .collect::<Result<_, _>>()?;
    if algorithms.is_empty() {
        return Err("pick at least one algorithm".into());
    }
    let cfg = ExperimentConfig {
        problem: ProblemSpec::Quadratic {
            n: req.n,
            d: req.d,
            mu: 1.0,
            l: 4.0,
            sigma: req.sigma,
            heterogeneity: req.heterogeneity,
            seed: req.seed,
        },
        availability: AvailabilitySpec::Bernoulli {
            p: None,
            p_range: Some([req.p_min, 1.0]),
        },
        algorithm: algorithms[0].clone(),
        schedule: ScheduleSpec::ExperimentalDecay { eta0: req.eta0 },
        run: RunSection {
            rounds: req.rounds,
            local_steps: req.local_steps,
            seeds: vec![req.seed],
            out: None,
            init: None,
        },
        study: None,
    };
    let results = compare(&cfg, &algorithms).map_err(|e| e.to_string())?;
    Ok(req
        .algorithms
        .iter()
        .zip(results)
        .map(|(name, r)| {
            let rows = &r.runs[0].rows;
            let idx = thin(rows.len());
            Curve {
                algorithm: name.clone(),
                t: idx.iter().map(|&i| rows[i].t).collect(),
                t_prime: idx.iter().map(|&i| rows[i].t_prime).collect(),
                gap: idx
                    .iter()
                    .map(|&i| rows[i].f_gap.unwrap_or(f64::NAN))
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub p: f64,
    pub k: Vec<u64>,
    pub empirical: Vec<f64>,
    pub expected: Vec<f64>,
    pub tau_max_bound: f64,
    pub within_bound: f64,
    pub mean_ratio: f64,
}

/// Tail of the inactive-round count of the least available device among
/// `n` devices with probabilities spread over `[p_min, 1]`.
pub fn tau_tail_report(
    n: usize,
    p_min: f64,
    rounds: usize,
    traces: usize,
    seed: u64,
) -> Result<TailReport, String> {
    let p = linspace(p_min, 1.0, n);
    let study = tau_study(&p, rounds, traces, 0.01, 40, seed).map_err(|e| e.to_string())?;
    let tail: Vec<_> = study.tail.iter().filter(|pt| pt.device == 0).collect();
    Ok(TailReport {
        p: p[0],
        k: tail.iter().map(|pt| pt.k).collect(),
        empirical: tail.iter().map(|pt| pt.empirical).collect(),
        expected: tail.iter().map(|pt| pt.expected).collect(),
        tau_max_bound: study.tau_max_bound,
        within_bound: study.within_bound,
        mean_ratio: study.mean_ratio,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WaitReport {
    pub s: Vec<usize>,
    pub mean_wait: Vec<f64>,
    pub stderr: Vec<f64>,
    pub lower_bound: Vec<f64>,
}

/// Mean wall-rounds per update of device-sampling FedAvg for every sample
/// size `S = 1..=n`.
pub fn wait_report(n: usize, p_min: f64, trials: usize, seed: u64) -> Result<WaitReport, String> {
    let p = linspace(p_min, 1.0, n);
    let mut r = WaitReport {
        s: Vec::new(),
        mean_wait: Vec::new(),
        stderr: Vec::new(),
        lower_bound: Vec::new(),
    };
    for s in 1..=n {
        let w = waiting_time_study(n, s, &p, trials, seed).map_err(|e| e.to_string())?;
        r.s.push(s);
        r.mean_wait.push(w.mean_wait);
        r.stderr.push(w.stderr);
        r.lower_bound.push(w.lower_bound);
    }
    Ok(r)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = compareAlgorithms)]
pub fn compare_algorithms(request: &str) -> Result<String, JsError> {
    let req: CompareRequest =
        serde_json::from_str(request).map_err(|e| JsError::new(&e.to_string()))?;
    to_json(&compare_curves(&req).map_err(|e| JsError::new(&e))?)
}

#[wasm_bindgen(js_name = tauTail)]
pub fn tau_tail(
    n: usize,
    p_min: f64,
    rounds: usize,
    traces: usize,
    seed: u64,
) -> Result<String, JsError> {
    to_json(&tau_tail_report(n, p_min, rounds, traces, seed).map_err(|e| JsError::new(&e))?)
}

#[wasm_bindgen(js_name = waitTimes)]
pub fn wait_times(n: usize, p_min: f64, trials: usize, seed: u64) -> Result<String, JsError> {
    to_json(&wait_report(n, p_min, trials, seed).map_err(|e| JsError::new(&e))?)
}
