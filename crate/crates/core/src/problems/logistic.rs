use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{require_finite, Constants, DeviceObjective, Family, ProblemInstance};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::vector::dot;

/// One labelled example; the label is ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSample {
    pub x: Vec<f64>,
    pub y: f64,
}

const ORACLE_TOL: f64 = 1e-10;
const ORACLE_MAX_ITERS: usize = 1_000_000;

/// Binary ℓ2-regularized logistic regression split across `n` devices.
///
/// Features are standard normal. Labels come from a random ground-truth
/// separator; with probability `label_skew` a sample's label is replaced by
/// the device's own class (`+1` for odd devices, `−1` for even ones), which
/// makes the split non-i.i.d.
pub fn make_logistic_instance(
    n: usize,
    d: usize,
    samples_per_device: usize,
    lambda: f64,
    label_skew: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one device"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be at least 1"));
    }
    if samples_per_device == 0 {
        return Err(Error::invalid(
            "samples_per_device",
            "need at least one sample",
        ));
    }
    require_finite("label_skew", label_skew)?;
    if !(0.0..=1.0).contains(&label_skew) {
        return Err(Error::invalid("label_skew", "must lie in [0, 1]"));
    }
    let mut rng = substream(seed, Purpose::Problem, 0);
    let truth: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let devices = (0..n)
        .map(|i| {
            let class = if i % 2 == 1 { 1.0 } else { -1.0 };
            (0..samples_per_device)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let y = if rng.random::<f64>() < label_skew {
                        class
                    } else if dot(&truth, &x) >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    };
                    LogisticSample { x, y }
                })
                .collect()
        })
        .collect();
    make_logistic_from_samples(devices, lambda)
}

/// Logistic instance from explicit per-device samples.
///
/// Constants: `μ = λ`, `L = λ + max_i λ_max(X_iᵀX_i)/(4 m_i)`, `σ² = max_i
/// mean ‖x‖²` (bounds the single-sample gradient variance), `δ = 2 max ‖x‖`,
/// `ρ = max ‖x‖³ / (6√3)`. The optimum comes from the gradient-descent
/// oracle; it is left uncertified if the oracle hits its iteration cap.
pub fn make_logistic_from_samples(
    devices: Vec<Vec<LogisticSample>>,
    lambda: f64,
) -> Result<ProblemInstance> {
    require_finite("lambda", lambda)?;
    if lambda <= 0.0 {
        return Err(Error::invalid(
            "lambda",
            "must be positive for strong convexity",
        ));
    }
    if devices.is_empty() {
        return Err(Error::invalid("n", "need at least one device"));
    }
    if devices.iter().any(|s| s.is_empty()) {
        return Err(Error::invalid(
            "samples_per_device",
            "need at least one sample",
        ));
    }
    let d = devices[0][0].x.len();
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be at least 1"));
    }

    let mut l = lambda;
    let mut sigma_sq: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    let mut objectives = Vec::with_capacity(devices.len());
    for samples in devices {
        let m = samples.len();
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut mean_sq = 0.0;
        for s in &samples {
            if s.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if s.y != 1.0 && s.y != -1.0 {
                return Err(Error::invalid("labels", "must be +1 or -1"));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("features", "must be finite"));
            }
            for r in 0..d {
                for c in 0..d {
                    gram[(r, c)] += s.x[r] * s.x[c];
                }
            }
            let nsq = dot(&s.x, &s.x);
            mean_sq += nsq / m as f64;
            max_norm = max_norm.max(nsq.sqrt());
        }
        let top = gram.symmetric_eigenvalues().max().max(0.0);
        l = l.max(lambda + top / (4.0 * m as f64));
        sigma_sq = sigma_sq.max(mean_sq);
        let (features, labels) = samples.into_iter().map(|s| (s.x, s.y)).unzip();
        objectives.push(DeviceObjective::Logistic {
            features,
            labels,
            lambda,
        });
    }
    let constants = Constants {
        l,
        mu: lambda,
        sigma: sigma_sq.sqrt(),
        delta: 2.0 * max_norm,
        rho: max_norm.powi(3) / (6.0 * 3f64.sqrt()),
        alpha: None,
        beta_i: None,
    };
    let mut inst = ProblemInstance::assemble(Family::Logistic, objectives, d, constants);
    if let Some(w) = inst.gradient_descent_oracle(&vec![0.0; d], ORACLE_TOL, ORACLE_MAX_ITERS) {
        inst.set_optimum(w);
    }
    Ok(inst)
}
