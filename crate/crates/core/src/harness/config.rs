//! TOML experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::availability::{
    assumption4_b, bernoulli_t0, parse_trace, AvailabilityModel, TauTracker,
};
use crate::error::{Error, Result};
use crate::problems::{
    make_logistic_instance, make_nonconvex_instance, make_quadratic_instance, ProblemInstance,
};
use crate::schedules::LrSchedule;
use crate::simulation::{AlgorithmSpec, RunSpec};
use crate::vector::ParamVector;

use super::label_correlated_probabilities;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub availability: AvailabilitySpec,
    pub algorithm: AlgorithmSpec,
    pub schedule: ScheduleSpec,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<TauStudySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        n: usize,
        d: usize,
        mu: f64,
        l: f64,
        sigma: f64,
        #[serde(default = "one")]
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        n: usize,
        d: usize,
        samples_per_device: usize,
        lambda: f64,
        #[serde(default)]
        label_skew: f64,
        #[serde(default)]
        seed: u64,
    },
    NonconvexTrig {
        n: usize,
        d: usize,
        l_quad: f64,
        a: f64,
        sigma: f64,
        #[serde(default = "one")]
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AvailabilitySpec {
    Full,
    /// Either explicit `p`, or `p_range = [lo, hi]` spread linearly over
    /// devices.
    Bernoulli {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_range: Option<[f64; 2]>,
    },
    /// `p_i = p_min·min(j,k)/9 + (1 − p_min)` from each device's label pair.
    LabelCorrelated {
        p_min: f64,
        labels: Vec<[u8; 2]>,
    },
    Periodic {
        period: Vec<usize>,
        phase: Vec<usize>,
    },
    Adversarial {
        t0: f64,
        b: f64,
    },
    Trace {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `t0` defaults to what the availability model certifies; Bernoulli
    /// models use the high-probability bound at level `delta`.
    StronglyConvex {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t0: Option<f64>,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    /// `nu_bar` defaults to the model's declared per-device caps.
    NonconvexConstant {
        #[serde(default = "one")]
        c0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu_bar: Option<f64>,
    },
    ExperimentalDecay {
        eta0: f64,
    },
}

fn default_delta() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// `T`
    pub rounds: usize,
    /// `K`, local SGD steps per round
    pub local_steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// starting point; zero when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauStudySpec {
    pub traces: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_max_k")]
    pub max_k: u64,
}

fn default_max_k() -> u64 {
    30
}

/// Re-labels a constructor error with the config key it came from.
fn at(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            key: format!("{section}.{name}"),
            reason,
        },
        Error::Config { .. } => e,
        other => Error::Config {
            key: section.to_string(),
            reason: other.to_string(),
        },
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: toml_key(&e, text),
            reason: e.message().to_string(),
        })?;
        cfg.check_shape()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let AvailabilitySpec::Trace { path: p } = &mut cfg.availability {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: String::new(),
            reason: e.to_string(),
        })
    }

    pub fn n(&self) -> usize {
        match self.problem {
            ProblemSpec::Quadratic { n, .. }
            | ProblemSpec::Logistic { n, .. }
            | ProblemSpec::NonconvexTrig { n, .. } => n,
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config {
                key: "run.seeds".into(),
                reason: "need at least one seed".into(),
            });
        }
        if self.run.rounds < 2 {
            return Err(Error::Config {
                key: "run.rounds".into(),
                reason: "need at least 2 rounds".into(),
            });
        }
        if self.run.local_steps == 0 {
            return Err(Error::Config {
                key: "run.local_steps".into(),
                reason: "need at least one local step".into(),
            });
        }
        Ok(())
    }

    pub fn build_instance(&self) -> Result<ProblemInstance> {
        let r = match self.problem {
            ProblemSpec::Quadratic {
                n,
                d,
                mu,
                l,
                sigma,
                heterogeneity,
                seed,
            } => make_quadratic_instance(n, d, mu, l, sigma, heterogeneity, seed),
            ProblemSpec::Logistic {
                n,
                d,
                samples_per_device,
                lambda,
                label_skew,
                seed,
            } => make_logistic_instance(n, d, samples_per_device, lambda, label_skew, seed),
            ProblemSpec::NonconvexTrig {
                n,
                d,
                l_quad,
                a,
                sigma,
                heterogeneity,
                seed,
            } => make_nonconvex_instance(n, d, l_quad, a, sigma, heterogeneity, seed),
        };
        r.map_err(|e| at("problem", e))
    }

    pub fn build_availability(&self) -> Result<AvailabilityModel> {
        let n = self.n();
        let r = match &self.availability {
            AvailabilitySpec::Full => Ok(AvailabilityModel::Full { n }),
            AvailabilitySpec::Bernoulli { p, p_range } => match (p, p_range) {
                (Some(p), None) => {
                    if p.len() != n {
                        return Err(Error::Config {
                            key: "availability.p".into(),
                            reason: format!("expected {n} probabilities, got {}", p.len()),
                        });
                    }
                    AvailabilityModel::bernoulli(p.clone())
                }
                (None, Some([lo, hi])) => AvailabilityModel::bernoulli(linspace(*lo, *hi, n)),
                _ => {
                    return Err(Error::Config {
                        key: "availability.p".into(),
                        reason: "give exactly one of `p` and `p_range`".into(),
                    })
                }
            },
            AvailabilitySpec::LabelCorrelated { p_min, labels } => {
                if labels.len() != n {
                    return Err(Error::Config {
                        key: "availability.labels".into(),
                        reason: format!("expected {n} label pairs, got {}", labels.len()),
                    });
                }
                label_correlated_probabilities(n, labels, *p_min)
                    .and_then(AvailabilityModel::bernoulli)
            }
            AvailabilitySpec::Periodic { period, phase } => {
                if period.len() != n {
                    return Err(Error::Config {
                        key: "availability.period".into(),
                        reason: format!("expected {n} periods, got {}", period.len()),
                    });
                }
                AvailabilityModel::periodic(period.clone(), phase.clone())
            }
            AvailabilitySpec::Adversarial { t0, b } => AvailabilityModel::adversarial(n, *t0, *b),
            AvailabilitySpec::Trace { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                    key: "availability.path".into(),
                    reason: format!("{}: {e}", path.display()),
                })?;
                let (tn, trace) = parse_trace(&text).map_err(|e| Error::Config {
                    key: "availability.path".into(),
                    reason: e.to_string(),
                })?;
                if tn != n {
                    return Err(Error::Config {
                        key: "availability.path".into(),
                        reason: format!("trace covers {tn} devices, problem has {n}"),
                    });
                }
                if trace.len() + 1 < self.run.rounds {
                    return Err(Error::Config {
                        key: "availability.path".into(),
                        reason: format!(
                            "trace has {} rounds, a run of T = {} needs {}",
                            trace.len(),
                            self.run.rounds,
                            self.run.rounds - 1
                        ),
                    });
                }
                AvailabilityModel::trace(n, trace)
            }
        };
        r.map_err(|e| at("availability", e))
    }

    pub fn build_schedule(
        &self,
        instance: &ProblemInstance,
        model: &AvailabilityModel,
    ) -> Result<LrSchedule> {
        let c = instance.constants();
        let k = self.run.local_steps;
        let r = match self.schedule {
            ScheduleSpec::StronglyConvex { t0, delta } => {
                if c.mu <= 0.0 {
                    return Err(Error::Config {
                        key: "schedule.kind".into(),
                        reason: "the strongly convex schedule needs mu > 0".into(),
                    });
                }
                let t0 = match t0 {
                    Some(v) => v,
                    None => derived_t0(model, c.l, c.mu, delta).map_err(|e| at("schedule", e))?,
                };
                LrSchedule::strongly_convex(c.mu, c.l, k, t0)
            }
            ScheduleSpec::NonconvexConstant { c0, nu_bar } => {
                let nu_bar = match nu_bar {
                    Some(v) => v,
                    None => {
                        let nu = model.declared_nu().ok_or_else(|| Error::Config {
                            key: "schedule.nu_bar".into(),
                            reason:
                                "this availability model declares no per-device cap; set nu_bar"
                                    .into(),
                        })?;
                        nu.iter().sum::<f64>() / nu.len() as f64
                    }
                };
                LrSchedule::nonconvex_constant(instance.n(), k, self.run.rounds, c.l, nu_bar, c0)
            }
            ScheduleSpec::ExperimentalDecay { eta0 } => LrSchedule::experimental_decay(eta0),
        };
        r.map_err(|e| at("schedule", e))
    }

    pub fn init(&self, dim: usize) -> Result<ParamVector> {
        match &self.run.init {
            None => Ok(ParamVector::zeros(dim)),
            Some(v) if v.len() == dim => ParamVector::new(v.clone()).map_err(|e| at("run.init", e)),
            Some(v) => Err(Error::Config {
                key: "run.init".into(),
                reason: format!("expected {dim} coordinates, got {}", v.len()),
            }),
        }
    }

    pub fn run_spec(&self, schedule: LrSchedule, init: ParamVector, seed: u64) -> RunSpec {
        RunSpec {
            algorithm: self.algorithm.clone(),
            schedule,
            rounds: self.run.rounds,
            local_steps: self.run.local_steps,
            seed,
            init,
        }
    }
}

/// `lo, …, hi` in `n` equal steps (`lo` alone when `n = 1`).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// The delay offset `t0` an availability model certifies for
/// `τ(t,i) ≤ t0 + t/b` with `b = 40(L/μ)^1.5`.
pub fn derived_t0(model: &AvailabilityModel, l: f64, mu: f64, delta: f64) -> Result<f64> {
    match model {
        AvailabilityModel::Full { .. } => Ok(0.0),
        AvailabilityModel::IidBernoulli { p } => bernoulli_t0(p, l, mu, delta),
        AvailabilityModel::Periodic { period, .. } => {
            Ok(period.iter().copied().max().unwrap_or(1) as f64 - 1.0)
        }
        AvailabilityModel::AdversarialLinear { t0, .. } => Ok(*t0),
        AvailabilityModel::TraceReplay { n, trace } => {
            let b = assumption4_b(l, mu);
            let mut tracker = TauTracker::new(*n);
            let mut t0: f64 = 0.0;
            for a in trace {
                tracker.update(a)?;
                let t = a.round as f64;
                for &tau in tracker.tau() {
                    t0 = t0.max(tau as f64 - t / b);
                }
            }
            Ok(t0)
        }
    }
}

/// Best-effort dotted key for a TOML error: the line defining the field
/// its message names, or else the line the error points at.
fn toml_key(e: &toml::de::Error, text: &str) -> String {
    let named = || {
        let msg = e.message();
        let name = msg.split('`').nth(1)?;
        let mut pos = 0;
        for line in text.split_inclusive('\n') {
            let key = line.split('=').next().unwrap_or("").trim();
            if key == name && line.contains('=') {
                return Some(pos);
            }
            pos += line.len();
        }
        None
    };
    let offset = named().or_else(|| e.span().map(|s| s.start));
    let Some(offset) = offset else {
        return String::from("<document>");
    };
    let before = &text[..offset.min(text.len())];
    let section = before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line
        .split('=')
        .next()
        .map(str::trim)
        .filter(|k| !k.is_empty() && !k.starts_with('[') && line.contains('='));
    match (section, key) {
        (Some(s), Some(k)) => format!("{s}.{k}"),
        (Some(s), None) => s,
        (None, Some(k)) => k.to_string(),
        (None, None) => String::from("<document>"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
family = "quadratic"
n = 4
d = 3
mu = 1.0
l = 4.0
sigma = 0.5

[availability]
kind = "bernoulli"
p_range = [0.4, 1.0]

[algorithm]
kind = "mifa"

[schedule]
kind = "experimental_decay"
eta0 = 0.1

[run]
rounds = 50
local_steps = 2
seeds = [1, 2]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.n(), 4);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let model = cfg.build_availability().unwrap();
        assert_eq!(model.probabilities().unwrap(), vec![0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BASE.replace("sigma = 0.5", "sigma = 0.5\nsigmaa = 1.0");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config { key, reason }) => {
                assert_eq!(key, "problem.sigmaa", "{reason}");
                assert!(reason.contains("sigmaa"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constraint_violation_names_key() {
        let text = BASE.replace("mu = 1.0", "mu = 5.0");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        match cfg.build_instance() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "problem.mu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probability_count_checked() {
        let text = BASE.replace("p_range = [0.4, 1.0]", "p = [0.5, 0.5]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(matches!(
            cfg.build_availability(),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn derived_t0_for_simple_models() {
        assert_eq!(
            derived_t0(&AvailabilityModel::Full { n: 3 }, 2.0, 1.0, 0.1).unwrap(),
            0.0
        );
        let m = AvailabilityModel::periodic(vec![1, 4, 2], vec![0, 1, 0]).unwrap();
        assert_eq!(derived_t0(&m, 2.0, 1.0, 0.1).unwrap(), 3.0);
    }
}
