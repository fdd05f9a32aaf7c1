//! Configuration, experiment orchestration, CSV output and the small
//! statistical studies behind the command line.

pub mod config;
pub mod csv;
pub mod experiment;
pub mod studies;

pub use config::{
    AvailabilitySpec, ExperimentConfig, ProblemSpec, RunSection, ScheduleSpec, TauStudySpec,
};
pub use experiment::{compare, run_experiment, AggregateRow, ExperimentResult, Summary};
pub use studies::{fit_rate_slope, tau_study, waiting_time_study, TailPoint, TauStudy, WaitStudy};

use crate::error::{Error, Result};

/// `p_i = p_min·min(j,k)/9 + (1 − p_min)` for the label pair `(j,k)` of each
/// device. A zero probability (only possible at `p_min = 1`) is rejected.
pub fn label_correlated_probabilities(
    n: usize,
    labels: &[[u8; 2]],
    p_min: f64,
) -> Result<Vec<f64>> {
    if labels.len() != n {
        return Err(Error::invalid(
            "labels",
            format!("expected {n} label pairs, got {}", labels.len()),
        ));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::invalid("p_min", "must lie in (0, 1]"));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &[j, k])| {
            if j > 9 || k > 9 {
                return Err(Error::invalid(
                    "labels",
                    format!("device {i}: labels must be in 0..=9"),
                ));
            }
            let p = p_min * f64::from(j.min(k)) / 9.0 + (1.0 - p_min);
            if p <= 0.0 {
                return Err(Error::invalid(
                    "p_min",
                    format!("device {i} would never participate"),
                ));
            }
            Ok(p)
        })
        .collect()
}
