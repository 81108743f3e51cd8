//! Many seeded trials, in parallel when the `parallel` feature is on.

use std::io::Write;

use serde::Serialize;

use super::scenario::Scenario;
use super::trial::{run_trial, TrialOutcome};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Rayon worker pool; falls back to sequential without the `parallel`
    /// feature.
    #[default]
    Parallel,
    Sequential,
}

/// Runs trials `0..n`. Results are in trial order whatever the execution.
pub fn run_batch(scenario: &Scenario, n: usize, execution: Execution, log: bool) -> Result<Vec<TrialOutcome>, SimError> {
    scenario.validate()?;
    let run = |i: usize| run_trial(scenario, i as u64, log);
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(run).collect()
        }
        _ => (0..n).map(run).collect(),
    }
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    trial: u64,
    seed: u64,
    entry_translation_err_mm: f64,
    exit_translation_err_mm: f64,
    angular_deviation_deg: f64,
    max_spring_offset_m: f64,
    terminated_early: bool,
    duration_s: f64,
    failure: String,
}

/// One CSV row per trial.
pub fn write_metrics_csv<W: Write>(scenario: &Scenario, outcomes: &[TrialOutcome], w: W) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(w);
    for o in outcomes {
        csv.serialize(MetricsRow {
            trial: o.index,
            seed: scenario.seed,
            entry_translation_err_mm: o.metrics.entry_translation_err,
            exit_translation_err_mm: o.metrics.exit_translation_err,
            angular_deviation_deg: o.metrics.angular_deviation,
            max_spring_offset_m: o.metrics.max_spring_offset,
            terminated_early: o.metrics.terminated_early,
            duration_s: o.duration,
            failure: o.failure.clone().unwrap_or_default(),
        })?;
    }
    csv.flush()?;
    Ok(())
}

/// Means over the trials that did not fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub failures: usize,
    pub terminated: usize,
    pub mean_entry_mm: f64,
    pub mean_exit_mm: f64,
    pub mean_angle_deg: f64,
}

pub fn summarize(outcomes: &[TrialOutcome]) -> BatchSummary {
    let ok: Vec<_> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let mean = |f: fn(&TrialOutcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>() / ok.len() as f64;
    BatchSummary {
        trials: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        terminated: outcomes.iter().filter(|o| o.metrics.terminated_early).count(),
        mean_entry_mm: mean(|o| o.metrics.entry_translation_err),
        mean_exit_mm: mean(|o| o.metrics.exit_translation_err),
        mean_angle_deg: mean(|o| o.metrics.angular_deviation),
    }
}
