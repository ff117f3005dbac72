use rayon::prelude::*;

use crate::cma_es::run_cma;
use crate::det_ngd::{cond_recurrence_path, run_deterministic, DetSchedule};
use crate::error::{Error, Result};
use crate::model::cond_product;
use crate::rng::RngStream;
use crate::stoch_ngd::{run_stochastic, StochSchedule};
use crate::trace::IterationTrace;

use super::config::{Algorithm, ExperimentConfig};

/// Outcome of one seeded trial.
#[derive(Debug)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: Result<Vec<IterationTrace>>,
}

impl TrialRecord {
    pub fn trace(&self) -> Option<&[IterationTrace]> {
        self.outcome.as_deref().ok()
    }
}

/// Per-iteration statistics over the trials still running at that iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub mean_cond: f64,
    pub std_cond: f64,
    pub mean_j: f64,
    pub std_j: f64,
    pub survivors: usize,
    pub theory_cond: Option<f64>,
}

#[derive(Debug)]
pub struct BatchResult {
    /// Every trial in index order, failed ones included.
    pub trials: Vec<TrialRecord>,
    pub rows: Vec<AggregateRow>,
}

impl BatchResult {
    pub fn failed(&self) -> usize {
        self.trials.iter().filter(|t| t.outcome.is_err()).count()
    }

    pub fn completed(&self) -> impl Iterator<Item = &[IterationTrace]> {
        self.trials.iter().filter_map(TrialRecord::trace)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

/// Runs trial `index` with seed `base_seed + index`.
pub fn run_trial(cfg: &ExperimentConfig, index: usize) -> TrialRecord {
    let seed = cfg.base_seed.wrapping_add(index as u64);
    TrialRecord {
        index,
        seed,
        outcome: run_trial_inner(cfg, seed),
    }
}

fn run_trial_inner(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<IterationTrace>> {
    let init = cfg.initial_params()?;
    let a = cfg.a();
    match cfg.algorithm {
        Algorithm::DetNgd => {
            let sched = DetSchedule::new(cfg.alpha_m, cfg.alpha_c)?;
            run_deterministic(a, init, &sched, &cfg.stop)
        }
        Algorithm::StochNgd => {
            let sched = StochSchedule::new(cfg.c_c)?.with_vhat_exponent(cfg.vhat_exponent);
            let n = cfg.sample_size()?;
            run_stochastic(&cfg.objective, init, n, &sched, RngStream::new(seed), &cfg.stop, a)
        }
        Algorithm::CmaEs => {
            let n = cfg.sample_size()?;
            run_cma(&cfg.objective, init, n, RngStream::new(seed), &cfg.stop, a)
        }
    }
}

pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchResult> {
    run_batch_with(cfg, Execution::Parallel)
}

/// Runs all trials and aggregates the survivors. Failed trials are kept in
/// the result and left out of every statistic; if none completes the batch fails.
pub fn run_batch_with(cfg: &ExperimentConfig, execution: Execution) -> Result<BatchResult> {
    cfg.validate()?;
    let trials: Vec<TrialRecord> = match execution {
        Execution::Parallel => (0..cfg.trials)
            .into_par_iter()
            .map(|k| run_trial(cfg, k))
            .collect(),
        Execution::Serial => (0..cfg.trials).map(|k| run_trial(cfg, k)).collect(),
    };
    let traces: Vec<&[IterationTrace]> = trials.iter().filter_map(TrialRecord::trace).collect();
    if traces.is_empty() {
        let first = trials
            .iter()
            .find_map(|t| t.outcome.as_ref().err())
            .map_or_else(String::new, ToString::to_string);
        return Err(Error::AllTrialsFailed {
            trials: cfg.trials,
            first,
        });
    }
    let mut rows = aggregate(&traces);
    if cfg.emit_theory {
        if let Some(alpha) = theory_alpha(cfg) {
            let cond0 = cond_product(&cfg.c0, cfg.a())?;
            let path = cond_recurrence_path(cond0, alpha, rows.len().saturating_sub(1))?;
            for (row, c) in rows.iter_mut().zip(path) {
                row.theory_cond = Some(c);
            }
        }
    }
    Ok(BatchResult { trials, rows })
}

/// Effective `α` of the condition-number recurrence: `alpha_C` for the
/// deterministic algorithm and `c_C/2` for the stochastic one. Rank-μ CMA-ES
/// has no such prediction.
pub fn theory_alpha(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.algorithm {
        Algorithm::DetNgd => Some(cfg.alpha_c),
        Algorithm::StochNgd => Some(cfg.c_c / 2.0),
        Algorithm::CmaEs => None,
    }
}

/// Mean and population standard deviation of cond and J at each iteration,
/// over the traces that are long enough, reduced in trace order.
pub fn aggregate(traces: &[&[IterationTrace]]) -> Vec<AggregateRow> {
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let alive: Vec<&IterationTrace> =
                traces.iter().filter_map(|tr| tr.get(t)).collect();
            let (mean_cond, std_cond) = mean_std(alive.iter().map(|r| r.cond));
            let (mean_j, std_j) = mean_std(alive.iter().map(|r| r.expected_j));
            AggregateRow {
                iteration: t,
                mean_cond,
                std_cond,
                mean_j,
                std_j,
                survivors: alive.len(),
                theory_cond: None,
            }
        })
        .collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
