//! Distributed grid search: a coordinator hands out candidate model
//! configurations to pull-based workers and collects their accuracies.

mod coordinator;
mod protocol;
mod scaling;
mod worker;

pub use coordinator::{Coordinator, ServeOptions, Summary};
pub use protocol::{read_message, write_message, Message, MAX_FRAME};
pub use scaling::{scaling_experiment, ScalingOutcome};
pub use worker::{run_job, worker_loop, Backoff, WorkerBackend, WorkerOptions, WorkerStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate: hidden-layer widths plus the data and training settings
/// shared by every candidate of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: usize,
    pub widths: Vec<usize>,
    pub train_size: usize,
    pub eval_size: usize,
    pub seed: u64,
    pub input_dim: usize,
    pub classes: usize,
    pub batch: usize,
    pub lr: f32,
    /// When set, the worker sleeps this long instead of training and reports
    /// accuracy 0.
    #[serde(default)]
    pub stub_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: usize,
    pub accuracy: f64,
    pub worker_id: String,
    pub train_seconds: f64,
}

/// Everything of a [`JobSpec`] except its widths and id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobTemplate {
    pub train_size: usize,
    pub eval_size: usize,
    pub seed: u64,
    pub input_dim: usize,
    pub classes: usize,
    pub batch: usize,
    pub lr: f32,
    pub stub_ms: Option<u64>,
}

impl Default for JobTemplate {
    fn default() -> Self {
        JobTemplate {
            train_size: 1000,
            eval_size: 200,
            seed: 0,
            input_dim: 8,
            classes: 4,
            batch: 20,
            lr: 0.1,
            stub_ms: None,
        }
    }
}

/// The default desk-scale grid: 3 layers, each 4, 8 or 16 wide.
pub fn desk_grid() -> Vec<Vec<usize>> {
    vec![vec![4, 8, 16]; 3]
}

/// Cartesian product of per-layer width choices, last layer varying fastest.
/// Ids run from 0 in that order.
pub fn enumerate_grid(choices: &[Vec<usize>], template: &JobTemplate) -> Result<Vec<JobSpec>> {
    if choices.is_empty() || choices.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidConfig(
            "every layer needs at least one width choice".into(),
        ));
    }
    if choices.iter().flatten().any(|&w| w == 0) {
        return Err(Error::InvalidConfig("layer widths must be positive".into()));
    }
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for layer in choices {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                layer.iter().map(move |&w| {
                    let mut v = prefix.clone();
                    v.push(w);
                    v
                })
            })
            .collect();
    }
    Ok(combos
        .into_iter()
        .enumerate()
        .map(|(id, widths)| JobSpec {
            id,
            widths,
            train_size: template.train_size,
            eval_size: template.eval_size,
            seed: template.seed,
            input_dim: template.input_dim,
            classes: template.classes,
            batch: template.batch,
            lr: template.lr,
            stub_ms: template.stub_ms,
        })
        .collect())
}

/// Highest accuracy, ties going to the lowest job id.
pub fn best_candidate(results: &[JobResult]) -> Option<&JobResult> {
    results.iter().fold(None, |best: Option<&JobResult>, r| match best {
        Some(b) if b.accuracy > r.accuracy || (b.accuracy == r.accuracy && b.job_id < r.job_id) => Some(b),
        _ => Some(r),
    })
}
