//! Synthetic multi-task regression problems and task-level non-i.i.d.
//! client partitioning.
//!
//! Each task is a noisy linear map from a shifted gaussian input
//! distribution to an action target. Clients receive `s` of the `M` tasks,
//! which reproduces the task-level heterogeneity regime: `s = M` is the
//! i.i.d. limit, `s = 1` with `N = M` gives pairwise disjoint clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Default observation-noise level for generated task sets.
pub const DEFAULT_NOISE_STD: f64 = 0.1;

/// Scale of the per-task input-mean shifts. Tasks are separated in input
/// space by roughly this many noise standard deviations per coordinate.
pub const TASK_MEAN_SPREAD: f64 = 2.0;

/// One synthetic task: a linear generator with its own input shift.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Row-major `act_dim x in_dim` matrix mapping inputs to targets.
    pub generator_weights: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub noise_std: f64,
}

/// The full set of `M` tasks sharing common dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpecSet {
    pub specs: Vec<TaskSpec>,
    pub in_dim: usize,
    pub act_dim: usize,
}

impl TaskSpecSet {
    pub fn num_tasks(&self) -> usize {
        self.specs.len()
    }
}

/// Task-id sets per client, each of size `tasks_per_client`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    /// Sorted task ids for each client.
    pub assignments: Vec<Vec<usize>>,
    pub tasks_per_client: usize,
}

/// One training sample: input features, action target, true task id, and
/// the predicted task id filled in by the labeler (`None` until annotated).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub t: usize,
    pub t_hat: Option<usize>,
}

/// Generate `m` task specs with seeded random generators and input shifts.
///
/// Generator weights are N(0, 1/in_dim) so targets have roughly unit scale;
/// input means are standard normal per coordinate. Deterministic in `seed`.
pub fn generate_task_set(m: usize, in_dim: usize, act_dim: usize, seed: u64) -> Result<TaskSpecSet> {
    generate_task_set_with_noise(m, in_dim, act_dim, DEFAULT_NOISE_STD, seed)
}

/// Same as [`generate_task_set`] with an explicit noise level.
pub fn generate_task_set_with_noise(
    m: usize,
    in_dim: usize,
    act_dim: usize,
    noise_std: f64,
    seed: u64,
) -> Result<TaskSpecSet> {
    if m == 0 {
        return Err(Error::InvalidConfig("task count M must be >= 1".into()));
    }
    if in_dim == 0 || act_dim == 0 {
        return Err(Error::InvalidConfig(
            "input and action dimensions must be >= 1".into(),
        ));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise_std must be >= 0, got {noise_std}"
        )));
    }
    let mut rng = rng::stream(seed);
    let weight_std = 1.0 / (in_dim as f64).sqrt();
    let specs = (0..m)
        .map(|task_id| {
            let generator_weights = (0..act_dim * in_dim)
                .map(|_| weight_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let input_mean = (0..in_dim)
                .map(|_| TASK_MEAN_SPREAD * rng.sample::<f64, _>(StandardNormal))
                .collect();
            TaskSpec {
                task_id,
                generator_weights,
                input_mean,
                noise_std,
            }
        })
        .collect();
    Ok(TaskSpecSet {
        specs,
        in_dim,
        act_dim,
    })
}

/// Assign `s` tasks to each of `n` clients.
///
/// Tasks are first placed round-robin (task t -> client t mod n, capacity
/// permitting) so that all M tasks are covered whenever `n * s >= m`; the
/// remaining slots are filled by seeded sampling without replacement.
pub fn partition_clients(m: usize, n: usize, s: usize, seed: u64) -> Result<ClientPartition> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidConfig("M and N must be >= 1".into()));
    }
    if s == 0 || s > m {
        return Err(Error::InvalidConfig(format!(
            "tasks per client s={s} violates 1 <= s <= M (M={m})"
        )));
    }
    let mut assignments: Vec<Vec<usize>> = vec![Vec::with_capacity(s); n];
    for task in 0..m {
        let client = task % n;
        if assignments[client].len() < s {
            assignments[client].push(task);
        }
    }
    let mut rng = rng::stream(seed);
    for client_tasks in assignments.iter_mut() {
        let missing = s - client_tasks.len();
        if missing > 0 {
            let mut candidates: Vec<usize> =
                (0..m).filter(|t| !client_tasks.contains(t)).collect();
            candidates.shuffle(&mut rng);
            client_tasks.extend(candidates.into_iter().take(missing));
        }
        client_tasks.sort_unstable();
    }
    Ok(ClientPartition {
        assignments,
        tasks_per_client: s,
    })
}

/// Draw `n` samples from one task: `x ~ N(input_mean, I)`,
/// `a = G x + noise_std * N(0, I)`. Labels start unannotated.
pub fn synth_dataset(spec: &TaskSpec, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be >= 1".into()));
    }
    let in_dim = spec.input_mean.len();
    if in_dim == 0 || spec.generator_weights.len() % in_dim != 0 {
        return Err(Error::DataIntegrity(format!(
            "task {} generator shape {} is not a multiple of in_dim {in_dim}",
            spec.task_id,
            spec.generator_weights.len()
        )));
    }
    let act_dim = spec.generator_weights.len() / in_dim;
    let mut rng = rng::stream(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = spec
            .input_mean
            .iter()
            .map(|&mu| mu + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut a = vec![0.0; act_dim];
        for (row, target) in a.iter_mut().enumerate() {
            let w = &spec.generator_weights[row * in_dim..(row + 1) * in_dim];
            *target = w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum::<f64>()
                + spec.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        out.push(LabeledSample {
            x,
            a,
            t: spec.task_id,
            t_hat: None,
        });
    }
    Ok(out)
}
