//! Measurable quantities from the convergence analysis: inter-task centroid
//! distances (collapse), round-wise gradient dissimilarity, participation
//! inflation, and bank path length.

use nalgebra::DMatrix;

use crate::bank::TaskBank;
use crate::datagen::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{self, ParamVector};

/// Symmetric pairwise distances between task centroids; zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Mean off-diagonal distance; higher means more discriminative task
    /// embeddings, zero means total collapse.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.size();
        if m < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                sum += self.entries[i][j];
            }
        }
        sum / (m * (m - 1) / 2) as f64
    }
}

/// Euclidean distance matrix of the given centroids, plus the collapse
/// score (mean off-diagonal distance).
pub fn centroid_distances(centroids: &[Vec<f64>]) -> (DistanceMatrix, f64) {
    let m = centroids.len();
    let mut entries = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let dist: f64 = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            entries[i][j] = dist;
            entries[j][i] = dist;
        }
    }
    let matrix = DistanceMatrix { entries };
    let score = matrix.mean_off_diagonal();
    (matrix, score)
}

/// Per-task centroids of smooth-normalized latents under true labels.
pub fn task_centroids(
    params: &ParamVector,
    eval_sets: &[Vec<LabeledSample>],
    eps_n: f64,
) -> Result<Vec<Vec<f64>>> {
    if eval_sets.is_empty() {
        return Err(Error::Domain("no eval sets provided".into()));
    }
    let mut centroids = Vec::with_capacity(eval_sets.len());
    for (task, set) in eval_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Domain(format!("eval set for task {task} is empty")));
        }
        let mut sum = vec![0.0; params.layout.latent_dim];
        for sample in set {
            let z = model::encode(params, &sample.x, sample.t)?;
            let z_hat = model::smooth_normalize(&z, eps_n)?;
            for (s, v) in sum.iter_mut().zip(&z_hat) {
                *s += v;
            }
        }
        for s in &mut sum {
            *s /= set.len() as f64;
        }
        centroids.push(sum);
    }
    Ok(centroids)
}

/// Distance matrix and collapse score of the per-task latent centroids.
pub fn task_embedding_distances(
    params: &ParamVector,
    eval_sets: &[Vec<LabeledSample>],
    eps_n: f64,
) -> Result<(DistanceMatrix, f64)> {
    let centroids = task_centroids(params, eval_sets, eps_n)?;
    Ok(centroid_distances(&centroids))
}

fn check_grads(grads: &[Vec<f64>], weights: &[f64]) -> Result<usize> {
    if grads.len() != weights.len() {
        return Err(Error::DataIntegrity(format!(
            "{} gradients but {} weights",
            grads.len(),
            weights.len()
        )));
    }
    if grads.is_empty() {
        return Err(Error::Domain("gradient dissimilarity of zero clients".into()));
    }
    let dim = grads[0].len();
    if grads.iter().any(|g| g.len() != dim) {
        return Err(Error::DataIntegrity("client gradient dims differ".into()));
    }
    Ok(dim)
}

/// Gradient dissimilarity: `Xi = sum_i w_i ||grad_i - grad_bar||^2` where
/// `grad_bar = sum_i w_i grad_i`.
pub fn gradient_dissimilarity(grads: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let dim = check_grads(grads, weights)?;
    let mut mean = vec![0.0; dim];
    for (g, &w) in grads.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += w * v;
        }
    }
    let mut xi = 0.0;
    for (g, &w) in grads.iter().zip(weights) {
        let dev: f64 = g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
        xi += w * dev;
    }
    Ok(xi)
}

/// Algebraically equivalent expansion `sum_i w_i ||grad_i||^2 - ||grad_bar||^2`,
/// used to cross-check the deviation form.
pub fn gradient_dissimilarity_expanded(grads: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let dim = check_grads(grads, weights)?;
    let mut mean = vec![0.0; dim];
    let mut weighted_sq = 0.0;
    for (g, &w) in grads.iter().zip(weights) {
        weighted_sq += w * g.iter().map(|v| v * v).sum::<f64>();
        for (m, v) in mean.iter_mut().zip(g) {
            *m += w * v;
        }
    }
    let mean_sq: f64 = mean.iter().map(|v| v * v).sum();
    Ok(weighted_sq - mean_sq)
}

/// Participation inflation: `max_{e,i} w_i (1 - p_i^e) / p_i^e`.
pub fn participation_inflation(weights: &[f64], probs_per_round: &[Vec<f64>]) -> f64 {
    let mut gamma: f64 = 0.0;
    for probs in probs_per_round {
        for (&w, &p) in weights.iter().zip(probs) {
            if p > 0.0 {
                gamma = gamma.max(w * (1.0 - p) / p);
            }
        }
    }
    gamma
}

/// Frobenius norms of consecutive bank differences, with their cumulative
/// sum (the bank path length).
pub fn bank_path_length(history: &[TaskBank]) -> Result<(Vec<f64>, f64)> {
    if history.len() < 2 {
        return Err(Error::Domain(
            "bank path length needs at least two snapshots".into(),
        ));
    }
    let mut series = Vec::with_capacity(history.len() - 1);
    for pair in history.windows(2) {
        series.push(pair[1].frobenius_distance(&pair[0])?);
    }
    let total = series.iter().sum();
    Ok((series, total))
}

/// Project centroids onto their top two principal components.
/// Returns one (pc1, pc2) pair per centroid.
pub fn pca_projection(centroids: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let m = centroids.len();
    if m == 0 {
        return Vec::new();
    }
    let d = centroids[0].len();
    let mut mean = vec![0.0; d];
    for c in centroids {
        for (mv, cv) in mean.iter_mut().zip(c) {
            *mv += cv / m as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for c in centroids {
        for r in 0..d {
            for s in 0..d {
                cov[(r, s)] += (c[r] - mean[r]) * (c[s] - mean[s]) / m as f64;
            }
        }
    }
    let eig = cov.symmetric_eigen();
    // Top-2 eigenvectors by eigenvalue.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&j| {
            let col = eig.eigenvectors.column(j);
            // Fix the sign so the projection is reproducible.
            let lead = col.iter().cloned().fold(0.0f64, |acc, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            let flip = if lead < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| flip * v).collect()
        })
        .collect();
    centroids
        .iter()
        .map(|c| {
            let mut out = [0.0; 2];
            for (ax, slot) in axes.iter().zip(out.iter_mut()) {
                *slot = c
                    .iter()
                    .zip(&mean)
                    .zip(ax)
                    .map(|((cv, mv), av)| (cv - mv) * av)
                    .sum();
            }
            out
        })
        .collect()
}
