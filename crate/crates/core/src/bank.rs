//! The global task representation bank.
//!
//! The server owns M row-normalized anchor vectors, one per task. Clients
//! upload per-task prototype means after local training; the server blends
//! uploads per task (weighted by sample count), smooth-normalizes the
//! result, and keeps the previous entry for any task nobody uploaded.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::datagen::LabeledSample;
use crate::error::{Error, Result};
use crate::model::{self, ParamVector};
use crate::rng;

/// M x d bank of task anchors plus the refresh counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBank {
    rows: Vec<Vec<f64>>,
    pub round: u64,
}

impl TaskBank {
    /// Build a bank from explicit rows, checking shape consistency.
    pub fn from_rows(rows: Vec<Vec<f64>>, round: u64) -> Result<TaskBank> {
        if rows.is_empty() {
            return Err(Error::InvalidConfig("bank must hold at least one row".into()));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DataIntegrity("bank rows have inconsistent dims".into()));
        }
        Ok(TaskBank { rows, round })
    }

    /// Test constructor that skips validation.
    #[cfg(test)]
    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>, round: u64) -> TaskBank {
        TaskBank { rows, round }
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, task: usize) -> &[f64] {
        &self.rows[task]
    }

    /// Frobenius distance to another bank of the same shape.
    pub fn frobenius_distance(&self, other: &TaskBank) -> Result<f64> {
        if self.num_tasks() != other.num_tasks() || self.latent_dim() != other.latent_dim() {
            return Err(Error::DataIntegrity(format!(
                "bank shapes differ: {}x{} vs {}x{}",
                self.num_tasks(),
                self.latent_dim(),
                other.num_tasks(),
                other.latent_dim()
            )));
        }
        let sq: f64 = self
            .rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        Ok(sq.sqrt())
    }

    /// Flat row-major copy of the bank values.
    pub fn flat_values(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// One client's per-task prototype means with their sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeUpload {
    pub client_id: usize,
    pub entries: Vec<PrototypeEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeEntry {
    pub task_id: usize,
    pub mean_latent: Vec<f64>,
    pub sample_count: usize,
}

/// Seeded random unit rows; orthonormalized when the latent dimension can
/// hold M orthogonal directions (maximal initial separation).
pub fn init_bank(m: usize, d: usize, seed: u64) -> Result<TaskBank> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidConfig("bank dims must be >= 1".into()));
    }
    let mut rng = rng::stream(seed);
    let draw_row = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for _ in 0..m {
        loop {
            let mut v = draw_row(&mut rng);
            if d >= m {
                for q in &rows {
                    let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= dot * qi;
                    }
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for vi in &mut v {
                    *vi /= norm;
                }
                rows.push(v);
                break;
            }
            // Degenerate draw: take a fresh one from the same stream.
        }
    }
    Ok(TaskBank { rows, round: 0 })
}

/// Group already-normalized latents by label and average them.
pub fn prototype_entries_from_normalized(labeled: &[(usize, Vec<f64>)]) -> Vec<PrototypeEntry> {
    let mut tasks: Vec<usize> = labeled.iter().map(|(t, _)| *t).collect();
    tasks.sort_unstable();
    tasks.dedup();
    tasks
        .into_iter()
        .map(|task| {
            let mut sum: Option<Vec<f64>> = None;
            let mut count = 0usize;
            for (t, z) in labeled {
                if *t == task {
                    match &mut sum {
                        None => sum = Some(z.clone()),
                        Some(s) => {
                            for (si, zi) in s.iter_mut().zip(z) {
                                *si += zi;
                            }
                        }
                    }
                    count += 1;
                }
            }
            let mut mean = sum.expect("task came from the label set");
            for v in &mut mean {
                *v /= count as f64;
            }
            PrototypeEntry {
                task_id: task,
                mean_latent: mean,
                sample_count: count,
            }
        })
        .collect()
}

/// Per-task mean of smooth-normalized latents under the given model,
/// grouped by predicted label. Entries are sorted by task id.
pub fn compute_prototypes(
    client_id: usize,
    params: &ParamVector,
    samples: &[LabeledSample],
    eps_n: f64,
) -> Result<PrototypeUpload> {
    if samples.is_empty() {
        return Err(Error::Domain(format!(
            "client {client_id} has no samples to build prototypes from"
        )));
    }
    let mut labeled = Vec::with_capacity(samples.len());
    for sample in samples {
        let t_hat = sample.t_hat.ok_or_else(|| {
            Error::DataIntegrity("prototype extraction requires annotated samples".into())
        })?;
        let z = model::encode(params, &sample.x, t_hat)?;
        labeled.push((t_hat, model::smooth_normalize(&z, eps_n)?));
    }
    Ok(PrototypeUpload {
        client_id,
        entries: prototype_entries_from_normalized(&labeled),
    })
}

/// Weighted bank refresh with stale-entry retention.
///
/// For each task with at least one upload the new raw row is the
/// count-weighted mean of the uploaded prototypes, then smooth-normalized;
/// tasks with no upload keep their previous row bit-for-bit. The round
/// counter always advances.
pub fn refresh_bank(bank: &TaskBank, uploads: &[PrototypeUpload], eps_n: f64) -> Result<TaskBank> {
    let m = bank.num_tasks();
    let d = bank.latent_dim();
    for upload in uploads {
        let mut seen = vec![false; m];
        for entry in &upload.entries {
            if entry.task_id >= m {
                return Err(Error::DataIntegrity(format!(
                    "client {} uploaded prototype for task {} but bank has {m} tasks",
                    upload.client_id, entry.task_id
                )));
            }
            if entry.mean_latent.len() != d {
                return Err(Error::DataIntegrity(format!(
                    "client {} prototype dim {} does not match bank dim {d}",
                    upload.client_id,
                    entry.mean_latent.len()
                )));
            }
            if entry.sample_count == 0 {
                return Err(Error::DataIntegrity(format!(
                    "client {} uploaded a zero-count prototype for task {}",
                    upload.client_id, entry.task_id
                )));
            }
            if seen[entry.task_id] {
                return Err(Error::DataIntegrity(format!(
                    "client {} uploaded task {} twice",
                    upload.client_id, entry.task_id
                )));
            }
            seen[entry.task_id] = true;
        }
    }

    let mut totals = vec![0usize; m];
    for upload in uploads {
        for entry in &upload.entries {
            totals[entry.task_id] += entry.sample_count;
        }
    }
    let mut rows = Vec::with_capacity(m);
    for task in 0..m {
        if totals[task] == 0 {
            rows.push(bank.rows[task].clone());
            continue;
        }
        let total = totals[task] as f64;
        let mut raw = vec![0.0; d];
        for upload in uploads {
            for entry in &upload.entries {
                if entry.task_id == task {
                    let rho = entry.sample_count as f64 / total;
                    for (r, p) in raw.iter_mut().zip(&entry.mean_latent) {
                        *r += rho * p;
                    }
                }
            }
        }
        rows.push(model::smooth_normalize(&raw, eps_n)?);
    }
    Ok(TaskBank {
        rows,
        round: bank.round + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn init_orthonormal_when_dim_allows() {
        let bank = init_bank(10, 16, 0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = bank.row(i).iter().zip(bank.row(j)).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "rows {i},{j} dot {dot}");
            }
        }
    }

    #[test]
    fn init_unit_rows_when_overcomplete() {
        let bank = init_bank(3, 2, 1).unwrap();
        for row in bank.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        // Three unit vectors in the plane cannot be pairwise orthogonal.
        let mut any_nonorth = false;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let dot: f64 = bank.row(i).iter().zip(bank.row(j)).map(|(a, b)| a * b).sum();
                if dot.abs() > 1e-6 {
                    any_nonorth = true;
                }
            }
        }
        assert!(any_nonorth);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_bank(5, 8, 3).unwrap(), init_bank(5, 8, 3).unwrap());
    }

    #[test]
    fn single_sample_prototype_is_its_own_latent() {
        let params = init_params(4, 3, 6, 5, 2, 2).unwrap();
        let sample = LabeledSample {
            x: vec![0.4, -0.2, 1.0, 0.3],
            a: vec![0.0, 0.0],
            t: 1,
            t_hat: Some(1),
        };
        let upload = compute_prototypes(7, &params, &[sample.clone()], 1e-3).unwrap();
        assert_eq!(upload.client_id, 7);
        assert_eq!(upload.entries.len(), 1);
        let z = crate::model::encode(&params, &sample.x, 1).unwrap();
        let z_hat = crate::model::smooth_normalize(&z, 1e-3).unwrap();
        assert_eq!(upload.entries[0].mean_latent, z_hat);
        assert_eq!(upload.entries[0].sample_count, 1);
    }

    #[test]
    fn duplicated_dataset_doubles_counts_only() {
        let params = init_params(4, 3, 6, 5, 2, 2).unwrap();
        let mut samples = Vec::new();
        for i in 0..6 {
            samples.push(LabeledSample {
                x: vec![i as f64 * 0.1, -0.2, 0.5, 0.3],
                a: vec![0.0, 0.0],
                t: i % 3,
                t_hat: Some(i % 3),
            });
        }
        let mut doubled = samples.clone();
        doubled.extend(samples.iter().cloned());
        let a = compute_prototypes(0, &params, &samples, 1e-3).unwrap();
        let b = compute_prototypes(0, &params, &doubled, 1e-3).unwrap();
        assert_eq!(a.entries.len(), b.entries.len());
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.task_id, eb.task_id);
            assert_eq!(eb.sample_count, 2 * ea.sample_count);
            for (x, y) in ea.mean_latent.iter().zip(&eb.mean_latent) {
                assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn hand_mean_of_two_unit_latents() {
        let labeled = vec![(2usize, vec![1.0, 0.0]), (2usize, vec![0.0, 1.0])];
        let entries = prototype_entries_from_normalized(&labeled);
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].mean_latent, vec![0.5, 0.5]);
        assert_eq!(entries[0].sample_count, 2);
    }

    #[test]
    fn empty_dataset_is_domain_error() {
        let params = init_params(4, 3, 6, 5, 2, 2).unwrap();
        assert!(matches!(
            compute_prototypes(0, &params, &[], 1e-3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn refresh_without_uploads_keeps_rows() {
        let bank = init_bank(4, 6, 5).unwrap();
        let next = refresh_bank(&bank, &[], 1e-3).unwrap();
        assert_eq!(next.rows(), bank.rows());
        assert_eq!(next.round, bank.round + 1);
    }

    #[test]
    fn refresh_single_uploader_normalizes_prototype() {
        let bank = init_bank(3, 4, 5).unwrap();
        let proto = vec![2.0, 0.0, 0.0, 0.0];
        let uploads = vec![PrototypeUpload {
            client_id: 0,
            entries: vec![PrototypeEntry {
                task_id: 1,
                mean_latent: proto.clone(),
                sample_count: 5,
            }],
        }];
        let next = refresh_bank(&bank, &uploads, 1e-3).unwrap();
        let expect = crate::model::smooth_normalize(&proto, 1e-3).unwrap();
        assert_eq!(next.row(1), expect.as_slice());
        assert_eq!(next.row(0), bank.row(0));
        assert_eq!(next.row(2), bank.row(2));
    }

    #[test]
    fn refresh_blends_by_sample_count() {
        let bank = init_bank(2, 3, 5).unwrap();
        let p = vec![1.0, 0.0, 0.0];
        let q = vec![0.0, 1.0, 0.0];
        let uploads = vec![
            PrototypeUpload {
                client_id: 0,
                entries: vec![PrototypeEntry {
                    task_id: 0,
                    mean_latent: p.clone(),
                    sample_count: 3,
                }],
            },
            PrototypeUpload {
                client_id: 1,
                entries: vec![PrototypeEntry {
                    task_id: 0,
                    mean_latent: q.clone(),
                    sample_count: 1,
                }],
            },
        ];
        let next = refresh_bank(&bank, &uploads, 1e-3).unwrap();
        let raw = vec![0.75, 0.25, 0.0];
        let expect = crate::model::smooth_normalize(&raw, 1e-3).unwrap();
        for (got, want) in next.row(0).iter().zip(&expect) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn refresh_rejects_out_of_range_task() {
        let bank = init_bank(2, 3, 5).unwrap();
        let uploads = vec![PrototypeUpload {
            client_id: 0,
            entries: vec![PrototypeEntry {
                task_id: 2,
                mean_latent: vec![1.0, 0.0, 0.0],
                sample_count: 1,
            }],
        }];
        assert!(matches!(
            refresh_bank(&bank, &uploads, 1e-3),
            Err(Error::DataIntegrity(_))
        ));
    }

    #[test]
    fn stale_rows_survive_many_rounds_bit_identical() {
        let mut bank = init_bank(5, 6, 9).unwrap();
        let frozen = bank.row(4).to_vec();
        for round in 0..10 {
            let uploads = vec![PrototypeUpload {
                client_id: 0,
                entries: vec![PrototypeEntry {
                    task_id: (round % 4) as usize,
                    mean_latent: vec![0.9, 0.1, 0.0, 0.0, 0.0, round as f64 * 0.01],
                    sample_count: 2,
                }],
            }];
            bank = refresh_bank(&bank, &uploads, 1e-3).unwrap();
        }
        assert_eq!(bank.row(4), frozen.as_slice());
        assert_eq!(bank.round, 10);
    }

    #[test]
    fn refreshed_rows_stay_capped_below_one() {
        let bank = init_bank(2, 3, 5).unwrap();
        let uploads = vec![PrototypeUpload {
            client_id: 0,
            entries: vec![PrototypeEntry {
                task_id: 0,
                mean_latent: vec![0.99, 0.1, 0.0],
                sample_count: 4,
            }],
        }];
        let next = refresh_bank(&bank, &uploads, 1e-3).unwrap();
        let norm: f64 = next.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1.0);
        assert!(norm > 1.0 - 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn blend_weights_sum_to_one(counts in proptest::collection::vec(1usize..50, 1..6)) {
            // rho_i = count_i / total must be a convex combination.
            let total: usize = counts.iter().sum();
            let rhos: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            prop_assert!(rhos.iter().all(|&r| r >= 0.0));
            let sum: f64 = rhos.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
