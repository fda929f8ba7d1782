//! Contrastive planning loss against the task bank, and the proximal
//! penalty used by the FedProx baseline.
//!
//! The contrastive term treats the bank rows as class anchors: each
//! smooth-normalized latent is scored against every row at temperature
//! tau, and the loss is the cross-entropy of that softmax at the sample's
//! predicted task. The loss is nonnegative by construction (log-sum-exp
//! dominates its own term) and `(sqrt(2) * alpha_cp / tau)`-Lipschitz in
//! the bank.
//!
//! Gradients flow into the latents only; the bank is refreshed exclusively
//! through the prototype upload path and stays frozen within a round.

use crate::bank::TaskBank;
use crate::error::{Error, Result};
use crate::model::ParamVector;

/// Tolerances for the bank-row normalization check. Smooth normalization
/// caps rows strictly below 1 by eps_n^2 / (2 r^2) for a raw norm r, so the
/// check admits a wider deficit below 1 (raw norms down to ~70 eps_n) while
/// anything above 1 + 1e-6 is impossible for a normalized row.
const BANK_ROW_NORM_EXCESS_TOL: f64 = 1e-6;
const BANK_ROW_NORM_DEFICIT_TOL: f64 = 1e-4;

/// Contrastive-loss hyperparameters: coupling strength and temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpLossConfig {
    pub alpha_cp: f64,
    pub tau: f64,
}

impl CpLossConfig {
    pub fn new(alpha_cp: f64, tau: f64) -> Result<CpLossConfig> {
        let cfg = CpLossConfig { alpha_cp, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.alpha_cp >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_cp must be >= 0, got {}",
                self.alpha_cp
            )));
        }
        Ok(())
    }
}

fn check_bank(bank: &TaskBank) -> Result<()> {
    for (m, row) in bank.rows().iter().enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm - 1.0 > BANK_ROW_NORM_EXCESS_TOL || 1.0 - norm > BANK_ROW_NORM_DEFICIT_TOL {
            return Err(Error::DataIntegrity(format!(
                "bank row {m} has norm {norm}, expected a normalized row \
                 (within +{BANK_ROW_NORM_EXCESS_TOL:e}/-{BANK_ROW_NORM_DEFICIT_TOL:e} of 1)"
            )));
        }
    }
    Ok(())
}

/// Softmax over bank scores for one smooth-normalized latent, with the
/// log-sum-exp computed via max-subtraction.
fn scores_and_softmax(z_hat: &[f64], bank: &TaskBank, tau: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let scores: Vec<f64> = bank
        .rows()
        .iter()
        .map(|u| u.iter().zip(z_hat).map(|(ui, zi)| ui * zi).sum::<f64>() / tau)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    let probs = exps.iter().map(|e| e / sum).collect();
    (scores, probs, lse)
}

/// Contrastive planning loss over a latent batch with its exact gradient
/// with respect to the raw latents (chained through smooth normalization).
///
/// loss = -(alpha_cp / K) * sum_k [ s_{t_k} - logsumexp_m s_m ],
/// where s_m = (z_hat_k . u_m) / tau.
pub fn cp_loss_and_grad(
    latents: &[Vec<f64>],
    labels: &[usize],
    bank: &TaskBank,
    cfg: &CpLossConfig,
    eps_n: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if latents.is_empty() {
        return Err(Error::Domain("contrastive loss over an empty batch".into()));
    }
    if latents.len() != labels.len() {
        return Err(Error::DataIntegrity(format!(
            "{} latents but {} labels",
            latents.len(),
            labels.len()
        )));
    }
    if !(eps_n > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing epsilon must be > 0, got {eps_n}"
        )));
    }
    let m = bank.num_tasks();
    let d = bank.latent_dim();
    for &t in labels {
        if t >= m {
            return Err(Error::DataIntegrity(format!(
                "label {t} outside bank range [0, {m})"
            )));
        }
    }
    // Scaling by alpha_cp = 0 must yield exact zeros, so short-circuit
    // before touching the bank contents.
    if cfg.alpha_cp == 0.0 {
        return Ok((0.0, latents.iter().map(|z| vec![0.0; z.len()]).collect()));
    }
    check_bank(bank)?;

    let inv_k = 1.0 / latents.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(latents.len());
    for (z, &t) in latents.iter().zip(labels) {
        if z.len() != d {
            return Err(Error::DataIntegrity(format!(
                "latent dim {} does not match bank dim {d}",
                z.len()
            )));
        }
        let sq: f64 = z.iter().map(|v| v * v).sum();
        let r = 1.0 / (sq + eps_n * eps_n).sqrt();
        let z_hat: Vec<f64> = z.iter().map(|v| v * r).collect();
        let (scores, probs, lse) = scores_and_softmax(&z_hat, bank, cfg.tau);
        loss += cfg.alpha_cp * (lse - scores[t]) * inv_k;

        // d loss / d z_hat = (alpha_cp / (K tau)) * sum_m (p_m - 1{m=t}) u_m
        let coef = cfg.alpha_cp * inv_k / cfg.tau;
        let mut d_zhat = vec![0.0; d];
        for (mi, row) in bank.rows().iter().enumerate() {
            let w = coef * (probs[mi] - if mi == t { 1.0 } else { 0.0 });
            if w != 0.0 {
                for (g, ui) in d_zhat.iter_mut().zip(row) {
                    *g += w * ui;
                }
            }
        }
        // Chain through z_hat = r z: J^T v = r v - r^3 (z . v) z.
        let zdotv: f64 = z.iter().zip(&d_zhat).map(|(zi, vi)| zi * vi).sum();
        let r3 = r * r * r;
        let d_z: Vec<f64> = z
            .iter()
            .zip(&d_zhat)
            .map(|(zi, vi)| r * vi - r3 * zdotv * zi)
            .collect();
        grads.push(d_z);
    }
    Ok((loss, grads))
}

/// Loss value only; same contract as [`cp_loss_and_grad`].
pub fn cp_loss(
    latents: &[Vec<f64>],
    labels: &[usize],
    bank: &TaskBank,
    cfg: &CpLossConfig,
    eps_n: f64,
) -> Result<f64> {
    cp_loss_and_grad(latents, labels, bank, cfg, eps_n).map(|(l, _)| l)
}

/// Gradient of the per-sample contrastive loss with respect to the bank
/// rows, as an M x d matrix. Diagnostic companion used to check the
/// softmax gradient structure; local training never applies it.
pub fn cp_bank_grad(
    latent: &[f64],
    label: usize,
    bank: &TaskBank,
    cfg: &CpLossConfig,
    eps_n: f64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if label >= bank.num_tasks() {
        return Err(Error::DataIntegrity(format!(
            "label {label} outside bank range [0, {})",
            bank.num_tasks()
        )));
    }
    if !(eps_n > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing epsilon must be > 0, got {eps_n}"
        )));
    }
    let sq: f64 = latent.iter().map(|v| v * v).sum();
    let r = 1.0 / (sq + eps_n * eps_n).sqrt();
    let z_hat: Vec<f64> = latent.iter().map(|v| v * r).collect();
    let (_, probs, _) = scores_and_softmax(&z_hat, bank, cfg.tau);
    let coef = cfg.alpha_cp / cfg.tau;
    Ok((0..bank.num_tasks())
        .map(|m| {
            let w = coef * (probs[m] - if m == label { 1.0 } else { 0.0 });
            z_hat.iter().map(|zi| w * zi).collect()
        })
        .collect())
}

/// FedProx proximal term: (lambda/2) ||theta - anchor||^2 with gradient
/// lambda (theta - anchor).
pub fn prox_loss_and_grad(
    params: &ParamVector,
    anchor: &ParamVector,
    lambda: f64,
) -> Result<(f64, ParamVector)> {
    if params.layout != anchor.layout {
        return Err(Error::Domain(
            "proximal term requires matching parameter layouts".into(),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda_prox must be >= 0, got {lambda}"
        )));
    }
    let mut grad = ParamVector::zeros(params.layout);
    let mut loss = 0.0;
    for (i, (p, a)) in params.values.iter().zip(&anchor.values).enumerate() {
        let diff = p - a;
        loss += 0.5 * lambda * diff * diff;
        grad.values[i] = lambda * diff;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{init_bank, TaskBank};
    use crate::model::init_params;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(alpha: f64, tau: f64) -> CpLossConfig {
        CpLossConfig::new(alpha, tau).unwrap()
    }

    fn random_latents(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::stream(seed);
        (0..n)
            .map(|_| (0..d).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect())
            .collect()
    }

    #[test]
    fn single_task_bank_gives_exact_zero() {
        let bank = init_bank(1, 6, 0).unwrap();
        let latents = random_latents(5, 6, 1);
        let (loss, grads) = cp_loss_and_grad(&latents, &[0; 5], &bank, &cfg(1.0, 0.07), 1e-3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn aligned_latent_closed_form() {
        // z_hat equals the first bank row, the other row is orthogonal:
        // loss = log(1 + e^{-1}) at tau = 1, alpha = 1.
        let bank = TaskBank::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0).unwrap();
        let latents = vec![vec![1.0, 0.0]];
        let (loss, _) = cp_loss_and_grad(&latents, &[0], &bank, &cfg(1.0, 1.0), 1e-12).unwrap();
        assert_relative_eq!(loss, (1.0 + (-1.0f64).exp()).ln(), max_relative = 1e-10);
        assert_relative_eq!(loss, 0.313262, max_relative = 1e-5);
    }

    #[test]
    fn zero_alpha_short_circuits() {
        // Bank rows deliberately unnormalized: alpha = 0 must not look at them.
        let bank = TaskBank::from_rows_unchecked(vec![vec![3.0, 0.0], vec![0.0, 0.2]], 0);
        let latents = random_latents(4, 2, 3);
        let (loss, grads) = cp_loss_and_grad(&latents, &[0, 1, 0, 1], &bank, &cfg(0.0, 0.07), 1e-3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn unnormalized_bank_is_rejected() {
        let latents = random_latents(2, 2, 4);
        for bad_row in [vec![1.1, 0.0], vec![0.99, 0.0], vec![1.0 + 2e-6, 0.0]] {
            let bank = TaskBank::from_rows_unchecked(vec![bad_row, vec![0.0, 1.0]], 0);
            assert!(matches!(
                cp_loss_and_grad(&latents, &[0, 1], &bank, &cfg(0.2, 0.07), 1e-3),
                Err(Error::DataIntegrity(_))
            ));
        }
        // A smooth-normalized row from a modest raw norm must pass.
        let row = crate::model::smooth_normalize(&[0.4, 0.1], 1e-3).unwrap();
        let other = crate::model::smooth_normalize(&[0.0, -0.7], 1e-3).unwrap();
        let bank = TaskBank::from_rows_unchecked(vec![row, other], 0);
        assert!(cp_loss_and_grad(&latents, &[0, 1], &bank, &cfg(0.2, 0.07), 1e-3).is_ok());
    }

    #[test]
    fn empty_batch_is_domain_error() {
        let bank = init_bank(3, 4, 0).unwrap();
        assert!(matches!(
            cp_loss_and_grad(&[], &[], &bank, &cfg(0.2, 0.07), 1e-3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let bank = init_bank(5, 6, 7).unwrap();
        let latents = random_latents(4, 6, 8);
        let labels = [0, 2, 4, 1];
        let c = cfg(0.2, 0.07);
        let (_, grads) = cp_loss_and_grad(&latents, &labels, &bank, &c, 1e-3).unwrap();
        let step = 1e-6;
        for k in 0..latents.len() {
            for i in 0..6 {
                let mut plus = latents.clone();
                plus[k][i] += step;
                let mut minus = latents.clone();
                minus[k][i] -= step;
                let lp = cp_loss(&plus, &labels, &bank, &c, 1e-3).unwrap();
                let lm = cp_loss(&minus, &labels, &bank, &c, 1e-3).unwrap();
                let fd = (lp - lm) / (2.0 * step);
                let denom = grads[k][i].abs().max(fd.abs()).max(1e-7);
                assert!(
                    (grads[k][i] - fd).abs() / denom < 1e-4,
                    "latent {k} dim {i}: analytic {} vs fd {fd}",
                    grads[k][i]
                );
            }
        }
    }

    #[test]
    fn bank_gradient_frobenius_bound() {
        let c = cfg(0.2, 0.07);
        let bound = (2.0f64).sqrt() * c.alpha_cp / c.tau;
        for seed in 0..20 {
            let bank = init_bank(6, 5, seed).unwrap();
            let z = random_latents(1, 5, 100 + seed).remove(0);
            let g = cp_bank_grad(&z, (seed % 6) as usize, &bank, &c, 1e-3).unwrap();
            let fro: f64 = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            assert!(fro <= bound + 1e-12, "Frobenius {fro} exceeds bound {bound}");
        }
    }

    #[test]
    fn prox_at_anchor_is_zero() {
        let p = init_params(3, 2, 4, 3, 2, 0).unwrap();
        let (loss, grad) = prox_loss_and_grad(&p, &p, 0.7).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn prox_zero_lambda_recovers_fedavg() {
        let p = init_params(3, 2, 4, 3, 2, 0).unwrap();
        let q = init_params(3, 2, 4, 3, 2, 1).unwrap();
        let (loss, grad) = prox_loss_and_grad(&p, &q, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn prox_direct_value() {
        let p = init_params(3, 2, 4, 3, 2, 0).unwrap();
        let mut q = p.clone();
        // Shift so that ||p - q|| = 2.
        let shift = 2.0 / (p.len() as f64).sqrt();
        for v in &mut q.values {
            *v += shift;
        }
        let (loss, _) = prox_loss_and_grad(&p, &q, 0.5).unwrap();
        assert_relative_eq!(loss, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn prox_layout_mismatch_is_domain_error() {
        let p = init_params(3, 2, 4, 3, 2, 0).unwrap();
        let q = init_params(3, 2, 5, 3, 2, 0).unwrap();
        assert!(matches!(
            prox_loss_and_grad(&p, &q, 0.1),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cp_loss_is_nonnegative(seed in 0u64..5000, label in 0usize..4) {
            let bank = init_bank(4, 5, 11).unwrap();
            let latents = random_latents(1, 5, seed);
            let loss = cp_loss(&latents, &[label], &bank, &cfg(0.2, 0.07), 1e-3).unwrap();
            prop_assert!(loss >= 0.0);
        }

        #[test]
        fn cp_loss_bank_lipschitz(seed_a in 0u64..2000, seed_b in 0u64..2000) {
            let c = cfg(0.2, 0.07);
            let bank_a = init_bank(4, 5, seed_a).unwrap();
            let bank_b = init_bank(4, 5, seed_b.wrapping_add(7919)).unwrap();
            let latents = random_latents(3, 5, seed_a ^ seed_b);
            let labels = [0, 1, 3];
            let la = cp_loss(&latents, &labels, &bank_a, &c, 1e-3).unwrap();
            let lb = cp_loss(&latents, &labels, &bank_b, &c, 1e-3).unwrap();
            let diff: f64 = bank_a
                .rows()
                .iter()
                .zip(bank_b.rows())
                .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(a, b)| (a - b) * (a - b)))
                .sum::<f64>()
                .sqrt();
            let bound = (2.0f64).sqrt() * c.alpha_cp / c.tau * diff;
            prop_assert!((la - lb).abs() <= bound + 1e-12);
        }
    }
}
