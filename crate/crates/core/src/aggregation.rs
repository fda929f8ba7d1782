//! Server-side update rules.
//!
//! Three routes produce the next global model from uploaded client updates:
//!
//! * [`fedavg_anchor`] — the sampled-weight average `theta + sum w~_i g_i`.
//! * [`adaptive_aggregate`] — the exact minimizer of the projection-alignment
//!   objective
//!   `sum_i w~_i ((d . g_i) / (||g_i||^2 + eps_ag) - 1)^2 + alpha_ag ||d - g_bar||^2`
//!   over the displacement `d`, anchored at the sampled average `g_bar`.
//! * [`brute_force_minimizer`] — a plain gradient-descent oracle on the same
//!   objective, used by tests to certify the closed form.
//!
//! With `a_i = g_i / (||g_i||^2 + eps_ag)`, the normal equations are
//! `(sum_i w~_i a_i a_i^T + alpha I) d = sum_i w~_i a_i + alpha g_bar`.
//! The left-hand matrix is a rank-|S| perturbation of `alpha I`, so instead
//! of forming a dim x dim system we solve the |S| x |S| Gram system: with
//! columns `c_i = sqrt(w~_i) a_i`, `G = C^T C`, `y_i = sqrt(w~_i)`, and
//! `h = C^T g_bar`, the Woodbury identity collapses the solution to
//!
//! `d = g_bar + C (G + alpha I)^{-1} (y - h)`.
//!
//! When `alpha = 0` the objective is a weighted least-squares problem that
//! may be rank-deficient; the minimum-norm solution restricted to
//! span{a_i} is `d = C G^+ y`, computed through a symmetric
//! eigendecomposition pseudo-inverse of the Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ParamVector;

/// One client's uploaded round output: the parameter delta and the local
/// sample count backing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub delta: Vec<f64>,
    pub num_samples: usize,
}

/// Anchor strength and the near-zero-update stabilizer of the projection
/// denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationConfig {
    pub alpha_ag: f64,
    pub eps_ag: f64,
}

impl AggregationConfig {
    pub fn new(alpha_ag: f64, eps_ag: f64) -> Result<AggregationConfig> {
        let cfg = AggregationConfig { alpha_ag, eps_ag };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_ag > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_ag must be > 0, got {}",
                self.eps_ag
            )));
        }
        if !(self.alpha_ag >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_ag must be >= 0, got {}",
                self.alpha_ag
            )));
        }
        Ok(())
    }
}

/// Inverse-propensity sampled weights: `w~_i = w_i * xi_i / p_i`, zero for
/// non-participants. Unbiased for `w_i` under independent participation.
pub fn sampled_weights(base_w: &[f64], participated: &[bool], probs: &[f64]) -> Result<Vec<f64>> {
    if base_w.len() != participated.len() || base_w.len() != probs.len() {
        return Err(Error::DataIntegrity(format!(
            "weight/participation/probability lengths differ: {}/{}/{}",
            base_w.len(),
            participated.len(),
            probs.len()
        )));
    }
    let mut out = vec![0.0; base_w.len()];
    for i in 0..base_w.len() {
        if participated[i] {
            if !(probs[i] > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "client {i} participated with probability {}; inverse weighting undefined",
                    probs[i]
                )));
            }
            out[i] = base_w[i] / probs[i];
        }
    }
    Ok(out)
}

fn validate_updates(dim: usize, updates: &[ClientUpdate], weights: &[f64]) -> Result<Vec<usize>> {
    if updates.len() != weights.len() {
        return Err(Error::DataIntegrity(format!(
            "{} updates but {} weights",
            updates.len(),
            weights.len()
        )));
    }
    for update in updates {
        if update.delta.len() != dim {
            return Err(Error::DataIntegrity(format!(
                "client {} update has dim {}, global model has {dim}",
                update.client_id,
                update.delta.len()
            )));
        }
        if !update.delta.iter().all(|v| v.is_finite()) {
            return Err(Error::DataIntegrity(format!(
                "client {} uploaded a non-finite update",
                update.client_id
            )));
        }
    }
    let active: Vec<usize> = (0..updates.len()).filter(|&i| weights[i] != 0.0).collect();
    if active.is_empty() {
        return Err(Error::EmptyRound);
    }
    Ok(active)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_sum(dim: usize, updates: &[ClientUpdate], weights: &[f64], active: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for &i in active {
        let w = weights[i];
        for (ov, gv) in out.iter_mut().zip(&updates[i].delta) {
            *ov += w * gv;
        }
    }
    out
}

/// Projection directions `a_i = g_i / (||g_i||^2 + eps_ag)` of the active set.
fn projection_directions(updates: &[ClientUpdate], active: &[usize], eps_ag: f64) -> Vec<Vec<f64>> {
    active
        .iter()
        .map(|&i| {
            let sq: f64 = updates[i].delta.iter().map(|v| v * v).sum();
            let denom = sq + eps_ag;
            updates[i].delta.iter().map(|v| v / denom).collect()
        })
        .collect()
}

fn apply_displacement(theta: &ParamVector, d: &[f64]) -> ParamVector {
    let mut next = theta.clone();
    for (nv, dv) in next.values.iter_mut().zip(d) {
        *nv += dv;
    }
    next
}

/// Displacement of the sampled-average rule: `sum_i w~_i g_i`.
pub fn fedavg_displacement(dim: usize, updates: &[ClientUpdate], weights: &[f64]) -> Result<Vec<f64>> {
    let active = validate_updates(dim, updates, weights)?;
    Ok(weighted_sum(dim, updates, weights, &active))
}

/// Sampled-average update: `theta + sum_i w~_i g_i`.
pub fn fedavg_anchor(
    theta: &ParamVector,
    updates: &[ClientUpdate],
    weights: &[f64],
) -> Result<ParamVector> {
    let d = fedavg_displacement(theta.len(), updates, weights)?;
    Ok(apply_displacement(theta, &d))
}

/// Exact minimizer of the adaptive-aggregation objective, as a displacement.
///
/// Solved through the |S| x |S| Gram system; with `alpha_ag = 0` this is
/// the minimum-norm least-squares solution in span{a_i}.
pub fn adaptive_displacement(
    dim: usize,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let active = validate_updates(dim, updates, weights)?;
    let k = active.len();
    let dirs = projection_directions(updates, &active, cfg.eps_ag);
    let sqrt_w: Vec<f64> = active.iter().map(|&i| weights[i].sqrt()).collect();

    // Gram matrix of the weighted columns c_i = sqrt(w_i) a_i.
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for r in 0..k {
        for c in r..k {
            let v = sqrt_w[r] * sqrt_w[c] * dot(&dirs[r], &dirs[c]);
            gram[(r, c)] = v;
            gram[(c, r)] = v;
        }
    }
    let y = DVector::<f64>::from_iterator(k, sqrt_w.iter().copied());

    if cfg.alpha_ag > 0.0 {
        let g_bar = weighted_sum(dim, updates, weights, &active);
        let h = DVector::<f64>::from_iterator(k, (0..k).map(|r| sqrt_w[r] * dot(&dirs[r], &g_bar)));
        let mut system = gram;
        for r in 0..k {
            system[(r, r)] += cfg.alpha_ag;
        }
        let rhs = y - h;
        let gamma = system
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| system.lu().solve(&rhs))
            .ok_or_else(|| Error::DataIntegrity("adaptive aggregation system is singular".into()))?;
        let mut d = g_bar;
        for r in 0..k {
            let coef = gamma[r] * sqrt_w[r];
            for (dv, av) in d.iter_mut().zip(&dirs[r]) {
                *dv += coef * av;
            }
        }
        Ok(d)
    } else {
        // Minimum-norm least squares: d = C G^+ y.
        let beta = sym_pinv_apply(&gram, &y);
        let mut d = vec![0.0; dim];
        for r in 0..k {
            let coef = beta[r] * sqrt_w[r];
            for (dv, av) in d.iter_mut().zip(&dirs[r]) {
                *dv += coef * av;
            }
        }
        Ok(d)
    }
}

/// Adaptive aggregation applied to the global model.
pub fn adaptive_aggregate(
    theta: &ParamVector,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
) -> Result<ParamVector> {
    let d = adaptive_displacement(theta.len(), updates, weights, cfg)?;
    Ok(apply_displacement(theta, &d))
}

/// Apply the pseudo-inverse of a symmetric PSD matrix to a vector,
/// truncating eigenvalues below `k * eps * lambda_max`.
fn sym_pinv_apply(mat: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let k = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = (k as f64) * f64::EPSILON * lambda_max.max(f64::MIN_POSITIVE);
    let mut out = DVector::<f64>::zeros(k);
    for j in 0..k {
        let lambda = eig.eigenvalues[j];
        if lambda > tol {
            let q = eig.eigenvectors.column(j);
            let coef = q.dot(v) / lambda;
            out += q * coef;
        }
    }
    out
}

/// Reference solve that forms the full dim x dim normal equations (or the
/// dense rectangular least-squares problem when `alpha_ag = 0`). Intended
/// for small dimensions; certifies the low-rank route.
pub fn adaptive_displacement_dense(
    dim: usize,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let active = validate_updates(dim, updates, weights)?;
    let k = active.len();
    let dirs = projection_directions(updates, &active, cfg.eps_ag);

    if cfg.alpha_ag > 0.0 {
        let g_bar = weighted_sum(dim, updates, weights, &active);
        let mut lhs = DMatrix::<f64>::identity(dim, dim) * cfg.alpha_ag;
        let mut rhs = DVector::<f64>::from_iterator(dim, g_bar.iter().map(|v| v * cfg.alpha_ag));
        for (idx, &i) in active.iter().enumerate() {
            let w = weights[i];
            for r in 0..dim {
                rhs[r] += w * dirs[idx][r];
                for c in 0..dim {
                    lhs[(r, c)] += w * dirs[idx][r] * dirs[idx][c];
                }
            }
        }
        let d = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DataIntegrity("dense normal equations are singular".into()))?;
        Ok(d.iter().copied().collect())
    } else {
        // Weighted rows sqrt(w_i) a_i^T, target sqrt(w_i); min-norm solution
        // through the SVD pseudo-inverse of the rectangular system.
        let mut design = DMatrix::<f64>::zeros(k, dim);
        let mut target = DVector::<f64>::zeros(k);
        for (idx, &i) in active.iter().enumerate() {
            let sw = weights[i].sqrt();
            target[idx] = sw;
            for c in 0..dim {
                design[(idx, c)] = sw * dirs[idx][c];
            }
        }
        let pinv = design
            .pseudo_inverse(f64::EPSILON * (k.max(dim) as f64))
            .map_err(|e| Error::DataIntegrity(format!("pseudo-inverse failed: {e}")))?;
        Ok((pinv * target).iter().copied().collect())
    }
}

/// Dense reference aggregation applied to the global model.
pub fn adaptive_aggregate_dense(
    theta: &ParamVector,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
) -> Result<ParamVector> {
    let d = adaptive_displacement_dense(theta.len(), updates, weights, cfg)?;
    Ok(apply_displacement(theta, &d))
}

/// Evaluate the adaptive-aggregation objective at a displacement `d`.
pub fn aggregation_objective(
    d: &[f64],
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
) -> f64 {
    let mut value = 0.0;
    let mut g_bar = vec![0.0; d.len()];
    for (update, &w) in updates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let sq: f64 = update.delta.iter().map(|v| v * v).sum();
        let proj = dot(d, &update.delta) / (sq + cfg.eps_ag);
        value += w * (proj - 1.0) * (proj - 1.0);
        for (gb, gv) in g_bar.iter_mut().zip(&update.delta) {
            *gb += w * gv;
        }
    }
    let anchor_sq: f64 = d
        .iter()
        .zip(&g_bar)
        .map(|(dv, gv)| (dv - gv) * (dv - gv))
        .sum();
    value + cfg.alpha_ag * anchor_sq
}

/// A safe constant step size for gradient descent on the objective:
/// the Hessian is `2 (sum w_i a_i a_i^T + alpha I)`, whose spectral norm is
/// at most `2 (sum w_i ||a_i||^2 + alpha)`.
pub fn oracle_step_size(updates: &[ClientUpdate], weights: &[f64], cfg: &AggregationConfig) -> f64 {
    let mut lipschitz = cfg.alpha_ag;
    for (update, &w) in updates.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let sq: f64 = update.delta.iter().map(|v| v * v).sum();
        let denom = sq + cfg.eps_ag;
        lipschitz += w * sq / (denom * denom);
    }
    0.5 / lipschitz.max(f64::MIN_POSITIVE)
}

/// Gradient-descent oracle for the adaptive-aggregation objective, as a
/// displacement.
///
/// Runs plain descent from the zero displacement until the gradient norm
/// drops below 1e-10 or the step cap is hit. Requires `alpha_ag > 0` so the
/// objective is strongly convex and the minimizer unique.
pub fn brute_force_displacement(
    dim: usize,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
    max_steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(cfg.alpha_ag > 0.0) {
        return Err(Error::InvalidConfig(
            "brute-force oracle requires alpha_ag > 0 for strong convexity".into(),
        ));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "oracle learning rate must be > 0, got {lr}"
        )));
    }
    let active = validate_updates(dim, updates, weights)?;
    let g_bar = weighted_sum(dim, updates, weights, &active);
    let mut d = vec![0.0; dim];
    let tol = 1e-10;
    for _ in 0..max_steps {
        // grad = 2 sum_i w_i (proj_i - 1) g_i / (||g_i||^2 + eps) + 2 alpha (d - g_bar)
        let mut grad: Vec<f64> = d
            .iter()
            .zip(&g_bar)
            .map(|(dv, gv)| 2.0 * cfg.alpha_ag * (dv - gv))
            .collect();
        for &i in &active {
            let sq: f64 = updates[i].delta.iter().map(|v| v * v).sum();
            let denom = sq + cfg.eps_ag;
            let proj = dot(&d, &updates[i].delta) / denom;
            let coef = 2.0 * weights[i] * (proj - 1.0) / denom;
            for (gr, gv) in grad.iter_mut().zip(&updates[i].delta) {
                *gr += coef * gv;
            }
        }
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < tol {
            return Ok(d);
        }
        for (dv, gr) in d.iter_mut().zip(&grad) {
            *dv -= lr * gr;
        }
    }
    Err(Error::OracleFailure(format!(
        "gradient norm did not reach {tol:e} within {max_steps} steps"
    )))
}

/// Brute-force oracle applied to the global model.
pub fn brute_force_minimizer(
    theta: &ParamVector,
    updates: &[ClientUpdate],
    weights: &[f64],
    cfg: &AggregationConfig,
    max_steps: usize,
    lr: f64,
) -> Result<ParamVector> {
    let d = brute_force_displacement(theta.len(), updates, weights, cfg, max_steps, lr)?;
    Ok(apply_displacement(theta, &d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn update(id: usize, delta: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            delta,
            num_samples: 1,
        }
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn sampled_weights_full_participation_identity() {
        let w = sampled_weights(&[0.3, 0.7], &[true, true], &[1.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.3, 0.7]);
    }

    #[test]
    fn sampled_weights_hand_case() {
        let w = sampled_weights(&[0.3, 0.7], &[true, true], &[0.5, 1.0]).unwrap();
        assert_relative_eq!(w[0], 0.6, max_relative = 1e-15);
        assert_relative_eq!(w[1], 0.7, max_relative = 1e-15);
    }

    #[test]
    fn sampled_weights_zero_probability_participant_errors() {
        assert!(matches!(
            sampled_weights(&[0.5, 0.5], &[true, false], &[0.0, 1.0]),
            Err(Error::InvalidConfig(_))
        ));
        // Zero probability is fine for a non-participant.
        let w = sampled_weights(&[0.5, 0.5], &[false, true], &[0.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.0, 0.5]);
    }

    #[test]
    fn sampled_weights_unbiased_monte_carlo() {
        let base = [0.3, 0.7];
        let probs = [0.5, 0.9];
        let n = 100_000usize;
        let mut sums = [0.0f64; 2];
        let mut rng = crate::rng::stream(42);
        for _ in 0..n {
            let part = [rng.random::<f64>() < probs[0], rng.random::<f64>() < probs[1]];
            let w = sampled_weights(&base, &part, &probs).unwrap();
            sums[0] += w[0];
            sums[1] += w[1];
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            // Var(w~) = w^2 (1-p)/p per draw.
            let sigma = (base[i] * base[i] * (1.0 - probs[i]) / probs[i] / n as f64).sqrt();
            assert!(
                (mean - base[i]).abs() < 3.0 * sigma + 1e-12,
                "client {i}: mean {mean} vs {} (3 sigma {})",
                base[i],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn anchor_identical_updates() {
        let updates = vec![update(0, vec![1.0, 2.0]), update(1, vec![1.0, 2.0])];
        let d = fedavg_displacement(2, &updates, &[0.5, 0.5]).unwrap();
        assert_eq!(d, vec![1.0, 2.0]);
    }

    #[test]
    fn anchor_two_client_average() {
        let updates = vec![update(0, vec![2.0, 0.0]), update(1, vec![0.0, 2.0])];
        let d = fedavg_displacement(2, &updates, &[0.5, 0.5]).unwrap();
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn anchor_sampled_weight_case() {
        let updates = vec![update(0, vec![1.0, 0.0]), update(1, vec![0.0, 1.0])];
        let d = fedavg_displacement(2, &updates, &[0.6, 0.7]).unwrap();
        assert_relative_eq!(d[0], 0.6);
        assert_relative_eq!(d[1], 0.7);
    }

    #[test]
    fn anchor_all_zero_weights_is_empty_round() {
        let updates = vec![update(0, vec![1.0, 0.0])];
        assert!(matches!(
            fedavg_displacement(2, &updates, &[0.0]),
            Err(Error::EmptyRound)
        ));
    }

    #[test]
    fn adaptive_single_client_preserves_update_in_eps_limit() {
        let g = vec![0.4, -0.8, 0.2];
        let updates = vec![update(0, g.clone())];
        let cfg = AggregationConfig::new(0.1, 1e-12).unwrap();
        let d = adaptive_displacement(3, &updates, &[1.0], &cfg).unwrap();
        for (dv, gv) in d.iter().zip(&g) {
            assert_relative_eq!(dv, gv, max_relative = 1e-8);
        }
    }

    #[test]
    fn adaptive_hand_solved_single_client() {
        // g = (1,0), eps = 1, alpha = 0.1, w = 1:
        // (0.25 + 0.1) d1 = 0.5 + 0.1  =>  d1 = 12/7.
        let updates = vec![update(0, vec![1.0, 0.0])];
        let cfg = AggregationConfig::new(0.1, 1.0).unwrap();
        let d = adaptive_displacement(2, &updates, &[1.0], &cfg).unwrap();
        assert_relative_eq!(d[0], 12.0 / 7.0, max_relative = 1e-12);
        assert!(d[1].abs() < 1e-15);
    }

    #[test]
    fn adaptive_antiparallel_updates_cancel() {
        let updates = vec![update(0, vec![1.0, 0.0]), update(1, vec![-1.0, 0.0])];
        let cfg = AggregationConfig::new(0.1, 1e-12).unwrap();
        let d = adaptive_displacement(2, &updates, &[0.5, 0.5], &cfg).unwrap();
        assert!(norm(&d) < 1e-9, "{d:?}");
    }

    #[test]
    fn min_norm_blowup_vs_anchored_probe() {
        // Near-anti-parallel probe: alpha = 0 blows up as 1/delta while the
        // anchored solve stays bounded.
        let delta = 0.01;
        let updates = vec![update(0, vec![1.0, delta]), update(1, vec![-1.0, delta])];
        let w = [0.5, 0.5];
        let free = adaptive_displacement(2, &updates, &w, &AggregationConfig::new(0.0, 1e-12).unwrap())
            .unwrap();
        let anchored =
            adaptive_displacement(2, &updates, &w, &AggregationConfig::new(0.1, 1e-12).unwrap())
                .unwrap();
        assert!(norm(&free) >= 50.0, "free norm {}", norm(&free));
        assert!(norm(&anchored) <= 5.0, "anchored norm {}", norm(&anchored));
    }

    fn random_instance(seed: u64, dim: usize, clients: usize) -> (Vec<ClientUpdate>, Vec<f64>) {
        let mut rng = crate::rng::stream(seed);
        let updates: Vec<ClientUpdate> = (0..clients)
            .map(|i| {
                update(
                    i,
                    (0..dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect(),
                )
            })
            .collect();
        let raw: Vec<f64> = (0..clients).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        (updates, weights)
    }

    #[test]
    fn closed_form_matches_oracle_on_random_instances() {
        for seed in 0..30 {
            let dim = 3 + (seed as usize % 8);
            let clients = 1 + (seed as usize % 5);
            let (updates, weights) = random_instance(seed, dim, clients);
            let cfg = AggregationConfig::new([0.05, 0.1, 0.2][seed as usize % 3], 1e-8).unwrap();
            let closed = adaptive_displacement(dim, &updates, &weights, &cfg).unwrap();
            let lr = oracle_step_size(&updates, &weights, &cfg);
            let oracle =
                brute_force_displacement(dim, &updates, &weights, &cfg, 2_000_000, lr).unwrap();
            for (a, b) in closed.iter().zip(&oracle) {
                assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn low_rank_matches_dense() {
        for seed in 100..120 {
            let dim = 2 + (seed as usize % 10);
            let clients = 1 + (seed as usize % 6);
            let (updates, weights) = random_instance(seed, dim, clients);
            for alpha in [0.0, 0.05, 0.2] {
                let cfg = AggregationConfig::new(alpha, 1e-8).unwrap();
                let lr = adaptive_displacement(dim, &updates, &weights, &cfg).unwrap();
                let dn = adaptive_displacement_dense(dim, &updates, &weights, &cfg).unwrap();
                for (a, b) in lr.iter().zip(&dn) {
                    assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn anchor_limit_monotone() {
        let (updates, weights) = random_instance(7, 12, 4);
        let anchor = fedavg_displacement(12, &updates, &weights).unwrap();
        let mut last = f64::INFINITY;
        for exp in 0..=6 {
            let cfg = AggregationConfig::new(10f64.powi(exp), 1e-8).unwrap();
            let sol = adaptive_displacement(12, &updates, &weights, &cfg).unwrap();
            let dist: f64 = sol
                .iter()
                .zip(&anchor)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist < last, "alpha=1e{exp}: dist {dist} not below {last}");
            last = dist;
            if exp == 6 {
                let rel = dist / norm(&anchor);
                assert!(rel < 1e-4, "relative dist {rel}");
            }
        }
    }

    #[test]
    fn objective_at_solution_beats_anchor() {
        for seed in 300..320 {
            let (updates, weights) = random_instance(seed, 8, 4);
            let cfg = AggregationConfig::new(0.1, 1e-8).unwrap();
            let d_sol = adaptive_displacement(8, &updates, &weights, &cfg).unwrap();
            let d_anchor = fedavg_displacement(8, &updates, &weights).unwrap();
            let j_sol = aggregation_objective(&d_sol, &updates, &weights, &cfg);
            let j_anchor = aggregation_objective(&d_anchor, &updates, &weights, &cfg);
            assert!(j_sol <= j_anchor + 1e-12, "{j_sol} > {j_anchor}");
        }
    }

    #[test]
    fn oracle_rejects_zero_alpha_and_bad_lr() {
        let (updates, weights) = random_instance(1, 4, 2);
        let cfg0 = AggregationConfig::new(0.0, 1e-8).unwrap();
        assert!(matches!(
            brute_force_displacement(4, &updates, &weights, &cfg0, 100, 0.1),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = AggregationConfig::new(0.1, 1e-8).unwrap();
        assert!(matches!(
            brute_force_displacement(4, &updates, &weights, &cfg, 1, 0.1),
            Err(Error::OracleFailure(_))
        ));
    }

    #[test]
    fn oracle_large_alpha_converges_to_anchor() {
        let (updates, weights) = random_instance(9, 6, 3);
        let cfg = AggregationConfig::new(1e6, 1e-8).unwrap();
        let lr = oracle_step_size(&updates, &weights, &cfg);
        let oracle = brute_force_displacement(6, &updates, &weights, &cfg, 2_000_000, lr).unwrap();
        let anchor = fedavg_displacement(6, &updates, &weights).unwrap();
        for (a, b) in oracle.iter().zip(&anchor) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn oracle_single_client_eps_limit_recovers_update() {
        let g = vec![0.3, -0.5];
        let updates = vec![update(0, g.clone())];
        let cfg = AggregationConfig::new(0.1, 1e-12).unwrap();
        let lr = oracle_step_size(&updates, &[1.0], &cfg);
        let d = brute_force_displacement(2, &updates, &[1.0], &cfg, 2_000_000, lr).unwrap();
        for (dv, gv) in d.iter().zip(&g) {
            assert_relative_eq!(dv, gv, max_relative = 1e-6);
        }
    }

    #[test]
    fn non_finite_update_is_rejected() {
        let updates = vec![update(0, vec![f64::NAN, 0.0])];
        let cfg = AggregationConfig::new(0.1, 1e-8).unwrap();
        assert!(matches!(
            adaptive_displacement(2, &updates, &[1.0], &cfg),
            Err(Error::DataIntegrity(_))
        ));
    }
}
