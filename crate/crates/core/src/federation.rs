//! Round orchestration: participant sampling, local SGD with the composite
//! objective, prototype uploads, bank refresh, server aggregation, and
//! evaluation.
//!
//! Determinism contract: every random draw comes from a stream derived
//! from (master seed, purpose, round, client), so a run is a pure function
//! of its config, clients may be re-run out of band with identical
//! results, and checkpoint-resume reproduces an uninterrupted run
//! bit-for-bit.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregation::{self, ClientUpdate};
use crate::bank::{self, PrototypeUpload, TaskBank};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{emit_config, FederationConfig, LocalMode, Method};
use crate::datagen::{self, LabeledSample};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::labeler;
use crate::losses::{self, CpLossConfig};
use crate::manifest::{
    module_versions, now_unix_ms, write_manifest, RunManifest, RunOutcome, MANIFEST_FORMAT_VERSION,
};
use crate::metrics::{write_summary, MetricsWriter, RoundMetrics, RunSummary, METRICS_FORMAT_VERSION};
use crate::model::{self, ParamVector};
use crate::rng::{derive_seed, stream};

/// The composite local objective: task loss, optional contrastive term
/// against a frozen bank snapshot, optional proximal term.
pub struct LocalObjective<'a> {
    pub use_predicted_labels: bool,
    /// (bank snapshot, loss config, smoothing epsilon)
    pub cp: Option<(&'a TaskBank, CpLossConfig, f64)>,
    /// (anchor parameters, lambda)
    pub prox: Option<(&'a ParamVector, f64)>,
}

impl LocalObjective<'_> {
    pub fn plain(use_predicted_labels: bool) -> LocalObjective<'static> {
        LocalObjective {
            use_predicted_labels,
            cp: None,
            prox: None,
        }
    }
}

/// Loss and exact gradient of the composite objective on one batch.
///
/// With no contrastive or proximal term this follows the exact same
/// floating-point path as [`model::task_loss_and_grad`].
pub fn objective_loss_and_grad(
    params: &ParamVector,
    batch: &[LabeledSample],
    objective: &LocalObjective<'_>,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Domain("objective over an empty batch".into()));
    }
    let inv_k = 1.0 / batch.len() as f64;
    let layout = &params.layout;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(*layout);

    let mut caches = Vec::with_capacity(batch.len());
    let mut instructions = Vec::with_capacity(batch.len());
    for sample in batch {
        let instr = model::sample_instruction(sample, objective.use_predicted_labels)?;
        caches.push(model::forward(params, &sample.x, instr)?);
        instructions.push(instr);
    }

    let mut d_outs = Vec::with_capacity(batch.len());
    for (sample, cache) in batch.iter().zip(&caches) {
        let mut d_out = vec![0.0; layout.act_dim];
        for (i, d) in d_out.iter_mut().enumerate() {
            let resid = cache.output[i] - sample.a[i];
            loss += 0.5 * resid * resid * inv_k;
            *d = resid * inv_k;
        }
        d_outs.push(d_out);
    }

    let cp_grads = match &objective.cp {
        Some((bank_snapshot, cp_cfg, eps_n)) => {
            let latents: Vec<Vec<f64>> = caches.iter().map(|c| c.latent.clone()).collect();
            let (cp_loss, d_latents) =
                losses::cp_loss_and_grad(&latents, &instructions, bank_snapshot, cp_cfg, *eps_n)?;
            loss += cp_loss;
            Some(d_latents)
        }
        None => None,
    };

    for (k, cache) in caches.iter().enumerate() {
        let dz: &[f64] = match &cp_grads {
            Some(g) => &g[k],
            None => &[],
        };
        model::backward_into(params, cache, &d_outs[k], dz, &mut grad);
    }

    if let Some((anchor, lambda)) = &objective.prox {
        let (prox_loss, prox_grad) = losses::prox_loss_and_grad(params, anchor, *lambda)?;
        loss += prox_loss;
        for (g, p) in grad.values.iter_mut().zip(&prox_grad.values) {
            *g += p;
        }
    }
    Ok((loss, grad))
}

/// Knobs for one client's local training pass.
pub struct LocalTrainOptions<'a> {
    pub client_id: usize,
    /// P local iterations.
    pub iters: usize,
    pub mode: LocalMode,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub use_predicted_labels: bool,
    pub cp: Option<(&'a TaskBank, CpLossConfig, f64)>,
    /// FedProx strength; the anchor is the round-start model.
    pub prox_lambda: Option<f64>,
    pub collect_prototypes: bool,
    pub eps_n: f64,
    pub seed: u64,
}

pub struct LocalTrainOutput {
    pub params: ParamVector,
    pub prototypes: Option<PrototypeUpload>,
    /// Mean batch loss per local iteration, before that iteration's updates.
    pub loss_trace: Vec<f64>,
}

/// Run P local iterations of SGD on the composite objective.
///
/// In epochs mode each iteration shuffles the local data into fresh
/// mini-batches covering it once; in steps mode each iteration is a single
/// sampled mini-batch. Encoder and decoder segments use their own rates.
pub fn local_train(
    data: &[LabeledSample],
    start: &ParamVector,
    opts: &LocalTrainOptions<'_>,
) -> Result<LocalTrainOutput> {
    if data.is_empty() {
        return Err(Error::SkipClient(opts.client_id));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut params = start.clone();
    let mut rng = stream(opts.seed);
    let n = data.len();
    let mut batch_buf: Vec<LabeledSample> = Vec::with_capacity(opts.batch_size.min(n));
    let mut loss_trace = Vec::with_capacity(opts.iters);

    for _ in 0..opts.iters {
        let mut iter_loss = 0.0;
        let mut iter_batches = 0usize;
        let batches: Vec<Vec<usize>> = match opts.mode {
            LocalMode::Epochs => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                order
                    .chunks(opts.batch_size)
                    .map(|c| c.to_vec())
                    .collect()
            }
            LocalMode::Steps => {
                let amount = opts.batch_size.min(n);
                vec![rand::seq::index::sample(&mut rng, n, amount).into_vec()]
            }
        };
        for indices in batches {
            batch_buf.clear();
            batch_buf.extend(indices.iter().map(|&i| data[i].clone()));
            let objective = LocalObjective {
                use_predicted_labels: opts.use_predicted_labels,
                cp: opts.cp,
                prox: opts.prox_lambda.map(|l| (start, l)),
            };
            let (loss, grad) = objective_loss_and_grad(&params, &batch_buf, &objective)?;
            iter_loss += loss;
            iter_batches += 1;
            for i in params.layout.encoder_range() {
                params.values[i] -= opts.lr_encoder * grad.values[i];
            }
            for i in params.layout.decoder_range() {
                params.values[i] -= opts.lr_decoder * grad.values[i];
            }
        }
        loss_trace.push(iter_loss / iter_batches.max(1) as f64);
    }

    let prototypes = if opts.collect_prototypes {
        Some(bank::compute_prototypes(
            opts.client_id,
            &params,
            data,
            opts.eps_n,
        )?)
    } else {
        None
    };
    Ok(LocalTrainOutput {
        params,
        prototypes,
        loss_trace,
    })
}

/// Independent Bernoulli participation draw for one round, keyed by the
/// master seed and round index. `p = 1` always participates.
pub fn sample_participants(probs: &[f64], round: u64, master_seed: u64) -> Vec<bool> {
    let mut rng = stream(derive_seed(master_seed, "participate", &[round]));
    probs.iter().map(|&p| rng.random::<f64>() < p).collect()
}

/// Per-task and sample-weighted global evaluation loss (mean
/// 0.5 * squared error, true task labels as instructions).
pub struct EvalReport {
    pub per_task: Vec<f64>,
    pub global: f64,
}

pub fn evaluate(params: &ParamVector, eval_sets: &[Vec<LabeledSample>]) -> Result<EvalReport> {
    let mut per_task = Vec::with_capacity(eval_sets.len());
    let mut total_loss = 0.0;
    let mut total_count = 0usize;
    for set in eval_sets {
        let mut sum = 0.0;
        for sample in set {
            let cache = model::forward(params, &sample.x, sample.t)?;
            let sq: f64 = cache
                .output
                .iter()
                .zip(&sample.a)
                .map(|(y, a)| (y - a) * (y - a))
                .sum();
            sum += 0.5 * sq;
        }
        per_task.push(if set.is_empty() { 0.0 } else { sum / set.len() as f64 });
        total_loss += sum;
        total_count += set.len();
    }
    let global = if total_count == 0 {
        0.0
    } else {
        total_loss / total_count as f64
    };
    Ok(EvalReport { per_task, global })
}

/// One round's full output: the metrics row plus the diagnostic artifacts
/// emitted alongside it.
pub struct RoundOutput {
    pub metrics: RoundMetrics,
    pub distances: diagnostics::DistanceMatrix,
    pub pca: Vec<[f64; 2]>,
}

/// Materialized run state: global model, bank, client corpora, eval sets.
pub struct Engine {
    cfg: FederationConfig,
    pub params: ParamVector,
    pub bank: TaskBank,
    client_data: Vec<Vec<LabeledSample>>,
    eval_sets: Vec<Vec<LabeledSample>>,
    /// Normalized client weights w_i of the effective clients.
    weights: Vec<f64>,
    /// Participation probabilities of the effective clients.
    probs: Vec<f64>,
    gamma_pi: f64,
    /// 0-based index of the next round to execute.
    pub next_round: u64,
    pub initial_eval: EvalReport,
}

fn build_corpora(
    cfg: &FederationConfig,
) -> Result<(Vec<Vec<LabeledSample>>, Vec<Vec<LabeledSample>>)> {
    let task_set = datagen::generate_task_set_with_noise(
        cfg.n_tasks,
        cfg.in_dim,
        cfg.act_dim,
        cfg.noise_std,
        derive_seed(cfg.seed, "taskgen", &[]),
    )?;
    let partition = datagen::partition_clients(
        cfg.n_tasks,
        cfg.n_clients,
        cfg.tasks_per_client,
        derive_seed(cfg.seed, "partition", &[]),
    )?;
    let confusion = labeler::build_confusion(cfg.n_tasks, cfg.labeler_accuracy)?;

    let mut client_data = Vec::with_capacity(cfg.n_clients);
    for (client, tasks) in partition.assignments.iter().enumerate() {
        let budget = cfg.samples_per_client[client];
        let base = budget / tasks.len();
        let remainder = budget % tasks.len();
        let mut data = Vec::with_capacity(budget);
        for (slot, &task) in tasks.iter().enumerate() {
            let count = base + usize::from(slot < remainder);
            if count == 0 {
                continue;
            }
            let seed = derive_seed(cfg.seed, "synth", &[client as u64, task as u64]);
            data.extend(datagen::synth_dataset(&task_set.specs[task], count, seed)?);
        }
        labeler::annotate(
            &mut data,
            &confusion,
            derive_seed(cfg.seed, "annotate", &[client as u64]),
        )?;
        client_data.push(data);
    }

    let mut eval_sets = Vec::with_capacity(cfg.n_tasks);
    for task in 0..cfg.n_tasks {
        let seed = derive_seed(cfg.seed, "eval", &[task as u64]);
        eval_sets.push(datagen::synth_dataset(
            &task_set.specs[task],
            cfg.eval_samples_per_task,
            seed,
        )?);
    }
    Ok((client_data, eval_sets))
}

impl Engine {
    pub fn new(cfg: FederationConfig) -> Result<Engine> {
        cfg.validate()?;
        let (client_data, eval_sets) = build_corpora(&cfg)?;

        // The centralized baseline trains one pooled client through the
        // same round pipeline (aggregation of one).
        let (client_data, weights, probs) = if cfg.method == Method::Centralized {
            let pooled: Vec<LabeledSample> = client_data.into_iter().flatten().collect();
            (vec![pooled], vec![1.0], vec![1.0])
        } else {
            (client_data, cfg.client_weights(), cfg.participation.clone())
        };

        let params = model::init_params(
            cfg.in_dim,
            cfg.n_tasks,
            cfg.hidden_dim,
            cfg.latent_dim,
            cfg.act_dim,
            derive_seed(cfg.seed, "init_params", &[]),
        )?;
        let bank = bank::init_bank(
            cfg.n_tasks,
            cfg.latent_dim,
            derive_seed(cfg.seed, "init_bank", &[]),
        )?;
        let gamma_pi = diagnostics::participation_inflation(&weights, &[probs.clone()]);
        let initial_eval = evaluate(&params, &eval_sets)?;
        Ok(Engine {
            cfg,
            params,
            bank,
            client_data,
            eval_sets,
            weights,
            probs,
            gamma_pi,
            next_round: 0,
            initial_eval,
        })
    }

    /// Rebuild an engine from a checkpoint, regenerating corpora from the
    /// config. The checkpoint must match the config's shapes.
    pub fn from_checkpoint(cfg: FederationConfig, ckpt_path: &Path) -> Result<Engine> {
        let ckpt = read_checkpoint(ckpt_path)?;
        let mut engine = Engine::new(cfg)?;
        if ckpt.params.layout != engine.params.layout {
            return Err(Error::DataIntegrity(
                "checkpoint layout does not match the config's model shape".into(),
            ));
        }
        if ckpt.bank.num_tasks() != engine.bank.num_tasks()
            || ckpt.bank.latent_dim() != engine.bank.latent_dim()
        {
            return Err(Error::DataIntegrity(
                "checkpoint bank shape does not match the config".into(),
            ));
        }
        engine.params = ckpt.params;
        engine.bank = ckpt.bank;
        engine.next_round = ckpt.header.round;
        Ok(engine)
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn client_dataset(&self, client: usize) -> &[LabeledSample] {
        &self.client_data[client]
    }

    pub fn eval_sets(&self) -> &[Vec<LabeledSample>] {
        &self.eval_sets
    }

    pub fn client_weights(&self) -> &[f64] {
        &self.weights
    }

    fn cp_term(&self) -> Option<(&TaskBank, CpLossConfig, f64)> {
        if self.cfg.method == Method::ForgeVla {
            Some((&self.bank, self.cfg.cp, self.cfg.eps_n))
        } else {
            None
        }
    }

    /// Full-batch gradient dissimilarity of the round objective at the
    /// current global model.
    fn round_dissimilarity(&self) -> Result<f64> {
        let mut grads = Vec::with_capacity(self.client_data.len());
        for data in &self.client_data {
            let objective = LocalObjective {
                use_predicted_labels: true,
                cp: self.cp_term(),
                // The proximal gradient vanishes at the anchor itself.
                prox: None,
            };
            let (_, grad) = objective_loss_and_grad(&self.params, data, &objective)?;
            grads.push(grad.values);
        }
        diagnostics::gradient_dissimilarity(&grads, &self.weights)
    }

    /// Execute one communication round.
    pub fn run_round(&mut self) -> Result<RoundOutput> {
        let start = Instant::now();
        let e = self.next_round;
        let round_no = e + 1;
        let participation = sample_participants(&self.probs, e, self.cfg.seed);
        let xi = self.round_dissimilarity()?;

        let mut updates: Vec<ClientUpdate> = Vec::new();
        let mut update_weights: Vec<f64> = Vec::new();
        let mut uploads: Vec<PrototypeUpload> = Vec::new();
        let sampled_w = aggregation::sampled_weights(&self.weights, &participation, &self.probs)?;
        for client in 0..self.client_data.len() {
            if !participation[client] {
                continue;
            }
            let opts = LocalTrainOptions {
                client_id: client,
                iters: self.cfg.local_iters,
                mode: self.cfg.local_mode,
                batch_size: self.cfg.batch_size,
                lr_encoder: self.cfg.lr_encoder,
                lr_decoder: self.cfg.lr_decoder,
                use_predicted_labels: true,
                cp: self.cp_term(),
                prox_lambda: if self.cfg.method == Method::FedProx {
                    self.cfg.lambda_prox
                } else {
                    None
                },
                collect_prototypes: self.cfg.method == Method::ForgeVla,
                eps_n: self.cfg.eps_n,
                seed: derive_seed(self.cfg.seed, "local_train", &[e, client as u64]),
            };
            let output = match local_train(&self.client_data[client], &self.params, &opts) {
                Ok(out) => out,
                Err(Error::SkipClient(id)) => {
                    log::warn!("round {round_no}: client {id} skipped (no local data)");
                    continue;
                }
                Err(other) => return Err(other),
            };
            let delta: Vec<f64> = output
                .params
                .values
                .iter()
                .zip(&self.params.values)
                .map(|(new, old)| new - old)
                .collect();
            updates.push(ClientUpdate {
                client_id: client,
                delta,
                num_samples: self.client_data[client].len(),
            });
            update_weights.push(sampled_w[client]);
            if let Some(upload) = output.prototypes {
                uploads.push(upload);
            }
        }

        let bank_path_len;
        let contributors: Vec<usize>;
        if updates.is_empty() {
            // Nobody participated: keep the model and bank, log the event.
            log::warn!("round {round_no}: empty participating set, skipping update");
            bank_path_len = 0.0;
            contributors = Vec::new();
        } else {
            contributors = updates.iter().map(|u| u.client_id).collect();
            if self.cfg.method == Method::ForgeVla {
                uploads.sort_by_key(|u| u.client_id);
                let refreshed = bank::refresh_bank(&self.bank, &uploads, self.cfg.eps_n)?;
                bank_path_len = refreshed.frobenius_distance(&self.bank)?;
                self.bank = refreshed;
            } else {
                bank_path_len = 0.0;
            }
            let next_params = match self.cfg.method {
                Method::ForgeVla if self.cfg.ag_enabled => aggregation::adaptive_aggregate(
                    &self.params,
                    &updates,
                    &update_weights,
                    &self.cfg.agg,
                )?,
                _ => aggregation::fedavg_anchor(&self.params, &updates, &update_weights)?,
            };
            if log::log_enabled!(log::Level::Debug) {
                let avg = aggregation::fedavg_displacement(
                    self.params.len(),
                    &updates,
                    &update_weights,
                )?;
                let avg_norm: f64 = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
                let step: f64 = next_params
                    .values
                    .iter()
                    .zip(&self.params.values)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let g_norms: Vec<f64> = updates
                    .iter()
                    .map(|u| u.delta.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                log::debug!(
                    "round {round_no}: |avg|={avg_norm:.4} |step|={step:.4} mean|g|={:.4}",
                    g_norms.iter().sum::<f64>() / g_norms.len() as f64
                );
            }
            if !next_params.is_finite() {
                return Err(Error::Divergence { round: round_no });
            }
            self.params = next_params;
        }

        let eval = evaluate(&self.params, &self.eval_sets)?;
        if !eval.global.is_finite() {
            return Err(Error::Divergence { round: round_no });
        }
        let centroids = diagnostics::task_centroids(&self.params, &self.eval_sets, self.cfg.eps_n)?;
        let (distances, collapse_score) = diagnostics::centroid_distances(&centroids);
        let pca = diagnostics::pca_projection(&centroids);

        self.next_round = round_no;
        Ok(RoundOutput {
            metrics: RoundMetrics {
                round: round_no,
                global_loss: eval.global,
                per_task_loss: eval.per_task,
                participants: contributors,
                grad_dissimilarity: xi,
                participation_inflation: self.gamma_pi,
                bank_path_len,
                collapse_score,
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            },
            distances,
            pca,
        })
    }
}

/// Artifacts of a completed (or resumed) run.
pub struct RunArtifacts {
    pub metrics: Vec<RoundMetrics>,
    pub summary: RunSummary,
}

struct OutputFiles {
    metrics: MetricsWriter,
    distances: std::io::BufWriter<std::fs::File>,
    pca: std::io::BufWriter<std::fs::File>,
    dir: std::path::PathBuf,
}

impl OutputFiles {
    fn create(dir: &Path, m: usize) -> Result<OutputFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let metrics = MetricsWriter::create(&dir.join("metrics.csv"), m)?;
        let open = |name: &str, header: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            let path = dir.join(name);
            let file = std::fs::File::create(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut w = std::io::BufWriter::new(file);
            use std::io::Write;
            writeln!(w, "{header}").map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(w)
        };
        Ok(OutputFiles {
            metrics,
            distances: open("distances.csv", "round,task_i,task_j,distance")?,
            pca: open("pca.csv", "round,task,pc1,pc2")?,
        dir: dir.to_path_buf(),
        })
    }

    fn append(&mut self, out: &RoundOutput) -> Result<()> {
        use std::io::Write;
        self.metrics.append(&out.metrics)?;
        let io_err = |e| Error::io(self.dir.display().to_string(), e);
        let m = out.distances.size();
        for i in 0..m {
            for j in (i + 1)..m {
                writeln!(
                    self.distances,
                    "{},{i},{j},{}",
                    out.metrics.round,
                    out.distances.entry(i, j)
                )
                .map_err(io_err)?;
            }
        }
        for (task, point) in out.pca.iter().enumerate() {
            writeln!(
                self.pca,
                "{},{task},{},{}",
                out.metrics.round, point[0], point[1]
            )
            .map_err(io_err)?;
        }
        self.distances.flush().map_err(io_err)?;
        self.pca.flush().map_err(io_err)
    }
}

fn summarize(
    cfg: &FederationConfig,
    engine: &Engine,
    metrics: &[RoundMetrics],
) -> RunSummary {
    let last = metrics.last();
    RunSummary {
        format_version: METRICS_FORMAT_VERSION,
        config: emit_config(cfg),
        rounds_completed: engine.next_round,
        initial_global_loss: engine.initial_eval.global,
        final_global_loss: last.map(|m| m.global_loss).unwrap_or(engine.initial_eval.global),
        final_per_task_loss: last
            .map(|m| m.per_task_loss.clone())
            .unwrap_or_else(|| engine.initial_eval.per_task.clone()),
        final_collapse_score: last.map(|m| m.collapse_score).unwrap_or(0.0),
        mean_grad_dissimilarity: if metrics.is_empty() {
            0.0
        } else {
            metrics.iter().map(|m| m.grad_dissimilarity).sum::<f64>() / metrics.len() as f64
        },
        total_bank_path_length: metrics.iter().map(|m| m.bank_path_len).sum(),
        participation_inflation: engine.gamma_pi,
        total_wall_time_ms: metrics.iter().map(|m| m.wall_time_ms).sum(),
    }
}

fn drive(
    mut engine: Engine,
    cfg: &FederationConfig,
    out_dir: Option<&Path>,
    started_unix_ms: u128,
) -> Result<RunArtifacts> {
    let mut files = match out_dir {
        Some(dir) => Some(OutputFiles::create(dir, cfg.n_tasks)?),
        None => None,
    };
    let mut metrics = Vec::new();
    let mut outcome = RunOutcome::Completed;
    let mut run_error = None;

    while engine.next_round < cfg.rounds {
        match engine.run_round() {
            Ok(out) => {
                if let Some(files) = files.as_mut() {
                    files.append(&out)?;
                }
                metrics.push(out.metrics);
            }
            Err(err @ Error::Divergence { .. }) => {
                outcome = RunOutcome::Diverged;
                run_error = Some(err);
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let summary = summarize(cfg, &engine, &metrics);
    if let Some(dir) = out_dir {
        if outcome == RunOutcome::Completed {
            write_checkpoint(
                &dir.join("checkpoint.bin"),
                engine.next_round,
                &engine.params,
                &engine.bank,
            )?;
        }
        write_summary(&dir.join("summary.json"), &summary)?;
        // Manifest goes last.
        write_manifest(
            &dir.join("manifest.json"),
            &RunManifest {
                format_version: MANIFEST_FORMAT_VERSION,
                master_seed: cfg.seed,
                config: emit_config(cfg),
                started_unix_ms,
                finished_unix_ms: now_unix_ms(),
                module_versions: module_versions(),
                outcome,
            },
        )?;
    }
    match run_error {
        Some(err) => Err(err),
        None => Ok(RunArtifacts { metrics, summary }),
    }
}

/// Run a full experiment. With an output directory this writes
/// `metrics.csv`, `distances.csv`, `pca.csv`, `checkpoint.bin`,
/// `summary.json`, and finally `manifest.json`.
pub fn run_experiment(cfg: &FederationConfig, out_dir: Option<&Path>) -> Result<RunArtifacts> {
    let started = now_unix_ms();
    let engine = Engine::new(cfg.clone())?;
    drive(engine, cfg, out_dir, started)
}

/// Resume from a checkpoint and run the remaining rounds up to
/// `cfg.rounds`. Emits the same artifact set covering only the resumed
/// rounds.
pub fn resume_experiment(
    cfg: &FederationConfig,
    ckpt_path: &Path,
    out_dir: Option<&Path>,
) -> Result<RunArtifacts> {
    let started = now_unix_ms();
    let engine = Engine::from_checkpoint(cfg.clone(), ckpt_path)?;
    drive(engine, cfg, out_dir, started)
}
