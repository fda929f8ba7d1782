//! Run configuration: flat `key=value` text files, defaults, validation,
//! and a round-trippable emitter.
//!
//! Unknown or duplicate keys are hard errors carrying the line number.
//! Scalar values for `participation` and `samples_per_client` broadcast to
//! all clients; comma lists give per-client values.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::aggregation::AggregationConfig;
use crate::error::{Error, Result};
use crate::losses::CpLossConfig;

/// Aggregation/training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Centralized,
    FedAvg,
    FedProx,
    ForgeVla,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "centralized" => Ok(Method::Centralized),
            "fedavg" => Ok(Method::FedAvg),
            "fedprox" => Ok(Method::FedProx),
            "forgevla" => Ok(Method::ForgeVla),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}' (expected centralized|fedavg|fedprox|forgevla)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Centralized => "centralized",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::ForgeVla => "forgevla",
        };
        f.write_str(name)
    }
}

/// How the P local iterations are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMode {
    /// Each iteration is one pass over the local data in fresh mini-batches.
    Epochs,
    /// Each iteration is a single mini-batch step.
    Steps,
}

impl FromStr for LocalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<LocalMode> {
        match s {
            "epochs" => Ok(LocalMode::Epochs),
            "steps" => Ok(LocalMode::Steps),
            other => Err(Error::InvalidConfig(format!(
                "unknown local_mode '{other}' (expected epochs|steps)"
            ))),
        }
    }
}

impl fmt::Display for LocalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocalMode::Epochs => "epochs",
            LocalMode::Steps => "steps",
        })
    }
}

/// Everything a run needs. All fields are resolved (no pending defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub n_tasks: usize,
    pub tasks_per_client: usize,
    pub rounds: u64,
    pub local_iters: usize,
    pub local_mode: LocalMode,
    pub batch_size: usize,
    /// Single multiplier rescaling the backbone-scale rates to the toy model.
    pub lr_scale: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub method: Method,
    /// Proximal strength; present exactly when method = fedprox.
    pub lambda_prox: Option<f64>,
    /// Per-client participation probabilities, length `n_clients`.
    pub participation: Vec<f64>,
    pub labeler_accuracy: f64,
    pub cp: CpLossConfig,
    pub agg: AggregationConfig,
    /// When false the adaptive solve is replaced by the sampled average
    /// (component ablation switch; only meaningful for forgevla).
    pub ag_enabled: bool,
    pub eps_n: f64,
    pub seed: u64,
    pub in_dim: usize,
    pub act_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Per-client sample counts, length `n_clients`.
    pub samples_per_client: Vec<usize>,
    pub eval_samples_per_task: usize,
    pub noise_std: f64,
}

pub const DEFAULT_LR_SCALE: f64 = 500.0;
/// Backbone-scale base rates for the two segments.
pub const BASE_LR_ENCODER: f64 = 1e-5;
pub const BASE_LR_DECODER: f64 = 1e-4;
pub const DEFAULT_LAMBDA_PROX: f64 = 0.1;

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            n_clients: 10,
            n_tasks: 10,
            tasks_per_client: 3,
            rounds: 20,
            local_iters: 5,
            local_mode: LocalMode::Epochs,
            batch_size: 32,
            lr_scale: DEFAULT_LR_SCALE,
            lr_encoder: BASE_LR_ENCODER * DEFAULT_LR_SCALE,
            lr_decoder: BASE_LR_DECODER * DEFAULT_LR_SCALE,
            method: Method::ForgeVla,
            lambda_prox: None,
            participation: vec![1.0; 10],
            labeler_accuracy: 0.9230,
            cp: CpLossConfig {
                alpha_cp: 0.2,
                tau: 0.07,
            },
            agg: AggregationConfig {
                alpha_ag: 0.1,
                eps_ag: 1e-8,
            },
            ag_enabled: true,
            eps_n: 1e-3,
            seed: 0,
            in_dim: 16,
            act_dim: 4,
            hidden_dim: 32,
            latent_dim: 16,
            samples_per_client: vec![300; 10],
            eval_samples_per_task: 200,
            noise_std: 0.1,
        }
    }
}

impl FederationConfig {
    /// Normalized client weights `w_i = K_i / sum K_j`.
    pub fn client_weights(&self) -> Vec<f64> {
        let total: usize = self.samples_per_client.iter().sum();
        self.samples_per_client
            .iter()
            .map(|&k| k as f64 / total as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.n_tasks == 0 || self.rounds == 0 || self.local_iters == 0 {
            return Err(Error::InvalidConfig(
                "n_clients, n_tasks, rounds, and local_iters must all be >= 1".into(),
            ));
        }
        if self.tasks_per_client == 0 || self.tasks_per_client > self.n_tasks {
            return Err(Error::InvalidConfig(format!(
                "tasks_per_client={} violates the s <= M invariant (n_tasks={})",
                self.tasks_per_client, self.n_tasks
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lr_scale", self.lr_scale),
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        match (self.method, self.lambda_prox) {
            (Method::FedProx, Some(l)) if l >= 0.0 => {}
            (Method::FedProx, Some(l)) => {
                return Err(Error::InvalidConfig(format!(
                    "lambda_prox must be >= 0, got {l}"
                )));
            }
            (Method::FedProx, None) => {
                return Err(Error::InvalidConfig(
                    "method=fedprox requires lambda_prox".into(),
                ));
            }
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "lambda_prox is only valid with method=fedprox".into(),
                ));
            }
            (_, None) => {}
        }
        if self.participation.len() != self.n_clients {
            return Err(Error::InvalidConfig(format!(
                "participation has {} entries for {} clients",
                self.participation.len(),
                self.n_clients
            )));
        }
        for (i, &p) in self.participation.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "participation probability for client {i} must lie in (0, 1], got {p}"
                )));
            }
        }
        if !(self.labeler_accuracy > 0.0 && self.labeler_accuracy <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "labeler_accuracy must lie in (0, 1], got {}",
                self.labeler_accuracy
            )));
        }
        self.cp.validate()?;
        self.agg.validate()?;
        if !(self.eps_n > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps_n must be > 0, got {}",
                self.eps_n
            )));
        }
        if self.in_dim == 0 || self.act_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1".into()));
        }
        if self.samples_per_client.len() != self.n_clients {
            return Err(Error::InvalidConfig(format!(
                "samples_per_client has {} entries for {} clients",
                self.samples_per_client.len(),
                self.n_clients
            )));
        }
        if self.samples_per_client.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig(
                "every client needs at least one sample".into(),
            ));
        }
        if self.eval_samples_per_task == 0 {
            return Err(Error::InvalidConfig(
                "eval_samples_per_task must be >= 1".into(),
            ));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

fn fmt_f64_list(values: &[f64]) -> String {
    if values.iter().all(|v| v == &values[0]) {
        format!("{}", values[0])
    } else {
        values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn fmt_usize_list(values: &[usize]) -> String {
    if values.iter().all(|v| v == &values[0]) {
        format!("{}", values[0])
    } else {
        values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Serialize a config as `key=value` lines. `parse_config` of the output
/// reproduces the input exactly.
pub fn emit_config(cfg: &FederationConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    };
    push("method", cfg.method.to_string());
    if let Some(l) = cfg.lambda_prox {
        push("lambda_prox", l.to_string());
    }
    push("seed", cfg.seed.to_string());
    push("n_clients", cfg.n_clients.to_string());
    push("n_tasks", cfg.n_tasks.to_string());
    push("tasks_per_client", cfg.tasks_per_client.to_string());
    push("rounds", cfg.rounds.to_string());
    push("local_iters", cfg.local_iters.to_string());
    push("local_mode", cfg.local_mode.to_string());
    push("batch_size", cfg.batch_size.to_string());
    push("lr_scale", cfg.lr_scale.to_string());
    push("lr_encoder", cfg.lr_encoder.to_string());
    push("lr_decoder", cfg.lr_decoder.to_string());
    push("participation", fmt_f64_list(&cfg.participation));
    push("labeler_accuracy", cfg.labeler_accuracy.to_string());
    push("alpha_cp", cfg.cp.alpha_cp.to_string());
    push("tau", cfg.cp.tau.to_string());
    push("alpha_ag", cfg.agg.alpha_ag.to_string());
    push("eps_ag", cfg.agg.eps_ag.to_string());
    push("ag_enabled", cfg.ag_enabled.to_string());
    push("eps_n", cfg.eps_n.to_string());
    push("in_dim", cfg.in_dim.to_string());
    push("act_dim", cfg.act_dim.to_string());
    push("hidden_dim", cfg.hidden_dim.to_string());
    push("latent_dim", cfg.latent_dim.to_string());
    push("samples_per_client", fmt_usize_list(&cfg.samples_per_client));
    push("eval_samples_per_task", cfg.eval_samples_per_task.to_string());
    push("noise_std", cfg.noise_std.to_string());
    out
}

struct RawEntry {
    value: String,
    line: usize,
}

fn parse_scalar<T: FromStr>(entry: &RawEntry, key: &str) -> Result<T> {
    entry.value.parse::<T>().map_err(|_| Error::ConfigParse {
        line: entry.line,
        msg: format!("cannot parse {key}='{}'", entry.value),
    })
}

fn parse_f64_list(entry: &RawEntry, key: &str, n: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = entry.value.split(',').map(str::trim).collect();
    let values: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>().map_err(|_| Error::ConfigParse {
                line: entry.line,
                msg: format!("cannot parse {key} entry '{p}'"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() == 1 {
        Ok(vec![values[0]; n])
    } else if values.len() == n {
        Ok(values)
    } else {
        Err(Error::ConfigParse {
            line: entry.line,
            msg: format!("{key} needs 1 or {n} entries, got {}", values.len()),
        })
    }
}

fn parse_usize_list(entry: &RawEntry, key: &str, n: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = entry.value.split(',').map(str::trim).collect();
    let values: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.parse::<usize>().map_err(|_| Error::ConfigParse {
                line: entry.line,
                msg: format!("cannot parse {key} entry '{p}'"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() == 1 {
        Ok(vec![values[0]; n])
    } else if values.len() == n {
        Ok(values)
    } else {
        Err(Error::ConfigParse {
            line: entry.line,
            msg: format!("{key} needs 1 or {n} entries, got {}", values.len()),
        })
    }
}

const KNOWN_KEYS: &[&str] = &[
    "method",
    "lambda_prox",
    "seed",
    "n_clients",
    "n_tasks",
    "tasks_per_client",
    "rounds",
    "local_iters",
    "local_mode",
    "batch_size",
    "lr_scale",
    "lr_encoder",
    "lr_decoder",
    "participation",
    "labeler_accuracy",
    "alpha_cp",
    "tau",
    "alpha_ag",
    "eps_ag",
    "ag_enabled",
    "eps_n",
    "in_dim",
    "act_dim",
    "hidden_dim",
    "latent_dim",
    "samples_per_client",
    "eval_samples_per_task",
    "noise_std",
];

/// Parse config text. Missing keys take their defaults; an empty file is
/// the default preset. The result is always validated.
pub fn parse_config(text: &str) -> Result<FederationConfig> {
    let mut entries: Vec<(String, RawEntry)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            line: line_no,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: format!("unknown key '{key}'"),
            });
        }
        if entries.iter().any(|(k, _)| k == &key) {
            return Err(Error::ConfigParse {
                line: line_no,
                msg: format!("duplicate key '{key}'"),
            });
        }
        entries.push((key, RawEntry { value, line: line_no }));
    }
    let get = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, e)| e);

    let mut cfg = FederationConfig::default();
    if let Some(e) = get("method") {
        cfg.method = e.value.parse().map_err(|err| Error::ConfigParse {
            line: e.line,
            msg: format!("{err}"),
        })?;
    }
    cfg.lambda_prox = match (cfg.method, get("lambda_prox")) {
        (_, Some(e)) => Some(parse_scalar::<f64>(e, "lambda_prox")?),
        (Method::FedProx, None) => Some(DEFAULT_LAMBDA_PROX),
        (_, None) => None,
    };
    if let Some(e) = get("seed") {
        cfg.seed = parse_scalar(e, "seed")?;
    }
    if let Some(e) = get("n_clients") {
        cfg.n_clients = parse_scalar(e, "n_clients")?;
    }
    if let Some(e) = get("n_tasks") {
        cfg.n_tasks = parse_scalar(e, "n_tasks")?;
    }
    if let Some(e) = get("tasks_per_client") {
        cfg.tasks_per_client = parse_scalar(e, "tasks_per_client")?;
    }
    if let Some(e) = get("rounds") {
        cfg.rounds = parse_scalar(e, "rounds")?;
    }
    if let Some(e) = get("local_iters") {
        cfg.local_iters = parse_scalar(e, "local_iters")?;
    }
    if let Some(e) = get("local_mode") {
        cfg.local_mode = e.value.parse().map_err(|err| Error::ConfigParse {
            line: e.line,
            msg: format!("{err}"),
        })?;
    }
    if let Some(e) = get("batch_size") {
        cfg.batch_size = parse_scalar(e, "batch_size")?;
    }
    if let Some(e) = get("lr_scale") {
        cfg.lr_scale = parse_scalar(e, "lr_scale")?;
    }
    // The segment rates default to base-rate * lr_scale unless given.
    cfg.lr_encoder = match get("lr_encoder") {
        Some(e) => parse_scalar(e, "lr_encoder")?,
        None => BASE_LR_ENCODER * cfg.lr_scale,
    };
    cfg.lr_decoder = match get("lr_decoder") {
        Some(e) => parse_scalar(e, "lr_decoder")?,
        None => BASE_LR_DECODER * cfg.lr_scale,
    };
    if let Some(e) = get("labeler_accuracy") {
        cfg.labeler_accuracy = parse_scalar(e, "labeler_accuracy")?;
    }
    if let Some(e) = get("alpha_cp") {
        cfg.cp.alpha_cp = parse_scalar(e, "alpha_cp")?;
    }
    if let Some(e) = get("tau") {
        cfg.cp.tau = parse_scalar(e, "tau")?;
    }
    if let Some(e) = get("alpha_ag") {
        cfg.agg.alpha_ag = parse_scalar(e, "alpha_ag")?;
    }
    if let Some(e) = get("eps_ag") {
        cfg.agg.eps_ag = parse_scalar(e, "eps_ag")?;
    }
    if let Some(e) = get("ag_enabled") {
        cfg.ag_enabled = parse_scalar(e, "ag_enabled")?;
    }
    if let Some(e) = get("eps_n") {
        cfg.eps_n = parse_scalar(e, "eps_n")?;
    }
    if let Some(e) = get("in_dim") {
        cfg.in_dim = parse_scalar(e, "in_dim")?;
    }
    if let Some(e) = get("act_dim") {
        cfg.act_dim = parse_scalar(e, "act_dim")?;
    }
    if let Some(e) = get("hidden_dim") {
        cfg.hidden_dim = parse_scalar(e, "hidden_dim")?;
    }
    if let Some(e) = get("latent_dim") {
        cfg.latent_dim = parse_scalar(e, "latent_dim")?;
    }
    if let Some(e) = get("eval_samples_per_task") {
        cfg.eval_samples_per_task = parse_scalar(e, "eval_samples_per_task")?;
    }
    if let Some(e) = get("noise_std") {
        cfg.noise_std = parse_scalar(e, "noise_std")?;
    }
    cfg.participation = match get("participation") {
        Some(e) => parse_f64_list(e, "participation", cfg.n_clients)?,
        None => vec![1.0; cfg.n_clients],
    };
    cfg.samples_per_client = match get("samples_per_client") {
        Some(e) => parse_usize_list(e, "samples_per_client", cfg.n_clients)?,
        None => vec![300; cfg.n_clients],
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<FederationConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text)
}
