//! Preset experiment grids: the FedProx sweep, the component ablation, the
//! hyperparameter sensitivity grid, and the collapse comparison.
//!
//! Each cell runs in its own subdirectory with the full artifact set; a
//! diverged cell is recorded and the grid continues. The grid summary JSON
//! collects per-cell outcomes.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{FederationConfig, Method};
use crate::error::{Error, Result};
use crate::federation::run_experiment;
use crate::metrics::METRICS_FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table2FedproxSweep,
    Table4Ablation,
    Table5Sensitivity,
    Fig2Collapse,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "table2_fedprox_sweep" => Ok(Preset::Table2FedproxSweep),
            "table4_ablation" => Ok(Preset::Table4Ablation),
            "table5_sensitivity" => Ok(Preset::Table5Sensitivity),
            "fig2_collapse" => Ok(Preset::Fig2Collapse),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (expected table2_fedprox_sweep|table4_ablation|table5_sensitivity|fig2_collapse)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Table2FedproxSweep => "table2_fedprox_sweep",
            Preset::Table4Ablation => "table4_ablation",
            Preset::Table5Sensitivity => "table5_sensitivity",
            Preset::Fig2Collapse => "fig2_collapse",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetCellReport {
    pub name: String,
    pub status: String,
    pub final_global_loss: Option<f64>,
    pub final_collapse_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetReport {
    pub preset: String,
    pub format_version: u32,
    pub cells: Vec<PresetCellReport>,
}

fn with_method(base: &FederationConfig, method: Method) -> FederationConfig {
    let mut cfg = base.clone();
    cfg.method = method;
    cfg.lambda_prox = None;
    cfg
}

fn fedprox(base: &FederationConfig, lambda: f64) -> FederationConfig {
    let mut cfg = with_method(base, Method::FedProx);
    cfg.lambda_prox = Some(lambda);
    cfg
}

fn cells_for(preset: Preset, base: &FederationConfig) -> Vec<(String, FederationConfig)> {
    let mut cells = Vec::new();
    match preset {
        Preset::Table2FedproxSweep => {
            for lambda in [0.0, 0.1, 0.2, 0.5] {
                cells.push((format!("fedprox_lambda_{lambda}"), fedprox(base, lambda)));
            }
            cells.push(("forgevla_reference".into(), with_method(base, Method::ForgeVla)));
        }
        Preset::Table4Ablation => {
            cells.push(("neither".into(), with_method(base, Method::FedAvg)));
            let mut cp_only = with_method(base, Method::ForgeVla);
            cp_only.ag_enabled = false;
            cells.push(("cp_only".into(), cp_only));
            let mut ag_only = with_method(base, Method::ForgeVla);
            ag_only.cp.alpha_cp = 0.0;
            cells.push(("ag_only".into(), ag_only));
            cells.push(("both".into(), with_method(base, Method::ForgeVla)));
        }
        Preset::Table5Sensitivity => {
            for s in [1usize, 2, 3, 5, 10] {
                if s > base.n_tasks {
                    continue;
                }
                for method in [Method::FedAvg, Method::ForgeVla] {
                    let mut cfg = with_method(base, method);
                    cfg.tasks_per_client = s;
                    cells.push((format!("s_{s}_{method}"), cfg));
                }
            }
            for alpha_cp in [0.0, 0.1, 0.2, 0.5, 1.0, 2.0] {
                let mut cfg = with_method(base, Method::ForgeVla);
                cfg.cp.alpha_cp = alpha_cp;
                cells.push((format!("alpha_cp_{alpha_cp}"), cfg));
            }
            for alpha_ag in [0.0, 0.05, 0.1, 0.2] {
                let mut cfg = with_method(base, Method::ForgeVla);
                cfg.agg.alpha_ag = alpha_ag;
                cells.push((format!("alpha_ag_{alpha_ag}"), cfg));
            }
            // Capacity analog of the adapter-rank axis: hidden width.
            for hidden in [16usize, 32, 64] {
                for method in [Method::FedAvg, Method::ForgeVla] {
                    let mut cfg = with_method(base, method);
                    cfg.hidden_dim = hidden;
                    cells.push((format!("hidden_{hidden}_{method}"), cfg));
                }
            }
        }
        Preset::Fig2Collapse => {
            cells.push(("centralized".into(), with_method(base, Method::Centralized)));
            cells.push(("fedavg".into(), with_method(base, Method::FedAvg)));
            cells.push(("fedprox_lambda_0.5".into(), fedprox(base, 0.5)));
            cells.push(("forgevla".into(), with_method(base, Method::ForgeVla)));
        }
    }
    cells
}

/// Run every cell of a preset grid under `out_dir`, one subdirectory per
/// cell, and write `grid_summary.json`.
pub fn run_preset(preset: Preset, base: &FederationConfig, out_dir: &Path) -> Result<PresetReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut report = PresetReport {
        preset: preset.name().to_string(),
        format_version: METRICS_FORMAT_VERSION,
        cells: Vec::new(),
    };
    for (name, cfg) in cells_for(preset, base) {
        let cell_dir = out_dir.join(&name);
        let cell = match run_experiment(&cfg, Some(&cell_dir)) {
            Ok(artifacts) => PresetCellReport {
                name: name.clone(),
                status: "completed".into(),
                final_global_loss: Some(artifacts.summary.final_global_loss),
                final_collapse_score: Some(artifacts.summary.final_collapse_score),
            },
            Err(Error::Divergence { round }) => {
                log::warn!("preset cell {name} diverged at round {round}");
                PresetCellReport {
                    name: name.clone(),
                    status: format!("diverged_at_round_{round}"),
                    final_global_loss: None,
                    final_collapse_score: None,
                }
            }
            Err(other) => return Err(other),
        };
        report.cells.push(cell);
    }
    let path = out_dir.join("grid_summary.json");
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(report)
}
