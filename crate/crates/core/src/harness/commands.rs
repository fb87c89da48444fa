//! `gen-data`, `train`, `compare-em` and `diagnose`.
//!
//! Every JSON report carries `artifact_version` and, where a config drove
//! the run, the config echo. Files in `output_dir`:
//!
//! | command      | files                                                  |
//! |--------------|--------------------------------------------------------|
//! | `gen-data`   | `dataset.csv`                                          |
//! | `train`      | `config.json`, `trace.csv`, `report.json`, `params.json` |
//! | `compare-em` | `config.json`, `compare_em.json`                       |
//!
//! `diagnose` writes next to the trace unless told otherwise.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::diagnostics::{diagnostic_report, DiagnosticReport};
use crate::distance::{AttentionParams, PrototypeBank};
use crate::error::{Error, Result};
use crate::harness::config::{DataSpec, ExperimentConfig};
use crate::harness::io::{dataset_to_csv, to_report_json, trace_from_csv, trace_to_csv, write_atomic};
use crate::numeric::squared_distance;
use crate::regimes::{
    classification_accuracy, init_mixture_bank, mixture_gradient_norm, mixture_nll, routing_accuracy,
    run_em, train_conditional, train_supervised, train_unsupervised_from, Dataset, Regime, RoutingDataset,
    TrainConfig, TrainingTrace,
};

pub const ARTIFACT_VERSION: &str = "1";
pub const EM_TOLERANCE: f64 = 1e-13;
pub const EM_MAX_ITERS: usize = 100_000;

/// A loaded config plus the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let (config, raw) = ExperimentConfig::load(path)?;
        Ok(Self { config, raw })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self {
            config: ExperimentConfig::from_json(text)?,
            raw: text.as_bytes().to_vec(),
        })
    }

    /// `--seed` replaces both the training and the data seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.config.train.seed = s;
            match &mut self.config.data {
                DataSpec::Clusters(c) => c.seed = s,
                DataSpec::Routing(r) => r.seed = s,
            }
        }
        self
    }

    fn echo(&self) -> Result<Value> {
        Ok(serde_json::from_slice(&self.raw)?)
    }
}

pub enum GeneratedData {
    Clusters(Dataset),
    Routing(RoutingDataset),
}

pub fn generate(spec: &DataSpec) -> Result<GeneratedData> {
    Ok(match spec {
        DataSpec::Clusters(c) => GeneratedData::Clusters(c.generate()?),
        DataSpec::Routing(r) => GeneratedData::Routing(r.generate()?),
    })
}

/// Routing examples are written flattened: `[query, keys…, target]`, label = correct slot.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let text = match generate(&cfg.data)? {
        GeneratedData::Clusters(d) => dataset_to_csv(&d.inputs, d.labels.as_deref()),
        GeneratedData::Routing(r) => {
            let (rows, labels) = r.to_rows();
            dataset_to_csv(&rows, labels.as_deref())
        }
    };
    let path = cfg.output_dir.join("dataset.csv");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum RunSummary {
    Unsupervised {
        final_loss: Option<f64>,
        final_means: Vec<Vec<f64>>,
        /// For each generating center, the distance to the nearest learned mean.
        center_errors: Vec<f64>,
    },
    Conditional {
        final_loss: Option<f64>,
        /// Mean attention weight on the correct key slot after training.
        correct_slot_responsibility: f64,
        max_weight_sum_error: Option<f64>,
        scores_stabilize_first: Option<bool>,
    },
    Constrained {
        final_loss: Option<f64>,
        training_accuracy: f64,
        /// Mean responsibility on the labeled class after training.
        r_y_mean: f64,
        max_abs_clamp_gradient_sum: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FinalParams {
    Bank(PrototypeBank),
    Attention(AttentionParams),
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub effective_train: TrainConfig,
    pub summary: RunSummary,
    /// Absent for a run with no training steps.
    pub diagnostics: Option<DiagnosticReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config_echo: PathBuf,
    pub trace: PathBuf,
    pub report: PathBuf,
    pub params: PathBuf,
}

/// In-memory result of `train`, before anything is written.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainingTrace,
    pub params: FinalParams,
    pub report: TrainReport,
}

fn final_loss(trace: &TrainingTrace) -> Option<f64> {
    trace.records().last().map(|r| r.loss)
}

fn max_of(trace: &TrainingTrace, f: impl Fn(&crate::regimes::TraceRecord) -> Option<f64>) -> Option<f64> {
    trace.records().iter().filter_map(f).reduce(f64::max)
}

fn constrained_r_y(bank: &PrototypeBank, data: &Dataset) -> Result<f64> {
    let labels = data.labels.as_ref().ok_or_else(|| Error::config("data.labeled", "labels required"))?;
    let mut total = 0.0;
    for (x, y) in data.inputs.iter().zip(labels) {
        total += crate::objectives::soft_assign(&crate::distance::prototype_distances(bank, x)?)?.r[y.0];
    }
    Ok(total / data.len() as f64)
}

pub fn run_train(loaded: &LoadedConfig) -> Result<TrainOutcome> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let tc = cfg.train_config();
    let (trace, params, mut summary) = match (generate(&cfg.data)?, cfg.regime) {
        (GeneratedData::Clusters(data), Regime::Unsupervised) => {
            let init = init_mixture_bank(&tc, data.dim())?;
            let (trace, bank) = train_unsupervised_from(&tc, &data, init)?;
            let means = bank.means().expect("mixture bank").to_vec();
            let centers = match &cfg.data {
                DataSpec::Clusters(c) => c.centers.clone(),
                DataSpec::Routing(_) => unreachable!("validated"),
            };
            let center_errors = centers
                .iter()
                .map(|c| means.iter().map(|m| squared_distance(c, m).sqrt()).fold(f64::INFINITY, f64::min))
                .collect();
            let summary = RunSummary::Unsupervised {
                final_loss: final_loss(&trace),
                final_means: means,
                center_errors,
            };
            (trace, FinalParams::Bank(bank), summary)
        }
        (GeneratedData::Clusters(data), Regime::Constrained) => {
            let (trace, bank) = train_supervised(&tc, &data)?;
            let summary = RunSummary::Constrained {
                final_loss: final_loss(&trace),
                training_accuracy: classification_accuracy(&bank, &data)?,
                r_y_mean: constrained_r_y(&bank, &data)?,
                max_abs_clamp_gradient_sum: max_of(&trace, |r| r.clamp_gradient_sum.map(f64::abs)),
            };
            (trace, FinalParams::Bank(bank), summary)
        }
        (GeneratedData::Routing(data), Regime::Conditional) => {
            let (trace, params) = train_conditional(&tc, &data)?;
            let summary = RunSummary::Conditional {
                final_loss: final_loss(&trace),
                correct_slot_responsibility: routing_accuracy(&params, &data)?,
                max_weight_sum_error: max_of(&trace, |r| r.weight_sum_error),
                scores_stabilize_first: None,
            };
            (trace, FinalParams::Attention(params), summary)
        }
        _ => return Err(Error::config("data.generator", "data generator does not fit the regime")),
    };
    let diagnostics = if trace.is_empty() {
        None
    } else {
        Some(diagnostic_report(&trace)?)
    };
    if let RunSummary::Conditional { scores_stabilize_first, .. } = &mut summary {
        *scores_stabilize_first = diagnostics
            .as_ref()
            .and_then(|d| d.two_timescale.as_ref())
            .map(|t| t.scores_stabilize_first);
    }
    let report = TrainReport {
        artifact_version: ARTIFACT_VERSION,
        command: "train",
        config: loaded.echo()?,
        effective_train: tc,
        summary,
        diagnostics,
    };
    Ok(TrainOutcome { trace, params, report })
}

pub fn cmd_train(loaded: &LoadedConfig) -> Result<(RunArtifacts, TrainOutcome)> {
    let outcome = run_train(loaded)?;
    let dir = &loaded.config.output_dir;
    let artifacts = RunArtifacts {
        config_echo: dir.join("config.json"),
        trace: dir.join("trace.csv"),
        report: dir.join("report.json"),
        params: dir.join("params.json"),
    };
    write_atomic(&artifacts.config_echo, &loaded.raw)?;
    write_atomic(&artifacts.trace, trace_to_csv(&outcome.trace).as_bytes())?;
    write_atomic(&artifacts.report, to_report_json(&outcome.report)?.as_bytes())?;
    write_atomic(&artifacts.params, to_report_json(&outcome.params)?.as_bytes())?;
    Ok((artifacts, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmComparison {
    pub k: usize,
    pub sigma2: f64,
    pub init_means: Vec<Vec<f64>>,
    pub em_means: Vec<Vec<f64>>,
    pub gd_means: Vec<Vec<f64>>,
    /// `distance_matrix[i][j]` = ‖em_i − gd_j‖.
    pub distance_matrix: Vec<Vec<f64>>,
    /// Largest ‖em_j − gd_j‖ over components started from the same init.
    pub max_matched_distance: f64,
    pub em_nll: f64,
    pub gd_nll: f64,
    pub gd_gradient_norm_at_em: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub gd_steps: usize,
}

/// EM from `em_init` against gradient descent from `gd_init` on the same data.
pub fn compare_em_runs(
    cfg: &TrainConfig,
    data: &Dataset,
    em_init: &[Vec<f64>],
    gd_init: &PrototypeBank,
) -> Result<EmComparison> {
    if em_init.len() != cfg.k || gd_init.k() != cfg.k {
        return Err(Error::config(
            "train.k",
            format!(
                "EM run has {} components and GD run has {}, config says {}",
                em_init.len(),
                gd_init.k(),
                cfg.k
            ),
        ));
    }
    let em = run_em(&data.inputs, em_init, cfg.sigma2, EM_TOLERANCE, EM_MAX_ITERS)?;
    let (_, bank) = train_unsupervised_from(cfg, data, gd_init.clone())?;
    let gd_means = bank.means().expect("mixture bank").to_vec();
    let distance_matrix: Vec<Vec<f64>> = em
        .means
        .iter()
        .map(|a| gd_means.iter().map(|b| squared_distance(a, b).sqrt()).collect())
        .collect();
    let max_matched_distance = (0..cfg.k).map(|j| distance_matrix[j][j]).fold(0.0, f64::max);
    Ok(EmComparison {
        k: cfg.k,
        sigma2: cfg.sigma2,
        init_means: em_init.to_vec(),
        em_nll: mixture_nll(&data.inputs, &em.means, cfg.sigma2)?,
        gd_nll: mixture_nll(&data.inputs, &gd_means, cfg.sigma2)?,
        gd_gradient_norm_at_em: mixture_gradient_norm(&data.inputs, &em.means, cfg.sigma2)?,
        em_iterations: em.iterations,
        em_converged: em.converged,
        gd_steps: cfg.steps,
        em_means: em.means,
        gd_means,
        distance_matrix,
        max_matched_distance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub comparison: EmComparison,
}

pub fn run_compare_em(loaded: &LoadedConfig) -> Result<CompareReport> {
    let cfg = &loaded.config;
    if cfg.regime != Regime::Unsupervised {
        return Err(Error::config("regime", "compare-em needs the unsupervised regime"));
    }
    cfg.validate()?;
    let tc = cfg.train_config();
    let GeneratedData::Clusters(data) = generate(&cfg.data)? else {
        return Err(Error::config("data.generator", "compare-em needs cluster data"));
    };
    let init = init_mixture_bank(&tc, data.dim())?;
    let em_init = init.means().expect("mixture bank").to_vec();
    Ok(CompareReport {
        artifact_version: ARTIFACT_VERSION,
        command: "compare-em",
        config: loaded.echo()?,
        comparison: compare_em_runs(&tc, &data, &em_init, &init)?,
    })
}

pub fn cmd_compare_em(loaded: &LoadedConfig) -> Result<(PathBuf, CompareReport)> {
    let report = run_compare_em(loaded)?;
    let dir = &loaded.config.output_dir;
    write_atomic(&dir.join("config.json"), &loaded.raw)?;
    let path = dir.join("compare_em.json");
    write_atomic(&path, to_report_json(&report)?.as_bytes())?;
    Ok((path, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub trace: String,
    pub diagnostics: DiagnosticReport,
}

pub fn default_diagnose_output(trace: &Path) -> PathBuf {
    trace.with_file_name("diagnostics.json")
}

pub fn cmd_diagnose(trace_path: &Path, output: Option<&Path>) -> Result<(PathBuf, DiagnoseReport)> {
    let text = std::fs::read_to_string(trace_path).map_err(|e| Error::io(trace_path, e))?;
    let trace = trace_from_csv(&text)?;
    let report = DiagnoseReport {
        artifact_version: ARTIFACT_VERSION,
        command: "diagnose",
        trace: trace_path.display().to_string(),
        diagnostics: diagnostic_report(&trace)?,
    };
    let path = output.map_or_else(|| default_diagnose_output(trace_path), Path::to_path_buf);
    write_atomic(&path, to_report_json(&report)?.as_bytes())?;
    Ok((path, report))
}
