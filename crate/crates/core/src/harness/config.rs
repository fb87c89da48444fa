//! Experiment configuration files.
//!
//! ```json
//! {
//!   "regime": "unsupervised",
//!   "train": { "k": 2, "learning_rate": 1.0, "steps": 200, "seed": 7 },
//!   "data": { "generator": "clusters", "centers": [[-3, 0], [3, 0]],
//!             "stds": [0.5, 0.5], "counts": [100, 100], "seed": 42 },
//!   "output_dir": "runs/unsupervised"
//! }
//! ```
//!
//! Unknown keys anywhere are rejected. Omitted `train` fields take the
//! regime's defaults from [`TrainConfig::new`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regimes::{Regime, TrainConfig};
use crate::synthetic::{ClusterSpec, RoutingSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub k: usize,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub init_scale: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub weight_decay: Option<f64>,
    pub sigma2: Option<f64>,
    pub head_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DataSpec {
    Clusters(ClusterSpec),
    Routing(RoutingSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub train: TrainSection,
    pub data: DataSpec,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse and validate. Errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { ".".into() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Returns the raw bytes alongside the parsed config, for the echo file.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::config(".", format!("config is not UTF-8: {e}")))?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut cfg = TrainConfig::new(self.regime, t.k);
        cfg.seed = t.seed;
        cfg.batch_size = t.batch_size;
        cfg.head_dim = t.head_dim;
        if let Some(v) = t.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = t.steps {
            cfg.steps = v;
        }
        if let Some(v) = t.init_scale {
            cfg.init_scale = v;
        }
        if let Some(v) = t.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = t.sigma2 {
            cfg.sigma2 = v;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        match (&self.data, self.regime) {
            (DataSpec::Clusters(spec), Regime::Unsupervised) => spec.validate(),
            (DataSpec::Clusters(spec), Regime::Constrained) => {
                spec.validate()?;
                if !spec.labeled {
                    return Err(Error::config("data.labeled", "constrained regime needs labeled data"));
                }
                if self.train.k < spec.centers.len() {
                    return Err(Error::config(
                        "train.k",
                        format!("k must cover all {} labeled clusters", spec.centers.len()),
                    ));
                }
                Ok(())
            }
            (DataSpec::Routing(spec), Regime::Conditional) => {
                spec.validate()?;
                if self.train.k != spec.slots {
                    return Err(Error::config(
                        "train.k",
                        format!("conditional regime needs k = slots ({})", spec.slots),
                    ));
                }
                Ok(())
            }
            (DataSpec::Routing(_), regime) => Err(Error::config(
                "data.generator",
                format!("`routing` data only fits the conditional regime, not `{}`", regime.as_str()),
            )),
            (DataSpec::Clusters(_), Regime::Conditional) => Err(Error::config(
                "data.generator",
                "the conditional regime needs `routing` data",
            )),
        }
    }
}
