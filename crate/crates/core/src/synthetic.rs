//! Seeded synthetic datasets: Gaussian clusters and a key-routing task for
//! the attention regime.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gaussian_sample, SeededRng};
use crate::objectives::Label;
use crate::regimes::{Dataset, RoutingDataset, RoutingExample};

/// Isotropic Gaussian clusters, emitted cluster by cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub centers: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    pub counts: Vec<usize>,
    /// Attach the cluster index as the label.
    #[serde(default)]
    pub labeled: bool,
    pub seed: u64,
}

impl ClusterSpec {
    /// Two clusters at `(±3, 0)` with std 0.5 and 100 points each.
    pub fn two_clusters(seed: u64, labeled: bool) -> Self {
        Self {
            centers: vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
            stds: vec![0.5, 0.5],
            counts: vec![100, 100],
            labeled,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.centers.len();
        if n == 0 {
            return Err(Error::config("data.centers", "at least one center is required"));
        }
        let dim = self.centers[0].len();
        if dim == 0 {
            return Err(Error::config("data.centers[0]", "centers must have positive dimension"));
        }
        for (i, c) in self.centers.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::config(
                    format!("data.centers[{i}]"),
                    format!("expected dimension {dim}, got {}", c.len()),
                ));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("data.centers[{i}]"), "entries must be finite"));
            }
        }
        if self.stds.len() != n {
            return Err(Error::config("data.stds", format!("expected {n} entries, got {}", self.stds.len())));
        }
        if let Some(i) = self.stds.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("data.stds[{i}]"), "must be positive"));
        }
        if self.counts.len() != n {
            return Err(Error::config(
                "data.counts",
                format!("expected {n} entries, got {}", self.counts.len()),
            ));
        }
        if self.counts.iter().sum::<usize>() == 0 {
            return Err(Error::config("data.counts", "at least one point is required"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = SeededRng::new(self.seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (c, ((center, &std), &count)) in self
            .centers
            .iter()
            .zip(&self.stds)
            .zip(&self.counts)
            .enumerate()
        {
            for _ in 0..count {
                inputs.push(gaussian_sample(&mut rng, center, std)?);
                labels.push(Label(c));
            }
        }
        let mut data = Dataset::new(inputs, self.labeled.then_some(labels))?;
        data.provenance = Some(serde_json::to_value(self)?);
        Ok(data)
    }
}

/// Each example has `slots` keys `[e_j, c_j]` (slot one-hot followed by
/// random content), a query `[e_s, 0]` naming one slot `s`, and the target
/// `c_s`. The ideal head attends to slot `s` and projects out the content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSpec {
    pub slots: usize,
    pub content_dim: usize,
    pub count: usize,
    /// Std of Gaussian noise added to each query.
    #[serde(default)]
    pub query_noise: f64,
    pub seed: u64,
}

impl RoutingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::config("data.slots", "routing needs at least two slots"));
        }
        if self.content_dim == 0 {
            return Err(Error::config("data.content_dim", "must be positive"));
        }
        if self.count == 0 {
            return Err(Error::config("data.count", "must be positive"));
        }
        if !(self.query_noise >= 0.0 && self.query_noise.is_finite()) {
            return Err(Error::config("data.query_noise", "must be a non-negative number"));
        }
        Ok(())
    }

    pub fn model_dim(&self) -> usize {
        self.slots + self.content_dim
    }

    pub fn generate(&self) -> Result<RoutingDataset> {
        self.validate()?;
        let mut rng = SeededRng::new(self.seed);
        let dim = self.model_dim();
        let examples = (0..self.count)
            .map(|i| {
                let slot = i % self.slots;
                let keys: Vec<Vec<f64>> = (0..self.slots)
                    .map(|j| {
                        let mut k = vec![0.0; dim];
                        k[j] = 1.0;
                        for v in &mut k[self.slots..] {
                            *v = rng.standard_normal();
                        }
                        k
                    })
                    .collect();
                let mut query = vec![0.0; dim];
                query[slot] = 1.0;
                if self.query_noise > 0.0 {
                    for v in &mut query {
                        *v += self.query_noise * rng.standard_normal();
                    }
                }
                let target = keys[slot][self.slots..].to_vec();
                RoutingExample {
                    query,
                    keys,
                    target,
                    correct_slot: Some(slot),
                }
            })
            .collect();
        RoutingDataset::new(examples)
    }
}
