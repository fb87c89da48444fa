//! Log-sum-exp objectives over distances and their gradients.
//!
//! For `L = log Σ_j exp(−d_j)` the gradient with respect to `d_j` is exactly
//! `−r_j`, the posterior responsibility of component `j` under a uniform
//! prior. The negative log marginal likelihood inherits this structure with
//! the opposite sign (`+r`). For cross-entropy the gradient with respect to
//! the logits `z = −d` is `r − onehot(y)`; with respect to the distances it
//! is the negation, `onehot(y) − r`. The correntropy objective has no
//! normalizer and therefore no responsibilities.
//!
//! All probability arithmetic is done in log space; `r` is only
//! exponentiated at the output boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Per-component distances (energies) for one input. Entries may be negative
/// when they come from logits or attention scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceVector(Vec<f64>);

impl DistanceVector {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::domain("distance vector needs at least one component"));
        }
        if let Some((j, v)) = d.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::domain(format!("distance d[{j}] = {v} is not finite")));
        }
        Ok(Self(d))
    }

    /// Distances `d_j = −s_j` from scores or logits.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        Self::new(scores.iter().map(|s| -s).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_label(&self, y: Label) -> Result<()> {
        if y.0 >= self.0.len() {
            return Err(Error::IndexOutOfRange {
                index: y.0,
                len: self.0.len(),
            });
        }
        Ok(())
    }
}

impl AsRef<[f64]> for DistanceVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Log unnormalized likelihoods, log partition function and responsibilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftAssignment {
    pub log_p: Vec<f64>,
    pub log_z: f64,
    pub r: Vec<f64>,
}

impl SoftAssignment {
    pub fn k(&self) -> usize {
        self.r.len()
    }

    /// Index of the largest responsibility; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.r)
    }
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Class index `y`; range-checked against `K` by each operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Bandwidth of the correntropy kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrentropyConfig {
    sigma: f64,
}

impl CorrentropyConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("correntropy sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(self) -> f64 {
        self.sigma
    }
}

pub fn soft_assign(d: &DistanceVector) -> Result<SoftAssignment> {
    let log_p: Vec<f64> = d.0.iter().map(|v| -v).collect();
    let log_z = log_sum_exp(&log_p)?;
    // normalize the max-shifted weights rather than exp(log_p − log_z): the
    // shift is exact near the maximum, so Σ r stays within an ulp or two of 1
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_p.iter().map(|lp| (lp - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let r = w.into_iter().map(|v| v / total).collect();
    Ok(SoftAssignment { log_p, log_z, r })
}

/// `log Z = log Σ exp(−d_j)`.
pub fn lse_value(d: &DistanceVector) -> Result<f64> {
    let neg: Vec<f64> = d.0.iter().map(|v| -v).collect();
    log_sum_exp(&neg)
}

/// `∂ log Z / ∂d = −r`.
pub fn lse_gradient(d: &DistanceVector) -> Result<Vec<f64>> {
    Ok(soft_assign(d)?.r.into_iter().map(|r| -r).collect())
}

/// Negative log marginal likelihood `−log Z`.
pub fn nll_value(d: &DistanceVector) -> Result<f64> {
    Ok(-lse_value(d)?)
}

/// `∂(−log Z)/∂d = +r`. Descent therefore shrinks `d_j` in proportion to `r_j`.
pub fn nll_gradient(d: &DistanceVector) -> Result<Vec<f64>> {
    Ok(soft_assign(d)?.r)
}

/// `d_y + log Σ exp(−d_k)`, evaluated as `log Σ exp(d_y − d_k)`; equals `−z_y + log Σ exp(z_k)` for logits `z = −d`.
pub fn cross_entropy_value(d: &DistanceVector, y: Label) -> Result<f64> {
    d.check_label(y)?;
    let dy = d.0[y.0];
    let shifted: Vec<f64> = d.0.iter().map(|v| dy - v).collect();
    log_sum_exp(&shifted)
}

/// The clamp gradient `r − onehot(y)`: the derivative of the cross-entropy
/// with respect to the logits `z = −d`. Entry `y` lies in `[−1, 0]`, the
/// others in `[0, 1]`.
pub fn cross_entropy_gradient(d: &DistanceVector, y: Label) -> Result<Vec<f64>> {
    d.check_label(y)?;
    let mut g = soft_assign(d)?.r;
    g[y.0] -= 1.0;
    Ok(g)
}

/// `∂L/∂d = onehot(y) − r`, the negation of [`cross_entropy_gradient`].
pub fn cross_entropy_distance_gradient(d: &DistanceVector, y: Label) -> Result<Vec<f64>> {
    Ok(cross_entropy_gradient(d, y)?.into_iter().map(|g| -g).collect())
}

/// `Σ_j (1 − exp(−d_j²/σ²))`, one independent kernel term per component.
pub fn correntropy_value(d: &DistanceVector, cfg: CorrentropyConfig) -> f64 {
    let s2 = cfg.sigma * cfg.sigma;
    d.0.iter().map(|v| 1.0 - (-v * v / s2).exp()).sum()
}

/// `(2 d_j/σ²) exp(−d_j²/σ²)` per component; nothing couples the entries.
pub fn correntropy_gradient(d: &DistanceVector, cfg: CorrentropyConfig) -> Vec<f64> {
    let s2 = cfg.sigma * cfg.sigma;
    d.0.iter()
        .map(|v| 2.0 * v / s2 * (-v * v / s2).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, max_abs_diff};

    fn dv(v: &[f64]) -> DistanceVector {
        DistanceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_invalid_distances() {
        assert!(DistanceVector::new(vec![]).is_err());
        assert!(DistanceVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(DistanceVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn soft_assign_examples() {
        let a = soft_assign(&dv(&[0.0, 0.0])).unwrap();
        assert_eq!(a.r, vec![0.5, 0.5]);
        let a = soft_assign(&dv(&[0.0, 3f64.ln()])).unwrap();
        assert!(max_abs_diff(&a.r, &[0.75, 0.25]) < 1e-15);
        assert!((a.log_z - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        for c in [-40.0, 0.0, 17.5] {
            assert_eq!(soft_assign(&dv(&[c])).unwrap().r, vec![1.0]);
        }
    }

    #[test]
    fn lse_examples() {
        assert!((lse_value(&dv(&[0.0, 0.0])).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(lse_value(&dv(&[2.5])).unwrap(), -2.5);
        assert!((lse_value(&dv(&[0.0, 3f64.ln()])).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(lse_gradient(&dv(&[0.0, 0.0])).unwrap(), vec![-0.5, -0.5]);
    }

    #[test]
    fn nll_examples() {
        let d = dv(&[0.0, 0.0]);
        assert!((nll_value(&d).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(nll_gradient(&d).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_examples() {
        let d = dv(&[0.0, 0.0]);
        assert!((cross_entropy_value(&d, Label(0)).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy_gradient(&d, Label(0)).unwrap(), vec![-0.5, 0.5]);
        let d = dv(&[0.0, 3f64.ln()]);
        assert!(
            (cross_entropy_value(&d, Label(0)).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15
        );
        assert!(matches!(
            cross_entropy_value(&d, Label(2)),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(cross_entropy_gradient(&d, Label(5)).is_err());
    }

    #[test]
    fn cross_entropy_confident_limit() {
        let mut prev = f64::INFINITY;
        for gap in [1.0, 5.0, 20.0, 50.0] {
            let v = cross_entropy_value(&dv(&[-gap, 0.0, 0.0]), Label(0)).unwrap();
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
        // r_y saturates to exactly 1 and the clamp gradient vanishes
        let g = cross_entropy_gradient(&dv(&[-800.0, 0.0]), Label(0)).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn correntropy_examples() {
        let cfg = CorrentropyConfig::new(1.0).unwrap();
        let g = correntropy_gradient(&dv(&[0.0, 100.0, 100.0]), cfg);
        assert_eq!(g[0], 0.0);
        assert!(g[1] < 1e-300 && g[2] < 1e-300);
        assert!(CorrentropyConfig::new(0.0).is_err());
        assert!(CorrentropyConfig::new(-2.0).is_err());
        assert!((correntropy_value(&dv(&[0.0, 100.0]), cfg) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_central_differences_at_fixed_points() {
        let d = dv(&[0.3, -1.2, 2.0, 0.0]);
        let h = 1e-5;
        let x = d.as_slice();
        let wrap = |v: &[f64]| DistanceVector::new(v.to_vec()).unwrap();

        let fd = finite_difference_gradient(|v| lse_value(&wrap(v)).unwrap(), x, h).unwrap();
        assert!(max_abs_diff(&fd, &lse_gradient(&d).unwrap()) < 1e-9);

        let fd = finite_difference_gradient(|v| nll_value(&wrap(v)).unwrap(), x, h).unwrap();
        assert!(max_abs_diff(&fd, &nll_gradient(&d).unwrap()) < 1e-9);

        let fd = finite_difference_gradient(
            |v| cross_entropy_value(&wrap(v), Label(2)).unwrap(),
            x,
            h,
        )
        .unwrap();
        assert!(max_abs_diff(&fd, &cross_entropy_distance_gradient(&d, Label(2)).unwrap()) < 1e-9);

        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        let fd = finite_difference_gradient(
            |z| cross_entropy_value(&DistanceVector::from_scores(z).unwrap(), Label(2)).unwrap(),
            &z,
            h,
        )
        .unwrap();
        assert!(max_abs_diff(&fd, &cross_entropy_gradient(&d, Label(2)).unwrap()) < 1e-9);

        let cfg = CorrentropyConfig::new(1.3).unwrap();
        let fd = finite_difference_gradient(|v| correntropy_value(&wrap(v), cfg), x, h).unwrap();
        let err = max_abs_diff(&fd, &correntropy_gradient(&d, cfg));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.5, 0.25 + 0.25]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
