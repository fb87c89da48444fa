//! Models that map an input to per-component distances, and the chain rule
//! from an upstream `∂L/∂d` back to their parameters.
//!
//! A linear unit followed by an absolute value, `|w·x + b|`, is a
//! Mahalanobis distance along one principal direction of a Gaussian; see
//! [`from_gaussian`]. Logits and attention scores are read as negative
//! distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, norm, squared_distance, Matrix, SeededRng};
use crate::objectives::DistanceVector;

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Subgradient of `|z|`, taking 0 at the kink.
fn abs_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `|w·x + b|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalUnit {
    pub w: Vec<f64>,
    pub b: f64,
}

impl DirectionalUnit {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn pre_activation(&self, x: &[f64]) -> Result<f64> {
        check_dim("DirectionalUnit", self.w.len(), x.len())?;
        Ok(dot(&self.w, x) + self.b)
    }

    /// The same distance as the sum of two half-space detectors.
    pub fn relu_pair_distance(&self, x: &[f64]) -> Result<f64> {
        let z = self.pre_activation(x)?;
        Ok(relu(z) + relu(-z))
    }
}

pub fn directional_distance(unit: &DirectionalUnit, x: &[f64]) -> Result<f64> {
    Ok(unit.pre_activation(x)?.abs())
}

/// A Gaussian seen along one principal direction: mean `mu`, unit direction
/// `v`, variance `lambda` along `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    mu: Vec<f64>,
    v: Vec<f64>,
    lambda: f64,
}

impl GaussianComponent {
    pub fn new(mu: Vec<f64>, v: Vec<f64>, lambda: f64) -> Result<Self> {
        check_dim("GaussianComponent direction", mu.len(), v.len())?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("eigenvalue must be positive, got {lambda}")));
        }
        let n = norm(&v);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("principal direction has norm {n}, expected 1")));
        }
        Ok(Self { mu, v, lambda })
    }

    /// Normalizes `v` before construction.
    pub fn with_direction(mu: Vec<f64>, v: &[f64], lambda: f64) -> Result<Self> {
        let n = norm(v);
        if !(n > 0.0) {
            return Err(Error::domain("principal direction must be non-zero"));
        }
        Self::new(mu, v.iter().map(|c| c / n).collect(), lambda)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `|λ^(−1/2) v·(x − μ)|`
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        check_dim("GaussianComponent", self.mu.len(), x.len())?;
        let proj: f64 = self
            .v
            .iter()
            .zip(x.iter().zip(&self.mu))
            .map(|(v, (x, m))| v * (x - m))
            .sum();
        Ok((proj / self.lambda.sqrt()).abs())
    }
}

/// `w = λ^(−1/2) v`, `b = −λ^(−1/2) v·μ`.
pub fn from_gaussian(component: &GaussianComponent) -> Result<DirectionalUnit> {
    if !(component.lambda > 0.0) {
        return Err(Error::domain("eigenvalue must be positive"));
    }
    let inv_sqrt = 1.0 / component.lambda.sqrt();
    let w: Vec<f64> = component.v.iter().map(|v| v * inv_sqrt).collect();
    let b = -dot(&w, &component.mu);
    Ok(DirectionalUnit { w, b })
}

/// The three kinds of component banks.
///
/// * `SquaredEuclidean`: `d_j = scale · ‖x − μ_j‖²`
/// * `Directional`: `d_j = |w_j·x + b_j|`
/// * `Logit`: `d_j = −(row_j·x + b_j)`, i.e. negated logits
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrototypeBank {
    SquaredEuclidean { means: Vec<Vec<f64>>, scale: f64 },
    Directional { units: Vec<DirectionalUnit> },
    Logit { weights: Matrix, bias: Vec<f64> },
}

impl PrototypeBank {
    pub fn squared_euclidean(means: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        let bank = Self::SquaredEuclidean { means, scale };
        bank.validate()?;
        Ok(bank)
    }

    pub fn directional(units: Vec<DirectionalUnit>) -> Result<Self> {
        let bank = Self::Directional { units };
        bank.validate()?;
        Ok(bank)
    }

    pub fn logit(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        let bank = Self::Logit { weights, bias };
        bank.validate()?;
        Ok(bank)
    }

    /// Means drawn from `N(0, init_scale²)`.
    pub fn random_squared_euclidean(
        rng: &mut SeededRng,
        k: usize,
        dim: usize,
        init_scale: f64,
        scale: f64,
    ) -> Result<Self> {
        let means = (0..k)
            .map(|_| (0..dim).map(|_| init_scale * rng.standard_normal()).collect())
            .collect();
        Self::squared_euclidean(means, scale)
    }

    /// Logit rows drawn from `N(0, init_scale²)`, zero bias.
    pub fn random_logit(rng: &mut SeededRng, k: usize, dim: usize, init_scale: f64) -> Result<Self> {
        Self::logit(Matrix::random_normal(rng, k, dim, init_scale), vec![0.0; k])
    }

    pub fn random_directional(
        rng: &mut SeededRng,
        k: usize,
        dim: usize,
        init_scale: f64,
    ) -> Result<Self> {
        let units = (0..k)
            .map(|_| {
                let w = (0..dim).map(|_| init_scale * rng.standard_normal()).collect();
                DirectionalUnit::new(w, init_scale * rng.standard_normal())
            })
            .collect();
        Self::directional(units)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(Error::domain("a bank needs at least one component"));
        }
        let dim = self.dim();
        match self {
            Self::SquaredEuclidean { means, scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::domain(format!("distance scale must be positive, got {scale}")));
                }
                for m in means {
                    check_dim("PrototypeBank prototype", dim, m.len())?;
                }
            }
            Self::Directional { units } => {
                for u in units {
                    check_dim("PrototypeBank unit", dim, u.w.len())?;
                }
            }
            Self::Logit { weights, bias } => {
                check_dim("PrototypeBank bias", weights.rows(), bias.len())?;
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        match self {
            Self::SquaredEuclidean { means, .. } => means.len(),
            Self::Directional { units } => units.len(),
            Self::Logit { weights, .. } => weights.rows(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::SquaredEuclidean { means, .. } => means.first().map_or(0, Vec::len),
            Self::Directional { units } => units.first().map_or(0, |u| u.w.len()),
            Self::Logit { weights, .. } => weights.cols(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::SquaredEuclidean { .. } => "squared_euclidean",
            Self::Directional { .. } => "directional",
            Self::Logit { .. } => "logit",
        }
    }

    /// Prototype means of a squared-Euclidean bank.
    pub fn means(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::SquaredEuclidean { means, .. } => Some(means),
            _ => None,
        }
    }

    pub fn zero_gradient(&self) -> BankGradient {
        let (k, dim) = (self.k(), self.dim());
        match self {
            Self::SquaredEuclidean { .. } => BankGradient::SquaredEuclidean {
                means: vec![vec![0.0; dim]; k],
            },
            Self::Directional { .. } => BankGradient::Directional {
                w: vec![vec![0.0; dim]; k],
                b: vec![0.0; k],
            },
            Self::Logit { .. } => BankGradient::Logit {
                weights: Matrix::zeros(k, dim),
                bias: vec![0.0; k],
            },
        }
    }

    /// All learnable parameters in a fixed order (the layout of [`BankGradient::flatten`]).
    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Self::SquaredEuclidean { means, .. } => means.concat(),
            Self::Directional { units } => {
                let mut out: Vec<f64> = units.iter().flat_map(|u| u.w.iter().copied()).collect();
                out.extend(units.iter().map(|u| u.b));
                out
            }
            Self::Logit { weights, bias } => {
                let mut out = weights.as_slice().to_vec();
                out.extend_from_slice(bias);
                out
            }
        }
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("PrototypeBank::set_flat_params", self.flat_params().len(), params.len())?;
        let dim = self.dim();
        match self {
            Self::SquaredEuclidean { means, .. } => {
                for (m, chunk) in means.iter_mut().zip(params.chunks(dim)) {
                    m.copy_from_slice(chunk);
                }
            }
            Self::Directional { units } => {
                let (ws, bs) = params.split_at(units.len() * dim);
                for (j, u) in units.iter_mut().enumerate() {
                    u.w.copy_from_slice(&ws[j * dim..(j + 1) * dim]);
                    u.b = bs[j];
                }
            }
            Self::Logit { weights, bias } => {
                let (ws, bs) = params.split_at(weights.rows() * dim);
                weights.as_mut_slice().copy_from_slice(ws);
                bias.copy_from_slice(bs);
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr · grad`.
    pub fn apply_gradient(&mut self, grad: &BankGradient, lr: f64) -> Result<()> {
        let mut params = self.flat_params();
        let g = grad.flatten();
        check_dim("PrototypeBank::apply_gradient", params.len(), g.len())?;
        axpy(-lr, &g, &mut params);
        self.set_flat_params(&params)
    }
}

/// Gradient with the same layout as the bank's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankGradient {
    SquaredEuclidean { means: Vec<Vec<f64>> },
    Directional { w: Vec<Vec<f64>>, b: Vec<f64> },
    Logit { weights: Matrix, bias: Vec<f64> },
}

impl BankGradient {
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Self::SquaredEuclidean { means } => means.concat(),
            Self::Directional { w, b } => {
                let mut out = w.concat();
                out.extend_from_slice(b);
                out
            }
            Self::Logit { weights, bias } => {
                let mut out = weights.as_slice().to_vec();
                out.extend_from_slice(bias);
                out
            }
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.flatten())
    }

    pub fn scale(&mut self, alpha: f64) {
        let scale_rows = |rows: &mut Vec<Vec<f64>>| {
            rows.iter_mut()
                .flat_map(|r| r.iter_mut())
                .for_each(|v| *v *= alpha)
        };
        match self {
            Self::SquaredEuclidean { means } => scale_rows(means),
            Self::Directional { w, b } => {
                scale_rows(w);
                b.iter_mut().for_each(|v| *v *= alpha);
            }
            Self::Logit { weights, bias } => {
                weights.scale(alpha);
                bias.iter_mut().for_each(|v| *v *= alpha);
            }
        }
    }

    /// Gradient on prototype / unit / row `j` (weights only).
    pub fn component(&self, j: usize) -> &[f64] {
        match self {
            Self::SquaredEuclidean { means } => &means[j],
            Self::Directional { w, .. } => &w[j],
            Self::Logit { weights, .. } => weights.row(j),
        }
    }
}

pub fn prototype_distances(bank: &PrototypeBank, x: &[f64]) -> Result<DistanceVector> {
    check_dim("prototype_distances", bank.dim(), x.len())?;
    let d = match bank {
        PrototypeBank::SquaredEuclidean { means, scale } => means
            .iter()
            .map(|m| scale * squared_distance(x, m))
            .collect(),
        PrototypeBank::Directional { units } => units
            .iter()
            .map(|u| (dot(&u.w, x) + u.b).abs())
            .collect(),
        PrototypeBank::Logit { weights, bias } => (0..weights.rows())
            .map(|j| -(dot(weights.row(j), x) + bias[j]))
            .collect(),
    };
    DistanceVector::new(d)
}

/// Chain rule from `∂L/∂d` (length K) to the bank parameters.
pub fn backprop_distances(bank: &PrototypeBank, x: &[f64], dl_dd: &[f64]) -> Result<BankGradient> {
    let mut grad = bank.zero_gradient();
    accumulate_backprop(bank, x, dl_dd, 1.0, &mut grad)?;
    Ok(grad)
}

/// `grad += weight · backprop_distances(bank, x, dl_dd)`.
pub fn accumulate_backprop(
    bank: &PrototypeBank,
    x: &[f64],
    dl_dd: &[f64],
    weight: f64,
    grad: &mut BankGradient,
) -> Result<()> {
    check_dim("backprop_distances input", bank.dim(), x.len())?;
    check_dim("backprop_distances upstream", bank.k(), dl_dd.len())?;
    match (bank, grad) {
        (PrototypeBank::SquaredEuclidean { means, scale }, BankGradient::SquaredEuclidean { means: g }) => {
            // ∂d_j/∂μ_j = −2·scale·(x − μ_j)
            for ((mu, gj), &up) in means.iter().zip(g.iter_mut()).zip(dl_dd) {
                let coef = -2.0 * scale * up * weight;
                for ((gi, xi), mi) in gj.iter_mut().zip(x).zip(mu) {
                    *gi += coef * (xi - mi);
                }
            }
        }
        (PrototypeBank::Directional { units }, BankGradient::Directional { w, b }) => {
            for (j, (u, &up)) in units.iter().zip(dl_dd).enumerate() {
                let slope = abs_slope(dot(&u.w, x) + u.b) * up * weight;
                axpy(slope, x, &mut w[j]);
                b[j] += slope;
            }
        }
        (PrototypeBank::Logit { .. }, BankGradient::Logit { weights, bias }) => {
            // d_j = −(row_j·x + b_j)
            for (j, &up) in dl_dd.iter().enumerate() {
                let coef = -up * weight;
                axpy(coef, x, weights.row_mut(j));
                bias[j] += coef;
            }
        }
        _ => return Err(Error::domain("gradient kind does not match bank kind")),
    }
    Ok(())
}

/// Single-head attention projections. `wq` and `wk` map model space to head
/// space; `wv` maps model space to value space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    scale: f64,
}

impl AttentionParams {
    /// Scale fixed to `head_dim^(−1/2)`.
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix) -> Result<Self> {
        let scale = 1.0 / (wq.rows() as f64).sqrt();
        Self::with_scale(wq, wk, wv, scale)
    }

    /// Explicit score scale, for hand-built examples.
    pub fn with_scale(wq: Matrix, wk: Matrix, wv: Matrix, scale: f64) -> Result<Self> {
        check_dim("AttentionParams key rows", wq.rows(), wk.rows())?;
        check_dim("AttentionParams key cols", wq.cols(), wk.cols())?;
        check_dim("AttentionParams value cols", wq.cols(), wv.cols())?;
        if wq.rows() == 0 || wv.rows() == 0 {
            return Err(Error::domain("attention head and value dimensions must be positive"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!("score scale must be positive, got {scale}")));
        }
        Ok(Self { wq, wk, wv, scale })
    }

    pub fn random(
        rng: &mut SeededRng,
        model_dim: usize,
        head_dim: usize,
        value_dim: usize,
        init_scale: f64,
    ) -> Result<Self> {
        let wq = Matrix::random_normal(rng, head_dim, model_dim, init_scale);
        let wk = Matrix::random_normal(rng, head_dim, model_dim, init_scale);
        let wv = Matrix::random_normal(rng, value_dim, model_dim, init_scale);
        Self::new(wq, wk, wv)
    }

    pub fn wq(&self) -> &Matrix {
        &self.wq
    }

    pub fn wk(&self) -> &Matrix {
        &self.wk
    }

    pub fn wv(&self) -> &Matrix {
        &self.wv
    }

    pub fn wq_mut(&mut self) -> &mut Matrix {
        &mut self.wq
    }

    pub fn wk_mut(&mut self) -> &mut Matrix {
        &mut self.wk
    }

    pub fn wv_mut(&mut self) -> &mut Matrix {
        &mut self.wv
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn model_dim(&self) -> usize {
        self.wq.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn value_dim(&self) -> usize {
        self.wv.rows()
    }
}

/// `s_j = scale · (Wq x_q)·(Wk x_j)`. Callers read `d_j = −s_j`.
pub fn query_key_scores(params: &AttentionParams, x_query: &[f64], x_keys: &[Vec<f64>]) -> Result<Vec<f64>> {
    if x_keys.is_empty() {
        return Err(Error::domain("attention needs at least one key"));
    }
    let q = params.wq.matvec(x_query)?;
    x_keys
        .iter()
        .map(|xk| Ok(params.scale * dot(&q, &params.wk.matvec(xk)?)))
        .collect()
}

/// Gradients of the score-producing projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub wq: Matrix,
    pub wk: Matrix,
}

/// Chain rule from `∂L/∂d` (with `d = −s`) to `Wq` and `Wk`.
pub fn backprop_scores(
    params: &AttentionParams,
    x_query: &[f64],
    x_keys: &[Vec<f64>],
    dl_dd: &[f64],
) -> Result<ScoreGradient> {
    if x_keys.is_empty() {
        return Err(Error::domain("attention needs at least one key"));
    }
    check_dim("backprop_scores upstream", x_keys.len(), dl_dd.len())?;
    let q = params.wq.matvec(x_query)?;
    let mut wq = Matrix::zeros(params.head_dim(), params.model_dim());
    let mut wk = Matrix::zeros(params.head_dim(), params.model_dim());
    for (xk, &up) in x_keys.iter().zip(dl_dd) {
        let g = -up * params.scale;
        if g == 0.0 {
            continue;
        }
        let k = params.wk.matvec(xk)?;
        wq.add_outer(g, &k, x_query);
        wk.add_outer(g, &q, xk);
    }
    Ok(ScoreGradient { wq, wk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, max_abs_diff};
    use crate::objectives::{lse_gradient, lse_value};

    #[test]
    fn directional_examples() {
        let unit = DirectionalUnit::new(vec![1.0, 0.0], 0.0);
        assert_eq!(directional_distance(&unit, &[3.0, 0.0]).unwrap(), 3.0);
        assert_eq!(directional_distance(&unit, &[-3.0, 0.0]).unwrap(), 3.0);
        assert!(matches!(
            directional_distance(&unit, &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gaussian_conversion_examples() {
        let c = GaussianComponent::new(vec![0.0, 0.0], vec![1.0, 0.0], 1.0).unwrap();
        let u = from_gaussian(&c).unwrap();
        assert_eq!(u.w, vec![1.0, 0.0]);
        assert_eq!(u.b, 0.0);

        let c = GaussianComponent::new(vec![1.0, 0.0], vec![1.0, 0.0], 4.0).unwrap();
        let u = from_gaussian(&c).unwrap();
        assert_eq!(u.w, vec![0.5, 0.0]);
        assert_eq!(u.b, -0.5);
        assert_eq!(directional_distance(&u, &[5.0, 0.0]).unwrap(), 2.0);
        assert_eq!(directional_distance(&u, c.mu()).unwrap(), 0.0);

        assert!(GaussianComponent::new(vec![0.0], vec![1.0], 0.0).is_err());
        assert!(GaussianComponent::new(vec![0.0, 0.0], vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn bank_distance_examples() {
        let bank = PrototypeBank::squared_euclidean(vec![vec![0.0, 0.0], vec![2.0, 0.0]], 1.0).unwrap();
        assert_eq!(prototype_distances(&bank, &[0.0, 0.0]).unwrap().as_slice(), &[0.0, 4.0]);
        let mid = prototype_distances(&bank, &[1.0, 5.0]).unwrap();
        assert_eq!(mid.as_slice()[0], mid.as_slice()[1]);
        assert!(prototype_distances(&bank, &[1.0]).is_err());

        // identity rows produce logits z = x
        let logit = PrototypeBank::logit(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(prototype_distances(&logit, &[1.0, -1.0]).unwrap().as_slice(), &[-1.0, 1.0]);

        assert!(PrototypeBank::squared_euclidean(vec![], 1.0).is_err());
        assert!(PrototypeBank::squared_euclidean(vec![vec![0.0], vec![0.0, 1.0]], 1.0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = SeededRng::new(5);
        let x = [0.4, -1.0, 2.0];
        for bank in [
            PrototypeBank::random_squared_euclidean(&mut rng, 3, 3, 1.0, 0.5).unwrap(),
            PrototypeBank::random_directional(&mut rng, 3, 3, 1.0).unwrap(),
            PrototypeBank::random_logit(&mut rng, 3, 3, 1.0).unwrap(),
        ] {
            let g = backprop_distances(&bank, &x, &[0.0; 3]).unwrap();
            assert!(g.flatten().iter().all(|&v| v == 0.0));
            assert!(backprop_distances(&bank, &x, &[0.0; 2]).is_err());
        }
    }

    #[test]
    fn squared_euclidean_pull_is_responsibility_weighted() {
        let mut rng = SeededRng::new(9);
        let bank = PrototypeBank::random_squared_euclidean(&mut rng, 3, 2, 1.0, 1.0).unwrap();
        let x = [0.7, -0.2];
        let d = prototype_distances(&bank, &x).unwrap();
        let r: Vec<f64> = lse_gradient(&d).unwrap().iter().map(|g| -g).collect();
        let upstream: Vec<f64> = r.iter().map(|v| -v).collect();
        let g = backprop_distances(&bank, &x, &upstream).unwrap();
        let means = bank.means().unwrap();
        for j in 0..3 {
            let expect: Vec<f64> = x.iter().zip(&means[j]).map(|(xi, mi)| 2.0 * r[j] * (xi - mi)).collect();
            assert!(max_abs_diff(g.component(j), &expect) < 1e-14);
        }

        let theta = bank.flat_params();
        let fd = finite_difference_gradient(
            |p| {
                let mut b = bank.clone();
                b.set_flat_params(p).unwrap();
                lse_value(&prototype_distances(&b, &x).unwrap()).unwrap()
            },
            &theta,
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(&fd, &g.flatten()) < 1e-8);
    }

    #[test]
    fn logit_row_gradient() {
        let bank = PrototypeBank::logit(
            Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap(),
            vec![0.1, -0.3],
        )
        .unwrap();
        let x = [1.5, -2.0];
        let up = [0.3, -0.7];
        let g = backprop_distances(&bank, &x, &up).unwrap();
        assert_eq!(g.component(0), &[-0.3 * 1.5, 0.3 * 2.0]);
        let fd = finite_difference_gradient(
            |p| {
                let mut b = bank.clone();
                b.set_flat_params(p).unwrap();
                let d = prototype_distances(&b, &x).unwrap();
                d.as_slice().iter().zip(&up).map(|(a, b)| a * b).sum()
            },
            &bank.flat_params(),
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(&fd, &g.flatten()) < 1e-9);
    }

    #[test]
    fn directional_kink_subgradient_is_zero() {
        let bank = PrototypeBank::directional(vec![DirectionalUnit::new(vec![1.0, -1.0], 0.0)]).unwrap();
        let g = backprop_distances(&bank, &[2.0, 2.0], &[1.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_examples() {
        let eye = Matrix::identity(2);
        let params = AttentionParams::with_scale(eye.clone(), eye.clone(), eye.clone(), 1.0).unwrap();
        let s = query_key_scores(&params, &[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        assert!(query_key_scores(&params, &[1.0, 0.0], &[]).is_err());

        let same = vec![vec![0.3, 0.9]; 3];
        let s = query_key_scores(&params, &[0.2, -0.4], &same).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));

        let eye4 = Matrix::identity(4);
        let params = AttentionParams::new(eye4.clone(), eye4.clone(), eye4).unwrap();
        assert_eq!(params.scale(), 0.5);
        let q = [1.0, 2.0, 0.0, -1.0];
        let k = vec![vec![3.0, 0.5, 1.0, 1.0]];
        let s = query_key_scores(&params, &q, &k).unwrap();
        assert_eq!(s[0], 0.5 * dot(&q, &k[0]));
    }

    #[test]
    fn score_backprop_matches_finite_differences() {
        let mut rng = SeededRng::new(21);
        let params = AttentionParams::random(&mut rng, 3, 2, 2, 0.8).unwrap();
        let xq = vec![0.5, -1.0, 0.25];
        let keys = vec![vec![1.0, 0.0, -0.5], vec![-0.3, 0.8, 0.1], vec![0.2, 0.2, 0.9]];
        let d_of = |p: &AttentionParams| {
            DistanceVector::from_scores(&query_key_scores(p, &xq, &keys).unwrap()).unwrap()
        };
        let up = lse_gradient(&d_of(&params)).unwrap();
        let g = backprop_scores(&params, &xq, &keys, &up).unwrap();

        let fd_q = finite_difference_gradient(
            |w| {
                let mut p = params.clone();
                p.wq_mut().as_mut_slice().copy_from_slice(w);
                lse_value(&d_of(&p)).unwrap()
            },
            params.wq().as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(&fd_q, g.wq.as_slice()) < 1e-8);
        let fd_k = finite_difference_gradient(
            |w| {
                let mut p = params.clone();
                p.wk_mut().as_mut_slice().copy_from_slice(w);
                lse_value(&d_of(&p)).unwrap()
            },
            params.wk().as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(&fd_k, g.wk.as_slice()) < 1e-8);
    }
}
