//! Dense vectors and matrices, seeded randomness, stable log-sum-exp and a
//! central-difference gradient oracle.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. [`Matrix`] is row-major.
//!
//! The random stream comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), whose
//! output for a given seed is fixed by its reference specification and does
//! not depend on platform endianness or word size. Normal deviates use the
//! ziggurat sampler of `rand_distr::StandardNormal` on top of that stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape {
                    context: "Matrix::from_rows",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn i.i.d. from `N(0, scale²)`.
    pub fn random_normal(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Self {
        let data = (0..rows * cols)
            .map(|_| scale * rng.standard_normal())
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape {
                context: "Matrix::matvec",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `self += alpha * u vᵀ`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let coef = alpha * ur;
            if coef == 0.0 {
                continue;
            }
            for (dst, &vc) in self.row_mut(r).iter_mut().zip(v) {
                *dst += coef * vc;
            }
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Component-wise mean of equally sized vectors.
pub fn mean_vector(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::domain("mean of an empty set of vectors"))?;
    let mut acc = vec![0.0; first.len()];
    for row in rows {
        if row.len() != acc.len() {
            return Err(Error::Shape {
                context: "mean_vector",
                expected: acc.len(),
                got: row.len(),
            });
        }
        axpy(1.0, row, &mut acc);
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

/// `log Σ exp(v_i)` via the max-shift identity.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty vector"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("log_sum_exp input {bad} is not finite")));
    }
    let (top, &max) = values
        .iter()
        .enumerate()
        .fold((0, &values[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
    // log(1 + rest) keeps precision when the maximum dominates
    let rest: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, v)| (v - max).exp())
        .sum();
    Ok(max + rest.ln_1p())
}

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("step size must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::domain(format!(
                "objective not finite around coordinate {i} ({plus}, {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Single-owner deterministic random stream (ChaCha8, 64-bit seed).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// `mean + std · ξ` with `ξ` i.i.d. standard normal.
pub fn gaussian_sample(rng: &mut SeededRng, mean: &[f64], std: f64) -> Result<Vec<f64>> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::domain(format!("standard deviation must be positive, got {std}")));
    }
    Ok(mean
        .iter()
        .map(|m| m + std * rng.standard_normal())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_simple_values() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        for x in [-7.5, 0.0, 3.25, 1e6] {
            assert_eq!(log_sum_exp(&[x]).unwrap(), x);
        }
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let tiny = log_sum_exp(&[-1e6, -1e6]).unwrap();
        assert!((tiny - (-1e6 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn lse_rejects_bad_input() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Domain(_))));
        assert!(matches!(log_sum_exp(&[0.0, f64::NAN]), Err(Error::Domain(_))));
    }

    #[test]
    fn central_differences() {
        let g = finite_difference_gradient(|x| x.iter().sum(), &[0.3, -2.0, 5.0], 1e-5).unwrap();
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }

        let g = finite_difference_gradient(
            |d| log_sum_exp(&d.iter().map(|v| -v).collect::<Vec<_>>()).unwrap(),
            &[0.0, 0.0],
            1e-5,
        )
        .unwrap();
        assert!(max_abs_diff(&g, &[-0.5, -0.5]) < 1e-9);

        let g = finite_difference_gradient(|x| dot(x, x), &[1.0, 2.0], 1e-5).unwrap();
        assert!(max_abs_diff(&g, &[2.0, 4.0]) < 1e-8);
    }

    #[test]
    fn central_differences_errors() {
        assert!(finite_difference_gradient(|x| x[0], &[1.0], 0.0).is_err());
        let err = finite_difference_gradient(|x| x[0].ln(), &[0.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn gaussian_sampling_contract() {
        let mean = [1.5, -2.0];
        assert!(gaussian_sample(&mut SeededRng::new(1), &mean, 0.0).is_err());
        assert!(gaussian_sample(&mut SeededRng::new(1), &mean, -1.0).is_err());

        let near = gaussian_sample(&mut SeededRng::new(3), &mean, 1e-12).unwrap();
        assert!(max_abs_diff(&near, &mean) < 1e-10);

        let mut a = SeededRng::new(42);
        let first = gaussian_sample(&mut a, &mean, 1.0).unwrap();
        let second = gaussian_sample(&mut a, &mean, 1.0).unwrap();
        assert_ne!(first, second);
        let mut b = SeededRng::new(42);
        assert_eq!(first, gaussian_sample(&mut b, &mean, 1.0).unwrap());
        assert_eq!(second, gaussian_sample(&mut b, &mean, 1.0).unwrap());
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = SeededRng::new(2024);
        let mean = [0.5, -1.0, 3.0];
        let n = 100_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..n {
            let s = gaussian_sample(&mut rng, &mean, 1.0).unwrap();
            axpy(1.0 / n as f64, &s, &mut acc);
        }
        assert!(max_abs_diff(&acc, &mean) < 0.02);
    }

    #[test]
    fn matrix_ops() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, -1.0]).unwrap(), vec![-1.0, -1.0, -1.0]);
        assert!(m.matvec(&[1.0]).is_err());
        let mut z = Matrix::zeros(2, 3);
        z.add_outer(2.0, &[1.0, 0.5], &[1.0, 2.0, 3.0]);
        assert_eq!(z.row(1), &[1.0, 2.0, 3.0]);
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert_eq!(Matrix::identity(2).matvec(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }
}
