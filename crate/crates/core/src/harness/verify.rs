//! The identity suite behind `verify`: gradient/responsibility identities,
//! gradient-sum laws, finite differences and shift invariance, all over
//! seeded random instances.

use std::fmt;

use serde::Serialize;

use crate::diagnostics::{no_competition_probe, responsibilities_from_gradient, ObjectiveTag};
use crate::numeric::{finite_difference_gradient, max_abs_diff, SeededRng};
use crate::objectives::{
    correntropy_gradient, correntropy_value, cross_entropy_distance_gradient, cross_entropy_gradient,
    cross_entropy_value, lse_gradient, lse_value, nll_gradient, nll_value, soft_assign, CorrentropyConfig,
    DistanceVector, Label,
};
use crate::Result;

pub const IDENTITY_INSTANCES: usize = 10_000;
pub const FD_INSTANCES: usize = 1_000;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const MAX_K: usize = 64;
pub const ENTRY_RANGE: f64 = 10.0;
/// Size of the `verify --inject-fault` perturbation of the LSE gradient.
pub const FAULT_SIZE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Perturb the LSE gradient so that the suite must fail.
    pub inject_fault: bool,
}

/// Pass when `value < bound` (errors) or `value > bound` (separations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub value: f64,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, instances: usize, value: f64, bound: Bound, threshold: f64) -> Self {
        let passed = match bound {
            Bound::Below => value < threshold,
            Bound::Above => value > threshold,
        };
        Self {
            name,
            instances,
            value,
            bound,
            threshold,
            passed,
        }
    }

    fn below(name: &'static str, instances: usize, value: f64, threshold: f64) -> Self {
        Self::new(name, instances, value, Bound::Below, threshold)
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (label, op) = match self.bound {
            Bound::Below => ("max_err", "<"),
            Bound::Above => ("spread", ">"),
        };
        write!(
            f,
            "{} {:<34} n={:<6} {}={:.3e} ({} {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            label,
            self.value,
            op,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Instance {
    d: DistanceVector,
    y: Label,
    sigma: CorrentropyConfig,
}

fn random_instance(rng: &mut SeededRng) -> Instance {
    let k = 1 + rng.index(MAX_K);
    let d: Vec<f64> = (0..k).map(|_| rng.uniform(-ENTRY_RANGE, ENTRY_RANGE)).collect();
    let y = Label(rng.index(k));
    let sigma = CorrentropyConfig::new(rng.uniform(0.5, 4.0)).expect("positive sigma");
    Instance {
        d: DistanceVector::new(d).expect("finite, non-empty"),
        y,
        sigma,
    }
}

/// Seeded instances. Each check draws from its own stream so adding a check
/// never changes the instances of another.
fn instances(seed: u64, stream: u64, n: usize) -> Vec<Instance> {
    let mut rng = SeededRng::new(seed.wrapping_mul(0x100).wrapping_add(stream));
    (0..n).map(|_| random_instance(&mut rng)).collect()
}

/// Responsibilities straight from `exp(−d)/Σ exp(−d)`; fine for `|d| ≤ 10`.
fn naive_responsibilities(d: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = d.iter().map(|v| (-v).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Lift an objective on distance vectors to a plain function of `&[f64]`.
fn on_slice<F: Fn(&DistanceVector) -> Result<f64>>(f: F) -> impl FnMut(&[f64]) -> f64 {
    move |x| f(&vector(x)).expect("objective on finite input")
}

fn vector(values: &[f64]) -> DistanceVector {
    DistanceVector::new(values.to_vec()).expect("finite probe")
}

struct Suite {
    opts: VerifyOptions,
}

impl Suite {
    fn lse_gradient(&self, d: &DistanceVector) -> Result<Vec<f64>> {
        let mut g = lse_gradient(d)?;
        if self.opts.inject_fault {
            g[0] += FAULT_SIZE;
        }
        Ok(g)
    }

    fn lse_gradient_identity(&self) -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        for inst in instances(self.opts.seed, 1, IDENTITY_INSTANCES) {
            let g = self.lse_gradient(&inst.d)?;
            let r = naive_responsibilities(inst.d.as_slice());
            let err = g.iter().zip(&r).map(|(g, r)| (g + r).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
        }
        Ok(CheckResult::below("lse_gradient_equals_minus_r", IDENTITY_INSTANCES, worst, IDENTITY_TOLERANCE))
    }

    fn sum_laws(&self) -> Result<Vec<CheckResult>> {
        let (mut lse, mut nll, mut ce, mut ce_d) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for inst in instances(self.opts.seed, 2, IDENTITY_INSTANCES) {
            lse = lse.max((self.lse_gradient(&inst.d)?.iter().sum::<f64>() + 1.0).abs());
            nll = nll.max((nll_gradient(&inst.d)?.iter().sum::<f64>() - 1.0).abs());
            ce = ce.max(cross_entropy_gradient(&inst.d, inst.y)?.iter().sum::<f64>().abs());
            ce_d = ce_d.max(cross_entropy_distance_gradient(&inst.d, inst.y)?.iter().sum::<f64>().abs());
        }
        let n = IDENTITY_INSTANCES;
        Ok(vec![
            CheckResult::below("sum_law_lse_minus_one", n, lse, IDENTITY_TOLERANCE),
            CheckResult::below("sum_law_nll_plus_one", n, nll, IDENTITY_TOLERANCE),
            CheckResult::below("sum_law_cross_entropy_zero", n, ce, IDENTITY_TOLERANCE),
            CheckResult::below("sum_law_ce_distance_zero", n, ce_d, IDENTITY_TOLERANCE),
        ])
    }

    /// The correntropy gradient sum is not pinned: it sweeps from (near) zero
    /// for far-away distances to order K near `d = σ/√2`.
    fn correntropy_has_no_sum_law(&self) -> Result<CheckResult> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut probes = 0usize;
        let mut record = |sum: f64| {
            lo = lo.min(sum);
            hi = hi.max(sum);
            probes += 1;
        };
        for inst in instances(self.opts.seed, 3, FD_INSTANCES) {
            record(correntropy_gradient(&inst.d, inst.sigma).iter().sum());
        }
        let sigma = CorrentropyConfig::new(1.0)?;
        let far = no_competition_probe(&vector(&[50.0, 60.0, 70.0]), sigma)?;
        let peak = no_competition_probe(&vector(&[std::f64::consts::FRAC_1_SQRT_2; 3]), sigma)?;
        for probe in [&far, &peak] {
            record(probe.correntropy_gradient.iter().sum());
        }
        // LSE keeps its −1 on the same probes.
        let lse_pinned = [&far, &peak].iter().all(|p| (p.lse_gradient_sum + 1.0).abs() < IDENTITY_TOLERANCE);
        let spread = if lse_pinned { hi - lo } else { 0.0 };
        Ok(CheckResult::new("correntropy_no_sum_law", probes, spread, Bound::Above, 1e-1))
    }

    fn finite_differences(&self) -> Result<Vec<CheckResult>> {
        let mut worst = [0.0f64; 5];
        for inst in instances(self.opts.seed, 4, FD_INSTANCES) {
            let d = inst.d.as_slice();
            let y = inst.y;
            let sigma = inst.sigma;
            let lse_fd = finite_difference_gradient(on_slice(lse_value), d, FD_STEP)?;
            let nll_fd = finite_difference_gradient(on_slice(nll_value), d, FD_STEP)?;
            let ce_fd = finite_difference_gradient(on_slice(|v| cross_entropy_value(v, y)), d, FD_STEP)?;
            // Logit-space form: L(z) = CE(d = −z).
            let z: Vec<f64> = d.iter().map(|v| -v).collect();
            let ce_z_fd = finite_difference_gradient(
                on_slice(|zz| cross_entropy_value(&vector(&zz.as_slice().iter().map(|v| -v).collect::<Vec<_>>()), y)),
                &z,
                FD_STEP,
            )?;
            let corr_fd = finite_difference_gradient(on_slice(|v| Ok(correntropy_value(v, sigma))), d, FD_STEP)?;

            worst[0] = worst[0].max(max_abs_diff(&self.lse_gradient(&inst.d)?, &lse_fd));
            worst[1] = worst[1].max(max_abs_diff(&nll_gradient(&inst.d)?, &nll_fd));
            worst[2] = worst[2].max(max_abs_diff(&cross_entropy_distance_gradient(&inst.d, y)?, &ce_fd));
            worst[3] = worst[3].max(max_abs_diff(&cross_entropy_gradient(&inst.d, y)?, &ce_z_fd));
            worst[4] = worst[4].max(max_abs_diff(&correntropy_gradient(&inst.d, sigma), &corr_fd));
        }
        let names = [
            "finite_difference_lse",
            "finite_difference_nll",
            "finite_difference_ce_distance",
            "finite_difference_ce_logit",
            "finite_difference_correntropy",
        ];
        Ok(names
            .iter()
            .zip(worst)
            .map(|(name, w)| CheckResult::below(name, FD_INSTANCES, w, FD_TOLERANCE))
            .collect())
    }

    fn shift_checks(&self) -> Result<Vec<CheckResult>> {
        let mut rng = SeededRng::new(self.opts.seed ^ 0x5eed_5eed);
        let (mut resp, mut lse) = (0.0f64, 0.0f64);
        for inst in instances(self.opts.seed, 5, IDENTITY_INSTANCES) {
            let c = rng.uniform(-50.0, 50.0);
            let shifted = vector(&inst.d.as_slice().iter().map(|v| v + c).collect::<Vec<_>>());
            resp = resp.max(max_abs_diff(&soft_assign(&shifted)?.r, &soft_assign(&inst.d)?.r));
            lse = lse.max((lse_value(&shifted)? - (lse_value(&inst.d)? - c)).abs());
        }
        Ok(vec![
            CheckResult::below("shift_invariance_responsibilities", IDENTITY_INSTANCES, resp, IDENTITY_TOLERANCE),
            // Values near 60 in magnitude carry their own rounding; 1e-12 absolute still holds.
            CheckResult::below("lse_shift_identity", IDENTITY_INSTANCES, lse, IDENTITY_TOLERANCE),
        ])
    }

    fn extraction(&self) -> Result<CheckResult> {
        let mut worst: f64 = 0.0;
        for inst in instances(self.opts.seed, 6, IDENTITY_INSTANCES) {
            let r = soft_assign(&inst.d)?.r;
            let pairs = [
                (ObjectiveTag::Lse, self.lse_gradient(&inst.d)?),
                (ObjectiveTag::Nll, nll_gradient(&inst.d)?),
                (ObjectiveTag::CrossEntropy, cross_entropy_gradient(&inst.d, inst.y)?),
            ];
            for (tag, g) in pairs {
                let err = match responsibilities_from_gradient(&g, tag, Some(inst.y)) {
                    Ok(back) => max_abs_diff(&back, &r),
                    Err(_) => f64::INFINITY,
                };
                worst = worst.max(err);
            }
        }
        Ok(CheckResult::below("responsibility_extraction", IDENTITY_INSTANCES, worst, IDENTITY_TOLERANCE))
    }
}

pub fn run_verify(opts: VerifyOptions) -> Result<VerifyReport> {
    let suite = Suite { opts };
    let mut checks = vec![suite.lse_gradient_identity()?];
    checks.extend(suite.sum_laws()?);
    checks.push(suite.correntropy_has_no_sum_law()?);
    checks.extend(suite.finite_differences()?);
    checks.extend(suite.shift_checks()?);
    checks.push(suite.extraction()?);
    Ok(VerifyReport {
        seed: opts.seed,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_verify(VerifyOptions { seed: 7, inject_fault: false }).unwrap();
        assert!(a.passed(), "{:?}", a.failing());
        let b = run_verify(VerifyOptions { seed: 7, inject_fault: false }).unwrap();
        assert_eq!(a, b);
        assert!(a.check("lse_gradient_equals_minus_r").unwrap().value < 1e-12);
    }

    #[test]
    fn injected_fault_is_caught() {
        let r = run_verify(VerifyOptions { seed: 7, inject_fault: true }).unwrap();
        assert!(!r.passed());
        let failing = r.failing();
        assert!(failing.contains(&"lse_gradient_equals_minus_r"));
        assert!(failing.contains(&"sum_law_lse_minus_one"));
        assert!(failing.contains(&"responsibility_extraction"));
    }

    #[test]
    fn naive_oracle_agrees_on_small_case() {
        let r = naive_responsibilities(&[0.0, 2.0_f64.ln()]);
        assert!((r[0] - 2.0 / 3.0).abs() < 1e-15 && (r[1] - 1.0 / 3.0).abs() < 1e-15);
    }
}
