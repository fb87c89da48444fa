//! Reading responsibilities back out of gradients, and trace analysis:
//! specialization entropy, collapse (mass dominance) and the two-timescale
//! stabilization of score versus value parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{correntropy_gradient, soft_assign, CorrentropyConfig, DistanceVector, Label};
use crate::regimes::{Regime, TrainingTrace};

/// Tolerance of the simplex check in [`responsibilities_from_gradient`].
pub const EXTRACTION_TOLERANCE: f64 = 1e-10;
/// Tolerance of the simplex check in [`specialization_entropy`].
pub const ENTROPY_SIMPLEX_TOLERANCE: f64 = 1e-8;
/// A drift series has stabilized once it stays below this fraction of its peak.
pub const STABILIZATION_FRACTION: f64 = 0.1;

/// The objective a distance-space gradient was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveTag {
    /// `log Z`, gradient `−r`.
    Lse,
    /// `−log Z`, gradient `+r`.
    Nll,
    /// Cross-entropy clamp gradient `r − onehot(y)`.
    CrossEntropy,
}

fn check_simplex(r: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some((j, v)) = r.iter().enumerate().find(|(_, v)| !(**v >= -tol)) {
        return Err(format!("r[{j}] = {v} is negative"));
    }
    let sum: f64 = r.iter().sum();
    if !((sum - 1.0).abs() <= tol) {
        return Err(format!("responsibilities sum to {sum}"));
    }
    Ok(())
}

/// Invert the gradient/responsibility identity of the tagged objective.
pub fn responsibilities_from_gradient(
    grad_d: &[f64],
    tag: ObjectiveTag,
    label: Option<Label>,
) -> Result<Vec<f64>> {
    if grad_d.is_empty() {
        return Err(Error::domain("empty gradient"));
    }
    let r: Vec<f64> = match tag {
        ObjectiveTag::Lse => grad_d.iter().map(|g| -g).collect(),
        ObjectiveTag::Nll => grad_d.to_vec(),
        ObjectiveTag::CrossEntropy => {
            let y = label.ok_or_else(|| Error::domain("cross-entropy extraction needs the label"))?;
            if y.0 >= grad_d.len() {
                return Err(Error::IndexOutOfRange {
                    index: y.0,
                    len: grad_d.len(),
                });
            }
            let mut r = grad_d.to_vec();
            r[y.0] += 1.0;
            r
        }
    };
    check_simplex(&r, EXTRACTION_TOLERANCE)
        .map_err(|why| Error::Inconsistent(format!("{tag:?} gradient: {why}")))?;
    Ok(r)
}

/// `H(r) = −Σ r_j ln r_j` in nats, with `0 ln 0 = 0`; clamped to `[0, ln K]`.
pub fn specialization_entropy(r: &[f64]) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::domain("entropy of an empty distribution"));
    }
    check_simplex(r, ENTROPY_SIMPLEX_TOLERANCE).map_err(Error::Domain)?;
    let h: f64 = r
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h.clamp(0.0, (r.len() as f64).ln()))
}

/// Largest mean responsibility mass held by a single component.
pub fn collapse_score(assignments: &[Vec<f64>]) -> Result<f64> {
    let k = assignments
        .first()
        .ok_or_else(|| Error::domain("collapse score needs at least one assignment"))?
        .len();
    let mut mass = vec![0.0; k];
    for r in assignments {
        if r.len() != k {
            return Err(Error::Shape {
                context: "collapse_score",
                expected: k,
                got: r.len(),
            });
        }
        for (m, v) in mass.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = assignments.len() as f64;
    Ok(mass.into_iter().map(|m| m / n).fold(0.0, f64::max).min(1.0))
}

/// First step after which `drift` stays below [`STABILIZATION_FRACTION`] of
/// its peak. An all-zero series is stable from its first step; a series
/// still above the threshold at the end reports one past its last step.
pub fn stabilization_step(steps: &[usize], drift: &[f64]) -> usize {
    let Some(&first) = steps.first() else {
        return 0;
    };
    let peak = drift.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return first;
    }
    let threshold = STABILIZATION_FRACTION * peak;
    match drift.iter().rposition(|&v| v >= threshold) {
        Some(i) if i + 1 < steps.len() => steps[i + 1],
        Some(i) => steps[i] + 1,
        None => first,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoTimescale {
    pub score_stabilization_step: usize,
    pub value_stabilization_step: usize,
    /// `value / score`; absent when the score series is stable from step 0.
    pub ratio: Option<f64>,
    pub scores_stabilize_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub regime: Option<Regime>,
    pub k: Option<usize>,
    pub steps: Vec<usize>,
    /// Mean responsibility entropy per step (nats).
    pub entropy: Vec<f64>,
    pub collapse_score: Vec<Option<f64>>,
    /// Mean responsibility mass per component per step, when the trace carries it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub component_mass: Option<Vec<Vec<f64>>>,
    pub score_drift: Vec<Option<f64>>,
    pub value_drift: Vec<Option<f64>>,
    pub final_collapse_score: Option<f64>,
    pub score_stabilization_step: Option<usize>,
    pub value_stabilization_step: Option<usize>,
    pub two_timescale: Option<TwoTimescale>,
}

fn full_series(values: &[Option<f64>]) -> Option<Vec<f64>> {
    if values.is_empty() {
        return None;
    }
    values.iter().copied().collect()
}

/// Summarize any non-empty trace. Stabilization steps are filled for each
/// drift series present at every step.
pub fn diagnostic_report(trace: &TrainingTrace) -> Result<DiagnosticReport> {
    let records = trace.records();
    if records.is_empty() {
        return Err(Error::domain("trace has no records"));
    }
    let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
    let ln_k = trace.k.map(|k| (k as f64).ln());
    for r in records {
        let above = ln_k.is_some_and(|b| r.entropy > b + 1e-12);
        if !(r.entropy >= 0.0) || above {
            return Err(Error::domain(format!(
                "entropy {} at step {} is outside [0, ln K]",
                r.entropy, r.step
            )));
        }
    }
    let score_drift: Vec<Option<f64>> = records.iter().map(|r| r.score_drift).collect();
    let value_drift: Vec<Option<f64>> = records.iter().map(|r| r.value_drift).collect();
    let score_stab = full_series(&score_drift).map(|s| stabilization_step(&steps, &s));
    let value_stab = full_series(&value_drift).map(|s| stabilization_step(&steps, &s));
    let two_timescale = match (score_stab, value_stab) {
        (Some(score), Some(value)) => Some(TwoTimescale {
            score_stabilization_step: score,
            value_stabilization_step: value,
            ratio: (score > 0).then(|| value as f64 / score as f64),
            scores_stabilize_first: score <= value,
        }),
        _ => None,
    };
    let component_mass = records
        .iter()
        .all(|r| !r.component_mass.is_empty())
        .then(|| records.iter().map(|r| r.component_mass.clone()).collect());
    let collapse: Vec<Option<f64>> = records.iter().map(|r| r.collapse_score).collect();
    Ok(DiagnosticReport {
        regime: trace.regime,
        k: trace.k,
        entropy: records.iter().map(|r| r.entropy).collect(),
        final_collapse_score: *collapse.last().unwrap_or(&None),
        collapse_score: collapse,
        component_mass,
        score_drift,
        value_drift,
        score_stabilization_step: score_stab,
        value_stabilization_step: value_stab,
        two_timescale,
        steps,
    })
}

/// Like [`diagnostic_report`], but both drift series are required.
pub fn two_timescale_report(trace: &TrainingTrace) -> Result<DiagnosticReport> {
    let report = diagnostic_report(trace)?;
    if report.two_timescale.is_none() {
        return Err(Error::domain(
            "two-timescale analysis needs score and value drift at every step",
        ));
    }
    Ok(report)
}

/// Correntropy gradients next to LSE responsibilities for the same distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionProbe {
    pub distances: Vec<f64>,
    pub correntropy_gradient: Vec<f64>,
    pub correntropy_total_abs: f64,
    pub lse_responsibilities: Vec<f64>,
    /// `Σ_j ∂(log Z)/∂d_j`, always −1.
    pub lse_gradient_sum: f64,
    /// `Σ_j |∂(log Z)/∂d_j|`, at least `1/K`.
    pub lse_total_abs: f64,
}

pub fn no_competition_probe(d: &DistanceVector, cfg: CorrentropyConfig) -> Result<CompetitionProbe> {
    let corr = correntropy_gradient(d, cfg);
    let r = soft_assign(d)?.r;
    Ok(CompetitionProbe {
        distances: d.as_slice().to_vec(),
        correntropy_total_abs: corr.iter().map(|g| g.abs()).sum(),
        correntropy_gradient: corr,
        lse_gradient_sum: -r.iter().sum::<f64>(),
        lse_total_abs: r.iter().sum(),
        lse_responsibilities: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::max_abs_diff;
    use crate::regimes::TraceRecord;

    fn record(step: usize, score: Option<f64>, value: Option<f64>) -> TraceRecord {
        TraceRecord {
            step,
            loss: 0.0,
            entropy: 0.1,
            collapse_score: Some(0.5),
            score_drift: score,
            value_drift: value,
            r_y_mean: None,
            component_mass: vec![0.5, 0.5],
            off_target_mass: None,
            clamp_gradient_sum: None,
            weight_sum_error: None,
        }
    }

    #[test]
    fn extraction_examples() {
        let r = responsibilities_from_gradient(&[-0.5, -0.5], ObjectiveTag::Lse, None).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
        let r = responsibilities_from_gradient(&[-0.5, 0.5], ObjectiveTag::CrossEntropy, Some(Label(0))).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
        let r = responsibilities_from_gradient(&[0.25, 0.75], ObjectiveTag::Nll, None).unwrap();
        assert_eq!(r, vec![0.25, 0.75]);
    }

    #[test]
    fn extraction_detects_wrong_objective() {
        // an NLL gradient read as LSE gives negative responsibilities
        let err = responsibilities_from_gradient(&[0.5, 0.5], ObjectiveTag::Lse, None).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
        let err = responsibilities_from_gradient(&[-0.4, -0.4], ObjectiveTag::Lse, None).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
        assert!(responsibilities_from_gradient(&[0.1, -0.1], ObjectiveTag::CrossEntropy, None).is_err());
        assert!(matches!(
            responsibilities_from_gradient(&[0.1, -0.1], ObjectiveTag::CrossEntropy, Some(Label(2))),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        assert!((specialization_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(specialization_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let h = specialization_entropy(&[0.75, 0.25]).unwrap();
        let expect = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((h - expect).abs() < 1e-15);
        assert!((h - 0.5623).abs() < 1e-4);
        assert!(specialization_entropy(&[0.7, 0.7]).is_err());
        assert!(specialization_entropy(&[1.1, -0.1]).is_err());
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse_score(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(), 0.5);
        assert_eq!(collapse_score(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(), 0.5);
        assert_eq!(collapse_score(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(), 1.0);
        assert!(collapse_score(&[]).is_err());
    }

    #[test]
    fn stabilization_of_constructed_trace() {
        let mut trace = TrainingTrace::new(Some(Regime::Conditional), Some(2));
        for t in 0..200 {
            let score = if t < 10 { 1.0 } else { 0.0 };
            let value = if t < 100 { 2.0 } else { 0.01 };
            trace.push(record(t, Some(score), Some(value))).unwrap();
        }
        let report = two_timescale_report(&trace).unwrap();
        let tt = report.two_timescale.unwrap();
        assert_eq!(tt.score_stabilization_step, 10);
        assert_eq!(tt.value_stabilization_step, 100);
        assert_eq!(tt.ratio, Some(10.0));
        assert!(tt.scores_stabilize_first);
        assert_eq!(report.entropy.len(), 200);
    }

    #[test]
    fn stabilization_edge_cases() {
        let mut trace = TrainingTrace::new(Some(Regime::Conditional), Some(2));
        for t in 0..5 {
            trace.push(record(t, Some(0.0), Some(0.0))).unwrap();
        }
        let tt = two_timescale_report(&trace).unwrap().two_timescale.unwrap();
        assert_eq!((tt.score_stabilization_step, tt.value_stabilization_step), (0, 0));
        assert_eq!(tt.ratio, None);
        // still moving at the end
        assert_eq!(stabilization_step(&[0, 1, 2], &[0.0, 0.5, 1.0]), 3);
    }

    #[test]
    fn missing_series_is_an_error() {
        let mut trace = TrainingTrace::new(Some(Regime::Unsupervised), Some(2));
        trace.push(record(0, Some(1.0), None)).unwrap();
        assert!(two_timescale_report(&trace).is_err());
        let report = diagnostic_report(&trace).unwrap();
        // the only record is at peak drift
        assert_eq!(report.score_stabilization_step, Some(1));
        assert!(report.two_timescale.is_none());
        assert!(diagnostic_report(&TrainingTrace::new(None, None)).is_err());
    }

    #[test]
    fn probe_examples() {
        let cfg = CorrentropyConfig::new(1.0).unwrap();
        let p = no_competition_probe(&DistanceVector::new(vec![100.0, 100.0]).unwrap(), cfg).unwrap();
        assert!(p.correntropy_total_abs < 1e-300);
        assert!(max_abs_diff(&p.lse_responsibilities, &[0.5, 0.5]) < 1e-15);
        assert!((p.lse_gradient_sum + 1.0).abs() < 1e-15);

        let p = no_competition_probe(&DistanceVector::new(vec![0.0, 100.0]).unwrap(), cfg).unwrap();
        assert!(max_abs_diff(&p.correntropy_gradient, &[0.0, 0.0]) < 1e-300);
        assert!(max_abs_diff(&p.lse_responsibilities, &[1.0, 0.0]) < 1e-40);
    }
}
