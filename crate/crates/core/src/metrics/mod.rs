//! Accuracy, consistency and composite scores, with session-level bootstrap.

mod bootstrap;

pub use bootstrap::{bootstrap, bootstrap_many, percentile, Interval};

use crate::session::AblationKind;
use crate::stimulus::TaskKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Ceiling NRMSE used to normalize accuracy.
pub const NRMSE_MAX: f64 = 2.0;
/// Half-width of the consistency score range.
pub const BCS_MAX: f64 = 15.0;
/// Ablated prior weights above this count as prior-dominant and score zero.
pub const PRIOR_DOMINANT: f64 = 0.9;

pub const BCS_ABLATIONS: [AblationKind; 5] = [
    AblationKind::SteerVerbal,
    AblationKind::SteerNumericUnbiased,
    AblationKind::NoiseConstant,
    AblationKind::NoiseGradual,
    AblationKind::ContextLong,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no trials to score")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("baseline error is zero; NRMSE undefined")]
    DegenerateBaseline,
}

/// RMSE of `preds` over RMSE of each trial's range midpoint, pooled over all
/// trials (sum of squared errors on both sides).
pub fn nrmse(preds: &[f64], truth: &[f64], mids: &[f64]) -> Result<f64, MetricsError> {
    if preds.len() != truth.len() || mids.len() != truth.len() {
        return Err(MetricsError::Length(preds.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let num: f64 = preds.iter().zip(truth).map(|(p, x)| (p - x).powi(2)).sum();
    let den: f64 = mids.iter().zip(truth).map(|(m, x)| (m - x).powi(2)).sum();
    if den <= 0.0 {
        return Err(MetricsError::DegenerateBaseline);
    }
    Ok((num / den).sqrt())
}

/// Relative reference error: > 1 when the observer beats the reference.
pub fn rre(nrmse_reference: f64, nrmse_observer: f64) -> f64 {
    if nrmse_observer == 0.0 {
        f64::INFINITY
    } else {
        nrmse_reference / nrmse_observer
    }
}

/// Score of one ablation: 0 in the prior-dominant regime, otherwise the sign
/// of the prior-weight shift (ties count as consistent).
pub fn ablation_score(w_base: f64, w_ablation: f64) -> i32 {
    if w_ablation > PRIOR_DOMINANT {
        0
    } else if w_ablation - w_base >= 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorShift {
    pub w_base: f64,
    pub w_ablation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcsResult {
    pub per_task: BTreeMap<TaskKind, i32>,
    pub total: i32,
    /// (task, ablation) cells without both fits; each scored 0.
    pub missing: Vec<(TaskKind, AblationKind)>,
}

pub fn bcs(shifts: &BTreeMap<(TaskKind, AblationKind), PriorShift>) -> BcsResult {
    let mut per_task = BTreeMap::new();
    let mut missing = Vec::new();
    for task in TaskKind::MULTIMODAL {
        let mut s = 0;
        for a in BCS_ABLATIONS {
            match shifts.get(&(task, a)) {
                Some(p) => s += ablation_score(p.w_base, p.w_ablation),
                None => missing.push((task, a)),
            }
        }
        per_task.insert(task, s);
    }
    let total = per_task.values().sum();
    BcsResult { per_task, total, missing }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub accuracy: f64,
    pub efficiency: f64,
    pub consistency: f64,
    pub score: f64,
}

pub fn accuracy_factor(nrmse_by_task: &[f64]) -> f64 {
    let a: f64 = nrmse_by_task.iter().map(|n| (1.0 - n / NRMSE_MAX).clamp(0.0, 1.0)).sum();
    a / nrmse_by_task.len() as f64
}

/// Mean over tasks of the average of oracle and non-oracle RRE. Not clamped.
pub fn efficiency_factor(rre_pairs: &[(f64, f64)]) -> f64 {
    rre_pairs.iter().map(|(o, n)| (o + n) / 2.0).sum::<f64>() / rre_pairs.len() as f64
}

pub fn consistency_factor(bcs_total: f64) -> f64 {
    ((bcs_total + BCS_MAX) / (2.0 * BCS_MAX)).clamp(0.0, 1.0)
}

pub fn bayesbench(nrmse_by_task: &[f64], rre_pairs: &[(f64, f64)], bcs_total: f64) -> Factors {
    let accuracy = accuracy_factor(nrmse_by_task);
    let efficiency = efficiency_factor(rre_pairs);
    let consistency = consistency_factor(bcs_total);
    Factors { accuracy, efficiency, consistency, score: (accuracy + efficiency + consistency) / 3.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn nrmse_basics() {
        let x = [0.1, 0.4, 0.8];
        let mids = [0.5; 3];
        assert_eq!(nrmse(&x, &x, &mids).unwrap(), 0.0);
        assert_eq!(nrmse(&mids, &x, &mids).unwrap(), 1.0);
        assert_eq!(nrmse(&[], &[], &[]), Err(MetricsError::Empty));
        assert_eq!(nrmse(&[0.5], &[0.5], &[0.5]), Err(MetricsError::DegenerateBaseline));
    }

    #[test]
    fn offset_on_uniform_data_matches_closed_form() {
        let (lo, w, c) = (2.0, 3.0, 0.4);
        let mut rng = seed::rng(4);
        let x: Vec<f64> = (0..200_000).map(|_| lo + w * rng.random::<f64>()).collect();
        let mid = lo + w / 2.0;
        let preds = vec![mid + c; x.len()];
        let n = nrmse(&preds, &x, &vec![mid; x.len()]).unwrap();
        let expected = ((w * w / 12.0 + c * c) / (w * w / 12.0)).sqrt();
        assert!((n - expected).abs() < 5e-3, "{n} vs {expected}");
    }

    #[test]
    fn rre_examples() {
        assert_eq!(rre(0.5, 0.25), 2.0);
        assert_eq!(rre(0.5, 1.0), 0.5);
        assert_eq!(rre(0.3, 0.3), 1.0);
        assert!(rre(0.3, 0.0).is_infinite());
    }

    #[test]
    fn ablation_rule() {
        assert_eq!(ablation_score(0.3, 0.4), 1);
        assert_eq!(ablation_score(0.3, 0.3), 1);
        assert_eq!(ablation_score(0.3, 0.2), -1);
        assert_eq!(ablation_score(0.3, 0.95), 0);
        assert_eq!(ablation_score(0.99, 0.95), 0);
    }

    #[test]
    fn bcs_extremes_and_gaps() {
        let mut up = BTreeMap::new();
        for t in TaskKind::MULTIMODAL {
            for a in BCS_ABLATIONS {
                up.insert((t, a), PriorShift { w_base: 0.3, w_ablation: 0.4 });
            }
        }
        let r = bcs(&up);
        assert_eq!(r.total, 15);
        assert!(r.missing.is_empty());
        assert!(r.per_task.values().all(|&v| v == 5));
        up.remove(&(TaskKind::MULTIMODAL[0], AblationKind::NoiseGradual));
        let r = bcs(&up);
        assert_eq!(r.total, 14);
        assert_eq!(r.missing.len(), 1);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(accuracy_factor(&[2.0; 4]), 0.0);
        assert_eq!(accuracy_factor(&[0.0; 4]), 1.0);
        assert_eq!(accuracy_factor(&[3.0, 0.0, 0.0, 0.0]), 0.75);
        assert_eq!(consistency_factor(15.0), 1.0);
        assert_eq!(consistency_factor(-15.0), 0.0);
        assert_eq!(consistency_factor(0.0), 0.5);
        let f = bayesbench(&[0.0; 4], &[(1.0, 1.0); 3], 15.0);
        assert_eq!(f.score, 1.0);
        let f = bayesbench(&[0.4, 0.9, 1.3, 0.2], &[(1.2, 0.9), (0.7, 1.1), (1.5, 1.4)], 3.0);
        assert_eq!(f.score, (f.accuracy + f.efficiency + f.consistency) / 3.0);
    }
}
