//! Factor-level evidence from per-variant AIC: best-in-cell comparison over
//! nuisance cells, averaged equally across cells that contain both levels.

use crate::observer::{Family, FitResult, ObserverVariant};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no successful fits to compare")]
    NoFits,
    #[error("no nuisance cell contains both levels of the {0} factor")]
    NoIntersection(Factor),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Bayesian,
    Weber,
    Sequential,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Bayesian, Factor::Weber, Factor::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Bayesian => "bayesian",
            Factor::Weber => "weber",
            Factor::Sequential => "sequential",
        }
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Family,
    Log,
    Weber,
    Affine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorQuery {
    pub factor: Factor,
    pub nuisance: Vec<Dimension>,
}

impl FactorQuery {
    pub fn standard(factor: Factor) -> Self {
        let nuisance = match factor {
            Factor::Bayesian => vec![Dimension::Weber],
            Factor::Weber => vec![Dimension::Family, Dimension::Log, Dimension::Affine],
            Factor::Sequential => vec![Dimension::Log, Dimension::Weber, Dimension::Affine],
        };
        FactorQuery { factor, nuisance }
    }

    /// `Some(level)` when the variant takes part in the contrast.
    fn level(&self, v: &ObserverVariant) -> Option<bool> {
        match self.factor {
            Factor::Bayesian => Some(v.family.is_bayesian()),
            Factor::Weber => Some(v.weber),
            Factor::Sequential => match v.family {
                Family::Kalman => Some(true),
                Family::StaticBayes => Some(false),
                Family::Linear => None,
            },
        }
    }

    fn cell(&self, v: &ObserverVariant) -> Vec<u8> {
        self.nuisance
            .iter()
            .map(|d| match d {
                Dimension::Family => v.family as u8,
                Dimension::Log => v.log_transform as u8,
                Dimension::Weber => v.weber as u8,
                Dimension::Affine => v.affine as u8,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBest {
    pub cell: String,
    pub best_true: f64,
    pub best_false: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorEvidence {
    pub factor: Factor,
    pub p_true: f64,
    pub p_false: f64,
    pub cells_used: usize,
    pub cells: Vec<CellBest>,
}

/// Relative likelihood `exp(-ΔAIC/2)` of each fit against the best.
pub fn akaike_weights(fits: &[FitResult]) -> Result<Vec<f64>, AnalysisError> {
    let best = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(AnalysisError::NoFits);
    }
    Ok(fits.iter().map(|f| (-(f.aic - best) / 2.0).exp()).collect())
}

pub fn factor_evidence(fits: &[FitResult], query: &FactorQuery) -> Result<FactorEvidence, AnalysisError> {
    let weights = akaike_weights(fits)?;
    let mut cells: BTreeMap<Vec<u8>, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (f, w) in fits.iter().zip(weights) {
        let Some(level) = query.level(&f.variant) else { continue };
        let entry = cells.entry(query.cell(&f.variant)).or_default();
        let side = if level { &mut entry.0 } else { &mut entry.1 };
        *side = Some(side.map_or(w, |s| s.max(w)));
    }
    let used: Vec<CellBest> = cells
        .into_iter()
        .filter_map(|(key, (t, f))| {
            Some(CellBest { cell: describe_cell(&query.nuisance, &key), best_true: t?, best_false: f? })
        })
        .collect();
    if used.is_empty() {
        return Err(AnalysisError::NoIntersection(query.factor));
    }
    let n = used.len() as f64;
    let mean_true = used.iter().map(|c| c.best_true).sum::<f64>() / n;
    let mean_false = used.iter().map(|c| c.best_false).sum::<f64>() / n;
    let p_true = mean_true / (mean_true + mean_false);
    Ok(FactorEvidence { factor: query.factor, p_true, p_false: 1.0 - p_true, cells_used: used.len(), cells: used })
}

fn describe_cell(dims: &[Dimension], key: &[u8]) -> String {
    let names = ["linear", "static_bayes", "kalman"];
    dims.iter()
        .zip(key)
        .map(|(d, &k)| match d {
            Dimension::Family => format!("family={}", names[k as usize]),
            Dimension::Log => format!("log={}", k == 1),
            Dimension::Weber => format!("weber={}", k == 1),
            Dimension::Affine => format!("affine={}", k == 1),
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// One row of the evidence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRow {
    pub model: String,
    pub task: String,
    pub modality: String,
    pub ablation: String,
    pub factor: Factor,
    pub p_true: f64,
    pub cells_used: usize,
}

pub fn write_evidence_csv<W: std::io::Write>(rows: &[EvidenceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{enumerate_variants, ObserverParams};

    fn fit_with_aic(v: ObserverVariant, aic: f64) -> FitResult {
        FitResult {
            variant: v,
            params: ObserverParams::linear(1.0, 0.0, 0.1),
            log_likelihood: -aic / 2.0,
            n_params: 0,
            aic,
            n_observations: 10,
            restarts: 1,
            finite_restarts: 1,
            converged: true,
            evaluations: 1,
        }
    }

    #[test]
    fn weights() {
        let lin = ObserverVariant::plain(Family::Linear);
        let w = akaike_weights(&[fit_with_aic(lin, 5.0), fit_with_aic(lin, 5.0)]).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        let w = akaike_weights(&[fit_with_aic(lin, 3.0), fit_with_aic(lin, 5.0)]).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(akaike_weights(&[]), Err(AnalysisError::NoFits));
    }

    #[test]
    fn two_model_case() {
        let q = FactorQuery { factor: Factor::Bayesian, nuisance: vec![Dimension::Weber] };
        let fits = [
            fit_with_aic(ObserverVariant::plain(Family::StaticBayes), 10.0),
            fit_with_aic(ObserverVariant::plain(Family::Linear), 12.0),
        ];
        let e = factor_evidence(&fits, &q).unwrap();
        assert!((e.p_true - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
        assert!((e.p_true - 0.731).abs() < 1e-3);
        assert_eq!(e.cells_used, 1);
        assert_eq!(e.p_true + e.p_false, 1.0);
    }

    #[test]
    fn symmetric_cells_give_half() {
        let fits: Vec<FitResult> = enumerate_variants().into_iter().map(|v| fit_with_aic(v, 7.0)).collect();
        for f in Factor::ALL {
            assert_eq!(factor_evidence(&fits, &FactorQuery::standard(f)).unwrap().p_true, 0.5);
        }
    }

    #[test]
    fn bayesian_cells_are_the_weber_pair() {
        let fits: Vec<FitResult> = enumerate_variants().into_iter().map(|v| fit_with_aic(v, 7.0)).collect();
        let e = factor_evidence(&fits, &FactorQuery::standard(Factor::Bayesian)).unwrap();
        assert_eq!(e.cells_used, 2);
        assert_eq!(e.cells[0].cell, "weber=false");
        let seq = factor_evidence(&fits, &FactorQuery::standard(Factor::Sequential)).unwrap();
        assert_eq!(seq.cells_used, 8);
    }

    #[test]
    fn missing_side_is_an_error() {
        let fits = [fit_with_aic(ObserverVariant::plain(Family::Linear), 1.0)];
        let err = factor_evidence(&fits, &FactorQuery::standard(Factor::Sequential)).unwrap_err();
        assert!(err.to_string().contains("sequential"));
    }

    #[test]
    fn csv_export() {
        let rows = [EvidenceRow {
            model: "m".into(),
            task: "marker".into(),
            modality: "image".into(),
            ablation: "none".into(),
            factor: Factor::Weber,
            p_true: 0.25,
            cells_used: 4,
        }];
        let mut buf = Vec::new();
        write_evidence_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,task,modality,ablation,factor,p_true,cells_used\nm,marker,image,none,weber,0.25,4\n"
        );
    }
}
