use super::data::{fit_data, fusion_trials, matches, parsed_triples, CellKey, Dataset, Unit};
use super::store::Workspace;
use super::{HarnessError, PipelineConfig};
use crate::factor::{factor_evidence, write_evidence_csv, EvidenceRow, Factor, FactorQuery};
use crate::fusion::{evaluate, write_fusion_csv, ForestConfig, FusionRow};
use crate::metrics::nrmse;
use crate::observer::{enumerate_variants, fit_grid, FitOptions, FitResult};
use crate::optim::MultiStartConfig;
use crate::par;
use crate::seed;
use crate::session::{AblationKind, Modality};
use crate::stimulus::TaskKind;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: String,
    pub task: String,
    pub modality: String,
    pub ablation: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSummary {
    pub cells: usize,
    pub fits: usize,
    pub evidence: Vec<EvidenceRow>,
    pub fusion: Vec<FusionRow>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitLine {
    model: String,
    task: TaskKind,
    modality: Modality,
    ablation: AblationKind,
    variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NrmseRow {
    model: String,
    task: TaskKind,
    modality: Modality,
    ablation: AblationKind,
    sessions: usize,
    trials: usize,
    parsed: usize,
    nrmse: Option<f64>,
}

impl PipelineConfig {
    pub(crate) fn fit_options(&self, domain: (f64, f64)) -> FitOptions {
        FitOptions {
            multi_start: MultiStartConfig {
                restarts: self.fit_restarts,
                seed: self.fit_seed,
                exec: self.exec,
                ..MultiStartConfig::default()
            },
            domain: Some(domain),
            ..FitOptions::default()
        }
    }
}

pub(crate) fn cell_units<'a>(ds: &'a Dataset, key: &CellKey) -> Vec<&'a Unit> {
    ds.units
        .iter()
        .filter(|u| {
            u.observer == key.observer && matches(u, key.task, key.ablation) && u.series.contains_key(&key.modality)
        })
        .collect()
}

fn failure(key: &CellKey, stage: &str, message: impl ToString) -> CellFailure {
    CellFailure {
        model: key.observer.to_string(),
        task: key.task.as_str().into(),
        modality: key.modality.as_str().into(),
        ablation: key.ablation.as_str().into(),
        stage: stage.into(),
        message: message.to_string(),
    }
}

fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Fits the full variant grid in every (observer, task, modality, ablation)
/// cell, derives factor evidence, and evaluates the fusion references on the
/// unablated sessions. Failures are recorded per cell and do not stop the run.
pub fn analyze(ws: &Workspace, ids: &[String], cfg: &PipelineConfig) -> Result<AnalysisSummary, HarnessError> {
    let ds = Dataset::load(ws, ids)?;
    let cells = ds.cells();
    let variants = enumerate_variants();

    let fitted: Vec<Vec<Result<FitResult, String>>> = par::map(cfg.exec, &cells, |key| {
        let units = cell_units(&ds, key);
        let data = fit_data(&units, key.modality);
        fit_grid(&variants, &data, &cfg.fit_options(ds.domain(key.task)))
            .into_iter()
            .map(|r| r.map_err(|e| e.to_string()))
            .collect()
    });

    let mut fit_lines = Vec::new();
    let mut evidence = Vec::new();
    let mut nrmse_rows = Vec::new();
    let mut failures = Vec::new();
    for (key, results) in cells.iter().zip(&fitted) {
        for (v, r) in variants.iter().zip(results) {
            let (fit, error) = match r {
                Ok(f) => (Some(f.clone()), None),
                Err(e) => {
                    failures.push(failure(key, &format!("fit {}", v.name()), e));
                    (None, Some(e.clone()))
                }
            };
            fit_lines.push(FitLine {
                model: key.observer.to_string(),
                task: key.task,
                modality: key.modality,
                ablation: key.ablation,
                variant: v.name(),
                fit,
                error,
            });
        }
        let ok: Vec<FitResult> = results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        for factor in Factor::ALL {
            match factor_evidence(&ok, &FactorQuery::standard(factor)) {
                Ok(ev) => evidence.push(EvidenceRow {
                    model: key.observer.to_string(),
                    task: key.task.as_str().into(),
                    modality: key.modality.as_str().into(),
                    ablation: key.ablation.as_str().into(),
                    factor,
                    p_true: ev.p_true,
                    cells_used: ev.cells_used,
                }),
                Err(e) => failures.push(failure(key, &format!("evidence {factor}"), e)),
            }
        }
        let units = cell_units(&ds, key);
        let (p, x, m) = parsed_triples(&units, key.modality);
        let trials: usize = units.iter().filter_map(|u| u.series.get(&key.modality)).map(|s| s.stimuli.len()).sum();
        let value = match nrmse(&p, &x, &m) {
            Ok(v) => Some(v),
            Err(e) => {
                failures.push(failure(key, "nrmse", e));
                None
            }
        };
        nrmse_rows.push(NrmseRow {
            model: key.observer.to_string(),
            task: key.task,
            modality: key.modality,
            ablation: key.ablation,
            sessions: units.len(),
            trials,
            parsed: p.len(),
            nrmse: value,
        });
    }

    let mut fusion = Vec::new();
    for observer in ds.observers() {
        for task in TaskKind::MULTIMODAL {
            let units: Vec<&Unit> =
                ds.units.iter().filter(|u| u.observer == observer && matches(u, task, AblationKind::None)).collect();
            let trials = fusion_trials(&units);
            if trials.is_empty() {
                continue;
            }
            let forest = ForestConfig {
                seed: seed::derive(cfg.forest.seed, seed::label(&format!("{observer}/{task}"))),
                exec: cfg.exec,
                ..cfg.forest
            };
            match evaluate(&trials, cfg.centering, Some(&forest)) {
                Ok(report) => {
                    for c in &report.combiners {
                        fusion.push(FusionRow {
                            model: observer.clone(),
                            task: task.as_str().into(),
                            combiner: c.combiner.clone(),
                            params: c.params.clone(),
                            nrmse: c.nrmse,
                            rre: c.rre,
                        });
                    }
                    for s in &report.skipped {
                        let key = CellKey {
                            observer: &observer,
                            task,
                            modality: Modality::Multimodal,
                            ablation: AblationKind::None,
                        };
                        failures.push(failure(&key, "fusion", s));
                    }
                }
                Err(e) => {
                    let key = CellKey {
                        observer: &observer,
                        task,
                        modality: Modality::Multimodal,
                        ablation: AblationKind::None,
                    };
                    failures.push(failure(&key, "fusion", e));
                }
            }
        }
    }

    let dir = ws.analysis_dir();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut buf = Vec::new();
    for l in &fit_lines {
        writeln!(buf, "{}", serde_json::to_string(l).expect("fit line serializes")).expect("write to memory");
    }
    write_file(&dir.join("fits.jsonl"), &buf)?;
    let csv_err = |p: &std::path::Path, e: csv::Error| HarnessError::format(p, e);
    let mut buf = Vec::new();
    write_evidence_csv(&evidence, &mut buf).map_err(|e| csv_err(&dir.join("evidence.csv"), e))?;
    write_file(&dir.join("evidence.csv"), &buf)?;
    let mut buf = Vec::new();
    write_fusion_csv(&fusion, &mut buf).map_err(|e| csv_err(&dir.join("fusion.csv"), e))?;
    write_file(&dir.join("fusion.csv"), &buf)?;
    write_file(&dir.join("nrmse.csv"), &to_csv(&nrmse_rows).map_err(|e| csv_err(&dir.join("nrmse.csv"), e))?)?;
    write_file(&dir.join("failures.csv"), &to_csv(&failures).map_err(|e| csv_err(&dir.join("failures.csv"), e))?)?;

    Ok(AnalysisSummary {
        cells: cells.len(),
        fits: fit_lines.iter().filter(|l| l.fit.is_some()).count(),
        evidence,
        fusion,
        failures,
    })
}

pub(crate) fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}
