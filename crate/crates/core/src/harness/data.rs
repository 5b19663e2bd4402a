//! Records regrouped into per-session units for fitting and scoring.

use super::store::Workspace;
use super::HarnessError;
use crate::fusion::{align, FusionTrial};
use crate::observer::{FitData, SessionSeries};
use crate::session::{AblationKind, Modality, TrialRecord};
use crate::stimulus::{SessionKind, TaskKind};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Series {
    pub stimuli: Vec<f64>,
    pub responses: Vec<Option<f64>>,
}

/// One observer's session of one experiment, all modalities.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Unit {
    pub observer: String,
    pub experiment: String,
    pub task: TaskKind,
    pub ablation: AblationKind,
    pub session: SessionKind,
    /// Midpoint of the session range.
    pub mid: f64,
    pub series: BTreeMap<Modality, Series>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Dataset {
    pub units: Vec<Unit>,
    /// Union of session ranges per task, used to scale fit bounds.
    pub domains: BTreeMap<TaskKind, (f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct CellKey<'a> {
    pub observer: &'a str,
    pub task: TaskKind,
    pub modality: Modality,
    pub ablation: AblationKind,
}

impl Dataset {
    /// Loads the given experiments, or every experiment when `ids` is empty.
    pub fn load(ws: &Workspace, ids: &[String]) -> Result<Self, HarnessError> {
        let ids = if ids.is_empty() { ws.experiment_ids()? } else { ids.to_vec() };
        let mut ds = Dataset::default();
        let mut any_parsed = false;
        for id in &ids {
            let manifest = ws.load_manifest(id)?;
            let records = ws.read_records(id)?;
            let hash = manifest.hash();
            if records.iter().any(|r| r.manifest_hash != hash) {
                return Err(HarnessError::ManifestChanged(id.clone()));
            }
            any_parsed |= records.iter().any(|r| r.parsed_value.is_some());
            for &k in &manifest.sessions {
                let r = manifest.range(k);
                let d = ds.domains.entry(manifest.task).or_insert((r.lo, r.hi));
                *d = (d.0.min(r.lo), d.1.max(r.hi));
            }
            let mut grouped: BTreeMap<(String, SessionKind), BTreeMap<Modality, Vec<TrialRecord>>> = BTreeMap::new();
            for r in records {
                grouped.entry((r.observer.clone(), r.session)).or_default().entry(r.modality).or_default().push(r);
            }
            for ((observer, session), by_modality) in grouped {
                let series = by_modality
                    .into_iter()
                    .map(|(m, mut rs)| {
                        rs.sort_by_key(|r| r.trial_index);
                        rs.dedup_by_key(|r| r.trial_index);
                        let s = Series {
                            stimuli: rs.iter().map(|r| r.true_value).collect(),
                            responses: rs.iter().map(|r| r.parsed_value).collect(),
                        };
                        (m, s)
                    })
                    .collect();
                ds.units.push(Unit {
                    observer,
                    experiment: id.clone(),
                    task: manifest.task,
                    ablation: manifest.ablation.kind,
                    session,
                    mid: manifest.range(session).mid(),
                    series,
                });
            }
        }
        if !any_parsed {
            return Err(HarnessError::NoRecords);
        }
        Ok(ds)
    }

    pub fn observers(&self) -> Vec<String> {
        let mut v: Vec<String> = self.units.iter().map(|u| u.observer.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Every (observer, task, modality, ablation) with at least one series.
    pub fn cells(&self) -> Vec<CellKey<'_>> {
        let mut v: Vec<CellKey> = self
            .units
            .iter()
            .flat_map(|u| {
                u.series.keys().map(move |&modality| CellKey {
                    observer: &u.observer,
                    task: u.task,
                    modality,
                    ablation: u.ablation,
                })
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn domain(&self, task: TaskKind) -> (f64, f64) {
        self.domains.get(&task).copied().unwrap_or((0.0, 1.0))
    }
}

pub(crate) fn matches(u: &Unit, task: TaskKind, ablation: AblationKind) -> bool {
    u.task == task && u.ablation == ablation
}

/// Fit input pooled over the units' sessions in one modality.
pub(crate) fn fit_data(units: &[&Unit], modality: Modality) -> FitData {
    FitData::new(
        units
            .iter()
            .filter_map(|u| u.series.get(&modality))
            .map(|s| SessionSeries { stimuli: s.stimuli.clone(), responses: s.responses.clone() })
            .collect(),
    )
}

/// Parsed (prediction, truth, mid) triples in one modality.
pub(crate) fn parsed_triples(units: &[&Unit], modality: Modality) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut p, mut x, mut m) = (vec![], vec![], vec![]);
    for u in units {
        if let Some(s) = u.series.get(&modality) {
            for (y, &truth) in s.responses.iter().zip(&s.stimuli) {
                if let Some(y) = y {
                    p.push(*y);
                    x.push(truth);
                    m.push(u.mid);
                }
            }
        }
    }
    (p, x, m)
}

/// Trials answered in all three modalities.
pub(crate) fn fusion_trials(units: &[&Unit]) -> Vec<FusionTrial> {
    let mut out = Vec::new();
    for u in units {
        let (Some(t), Some(i), Some(c)) =
            (u.series.get(&Modality::Text), u.series.get(&Modality::Image), u.series.get(&Modality::Multimodal))
        else {
            continue;
        };
        let n = t.stimuli.len().min(i.stimuli.len()).min(c.stimuli.len());
        let mids = vec![u.mid; n];
        out.extend(align(&t.responses[..n], &i.responses[..n], &c.responses[..n], &t.stimuli[..n], &mids));
    }
    out
}
