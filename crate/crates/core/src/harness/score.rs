use super::data::{fit_data, fusion_trials, matches, parsed_triples, Dataset, Unit};
use super::store::Workspace;
use super::{report, HarnessError, PipelineConfig};
use crate::fusion::evaluate;
use crate::metrics::{
    accuracy_factor, bcs, bootstrap_many, consistency_factor, efficiency_factor, nrmse, Interval, PriorShift,
    BCS_ABLATIONS,
};
use crate::observer::{fit, Family, ObserverVariant};
use crate::par::Execution;
use crate::seed;
use crate::session::{AblationKind, Modality};
use crate::stimulus::TaskKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One scorecard entry. Aggregates use task `all`; modality is empty where
/// it does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub task: String,
    pub modality: String,
    pub metric: String,
    pub point: f64,
    pub lo68: f64,
    pub hi68: f64,
    pub rounds: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub accuracy: Option<Interval>,
    pub efficiency: Option<Interval>,
    pub consistency: Option<Interval>,
    pub score: Option<Interval>,
    pub bcs_total: Option<Interval>,
    pub bcs_per_task: BTreeMap<TaskKind, Interval>,
    /// Missing components and incomplete inputs.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub rows: Vec<ScoreRow>,
    pub models: Vec<ModelScore>,
}

impl ScoreSummary {
    pub fn model(&self, name: &str) -> Option<&ModelScore> {
        self.models.iter().find(|m| m.model == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Metric {
    Nrmse(TaskKind, Modality),
    RreOracle(TaskKind),
    RreNonOracle(TaskKind),
    Bcs(TaskKind),
    BcsTotal,
    Accuracy,
    Efficiency,
    Consistency,
    Score,
}

impl Metric {
    pub(crate) fn labels(self) -> (String, String, &'static str) {
        let t = |t: TaskKind| t.as_str().to_string();
        match self {
            Metric::Nrmse(task, m) => (t(task), m.as_str().into(), "nrmse"),
            Metric::RreOracle(task) => (t(task), String::new(), "rre_oracle"),
            Metric::RreNonOracle(task) => (t(task), String::new(), "rre_non_oracle"),
            Metric::Bcs(task) => (t(task), String::new(), "bcs"),
            Metric::BcsTotal => ("all".into(), String::new(), "bcs_total"),
            Metric::Accuracy => ("all".into(), String::new(), "accuracy"),
            Metric::Efficiency => ("all".into(), String::new(), "efficiency"),
            Metric::Consistency => ("all".into(), String::new(), "consistency"),
            Metric::Score => ("all".into(), String::new(), "bayesbench"),
        }
    }
}

/// Modality whose fits feed the consistency score for an ablation: image
/// only for the noise ablations, multimodal otherwise.
pub(crate) fn bcs_modality(a: AblationKind) -> Modality {
    if a.is_noise() {
        Modality::Image
    } else {
        Modality::Multimodal
    }
}

/// Modality whose error feeds the accuracy factor.
pub(crate) fn accuracy_modality(task: TaskKind) -> Modality {
    if task.is_multimodal() {
        Modality::Multimodal
    } else {
        Modality::Text
    }
}

struct Computed {
    values: BTreeMap<Metric, f64>,
    flags: Vec<String>,
}

fn compute(units: &[&Unit], ds: &Dataset, cfg: &PipelineConfig) -> Computed {
    let mut values = BTreeMap::new();
    let mut flags = Vec::new();
    let base = |task: TaskKind| -> Vec<&Unit> {
        units.iter().copied().filter(|u| matches(u, task, AblationKind::None)).collect()
    };

    let mut nrmse_of = BTreeMap::new();
    for task in TaskKind::ALL {
        let b = base(task);
        for m in Modality::ALL {
            let (p, x, mid) = parsed_triples(&b, m);
            if let Ok(v) = nrmse(&p, &x, &mid) {
                values.insert(Metric::Nrmse(task, m), v);
                nrmse_of.insert((task, m), v);
            }
        }
    }
    let mut acc_inputs = Vec::new();
    for task in TaskKind::ALL {
        match nrmse_of.get(&(task, accuracy_modality(task))) {
            Some(&v) => acc_inputs.push(v),
            None => flags.push(format!("accuracy: no unablated {} {} responses", task, accuracy_modality(task))),
        }
    }
    if !acc_inputs.is_empty() {
        values.insert(Metric::Accuracy, accuracy_factor(&acc_inputs));
    }

    let mut pairs = Vec::new();
    for task in TaskKind::MULTIMODAL {
        let trials = fusion_trials(&base(task));
        let report = if trials.is_empty() { None } else { evaluate(&trials, cfg.centering, None).ok() };
        match report.as_ref().and_then(|r| Some((r.rre("bayes_oracle")?, r.rre("bayes_non_oracle")?))) {
            Some((o, n)) => {
                values.insert(Metric::RreOracle(task), o);
                values.insert(Metric::RreNonOracle(task), n);
                pairs.push((o, n));
            }
            None => flags.push(format!("efficiency: no aligned text/image/multimodal responses for {task}")),
        }
    }
    if !pairs.is_empty() {
        values.insert(Metric::Efficiency, efficiency_factor(&pairs));
    }

    let static_plain = ObserverVariant::plain(Family::StaticBayes);
    let mut weights: BTreeMap<(TaskKind, AblationKind, Modality), Option<f64>> = BTreeMap::new();
    let mut prior_weight = |task: TaskKind, a: AblationKind, m: Modality| -> Option<f64> {
        *weights.entry((task, a, m)).or_insert_with(|| {
            let sel: Vec<&Unit> = units.iter().copied().filter(|u| matches(u, task, a)).collect();
            let data = fit_data(&sel, m);
            if data.sessions.is_empty() {
                return None;
            }
            fit(&static_plain, &data, &cfg.fit_options(ds.domain(task))).ok()?.params.prior_weight()
        })
    };
    let mut shifts = BTreeMap::new();
    for task in TaskKind::MULTIMODAL {
        for a in BCS_ABLATIONS {
            let m = bcs_modality(a);
            if let (Some(w_base), Some(w_ablation)) =
                (prior_weight(task, AblationKind::None, m), prior_weight(task, a, m))
            {
                shifts.insert((task, a), PriorShift { w_base, w_ablation });
            }
        }
    }
    if !shifts.is_empty() {
        let r = bcs(&shifts);
        for (task, s) in &r.per_task {
            values.insert(Metric::Bcs(*task), *s as f64);
        }
        values.insert(Metric::BcsTotal, r.total as f64);
        values.insert(Metric::Consistency, consistency_factor(r.total as f64));
        for (task, a) in &r.missing {
            flags.push(format!("consistency: no {} fits for {task} / {a}; scored 0", bcs_modality(*a)));
        }
    } else {
        flags.push("consistency: no ablation with fits in both the base and ablated condition".into());
    }
    if let (Some(a), Some(e), Some(c)) =
        (values.get(&Metric::Accuracy), values.get(&Metric::Efficiency), values.get(&Metric::Consistency))
    {
        values.insert(Metric::Score, (a + e + c) / 3.0);
    } else {
        flags.push("bayesbench: needs accuracy, efficiency and consistency".into());
    }
    Computed { values, flags }
}

fn score_model(ds: &Dataset, model: &str, cfg: &PipelineConfig) -> (Vec<(Metric, Interval)>, Vec<String>) {
    // Resampling unit: a session; strata: experiments.
    let mut strata: BTreeMap<&str, Vec<&Unit>> = BTreeMap::new();
    for u in ds.units.iter().filter(|u| u.observer == model) {
        strata.entry(&u.experiment).or_default().push(u);
    }
    let groups: Vec<Vec<&Unit>> = strata.into_values().collect();
    let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let all: Vec<&Unit> = groups.iter().flatten().copied().collect();
    let point = compute(&all, ds, cfg);
    let metrics: Vec<Metric> = point.values.keys().copied().collect();
    // Rounds run in parallel already; the fits inside stay sequential.
    let inner = PipelineConfig { exec: Execution::Sequential, ..*cfg };
    let bseed = seed::derive(cfg.bootstrap_seed, seed::label(model));
    let intervals = bootstrap_many(&sizes, cfg.bootstrap_rounds, bseed, cfg.exec, |draw| {
        let picked: Vec<&Unit> = draw.iter().zip(&groups).flat_map(|(idx, g)| idx.iter().map(|&i| g[i])).collect();
        let c = if picked.len() == all.len() && draw.iter().all(|d| d.iter().enumerate().all(|(i, &j)| i == j)) {
            point.values.clone()
        } else {
            compute(&picked, ds, &inner).values
        };
        metrics.iter().map(|m| c.get(m).copied()).collect()
    });
    let mut flags = point.flags;
    if sizes.iter().all(|&n| n < 2) {
        flags.push("intervals: every experiment has a single session; intervals are degenerate".into());
    }
    let out = metrics.into_iter().zip(intervals).filter_map(|(m, i)| Some((m, i?))).collect();
    (out, flags)
}

/// Scores every observer in the selected experiments and writes the
/// scorecard, summary, report and plot series under `scores/`.
pub fn score(ws: &Workspace, ids: &[String], cfg: &PipelineConfig) -> Result<ScoreSummary, HarnessError> {
    let fits = ws.analysis_dir().join("fits.jsonl");
    if !fits.exists() {
        return Err(HarnessError::MissingAnalysis(ws.analysis_dir()));
    }
    let ds = Dataset::load(ws, ids)?;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for model in ds.observers() {
        let (metrics, flags) = score_model(&ds, &model, cfg);
        let get = |m: Metric| metrics.iter().find(|(k, _)| *k == m).map(|(_, i)| *i);
        for (m, i) in &metrics {
            let (task, modality, metric) = m.labels();
            rows.push(ScoreRow {
                model: model.clone(),
                task,
                modality,
                metric: metric.into(),
                point: i.point,
                lo68: i.lo,
                hi68: i.hi,
                rounds: i.rounds,
                degenerate: i.degenerate,
            });
        }
        models.push(ModelScore {
            model: model.clone(),
            accuracy: get(Metric::Accuracy),
            efficiency: get(Metric::Efficiency),
            consistency: get(Metric::Consistency),
            score: get(Metric::Score),
            bcs_total: get(Metric::BcsTotal),
            bcs_per_task: TaskKind::MULTIMODAL.iter().filter_map(|&t| Some((t, get(Metric::Bcs(t))?))).collect(),
            flags,
        });
    }
    let summary = ScoreSummary { rows, models };
    report::write_all(ws, &summary)?;
    Ok(summary)
}
