//! Scorecard CSV, line-delimited summary, markdown report and plot series.

use super::analyze::to_csv;
use super::score::{ScoreRow, ScoreSummary};
use super::store::Workspace;
use super::HarnessError;
use crate::metrics::Interval;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn csv_bytes<T: Serialize>(path: &Path, rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    to_csv(rows).map_err(|e| HarnessError::format(path, e))
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.4}")
    }
}

fn cell(i: Option<&Interval>) -> String {
    match i {
        Some(i) => format!("{} [{}, {}]", num(i.point), num(i.lo), num(i.hi)),
        None => "n/a".into(),
    }
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    model: &'a str,
    label: String,
    point: f64,
    lo68: f64,
    hi68: f64,
}

fn series<'a>(rows: &'a [ScoreRow], keep: impl Fn(&ScoreRow) -> Option<String>) -> Vec<SeriesRow<'a>> {
    rows.iter()
        .filter_map(|r| {
            Some(SeriesRow { model: &r.model, label: keep(r)?, point: r.point, lo68: r.lo68, hi68: r.hi68 })
        })
        .collect()
}

pub(crate) fn render_markdown(summary: &ScoreSummary) -> String {
    let mut s = String::from("# BayesBench report\n\nIntervals are 68% session-bootstrap percentile intervals.\n");
    if !summary.models.is_empty() {
        s.push_str("\n| model | A | E | C | S |\n|---|---|---|---|---|\n");
        for m in &summary.models {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                m.model,
                cell(m.accuracy.as_ref()),
                cell(m.efficiency.as_ref()),
                cell(m.consistency.as_ref()),
                cell(m.score.as_ref())
            );
        }
    }
    for m in &summary.models {
        let _ = writeln!(s, "\n## {}\n", m.model);
        let rows: Vec<&ScoreRow> = summary.rows.iter().filter(|r| r.model == m.model).collect();
        s.push_str("### NRMSE (unablated)\n\n| task | modality | NRMSE |\n|---|---|---|\n");
        for r in rows.iter().filter(|r| r.metric == "nrmse") {
            let _ =
                writeln!(s, "| {} | {} | {} [{}, {}] |", r.task, r.modality, num(r.point), num(r.lo68), num(r.hi68));
        }
        s.push_str("\n### Fusion efficiency\n\n| task | RRE oracle | RRE non-oracle |\n|---|---|---|\n");
        let find = |task: &str, metric: &str| {
            rows.iter()
                .find(|r| r.task == task && r.metric == metric)
                .map(|r| format!("{} [{}, {}]", num(r.point), num(r.lo68), num(r.hi68)))
                .unwrap_or_else(|| "n/a".into())
        };
        let mut tasks: Vec<&str> = rows.iter().filter(|r| r.metric == "rre_oracle").map(|r| r.task.as_str()).collect();
        tasks.dedup();
        for t in tasks {
            let _ = writeln!(s, "| {t} | {} | {} |", find(t, "rre_oracle"), find(t, "rre_non_oracle"));
        }
        s.push_str("\n### Consistency\n\n| task | BCS |\n|---|---|\n");
        for (t, i) in &m.bcs_per_task {
            let _ = writeln!(s, "| {t} | {} |", cell(Some(i)));
        }
        let _ = writeln!(s, "| total | {} |", cell(m.bcs_total.as_ref()));
        if !m.flags.is_empty() {
            s.push_str("\n### Flags\n\n");
            for f in &m.flags {
                let _ = writeln!(s, "- {f}");
            }
        }
    }
    s
}

pub(crate) fn write_all(ws: &Workspace, summary: &ScoreSummary) -> Result<(), HarnessError> {
    let dir = ws.scores_dir();
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| HarnessError::io(&plots, e))?;

    let p = dir.join("scorecard.csv");
    write(&p, &csv_bytes(&p, &summary.rows)?)?;

    let mut lines = String::new();
    for m in &summary.models {
        lines.push_str(&serde_json::to_string(m).expect("summary serializes"));
        lines.push('\n');
    }
    write(&dir.join("summary.jsonl"), lines.as_bytes())?;
    write(&dir.join("report.md"), render_markdown(summary).as_bytes())?;

    let rows = &summary.rows;
    let plot_sets: [(&str, Vec<SeriesRow>); 4] = [
        ("nrmse.csv", series(rows, |r| (r.metric == "nrmse").then(|| format!("{}/{}", r.task, r.modality)))),
        ("rre.csv", series(rows, |r| r.metric.starts_with("rre_").then(|| format!("{}/{}", r.task, r.metric)))),
        ("bcs.csv", series(rows, |r| (r.metric == "bcs").then(|| r.task.clone()))),
        (
            "factors.csv",
            series(rows, |r| {
                matches!(r.metric.as_str(), "accuracy" | "efficiency" | "consistency" | "bayesbench")
                    .then(|| r.metric.clone())
            }),
        ),
    ];
    for (name, set) in plot_sets {
        let p = plots.join(name);
        write(&p, &csv_bytes(&p, &set)?)?;
    }
    Ok(())
}
