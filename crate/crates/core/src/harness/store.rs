use super::manifest::ExperimentManifest;
use super::HarnessError;
use crate::session::{PlannedTrial, SessionPlan, TrialRecord};
use crate::stimulus::{SessionKind, SessionRange, Stimulus};
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

pub const RECORD_SCHEMA: &str = "bayesbench.trial_record";
pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordHeader {
    schema: String,
    version: u32,
}

/// Directory tree holding every experiment plus derived tables:
///
/// ```text
/// experiments/<id>/manifest.toml, plan.json, stimuli/<session>/*.png, records.jsonl
/// analysis/fits.jsonl, evidence.csv, fusion.csv, nrmse.csv, failures.csv
/// scores/scorecard.csv, summary.jsonl, report.md, plots/*.csv
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn experiments_dir(&self) -> PathBuf {
        self.root.join("experiments")
    }

    pub fn experiment_dir(&self, id: &str) -> PathBuf {
        self.experiments_dir().join(id)
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.experiment_dir(id).join("manifest.toml")
    }

    pub fn plan_path(&self, id: &str) -> PathBuf {
        self.experiment_dir(id).join("plan.json")
    }

    pub fn records_path(&self, id: &str) -> PathBuf {
        self.experiment_dir(id).join("records.jsonl")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.root.join("scores")
    }

    /// Generated experiments, sorted by id.
    pub fn experiment_ids(&self) -> Result<Vec<String>, HarnessError> {
        let dir = self.experiments_dir();
        if !dir.exists() {
            return Ok(vec![]);
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))? {
            let entry = entry.map_err(|e| HarnessError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with('.') && entry.path().join("plan.json").exists() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_manifest(&self, id: &str) -> Result<ExperimentManifest, HarnessError> {
        let path = self.manifest_path(id);
        if !path.exists() {
            return Err(HarnessError::UnknownExperiment(id.to_string()));
        }
        ExperimentManifest::load(&path)
    }

    /// Reads the persisted plan back, images included. The manifest must be
    /// the one the plan was generated from.
    pub fn load_plans(&self, manifest: &ExperimentManifest) -> Result<Vec<SessionPlan>, HarnessError> {
        let path = self.plan_path(&manifest.id);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|e| HarnessError::format(&path, e))?;
        if file.manifest_hash != manifest.hash() {
            return Err(HarnessError::ManifestChanged(manifest.id.clone()));
        }
        let dir = self.experiment_dir(&manifest.id);
        file.sessions
            .into_iter()
            .map(|s| {
                let range = SessionRange { kind: s.kind, lo: s.lo, hi: s.hi };
                let trials = s
                    .trials
                    .into_iter()
                    .map(|t| {
                        let image_png = match &t.image {
                            Some(rel) => {
                                let p = dir.join(rel);
                                Some(Arc::new(fs::read(&p).map_err(|e| HarnessError::io(&p, e))?))
                            }
                            None => None,
                        };
                        let stimulus = Stimulus {
                            task: manifest.task,
                            true_value: t.true_value,
                            ascii: t.text,
                            image: None,
                            maze_path: None,
                            transcript: None,
                        };
                        Ok(PlannedTrial {
                            index: t.index,
                            source_index: t.source_index,
                            stimulus,
                            blur_sigma: t.blur_sigma,
                            image_png,
                        })
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                Ok(SessionPlan {
                    task: manifest.task,
                    range,
                    ablation: manifest.ablation.clone(),
                    seed: s.seed,
                    trials,
                })
            })
            .collect()
    }

    /// Records of one experiment; an absent log reads as empty.
    pub fn read_records(&self, id: &str) -> Result<Vec<TrialRecord>, HarnessError> {
        read_record_file(&self.records_path(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct PlanFile {
    pub manifest_hash: String,
    pub sessions: Vec<PlanSession>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct PlanSession {
    pub kind: SessionKind,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    pub trials: Vec<PlanTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct PlanTrial {
    pub index: usize,
    pub source_index: usize,
    pub stimulus_id: String,
    pub true_value: f64,
    pub blur_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Path of the presented PNG, relative to the experiment directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

pub(crate) fn image_rel_path(kind: SessionKind, stimulus_id: &str) -> String {
    format!("stimuli/{kind}/{stimulus_id}.png")
}

fn read_record_file(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    match lines.next() {
        None => return Ok(vec![]),
        Some(first) => {
            let first = first.map_err(|e| HarnessError::io(path, e))?;
            let h: RecordHeader =
                serde_json::from_str(&first).map_err(|e| HarnessError::format(path, format!("header: {e}")))?;
            if h.schema != RECORD_SCHEMA || h.version != RECORD_SCHEMA_VERSION {
                return Err(HarnessError::format(
                    path,
                    format!("unsupported record schema {} v{}", h.schema, h.version),
                ));
            }
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| HarnessError::format(path, format!("line {}: {e}", i + 2)))?;
        out.push(r);
    }
    Ok(out)
}

/// Append-only record file shared by concurrent sessions.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordLog {
    /// Opens for appending, writing the header if the file is new. A torn
    /// final line left by an interrupted run is cut off first.
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        let io = |e| HarnessError::io(path, e);
        let existing = if path.exists() { fs::read(path).map_err(io)? } else { vec![] };
        if !existing.is_empty() && existing.last() != Some(&b'\n') {
            let keep = existing.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            let f = OpenOptions::new().write(true).open(path).map_err(io)?;
            f.set_len(keep as u64).map_err(io)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() == 0 {
            let header = RecordHeader { schema: RECORD_SCHEMA.into(), version: RECORD_SCHEMA_VERSION };
            writeln!(file, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
        }
        Ok(RecordLog { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append(&self, record: &TrialRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(f, "{line}")?;
        f.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_all(&self) -> Result<Vec<TrialRecord>, HarnessError> {
        read_record_file(&self.path)
    }
}
