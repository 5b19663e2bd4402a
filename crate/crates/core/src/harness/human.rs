use super::manifest::{ChannelSpec, ExperimentManifest};
use super::store::{RecordLog, Workspace};
use super::HarnessError;
use crate::client::parse_numeric;
use crate::session::{build_system_prompt, Modality, SessionPlan, TrialRecord};
use crate::stimulus::{SessionKind, TaskKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Instant;
use thiserror::Error;

pub const CONSENT_TEXT: &str = "You are invited to take part in a perception study. You will see a series of \
stimuli and estimate a magnitude for each one. There are no right or wrong answers and you receive no feedback. \
Your responses are stored without any personal information. You may stop at any time. \
By continuing you confirm that you have read this text and agree to take part.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HumanError {
    #[error("unknown session token")]
    UnknownToken,
    #[error("no human experiment `{0}`")]
    UnknownExperiment(String),
    #[error("experiment has no {0} session")]
    UnknownSession(String),
    #[error("consent has not been given for this session")]
    ConsentRequired,
    #[error("expected a response to trial {expected}, got trial {got}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("session is complete")]
    Complete,
    #[error("invalid response: {0}")]
    Invalid(String),
    #[error("stimulus not found")]
    NotFound,
    #[error("storage error: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTicket {
    pub token: String,
    pub consent_text: String,
    pub experiment_id: String,
    pub session: SessionKind,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTrial {
    pub trial_index: usize,
    pub n_trials: usize,
    pub task: TaskKind,
    pub instruction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    /// Bounds for the response input.
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub token: String,
    pub experiment_id: String,
    pub session: SessionKind,
    pub consented: bool,
    pub next_trial: usize,
    pub n_trials: usize,
    pub complete: bool,
}

struct HumanExperiment {
    manifest: ExperimentManifest,
    hash: String,
    modality: Modality,
    plans: BTreeMap<SessionKind, SessionPlan>,
    log: RecordLog,
}

struct HumanSession {
    token: String,
    experiment: String,
    session: SessionKind,
    observer: String,
    consented: bool,
    next: usize,
    issued_at: Option<Instant>,
}

/// In-memory session table over the human-channel experiments of a workspace.
/// Each token's trials are issued and accepted strictly in order; distinct
/// tokens proceed independently.
pub struct HumanRegistry {
    experiments: BTreeMap<String, HumanExperiment>,
    sessions: Mutex<HashMap<String, Arc<Mutex<HumanSession>>>>,
}

impl HumanRegistry {
    /// Loads the given experiments (all human-channel experiments when `ids`
    /// is empty). Listed experiments must use the human channel.
    pub fn open(ws: &Workspace, ids: &[String]) -> Result<Self, HarnessError> {
        let explicit = !ids.is_empty();
        let ids = if explicit { ids.to_vec() } else { ws.experiment_ids()? };
        let mut experiments = BTreeMap::new();
        for id in ids {
            let manifest = ws.load_manifest(&id)?;
            if !matches!(manifest.observer.channel, ChannelSpec::Human) {
                if explicit {
                    return Err(HarnessError::Manifest {
                        field: "observer.channel".into(),
                        message: format!("experiment `{id}` does not use the human channel"),
                    });
                }
                continue;
            }
            let plans = ws.load_plans(&manifest)?.into_iter().map(|p| (p.range.kind, p)).collect();
            let log = RecordLog::open(&ws.records_path(&id))?;
            let hash = manifest.hash();
            let modality = manifest.modalities[0];
            experiments.insert(id, HumanExperiment { manifest, hash, modality, plans, log });
        }
        Ok(HumanRegistry { experiments, sessions: Mutex::new(HashMap::new()) })
    }

    pub fn experiment_ids(&self) -> Vec<String> {
        self.experiments.keys().cloned().collect()
    }

    /// Opens a session; without `session` the first planned kind is used.
    pub fn create_session(
        &self,
        experiment_id: &str,
        session: Option<SessionKind>,
    ) -> Result<SessionTicket, HumanError> {
        let exp =
            self.experiments.get(experiment_id).ok_or_else(|| HumanError::UnknownExperiment(experiment_id.into()))?;
        let kind = session.unwrap_or(exp.manifest.sessions[0]);
        let plan = exp.plans.get(&kind).ok_or_else(|| HumanError::UnknownSession(kind.to_string()))?;
        let token = uuid::Uuid::new_v4().simple().to_string();
        let observer = format!("{}/{}", exp.manifest.observer.name, &token[..8]);
        let s = HumanSession {
            token: token.clone(),
            experiment: experiment_id.into(),
            session: kind,
            observer,
            consented: false,
            next: 0,
            issued_at: None,
        };
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).insert(token.clone(), Arc::new(Mutex::new(s)));
        Ok(SessionTicket {
            token,
            consent_text: CONSENT_TEXT.into(),
            experiment_id: experiment_id.into(),
            session: kind,
            n_trials: plan.trials.len(),
        })
    }

    fn session(&self, token: &str) -> Result<Arc<Mutex<HumanSession>>, HumanError> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(token).cloned().ok_or(HumanError::UnknownToken)
    }

    fn plan(&self, s: &HumanSession) -> (&HumanExperiment, &SessionPlan) {
        let exp = &self.experiments[&s.experiment];
        (exp, &exp.plans[&s.session])
    }

    fn status_of(&self, s: &HumanSession) -> SessionStatus {
        let n = self.plan(s).1.trials.len();
        SessionStatus {
            token: s.token.clone(),
            experiment_id: s.experiment.clone(),
            session: s.session,
            consented: s.consented,
            next_trial: s.next,
            n_trials: n,
            complete: s.next >= n,
        }
    }

    pub fn consent(&self, token: &str) -> Result<SessionStatus, HumanError> {
        let s = self.session(token)?;
        let mut s = s.lock().unwrap_or_else(|e| e.into_inner());
        s.consented = true;
        Ok(self.status_of(&s))
    }

    pub fn status(&self, token: &str) -> Result<SessionStatus, HumanError> {
        let s = self.session(token)?;
        let s = s.lock().unwrap_or_else(|e| e.into_inner());
        Ok(self.status_of(&s))
    }

    pub fn next_trial(&self, token: &str) -> Result<NextTrial, HumanError> {
        let s = self.session(token)?;
        let mut s = s.lock().unwrap_or_else(|e| e.into_inner());
        if !s.consented {
            return Err(HumanError::ConsentRequired);
        }
        let (exp, plan) = self.plan(&s);
        let Some(trial) = plan.trials.get(s.next) else {
            return Err(HumanError::Complete);
        };
        let payload = trial.payload(exp.modality);
        let image_url = payload
            .image_png
            .as_ref()
            .map(|_| format!("/stimuli/{}/{}/{}.png", s.experiment, s.session, trial.stimulus_id()));
        let next = NextTrial {
            trial_index: s.next,
            n_trials: plan.trials.len(),
            task: plan.task,
            instruction: build_system_prompt(plan.task, &plan.ablation, &plan.range),
            text: payload.text,
            image_url,
            range: (plan.range.lo, plan.range.hi),
        };
        s.issued_at = Some(Instant::now());
        Ok(next)
    }

    /// Records the answer to `trial_index`, which must be the next trial.
    pub fn submit(&self, token: &str, trial_index: usize, raw: &str) -> Result<SessionStatus, HumanError> {
        let s = self.session(token)?;
        let mut s = s.lock().unwrap_or_else(|e| e.into_inner());
        if !s.consented {
            return Err(HumanError::ConsentRequired);
        }
        let (exp, plan) = self.plan(&s);
        if s.next >= plan.trials.len() {
            return Err(HumanError::Complete);
        }
        if trial_index != s.next {
            return Err(HumanError::OutOfOrder { expected: s.next, got: trial_index });
        }
        let range = (plan.range.lo, plan.range.hi);
        let value = parse_numeric(raw, range)
            .ok_or_else(|| HumanError::Invalid(format!("{raw:?} is not a number near [{}, {}]", range.0, range.1)))?;
        let trial = &plan.trials[trial_index];
        let rec = TrialRecord {
            experiment_id: s.experiment.clone(),
            manifest_hash: exp.hash.clone(),
            observer: s.observer.clone(),
            channel: "human".into(),
            task: plan.task,
            session: s.session,
            modality: exp.modality,
            ablation: plan.ablation.kind,
            trial_index,
            stimulus_id: trial.stimulus_id(),
            true_value: trial.stimulus.true_value,
            blur_sigma: trial.blur_sigma,
            raw_response: Some(raw.to_string()),
            parsed_value: Some(value),
            latency_ms: s.issued_at.map_or(0, |t| t.elapsed().as_millis() as u64),
            attempt_count: 1,
            error: None,
        };
        exp.log.append(&rec).map_err(|e| HumanError::Storage(e.to_string()))?;
        s.next += 1;
        s.issued_at = None;
        Ok(self.status_of(&s))
    }

    /// PNG bytes of a planned stimulus.
    pub fn image(&self, experiment_id: &str, session: &str, stimulus_id: &str) -> Result<Arc<Vec<u8>>, HumanError> {
        let exp = self.experiments.get(experiment_id).ok_or(HumanError::NotFound)?;
        let plan = exp.plans.values().find(|p| p.range.kind.as_str() == session).ok_or(HumanError::NotFound)?;
        plan.trials
            .iter()
            .find(|t| t.stimulus_id() == stimulus_id)
            .and_then(|t| t.image_png.clone())
            .ok_or(HumanError::NotFound)
    }
}
