use super::HarnessError;
use crate::client::EndpointConfig;
use crate::seed;
use crate::session::{AblationConfig, AblationKind, Modality, StimulusFactory};
use crate::stimulus::{MazeConfig, RenderConfig, SessionKind, SessionRange, TaskKind, TranscriptCorpus};
use crate::synthetic::SyntheticAgent;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Ablations a human participant can be given.
pub const HUMAN_ABLATIONS: [AblationKind; 3] =
    [AblationKind::None, AblationKind::NoiseConstant, AblationKind::ContextLong];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Synthetic {
        agent: SyntheticAgent,
    },
    Http {
        endpoint: EndpointConfig,
    },
    /// Responses are collected through the human trial service.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub name: String,
    pub channel: ChannelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptSource {
    /// Tab-separated `speaker  start  end  text` file.
    File {
        path: String,
    },
    Synthetic {
        utterances: usize,
        seed: u64,
    },
}

impl TranscriptSource {
    pub fn load(&self) -> Result<TranscriptCorpus, HarnessError> {
        match self {
            TranscriptSource::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                Ok(TranscriptCorpus::parse_tsv(&text)?)
            }
            TranscriptSource::Synthetic { utterances, seed } => Ok(TranscriptCorpus::synthetic(*utterances, *seed)),
        }
    }
}

/// One experiment: a task under one ablation for one observer, across
/// session kinds and modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub id: String,
    pub task: TaskKind,
    #[serde(default = "all_sessions")]
    pub sessions: Vec<SessionKind>,
    /// Overrides of the default range per session kind.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<SessionKind, (f64, f64)>,
    pub n_trials: usize,
    #[serde(default = "AblationConfig::none")]
    pub ablation: AblationConfig,
    pub modalities: Vec<Modality>,
    pub observer: ObserverSpec,
    pub seed: u64,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub maze: MazeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<TranscriptSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_rps: Option<f64>,
}

fn all_sessions() -> Vec<SessionKind> {
    SessionKind::ALL.to_vec()
}

fn field(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Manifest { field: field.to_string(), message: message.into() }
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let m: ExperimentManifest = toml::from_str(text).map_err(|e| field("(document)", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| field("(document)", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.id.is_empty()
            || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            || self.id.starts_with('.')
        {
            return Err(field("id", format!("{:?} must be nonempty and use only [A-Za-z0-9._-]", self.id)));
        }
        if self.sessions.is_empty() {
            return Err(field("sessions", "at least one session kind is required"));
        }
        let mut seen = self.sessions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.sessions.len() {
            return Err(field("sessions", "session kinds must be distinct"));
        }
        for k in self.ranges.keys() {
            if !self.sessions.contains(k) {
                return Err(field("ranges", format!("range given for unused session kind {k}")));
            }
        }
        for &k in &self.sessions {
            let r = self.range(k);
            r.validate().map_err(|e| field("ranges", e.to_string()))?;
            let (lo, hi) = self.task.domain();
            if r.lo < lo || r.hi > hi {
                return Err(field(
                    "ranges",
                    format!("{k} range [{}, {}] leaves the task domain [{lo}, {hi}]", r.lo, r.hi),
                ));
            }
        }
        if self.n_trials == 0 {
            return Err(field("n_trials", "must be at least 1"));
        }
        self.ablation.validate(self.task).map_err(|e| field("ablation", e.to_string()))?;
        if self.modalities.is_empty() {
            return Err(field("modalities", "at least one modality is required"));
        }
        for m in &self.modalities {
            if !m.available_for(self.task) {
                return Err(field("modalities", format!("{m} is not available for {}", self.task)));
            }
        }
        if self.ablation.kind.is_noise() && !self.modalities.iter().any(|m| *m != Modality::Text) {
            return Err(field("modalities", "noise ablations need an image-bearing modality"));
        }
        if self.observer.name.is_empty() {
            return Err(field("observer.name", "must be nonempty"));
        }
        match &self.observer.channel {
            ChannelSpec::Synthetic { agent } => {
                agent.params.check(&agent.variant).map_err(|e| field("observer.channel.agent", e.to_string()))?
            }
            ChannelSpec::Http { endpoint } => {
                if endpoint.base_url.is_empty() {
                    return Err(field("observer.channel.endpoint.base_url", "must be nonempty"));
                }
                if !(endpoint.timeout_s > 0.0) {
                    return Err(field("observer.channel.endpoint.timeout_s", "must be positive"));
                }
            }
            ChannelSpec::Human => {
                if !HUMAN_ABLATIONS.contains(&self.ablation.kind) {
                    return Err(field("ablation", format!("{} is not offered to human observers", self.ablation.kind)));
                }
                if self.modalities.len() != 1 {
                    return Err(field("modalities", "human experiments present exactly one modality"));
                }
            }
        }
        self.render.validate().map_err(|e| field("render", e.to_string()))?;
        if self.task == TaskKind::TranscriptDuration && self.transcript.is_none() {
            return Err(field("transcript", "the transcript task needs a corpus source"));
        }
        if let Some(r) = self.rate_limit_rps {
            if !(r > 0.0) {
                return Err(field("rate_limit_rps", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn range(&self, kind: SessionKind) -> SessionRange {
        match self.ranges.get(&kind) {
            Some(&(lo, hi)) => SessionRange { kind, lo, hi },
            None => self.task.default_range(kind),
        }
    }

    /// Plan seed of one session. It ignores the ablation and observer, so
    /// experiments on the same task and seed present the same stimuli.
    pub fn session_seed(&self, kind: SessionKind) -> u64 {
        seed::derive2(self.seed, seed::label(self.task.as_str()), kind as u64)
    }

    pub fn factory(&self) -> Result<StimulusFactory, HarnessError> {
        let mut f = StimulusFactory::new(self.render.clone(), self.maze.clone());
        if let Some(src) = &self.transcript {
            f = f.with_corpus(src.load()?);
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{Family, ObserverParams, ObserverVariant};
    use crate::synthetic::WeightRule;

    pub(crate) fn sample() -> ExperimentManifest {
        let agent = SyntheticAgent::new(
            ObserverVariant::plain(Family::StaticBayes),
            ObserverParams::static_bayes(0.5, 0.3, 0.03),
        )
        .unwrap()
        .with_rule(&[AblationKind::SteerVerbal], WeightRule::Shift(0.1));
        ExperimentManifest {
            id: "marker-base".into(),
            task: TaskKind::MarkerLocation,
            sessions: all_sessions(),
            ranges: BTreeMap::new(),
            n_trials: 30,
            ablation: AblationConfig::none(),
            modalities: vec![Modality::Text, Modality::Image],
            observer: ObserverSpec { name: "agent".into(), channel: ChannelSpec::Synthetic { agent } },
            seed: 7,
            render: RenderConfig::default(),
            maze: MazeConfig::default(),
            transcript: None,
            rate_limit_rps: None,
        }
    }

    #[test]
    fn toml_round_trip_keeps_hash() {
        let m = sample();
        let text = m.to_toml().unwrap();
        let back = ExperimentManifest::from_toml(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.hash().len(), 64);
    }

    #[test]
    fn minimal_document() {
        let text = r#"
            id = "lr"
            task = "line_ratio"
            n_trials = 10
            modalities = ["image"]
            seed = 1
            [ablation]
            kind = "noise_constant"
            sigma = 2.0
            [observer]
            name = "gpt"
            [observer.channel]
            kind = "http"
            [observer.channel.endpoint]
            base_url = "https://example.invalid/v1/chat/completions"
            model_name = "m"
            api_key_env = "OBSERVER_API_KEY"
        "#;
        let m = ExperimentManifest::from_toml(text).unwrap();
        assert_eq!(m.sessions, SessionKind::ALL.to_vec());
        assert_eq!(m.ablation.sigma, Some(2.0));
        match &m.observer.channel {
            ChannelSpec::Http { endpoint } => assert_eq!(endpoint.retry_budget, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        type Edit = Box<dyn Fn(&mut ExperimentManifest)>;
        let cases: Vec<(&str, Edit)> = vec![
            ("id", Box::new(|m| m.id = "../x".into())),
            ("n_trials", Box::new(|m| m.n_trials = 0)),
            ("sessions", Box::new(|m| m.sessions = vec![SessionKind::Short, SessionKind::Short])),
            (
                "modalities",
                Box::new(|m| {
                    m.task = TaskKind::TranscriptDuration;
                    m.transcript = Some(TranscriptSource::Synthetic { utterances: 50, seed: 1 });
                }),
            ),
            ("ablation", Box::new(|m| m.ablation.window = Some(0))),
            (
                "ranges",
                Box::new(|m| {
                    m.ranges.insert(SessionKind::Short, (0.5, 1.5));
                }),
            ),
            (
                "transcript",
                Box::new(|m| {
                    m.task = TaskKind::TranscriptDuration;
                    m.modalities = vec![Modality::Text];
                }),
            ),
            (
                "ablation",
                Box::new(|m| {
                    m.observer.channel = ChannelSpec::Human;
                    m.modalities = vec![Modality::Image];
                    m.ablation = AblationConfig::new(AblationKind::SteerVerbal);
                }),
            ),
        ];
        for (name, mutate) in cases {
            let mut m = sample();
            mutate(&mut m);
            match m.validate() {
                Err(HarnessError::Manifest { field, .. }) => assert_eq!(field, name),
                other => panic!("expected a {name} error, got {other:?}"),
            }
        }
    }

    #[test]
    fn session_seed_ignores_ablation() {
        let a = sample();
        let mut b = sample();
        b.ablation = AblationConfig::new(AblationKind::SteerVerbal);
        b.id = "other".into();
        assert_eq!(a.session_seed(SessionKind::Long), b.session_seed(SessionKind::Long));
        assert_ne!(a.session_seed(SessionKind::Long), a.session_seed(SessionKind::Short));
    }
}
