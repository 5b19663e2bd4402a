//! Trial plans, ablation schedules, system prompts and rolling-context prompt
//! assembly.

use crate::seed;
use crate::stimulus::{
    self, MazeConfig, RenderConfig, SessionKind, SessionRange, Stimulus, StimulusError, TaskKind, TranscriptCorpus,
};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

pub const BASE_CONTEXT_WINDOW: usize = 10;
pub const SHORT_CONTEXT_WINDOW: usize = 3;
pub const LONG_CONTEXT_WINDOW: usize = 20;
pub const DEFAULT_CONSTANT_SIGMA: f64 = 4.0;
pub const DEFAULT_RAMP: (f64, f64) = (0.0, 8.0);
pub const DEFAULT_BIAS_SHIFT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    None,
    SteerVerbal,
    SteerNumericUnbiased,
    SteerNumericBiased,
    NoiseConstant,
    NoiseGradual,
    ContextShort,
    ContextLong,
    ContextReversed,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::None => "none",
            AblationKind::SteerVerbal => "steer_verbal",
            AblationKind::SteerNumericUnbiased => "steer_numeric_unbiased",
            AblationKind::SteerNumericBiased => "steer_numeric_biased",
            AblationKind::NoiseConstant => "noise_constant",
            AblationKind::NoiseGradual => "noise_gradual",
            AblationKind::ContextShort => "context_short",
            AblationKind::ContextLong => "context_long",
            AblationKind::ContextReversed => "context_reversed",
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, AblationKind::NoiseConstant | AblationKind::NoiseGradual)
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub kind: AblationKind,
    /// Explicit steering range; overrides the derived (true or shifted) one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer_range: Option<(f64, f64)>,
    /// Fraction of the session width added to the range for biased steering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl AblationConfig {
    pub fn new(kind: AblationKind) -> Self {
        AblationConfig { kind, steer_range: None, bias_shift: None, sigma: None, ramp: None, window: None }
    }

    pub fn none() -> Self {
        Self::new(AblationKind::None)
    }

    pub fn context_window(&self) -> usize {
        self.window.unwrap_or(match self.kind {
            AblationKind::ContextShort => SHORT_CONTEXT_WINDOW,
            AblationKind::ContextLong => LONG_CONTEXT_WINDOW,
            _ => BASE_CONTEXT_WINDOW,
        })
    }

    /// Blur sigma for trial `t` of `n`.
    pub fn noise_sigma(&self, t: usize, n: usize) -> f64 {
        match self.kind {
            AblationKind::NoiseConstant => self.sigma.unwrap_or(DEFAULT_CONSTANT_SIGMA),
            AblationKind::NoiseGradual => {
                let (a, b) = self.ramp.unwrap_or(DEFAULT_RAMP);
                if n <= 1 {
                    a
                } else {
                    a + (b - a) * t as f64 / (n - 1) as f64
                }
            }
            _ => 0.0,
        }
    }

    pub fn validate(&self, task: TaskKind) -> Result<(), SessionError> {
        if self.kind.is_noise() && !task.is_multimodal() {
            return Err(SessionError::Config(format!("{} needs an image modality; {task} is text-only", self.kind)));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) {
                return Err(SessionError::Config(format!("negative blur sigma {s}")));
            }
        }
        if let Some((a, b)) = self.ramp {
            if !(a >= 0.0 && b >= a) {
                return Err(SessionError::Config(format!("blur ramp ({a}, {b}) must be nondecreasing and >= 0")));
            }
        }
        if let Some((lo, hi)) = self.steer_range {
            if !(lo < hi) {
                return Err(SessionError::Config(format!("steering range ({lo}, {hi}) is empty")));
            }
        }
        if self.window == Some(0) {
            return Err(SessionError::Config("context window must be >= 1".into()));
        }
        Ok(())
    }

    /// Range quoted by numeric steering for a session drawn from `range`.
    pub fn steering_range(&self, task: TaskKind, range: &SessionRange) -> Option<(f64, f64)> {
        if let Some(r) = self.steer_range {
            return Some(r);
        }
        match self.kind {
            AblationKind::SteerNumericUnbiased => Some((range.lo, range.hi)),
            AblationKind::SteerNumericBiased => {
                let shift = self.bias_shift.unwrap_or(DEFAULT_BIAS_SHIFT) * range.width();
                let (dlo, dhi) = task.domain();
                Some(((range.lo + shift).clamp(dlo, dhi), (range.hi + shift).clamp(dlo, dhi)))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
    Multimodal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Image, Modality::Multimodal];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Multimodal => "multimodal",
        }
    }

    pub fn available_for(self, task: TaskKind) -> bool {
        self == Modality::Text || task.is_multimodal()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything needed to turn a sampled magnitude into a rendered stimulus.
#[derive(Debug, Clone, Default)]
pub struct StimulusFactory {
    pub render: RenderConfig,
    pub maze: MazeConfig,
    pub corpus: Option<Arc<TranscriptCorpus>>,
    pub transcript_tolerance: f64,
}

impl StimulusFactory {
    pub fn new(render: RenderConfig, maze: MazeConfig) -> Self {
        StimulusFactory { render, maze, corpus: None, transcript_tolerance: 2.0 }
    }

    pub fn with_corpus(mut self, corpus: TranscriptCorpus) -> Self {
        self.corpus = Some(Arc::new(corpus));
        self
    }

    pub fn make(&self, task: TaskKind, value: f64, seed: u64) -> Result<Stimulus, StimulusError> {
        match task {
            TaskKind::MarkerLocation => stimulus::gen_marker(value, &self.render),
            TaskKind::LineRatio => stimulus::gen_line_ratio(value, &self.render, &mut seed::rng(seed)),
            TaskKind::MazeDistance => stimulus::gen_maze(value, &self.maze, &self.render, seed),
            TaskKind::TranscriptDuration => {
                let corpus = self
                    .corpus
                    .as_deref()
                    .ok_or_else(|| StimulusError::Corpus("no transcript corpus configured".into()))?;
                stimulus::extract_transcript(corpus, value, self.transcript_tolerance, seed)
            }
        }
    }
}

/// Stimulus payload as presented in one modality. `true_value` never leaves
/// the process; it is there for in-process observers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Payload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip)]
    pub image_png: Option<Arc<Vec<u8>>>,
    #[serde(skip)]
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrial {
    pub index: usize,
    /// Position of this stimulus in the unreversed sampling order.
    pub source_index: usize,
    pub stimulus: Stimulus,
    pub blur_sigma: f64,
    /// PNG of the presented (possibly blurred) image.
    pub image_png: Option<Arc<Vec<u8>>>,
}

impl PlannedTrial {
    pub fn payload(&self, modality: Modality) -> Payload {
        let text =
            matches!(modality, Modality::Text | Modality::Multimodal).then(|| self.stimulus.text_payload()).flatten();
        let image_png =
            matches!(modality, Modality::Image | Modality::Multimodal).then(|| self.image_png.clone()).flatten();
        Payload { text, image_png, true_value: self.stimulus.true_value }
    }

    pub fn stimulus_id(&self) -> String {
        format!("s{:03}", self.source_index)
    }
}

#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub task: TaskKind,
    pub range: SessionRange,
    pub ablation: AblationConfig,
    pub seed: u64,
    pub trials: Vec<PlannedTrial>,
}

impl SessionPlan {
    pub fn true_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.stimulus.true_value).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.blur_sigma).collect()
    }
}

/// Stimuli for one session in presentation order, with per-trial blur.
///
/// Stimulus `i` is rendered from a seed derived from `(rng_seed, i)`, so every
/// ablation sharing a seed presents the same stimulus set.
pub fn build_session_plan(
    factory: &StimulusFactory,
    task: TaskKind,
    range: &SessionRange,
    n_trials: usize,
    ablation: &AblationConfig,
    rng_seed: u64,
) -> Result<SessionPlan, SessionError> {
    ablation.validate(task)?;
    let values = stimulus::sample_session_values(range, n_trials, seed::derive(rng_seed, 0))?;
    let mut trials = Vec::with_capacity(n_trials);
    for (i, v) in values.into_iter().enumerate() {
        let stim = factory.make(task, v, seed::derive2(rng_seed, 1, i as u64))?;
        trials.push(PlannedTrial { index: i, source_index: i, stimulus: stim, blur_sigma: 0.0, image_png: None });
    }
    if ablation.kind == AblationKind::ContextReversed {
        trials.reverse();
    }
    let n = trials.len();
    for (t, trial) in trials.iter_mut().enumerate() {
        trial.index = t;
        trial.blur_sigma = ablation.noise_sigma(t, n);
        if let Some(img) = trial.stimulus.image.as_mut() {
            if trial.blur_sigma > 0.0 {
                *img = stimulus::apply_blur(img, trial.blur_sigma)?;
            }
            trial.image_png = Some(Arc::new(img.to_png()?));
        }
    }
    Ok(SessionPlan { task, range: *range, ablation: ablation.clone(), seed: rng_seed, trials })
}

fn role_sentence(task: TaskKind) -> &'static str {
    match task {
        TaskKind::MarkerLocation => "You are a marker location estimator. Estimate the position of the marker along the line as a decimal number between 0 and 1.",
        TaskKind::LineRatio => "You are a line-length ratio estimator. Estimate the ratio of the shorter line to the longer line as a decimal number between 0 and 1.",
        TaskKind::MazeDistance => "You are a path distance estimator. Estimate the straight-line distance between the start and the end of the path, in grid cells, as a decimal number.",
        TaskKind::TranscriptDuration => "You are a dialogue duration estimator. Estimate the duration of the dialogue in seconds as a decimal number.",
    }
}

const NO_REASONING: &str = "Do not explain or reason. Only output the final answer.";
const NOISY_DATA: &str = "The given data is noisy and may contain artifacts.";
const BAYES_STEER: &str =
    "You should behave like a Bayesian observer and take into account prior and likelihood in your predictions.";

/// Compact decimal for prompt text: at most six decimals, trailing zeros trimmed.
pub fn prompt_number(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    format!("{r}")
}

pub fn build_system_prompt(task: TaskKind, ablation: &AblationConfig, range: &SessionRange) -> String {
    let mut s = format!("{} {}", role_sentence(task), NO_REASONING);
    match ablation.kind {
        AblationKind::SteerVerbal => {
            s.push_str(&format!(" {NOISY_DATA} {BAYES_STEER}"));
        }
        AblationKind::SteerNumericUnbiased | AblationKind::SteerNumericBiased => {
            let (lo, hi) = ablation.steering_range(task, range).unwrap_or((range.lo, range.hi));
            s.push_str(&format!(
                " {NOISY_DATA} For 10 previous observations, the values were observed to lie in the range of {} to {}.",
                prompt_number(lo),
                prompt_number(hi)
            ));
        }
        _ => {}
    }
    s
}

/// Decimal text with four significant digits (no exponent notation).
pub fn format_sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{:.3}", if v.is_finite() { v } else { 0.0 });
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Observed outcome of one trial, as persisted in the record log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment_id: String,
    pub manifest_hash: String,
    pub observer: String,
    pub channel: String,
    pub task: TaskKind,
    pub session: SessionKind,
    pub modality: Modality,
    pub ablation: AblationKind,
    pub trial_index: usize,
    pub stimulus_id: String,
    pub true_value: f64,
    pub blur_sigma: f64,
    pub raw_response: Option<String>,
    pub parsed_value: Option<f64>,
    pub latency_ms: u64,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryItem {
    pub payload: Payload,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub history: Vec<HistoryItem>,
    pub current: Payload,
    pub modality: Modality,
    pub trial_index: usize,
}

fn user_content(p: &Payload) -> Value {
    let mut parts = Vec::new();
    if let Some(t) = &p.text {
        parts.push(json!({"type": "text", "text": t}));
    }
    if let Some(png) = &p.image_png {
        let b64 = base64::engine::general_purpose::STANDARD.encode(png.as_slice());
        parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
    }
    Value::Array(parts)
}

impl PromptBundle {
    /// Chat-completion message list: system, then alternating user/assistant
    /// turns for the history, then the current stimulus.
    pub fn to_messages(&self) -> Value {
        let mut msgs = vec![json!({"role": "system", "content": self.system_text})];
        for h in &self.history {
            msgs.push(json!({"role": "user", "content": user_content(&h.payload)}));
            msgs.push(json!({"role": "assistant", "content": h.response}));
        }
        msgs.push(json!({"role": "user", "content": user_content(&self.current)}));
        Value::Array(msgs)
    }
}

/// Builds the prompt for trial `t` from the records of earlier trials.
///
/// History holds the last `min(window, t)` trials, minus those whose response
/// failed to parse. `prior` is indexed by trial; entries at or beyond `t` are
/// ignored.
pub fn assemble_prompt(
    plan: &SessionPlan,
    t: usize,
    window: usize,
    modality: Modality,
    prior: &[TrialRecord],
) -> PromptBundle {
    let start = t.saturating_sub(window);
    let history = (start..t)
        .filter_map(|i| {
            let rec = prior.iter().find(|r| r.trial_index == i)?;
            let v = rec.parsed_value?;
            Some(HistoryItem { payload: plan.trials[i].payload(modality), response: format_sig4(v) })
        })
        .collect();
    PromptBundle {
        system_text: build_system_prompt(plan.task, &plan.ablation, &plan.range),
        history,
        current: plan.trials[t].payload(modality),
        modality,
        trial_index: t,
    }
}
