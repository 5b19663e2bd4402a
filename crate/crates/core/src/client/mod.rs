//! Observer channels (HTTP chat endpoints and in-process agents), answer
//! parsing, and the per-session trial loop.

mod http;
mod runner;

pub use http::{EndpointConfig, HttpChannel, ReasoningControl};
pub use runner::{run_session, RateLimiter, SessionContext, SessionOutcome, MAX_CONSECUTIVE_FAILURES};

use crate::session::{Modality, PromptBundle, SessionPlan};
use crate::synthetic::SyntheticAgent;
use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("malformed endpoint reply: {0}")]
    Malformed(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl ChannelError {
    /// Worth another attempt after backing off.
    pub fn is_retryable(&self) -> bool {
        match self {
            ChannelError::Timeout | ChannelError::Transport(_) => true,
            ChannelError::Status(s) => *s == 429 || *s >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{error} after {attempts} attempt(s)")]
pub struct ChannelFailure {
    pub error: ChannelError,
    pub attempts: u32,
}

/// Anything that can answer a prompt with raw text.
pub trait ObserverChannel: Send + Sync {
    /// Channel family recorded with each trial ("http", "synthetic", "human").
    fn kind(&self) -> &'static str;
    fn ask(&self, bundle: &PromptBundle) -> Result<Reply, ChannelFailure>;
}

/// In-process agent bound to one session. Responses are computed up front
/// from the plan's stimuli, so asking is stateless and resumable.
#[derive(Debug, Clone)]
pub struct SyntheticChannel {
    responses: Vec<f64>,
}

impl SyntheticChannel {
    pub fn for_plan(
        agent: &SyntheticAgent,
        plan: &SessionPlan,
        modality: Modality,
        seed: u64,
    ) -> Result<Self, ChannelError> {
        let responses = agent
            .respond(&plan.true_values(), seed, plan.ablation.kind, modality)
            .map_err(|e| ChannelError::Config(e.to_string()))?;
        Ok(SyntheticChannel { responses })
    }

    pub fn from_responses(responses: Vec<f64>) -> Self {
        SyntheticChannel { responses }
    }
}

impl ObserverChannel for SyntheticChannel {
    fn kind(&self) -> &'static str {
        "synthetic"
    }

    fn ask(&self, bundle: &PromptBundle) -> Result<Reply, ChannelFailure> {
        match self.responses.get(bundle.trial_index) {
            Some(v) => Ok(Reply { text: format!("{v}"), attempts: 1 }),
            None => Err(ChannelFailure {
                error: ChannelError::Config(format!("no response scripted for trial {}", bundle.trial_index)),
                attempts: 1,
            }),
        }
    }
}

fn number_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[+-]?\d+(?:\.\d+)?").expect("valid pattern"))
}

/// Extracts the answer from free text. A lone number is taken as is; with
/// several numbers the first is taken only if it lies inside `range`.
/// Values farther than half the range width outside it are rejected.
pub fn parse_numeric(raw: &str, range: (f64, f64)) -> Option<f64> {
    let (lo, hi) = range;
    let mut tokens = number_token().find_iter(raw);
    let first: f64 = tokens.next()?.as_str().parse().ok()?;
    let several = tokens.next().is_some();
    if several && !(lo..=hi).contains(&first) {
        return None;
    }
    let pad = 0.5 * (hi - lo);
    ((lo - pad)..=(hi + pad)).contains(&first).then_some(first)
}
