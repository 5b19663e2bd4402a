use super::{Stimulus, StimulusError, TaskKind};
use crate::seed;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// A speaker-tagged line with timestamps removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub speaker: String,
    pub text: String,
}

/// Timestamped utterances, sorted by start time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TranscriptCorpus {
    pub utterances: Vec<Utterance>,
}

impl TranscriptCorpus {
    pub fn new(mut utterances: Vec<Utterance>) -> Result<Self, StimulusError> {
        for (i, u) in utterances.iter().enumerate() {
            if !(u.start_s.is_finite() && u.end_s.is_finite() && u.end_s >= u.start_s) {
                return Err(StimulusError::Corpus(format!("utterance {i}: bad interval [{}, {}]", u.start_s, u.end_s)));
            }
        }
        utterances.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        Ok(TranscriptCorpus { utterances })
    }

    /// Parses tab-separated `speaker, start_s, end_s, text` lines. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse_tsv(input: &str) -> Result<Self, StimulusError> {
        let mut out = Vec::new();
        for (n, line) in input.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() != 4 {
                return Err(StimulusError::Corpus(format!("line {}: expected 4 tab-separated fields", n + 1)));
            }
            let num =
                |s: &str| s.trim().parse::<f64>().map_err(|e| StimulusError::Corpus(format!("line {}: {e}", n + 1)));
            out.push(Utterance {
                speaker: f[0].to_string(),
                start_s: num(f[1])?,
                end_s: num(f[2])?,
                text: f[3].to_string(),
            });
        }
        Self::new(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for u in &self.utterances {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", u.speaker, u.start_s, u.end_s, u.text);
        }
        s
    }

    pub fn coverage(&self) -> f64 {
        match (self.utterances.first(), self.utterances.iter().map(|u| u.end_s).reduce(f64::max)) {
            (Some(first), Some(end)) => end - first.start_s,
            _ => 0.0,
        }
    }

    /// Synthetic meeting transcript. Utterance word counts scale with their
    /// duration (about 2.5 words per second), so the text carries the timing.
    pub fn synthetic(n_utterances: usize, rng_seed: u64) -> Self {
        const SPEAKERS: [&str; 4] = ["A", "B", "C", "D"];
        const WORDS: [&str; 24] = [
            "so", "we", "should", "look", "at", "the", "remote", "design", "um", "yeah", "button", "cost", "budget",
            "think", "maybe", "right", "okay", "users", "like", "it", "and", "then", "meeting", "next",
        ];
        let mut rng = seed::rng(rng_seed);
        let mut t = 0.0f64;
        let mut utterances = Vec::with_capacity(n_utterances);
        for _ in 0..n_utterances {
            let dur: f64 = (rng.random_range(1.0..15.0f64) * 100.0).round() / 100.0;
            let gap: f64 = (rng.random_range(0.0..2.0f64) * 100.0).round() / 100.0;
            let start = ((t + gap) * 100.0).round() / 100.0;
            let end = ((start + dur) * 100.0).round() / 100.0;
            let n_words = ((dur * 2.5).round() as usize).max(1);
            let text = (0..n_words).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            utterances.push(Utterance {
                speaker: SPEAKERS.choose(&mut rng).unwrap().to_string(),
                start_s: start,
                end_s: end,
                text,
            });
            t = end;
        }
        TranscriptCorpus { utterances }
    }

    /// All contiguous windows `(first, last)` whose duration
    /// `end[last] - start[first]` lies within `tolerance` of `target`.
    pub fn windows_near(&self, target: f64, tolerance: f64) -> Vec<(usize, usize)> {
        let u = &self.utterances;
        let mut out = Vec::new();
        for i in 0..u.len() {
            for j in i..u.len() {
                if u[j].start_s - u[i].start_s > target + tolerance {
                    break;
                }
                let d = u[j].end_s - u[i].start_s;
                if (d - target).abs() <= tolerance {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn extract_transcript(
    corpus: &TranscriptCorpus,
    target_duration: f64,
    window_tolerance: f64,
    rng_seed: u64,
) -> Result<Stimulus, StimulusError> {
    if corpus.utterances.is_empty() {
        return Err(StimulusError::Corpus("empty corpus".into()));
    }
    if !(target_duration > 0.0) || target_duration > corpus.coverage() + window_tolerance {
        return Err(StimulusError::Domain(format!(
            "target duration {target_duration} outside corpus coverage {:.2}",
            corpus.coverage()
        )));
    }
    let candidates = corpus.windows_near(target_duration, window_tolerance);
    let mut rng = seed::rng(rng_seed);
    let &(i, j) = candidates.choose(&mut rng).ok_or_else(|| {
        StimulusError::Generation(format!("no transcript window within {window_tolerance}s of {target_duration}s"))
    })?;
    let u = &corpus.utterances;
    let lines = u[i..=j].iter().map(|x| TranscriptLine { speaker: x.speaker.clone(), text: x.text.clone() }).collect();
    Ok(Stimulus {
        task: TaskKind::TranscriptDuration,
        true_value: u[j].end_s - u[i].start_s,
        ascii: None,
        image: None,
        maze_path: None,
        transcript: Some(lines),
    })
}
