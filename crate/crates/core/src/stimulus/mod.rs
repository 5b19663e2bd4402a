//! Ground-truth magnitudes and their text/raster renderings for the four
//! estimation tasks.

mod blur;
mod maze;
mod raster;
mod render;
mod transcript;

pub use blur::{apply_blur, apply_blur_with};
pub use maze::{gen_maze, path_distance, MazeConfig};
pub use raster::Raster;
pub use render::{
    decode_line_ratio_ascii, decode_line_ratio_image, decode_marker_ascii, decode_marker_image, gen_line_ratio,
    gen_marker,
};
pub use transcript::{extract_transcript, TranscriptCorpus, TranscriptLine, Utterance};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StimulusError {
    #[error("invalid session range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("transcript corpus: {0}")]
    Corpus(String),
    #[error("png encoding: {0}")]
    Png(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MarkerLocation,
    LineRatio,
    MazeDistance,
    TranscriptDuration,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] =
        [TaskKind::MarkerLocation, TaskKind::LineRatio, TaskKind::MazeDistance, TaskKind::TranscriptDuration];
    pub const MULTIMODAL: [TaskKind; 3] = [TaskKind::MarkerLocation, TaskKind::LineRatio, TaskKind::MazeDistance];

    /// Marker, line-ratio and maze carry text and image renderings;
    /// transcript duration is text only.
    pub fn is_multimodal(self) -> bool {
        !matches!(self, TaskKind::TranscriptDuration)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::MarkerLocation => "marker_location",
            TaskKind::LineRatio => "line_ratio",
            TaskKind::MazeDistance => "maze_distance",
            TaskKind::TranscriptDuration => "transcript_duration",
        }
    }

    /// Natural domain of the magnitude, used to clip shifted ranges.
    pub fn domain(self) -> (f64, f64) {
        match self {
            TaskKind::MarkerLocation | TaskKind::LineRatio => (0.0, 1.0),
            TaskKind::MazeDistance | TaskKind::TranscriptDuration => (0.0, f64::INFINITY),
        }
    }

    pub fn default_range(self, kind: SessionKind) -> SessionRange {
        use SessionKind::*;
        let (lo, hi) = match (self, kind) {
            (TaskKind::MarkerLocation | TaskKind::LineRatio, Short) => (0.10, 0.40),
            (TaskKind::MarkerLocation | TaskKind::LineRatio, Medium) => (0.30, 0.70),
            (TaskKind::MarkerLocation | TaskKind::LineRatio, Long) => (0.60, 0.90),
            (TaskKind::MazeDistance, Short) => (3.0, 8.0),
            (TaskKind::MazeDistance, Medium) => (6.0, 14.0),
            (TaskKind::MazeDistance, Long) => (12.0, 22.0),
            (TaskKind::TranscriptDuration, Short) => (20.0, 90.0),
            (TaskKind::TranscriptDuration, Medium) => (60.0, 240.0),
            (TaskKind::TranscriptDuration, Long) => (180.0, 600.0),
        };
        SessionRange { kind, lo, hi }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Short,
    Medium,
    Long,
}

impl SessionKind {
    pub const ALL: [SessionKind; 3] = [SessionKind::Short, SessionKind::Medium, SessionKind::Long];

    pub fn as_str(self) -> &'static str {
        match self {
            SessionKind::Short => "short",
            SessionKind::Medium => "medium",
            SessionKind::Long => "long",
        }
    }
}

impl fmt::Display for SessionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRange {
    pub kind: SessionKind,
    pub lo: f64,
    pub hi: f64,
}

impl SessionRange {
    pub fn new(kind: SessionKind, lo: f64, hi: f64) -> Result<Self, StimulusError> {
        let r = SessionRange { kind, lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), StimulusError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(StimulusError::InvalidRange { lo: self.lo, hi: self.hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Draws `n` i.i.d. values uniformly from `[range.lo, range.hi]`.
pub fn sample_session_values(range: &SessionRange, n: usize, rng_seed: u64) -> Result<Vec<f64>, StimulusError> {
    range.validate()?;
    if n == 0 {
        return Err(StimulusError::Config("session needs at least one trial".into()));
    }
    let mut rng = crate::seed::rng(rng_seed);
    Ok((0..n).map(|_| rng.random_range(range.lo..=range.hi)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Interior columns of the ASCII line.
    pub ascii_width: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub maze_image_size: u32,
    pub marker_glyph: char,
    pub fill_glyph: char,
    pub line_color: [u8; 3],
    pub marker_color: [u8; 3],
    pub background: [u8; 3],
    pub line_thickness: u32,
    /// Sprinkle '=' glyphs into ASCII line runs. Does not change run lengths.
    pub artifact_glyphs: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            ascii_width: 41,
            image_width: 512,
            image_height: 128,
            maze_image_size: 512,
            marker_glyph: '0',
            fill_glyph: '-',
            line_color: [0, 0, 0],
            marker_color: [220, 20, 20],
            background: [255, 255, 255],
            line_thickness: 3,
            artifact_glyphs: false,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), StimulusError> {
        if self.ascii_width < 10 {
            return Err(StimulusError::Config(format!("ascii_width must be >= 10, got {}", self.ascii_width)));
        }
        if self.image_width < 32 || self.image_height < 32 || self.maze_image_size < 32 {
            return Err(StimulusError::Config("image dimensions must be >= 32".into()));
        }
        if self.line_color == self.marker_color || self.line_color == self.background {
            return Err(StimulusError::Config("line color must differ from marker and background".into()));
        }
        Ok(())
    }
}

/// One trial's ground truth plus whatever renderings the task provides.
#[derive(Debug, Clone, PartialEq)]
pub struct Stimulus {
    pub task: TaskKind,
    pub true_value: f64,
    pub ascii: Option<String>,
    pub image: Option<Raster>,
    pub maze_path: Option<Vec<(i32, i32)>>,
    pub transcript: Option<Vec<TranscriptLine>>,
}

impl Stimulus {
    /// The text payload shown to observers in the text modality.
    pub fn text_payload(&self) -> Option<String> {
        if let Some(a) = &self.ascii {
            return Some(a.clone());
        }
        self.transcript
            .as_ref()
            .map(|lines| lines.iter().map(|l| format!("{}: {}", l.speaker, l.text)).collect::<Vec<_>>().join("\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_values_stay_in_range_with_expected_mean() {
        let r = SessionRange::new(SessionKind::Short, 0.1, 0.4).unwrap();
        let v = sample_session_values(&r, 10_000, 7).unwrap();
        assert!(v.iter().all(|x| (0.1..=0.4).contains(x)));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.25).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn degenerate_range_still_samples() {
        let r = SessionRange::new(SessionKind::Short, 0.5, 0.5 + 1e-9).unwrap();
        let v = sample_session_values(&r, 3, 1).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| (x - 0.5).abs() < 1e-8));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let r = SessionRange::new(SessionKind::Short, 0.1, 0.4).unwrap();
        assert_eq!(sample_session_values(&r, 1000, 7).unwrap(), sample_session_values(&r, 1000, 7).unwrap());
    }

    #[test]
    fn invalid_range_is_rejected() {
        assert!(SessionRange::new(SessionKind::Short, 0.4, 0.1).is_err());
        let bad = SessionRange { kind: SessionKind::Short, lo: 1.0, hi: 1.0 };
        assert!(matches!(sample_session_values(&bad, 3, 0), Err(StimulusError::InvalidRange { .. })));
    }

    #[test]
    fn default_ranges_overlap() {
        for task in TaskKind::ALL {
            let s = task.default_range(SessionKind::Short);
            let m = task.default_range(SessionKind::Medium);
            let l = task.default_range(SessionKind::Long);
            assert!(s.hi > m.lo && m.hi > l.lo, "{task}");
            for r in [s, m, l] {
                r.validate().unwrap();
            }
        }
    }

    #[test]
    fn render_config_bounds() {
        assert!(RenderConfig::default().validate().is_ok());
        let cfg = RenderConfig { ascii_width: 9, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RenderConfig { image_height: 31, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
