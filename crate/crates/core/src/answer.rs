//! Answer labels, the answer space and answer parsing.
//!
//! The prediction domain is `{real} ∪ {fake-s}` where `s` ranges over a grid
//! of reverse-diffusion step counts. A plain `fake` (no step) is also
//! representable so the binary detection task and the quality-graded task
//! share one label type.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerKind {
    Real,
    Fake,
}

/// A real/fake label, optionally carrying the diffusion step of a fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnswerLabel {
    kind: AnswerKind,
    step: Option<u32>,
}

impl AnswerLabel {
    pub const REAL: AnswerLabel = AnswerLabel {
        kind: AnswerKind::Real,
        step: None,
    };
    pub const FAKE: AnswerLabel = AnswerLabel {
        kind: AnswerKind::Fake,
        step: None,
    };

    pub fn real() -> Self {
        Self::REAL
    }

    pub fn fake() -> Self {
        Self::FAKE
    }

    pub fn fake_at(step: u32) -> Self {
        AnswerLabel {
            kind: AnswerKind::Fake,
            step: Some(step),
        }
    }

    pub fn kind(&self) -> AnswerKind {
        self.kind
    }

    pub fn step(&self) -> Option<u32> {
        self.step
    }

    pub fn is_real(&self) -> bool {
        self.kind == AnswerKind::Real
    }

    pub fn is_fake(&self) -> bool {
        self.kind == AnswerKind::Fake
    }

    /// Drops the step, keeping only the real/fake kind.
    pub fn binary(&self) -> Self {
        AnswerLabel {
            kind: self.kind,
            step: None,
        }
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.step) {
            (AnswerKind::Real, _) => f.write_str("real"),
            (AnswerKind::Fake, None) => f.write_str("fake"),
            (AnswerKind::Fake, Some(s)) => write!(f, "fake-{s}"),
        }
    }
}

impl FromStr for AnswerLabel {
    type Err = Error;

    /// Parses the canonical form `real | fake | fake-<step>`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let token = s.trim().to_ascii_lowercase();
        match token.as_str() {
            "real" => Ok(Self::REAL),
            "fake" => Ok(Self::FAKE),
            other => {
                let step = other
                    .strip_prefix("fake-")
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::ParseFailure(s.to_string()))?;
                Ok(Self::fake_at(step))
            }
        }
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which answer head the policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// `{real, fake}`.
    Binary,
    /// `{real} ∪ {fake-s : s in step_grid}`.
    Quality,
}

/// The step grid and its quality grades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSpace {
    pub max_step: u32,
    pub step_grid: Vec<u32>,
    /// Step -> quality percent.
    pub quality_labels: BTreeMap<u32, f64>,
}

impl Default for AnswerSpace {
    fn default() -> Self {
        AnswerSpace {
            max_step: 50,
            step_grid: vec![10, 20, 30, 40, 50],
            quality_labels: [(10, 20.0), (20, 40.0), (30, 60.0), (40, 80.0), (50, 95.0)]
                .into_iter()
                .collect(),
        }
    }
}

impl AnswerSpace {
    pub fn new(max_step: u32, step_grid: Vec<u32>, quality_labels: BTreeMap<u32, f64>) -> Result<Self> {
        let space = AnswerSpace {
            max_step,
            step_grid,
            quality_labels,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_step == 0 {
            return Err(Error::InvalidSpace("max_step must be positive".into()));
        }
        if self.step_grid.is_empty() {
            return Err(Error::InvalidSpace("step_grid is empty".into()));
        }
        if self.step_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpace("step_grid must be strictly increasing".into()));
        }
        if self.step_grid.iter().any(|&s| s == 0 || s > self.max_step) {
            return Err(Error::InvalidSpace(format!(
                "step_grid entries must lie in (0, {}]",
                self.max_step
            )));
        }
        let keys: Vec<u32> = self.quality_labels.keys().copied().collect();
        if keys != self.step_grid {
            return Err(Error::InvalidSpace("quality_labels keys must equal step_grid".into()));
        }
        if self.quality_labels.values().any(|q| !(0.0..=100.0).contains(q)) {
            return Err(Error::InvalidSpace("quality percent outside [0, 100]".into()));
        }
        Ok(())
    }

    pub fn contains_step(&self, step: u32) -> bool {
        self.step_grid.binary_search(&step).is_ok()
    }

    pub fn quality_percent(&self, step: u32) -> Result<f64> {
        self.quality_labels.get(&step).copied().ok_or(Error::UnknownStep(step))
    }

    /// Every label of the answer head, in class-index order.
    pub fn classes(&self, mode: AnswerMode) -> Vec<AnswerLabel> {
        match mode {
            AnswerMode::Binary => vec![AnswerLabel::REAL, AnswerLabel::FAKE],
            AnswerMode::Quality => std::iter::once(AnswerLabel::REAL)
                .chain(self.step_grid.iter().map(|&s| AnswerLabel::fake_at(s)))
                .collect(),
        }
    }

    pub fn class_count(&self, mode: AnswerMode) -> usize {
        match mode {
            AnswerMode::Binary => 2,
            AnswerMode::Quality => 1 + self.step_grid.len(),
        }
    }

    /// Class index of `label` under `mode`. In binary mode every fake maps to
    /// the single fake class; in quality mode a fake needs a grid step.
    pub fn class_index(&self, label: &AnswerLabel, mode: AnswerMode) -> Option<usize> {
        match (mode, label.kind, label.step) {
            (_, AnswerKind::Real, _) => Some(0),
            (AnswerMode::Binary, AnswerKind::Fake, _) => Some(1),
            (AnswerMode::Quality, AnswerKind::Fake, Some(s)) => self.step_grid.binary_search(&s).ok().map(|i| i + 1),
            (AnswerMode::Quality, AnswerKind::Fake, None) => None,
        }
    }
}

/// Fraction of reverse-diffusion steps used to produce a fake, `step / max_step`.
pub fn progress(label: &AnswerLabel, space: &AnswerSpace) -> Result<f64> {
    match (label.kind, label.step) {
        (AnswerKind::Real, _) => Err(Error::RealHasNoProgress),
        (AnswerKind::Fake, None) => Err(Error::MissingStep),
        (AnswerKind::Fake, Some(s)) if space.contains_step(s) => Ok(f64::from(s) / f64::from(space.max_step)),
        (AnswerKind::Fake, Some(s)) => Err(Error::UnknownStep(s)),
    }
}

/// Real/fake agreement, ignoring steps.
pub fn is_binary_correct(answer: &AnswerLabel, truth: &AnswerLabel) -> bool {
    answer.kind == truth.kind
}

const OPEN: &str = "<answer>";
const CLOSE: &str = "</answer>";

/// Extracts the final `<answer>...</answer>` section of a transcript.
///
/// The last complete section wins. Tokens are matched case-insensitively and a
/// stepped fake must name a step from `space`.
pub fn parse_answer(transcript: &str, space: &AnswerSpace) -> Result<AnswerLabel> {
    let fail = || Error::ParseFailure(truncate(transcript));
    let lower = transcript.to_ascii_lowercase();
    let open = lower.rfind(OPEN).ok_or_else(fail)?;
    let body_start = open + OPEN.len();
    let close = lower[body_start..].find(CLOSE).ok_or_else(fail)? + body_start;
    let label: AnswerLabel = lower[body_start..close].parse().map_err(|_| fail())?;
    match label.step {
        Some(s) if !space.contains_step(s) => Err(fail()),
        _ => Ok(label),
    }
}

fn truncate(s: &str) -> String {
    const MAX: usize = 64;
    match s.char_indices().nth(MAX) {
        Some((idx, _)) => format!("{}...", &s[..idx]),
        None => s.to_string(),
    }
}
