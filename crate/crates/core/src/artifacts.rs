//! Temporal artifact injection: segment repetition and segment reversal.
//!
//! Windows are placed by a Gaussian over the timeline. For a repeat the
//! Gaussian positions the whole affected span (source segment plus the copy
//! that overwrites the frames after it), so clamping is symmetric for both
//! artifact kinds. Repeats overwrite rather than insert, keeping the frame
//! count fixed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::answer::AnswerLabel;
use crate::error::{Error, Result};
use crate::sample::{Frame, VideoSample};

pub const MIN_FRAMES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArtifactKind {
    RepeatSegment,
    ReverseSegment,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::RepeatSegment => "repeat",
            ArtifactKind::ReverseSegment => "reverse",
        }
    }

    /// Number of frames touched by a window of length `len`.
    pub fn span(self, len: usize) -> usize {
        match self {
            ArtifactKind::RepeatSegment => 2 * len,
            ArtifactKind::ReverseSegment => len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecord {
    pub kind: ArtifactKind,
    pub window_start: usize,
    pub window_len: usize,
    /// Label of the video before manipulation.
    pub source_truth: AnswerLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactConfig {
    /// Probability of a repeat; otherwise a reversal.
    pub p_repeat: f64,
    pub center_mean_frac: f64,
    pub center_std_frac: f64,
    pub len_min_frac: f64,
    pub len_max_frac: f64,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        ArtifactConfig {
            p_repeat: 0.5,
            center_mean_frac: 0.5,
            center_std_frac: 0.25,
            len_min_frac: 0.125,
            len_max_frac: 0.25,
        }
    }
}

impl ArtifactConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_repeat) {
            return Err(Error::Config("p_repeat must lie in [0, 1]".into()));
        }
        if !(self.len_min_frac > 0.0 && self.len_min_frac <= self.len_max_frac && self.len_max_frac < 0.5) {
            return Err(Error::Config(
                "artifact lengths need 0 < len_min_frac <= len_max_frac < 0.5".into(),
            ));
        }
        if !(self.center_std_frac >= 0.0 && self.center_std_frac.is_finite()) {
            return Err(Error::Config("center_std_frac must be finite and >= 0".into()));
        }
        if !self.center_mean_frac.is_finite() {
            return Err(Error::Config("center_mean_frac must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn new(start: usize, len: usize) -> Self {
        Window { start, len }
    }
}

/// Draws a window for an artifact of `kind` on a video of `frame_count` frames.
pub fn sample_window<R: Rng + ?Sized>(
    frame_count: usize,
    kind: ArtifactKind,
    cfg: &ArtifactConfig,
    rng: &mut R,
) -> Result<Window> {
    if frame_count < MIN_FRAMES {
        return Err(Error::TooShort(frame_count));
    }
    let t = frame_count as f64;
    let lo = cfg.len_min_frac * t;
    let hi = cfg.len_max_frac * t;
    let raw_len = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let len = (raw_len.round() as usize).max(2);
    let span = kind.span(len);
    if span > frame_count {
        return Err(Error::InvalidWindow {
            start: 0,
            len,
            frame_count,
        });
    }
    let normal =
        Normal::new(cfg.center_mean_frac * t, cfg.center_std_frac * t).map_err(|e| Error::Config(e.to_string()))?;
    let center = normal.sample(rng);
    // Clamp rather than resample: one draw per window keeps streams aligned.
    let max_start = (frame_count - span) as f64;
    let start = (center - span as f64 / 2.0).round().clamp(0.0, max_start) as usize;
    Ok(Window { start, len })
}

fn check_window(frames: &[Frame], start: usize, span: usize, len: usize) -> Result<()> {
    if len == 0 || start.checked_add(span).is_none_or(|end| end > frames.len()) {
        return Err(Error::InvalidWindow {
            start,
            len,
            frame_count: frames.len(),
        });
    }
    Ok(())
}

/// Reverses the frames inside `window`.
pub fn inject_reverse(frames: &[Frame], window: Window) -> Result<Vec<Frame>> {
    check_window(frames, window.start, window.len, window.len)?;
    let mut out = frames.to_vec();
    out[window.start..window.start + window.len].reverse();
    Ok(out)
}

/// Copies the window over the `window.len` frames that follow it.
pub fn inject_repeat(frames: &[Frame], window: Window) -> Result<Vec<Frame>> {
    check_window(frames, window.start, 2 * window.len, window.len)?;
    let mut out = frames.to_vec();
    for i in 0..window.len {
        out[window.start + window.len + i] = frames[window.start + i].clone();
    }
    Ok(out)
}

/// Produces a manipulated copy of `sample`. The result is always labeled fake.
pub fn inject<R: Rng + ?Sized>(sample: &VideoSample, cfg: &ArtifactConfig, rng: &mut R) -> Result<VideoSample> {
    sample.validate()?;
    let kind = if rng.gen_bool(cfg.p_repeat) {
        ArtifactKind::RepeatSegment
    } else {
        ArtifactKind::ReverseSegment
    };
    let window = sample_window(sample.frames.len(), kind, cfg, rng)?;
    let frames = match kind {
        ArtifactKind::RepeatSegment => inject_repeat(&sample.frames, window)?,
        ArtifactKind::ReverseSegment => inject_reverse(&sample.frames, window)?,
    };
    Ok(VideoSample {
        id: format!("{}:{}", sample.id, kind.as_str()),
        pair_id: sample.pair_id.clone(),
        truth: AnswerLabel::FAKE,
        split: sample.split,
        meta: sample.meta,
        frames,
        artifact: Some(ArtifactRecord {
            kind,
            window_start: window.start,
            window_len: window.len,
            source_truth: sample.truth,
        }),
    })
}
