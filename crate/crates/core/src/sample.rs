//! Video samples and their JSON-lines record form.

use serde::{Deserialize, Serialize};

use crate::answer::AnswerLabel;
use crate::artifacts::ArtifactRecord;
use crate::error::{Error, Result};

/// One frame, an abstract feature vector.
pub type Frame = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub frame_count: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSample {
    pub id: String,
    /// Id of the real video a fake was generated from; a real video's own id.
    pub pair_id: String,
    pub truth: AnswerLabel,
    #[serde(default)]
    pub split: Split,
    pub meta: VideoMeta,
    pub frames: Vec<Frame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ArtifactRecord>,
}

impl VideoSample {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        if self.frames.len() != self.meta.frame_count {
            return Err(invalid(format!(
                "{} frames but meta.frame_count = {}",
                self.frames.len(),
                self.meta.frame_count
            )));
        }
        if let Some(first) = self.frames.first() {
            if self.frames.iter().any(|f| f.len() != first.len()) {
                return Err(invalid("frames have differing dimensionality".into()));
            }
        }
        Ok(())
    }

    pub fn frame_dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Tag used for per-source metric breakdowns: the artifact kind for
    /// manipulated videos, otherwise the canonical truth label.
    pub fn source_tag(&self) -> String {
        match &self.artifact {
            Some(record) => format!("artifact-{}", record.kind.as_str()),
            None => self.truth.to_string(),
        }
    }
}
