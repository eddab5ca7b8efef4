//! Sampled policy outputs and rollout groups.

use serde::{Deserialize, Serialize};

use crate::answer::AnswerLabel;
use crate::error::{Error, Result};

/// Three-way discretization of response length around `[l_min, l_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthBucket {
    Short,
    Mid,
    Long,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] = [LengthBucket::Short, LengthBucket::Mid, LengthBucket::Long];

    pub fn index(self) -> usize {
        match self {
            LengthBucket::Short => 0,
            LengthBucket::Mid => 1,
            LengthBucket::Long => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Representative token count: the bucket midpoint for the default
    /// `[320, 512]` window.
    pub fn representative_length(self) -> u32 {
        match self {
            LengthBucket::Short => 160,
            LengthBucket::Mid => 416,
            LengthBucket::Long => 640,
        }
    }

    pub fn of_length(length: u32, l_min: u32, l_max: u32) -> Self {
        if length < l_min {
            LengthBucket::Short
        } else if length <= l_max {
            LengthBucket::Mid
        } else {
            LengthBucket::Long
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub answer: AnswerLabel,
    pub length_bucket: LengthBucket,
    pub length: u32,
    pub logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl Response {
    pub fn new(answer: AnswerLabel, length_bucket: LengthBucket, logprob: f64) -> Result<Self> {
        if !(logprob <= 0.0) {
            return Err(Error::Config(format!("response logprob {logprob} is not <= 0")));
        }
        Ok(Response {
            answer,
            length_bucket,
            length: length_bucket.representative_length(),
            logprob,
            transcript: None,
        })
    }

    /// The canonical `<answer>..</answer>` transcript for this response.
    pub fn canonical_transcript(&self) -> String {
        format!("<answer>{}</answer>", self.answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub input_id: String,
    pub responses: Vec<Response>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulated_responses: Option<Vec<Response>>,
    pub truth: AnswerLabel,
}

impl RolloutGroup {
    pub fn validate(&self, g_prime: Option<usize>) -> Result<()> {
        if self.responses.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let (Some(m), Some(expected)) = (&self.manipulated_responses, g_prime) {
            if m.len() != expected {
                return Err(Error::LengthMismatch(m.len(), expected));
            }
        }
        Ok(())
    }
}
