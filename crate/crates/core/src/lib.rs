//! Reinforcement fine-tuning for detecting synthetic videos, at toy scale.
//!
//! A linear-softmax policy reads hand-built temporal features of a clip and
//! answers `real`, `fake` or `fake-<step>`, together with a response-length
//! bucket. On top of it sit supervised, preference (DPO) and group-relative RL
//! objectives, the rewards they train against, a synthetic corpus generator,
//! temporal artifact injection, and an evaluation harness.

// NaN must fail validation, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod answer;
pub mod artifacts;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod policy;
pub mod response;
pub mod rewards;
pub mod rng;
pub mod sample;
pub mod trainer;

pub use answer::{parse_answer, AnswerKind, AnswerLabel, AnswerMode, AnswerSpace};
pub use artifacts::{ArtifactConfig, ArtifactKind, ArtifactRecord};
pub use datagen::{build_corpus, Corpus, DatagenConfig, PreferencePair};
pub use error::{Error, Result};
pub use harness::{evaluate, score_transcripts, EvalReport};
pub use objectives::ObjectiveConfig;
pub use policy::{FeatureVector, PolicyParams};
pub use response::{LengthBucket, Response, RolloutGroup};
pub use rewards::RewardConfig;
pub use sample::{Split, VideoSample};
pub use trainer::{Checkpoint, LogRecord, Mode, Session, TrainConfig};
