//! Detection metrics over a labelled split, offline transcript scoring, and
//! report output.
//!
//! `fake` is the positive class. Unparseable transcripts count as wrong
//! predictions and are tallied separately.

mod report;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use report::{log_to_svg, read_log, report_csv, write_report_csv, write_svg};

use crate::answer::{is_binary_correct, parse_answer, progress, AnswerLabel, AnswerSpace};
use crate::datagen::read_jsonl;
use crate::error::{Error, Result};
use crate::policy::{featurize, greedy_answer, PolicyParams};
use crate::sample::VideoSample;

/// Binary confusion matrix, `fake` positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Zero when nothing was predicted fake.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Zero when there are no fakes.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Rows are truth (real, fake), columns are prediction (real, fake).
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }

    fn record(&mut self, truth_fake: bool, pred_fake: bool) {
        match (truth_fake, pred_fake) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub top1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Top-1 per source tag.
    pub per_source: BTreeMap<String, f64>,
    /// Unweighted mean of `per_source`.
    pub per_source_mean: f64,
    /// `[[tn, fp], [fn, tp]]`, rows truth, columns prediction.
    pub confusion: [[usize; 2]; 2],
    /// Mean |progress(pred) − progress(truth)| over stepped fakes predicted as stepped fakes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_mae: Option<f64>,
    pub parse_failures: usize,
}

/// One scored prediction. `None` means no usable answer.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub source: String,
    pub truth: AnswerLabel,
    pub predicted: Option<AnswerLabel>,
}

/// Aggregates predictions. `pred_space` resolves predicted steps and
/// `truth_space` resolves true steps; they differ when a model trained on one
/// step grid is scored on another.
pub fn summarize(preds: &[Prediction], pred_space: &AnswerSpace, truth_space: &AnswerSpace) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut confusion = Confusion::default();
    let mut correct = 0usize;
    let mut parse_failures = 0usize;
    let mut by_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut abs_err = 0.0;
    let mut stepped = 0usize;
    for p in preds {
        let entry = by_source.entry(p.source.clone()).or_default();
        entry.1 += 1;
        let Some(pred) = p.predicted else {
            parse_failures += 1;
            // An unusable answer is wrong whichever way the truth points.
            confusion.record(p.truth.is_fake(), p.truth.is_real());
            continue;
        };
        confusion.record(p.truth.is_fake(), pred.is_fake());
        if is_binary_correct(&pred, &p.truth) {
            correct += 1;
            entry.0 += 1;
        }
        if pred.step().is_some() && p.truth.step().is_some() {
            abs_err += (progress(&pred, pred_space)? - progress(&p.truth, truth_space)?).abs();
            stepped += 1;
        }
    }
    let per_source: BTreeMap<String, f64> = by_source.into_iter().map(|(k, (c, n))| (k, ratio(c, n))).collect();
    let per_source_mean = per_source.values().sum::<f64>() / per_source.len() as f64;
    Ok(EvalReport {
        n: preds.len(),
        top1: ratio(correct, preds.len()),
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        per_source,
        per_source_mean,
        confusion: confusion.matrix(),
        step_mae: (stepped > 0).then(|| abs_err / stepped as f64),
        parse_failures,
    })
}

/// Greedy predictions of `params` on `samples`.
pub fn predict<'a>(
    params: &PolicyParams,
    samples: impl IntoIterator<Item = &'a VideoSample>,
) -> Result<Vec<Prediction>> {
    samples
        .into_iter()
        .map(|s| {
            Ok(Prediction {
                source: s.source_tag(),
                truth: s.truth,
                predicted: Some(greedy_answer(params, &featurize(s)?)),
            })
        })
        .collect()
}

/// Greedy-decoded metrics of `params`. `model_space` is the answer space the
/// parameters were trained on; `truth_space` is the corpus space.
pub fn evaluate<'a>(
    params: &PolicyParams,
    samples: impl IntoIterator<Item = &'a VideoSample>,
    model_space: &AnswerSpace,
    truth_space: &AnswerSpace,
) -> Result<EvalReport> {
    summarize(&predict(params, samples)?, model_space, truth_space)
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub id: String,
    pub truth: AnswerLabel,
    pub transcript: String,
    /// Optional source tag; the truth label is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub fn score_records(records: &[TranscriptRecord], space: &AnswerSpace) -> Result<EvalReport> {
    let preds: Vec<Prediction> = records
        .iter()
        .map(|r| Prediction {
            source: r.source.clone().unwrap_or_else(|| r.truth.to_string()),
            truth: r.truth,
            predicted: parse_answer(&r.transcript, space).ok(),
        })
        .collect();
    summarize(&preds, space, space)
}

/// Scores a JSON-lines transcript file.
pub fn score_transcripts(path: &Path, space: &AnswerSpace) -> Result<EvalReport> {
    score_records(&read_jsonl::<TranscriptRecord>(path)?, space)
}
