use proptest::prelude::*;

use vidauth_core::answer::{AnswerLabel, AnswerSpace};
use vidauth_core::datagen::{build_corpus, write_jsonl, Annotation, DatagenConfig};
use vidauth_core::harness::{evaluate, predict, score_transcripts, summarize, Prediction, TranscriptRecord};
use vidauth_core::sample::Split;
use vidauth_core::trainer::{train_grpo, Mode, TrainConfig};

fn label(i: u8) -> AnswerLabel {
    match i % 6 {
        0 => AnswerLabel::REAL,
        s => AnswerLabel::fake_at(u32::from(s) * 10),
    }
}

fn preds(raw: &[(u8, Option<u8>)]) -> Vec<Prediction> {
    raw.iter()
        .map(|&(t, p)| Prediction {
            source: label(t).to_string(),
            truth: label(t),
            predicted: p.map(label),
        })
        .collect()
}

proptest! {
    #[test]
    fn f1_identity_and_counts(raw in prop::collection::vec((0u8..6, prop::option::weighted(0.9, 0u8..6)), 1..80)) {
        let space = AnswerSpace::default();
        let r = summarize(&preds(&raw), &space, &space).unwrap();
        let [[tn, fp], [fn_, tp]] = r.confusion;
        prop_assert_eq!(tn + fp + fn_ + tp, r.n);
        prop_assert!((0.0..=1.0).contains(&r.top1));
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        prop_assert!((r.f1 - f1).abs() < 1e-12);
        prop_assert_eq!(r.parse_failures, raw.iter().filter(|(_, p)| p.is_none()).count());
    }

    #[test]
    fn metrics_are_permutation_invariant(
        raw in prop::collection::vec((0u8..6, prop::option::weighted(0.9, 0u8..6)), 1..60),
        seed in any::<u64>(),
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let space = AnswerSpace::default();
        let mut shuffled = raw.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = summarize(&preds(&raw), &space, &space).unwrap();
        let b = summarize(&preds(&shuffled), &space, &space).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.per_source.keys().collect::<Vec<_>>(), b.per_source.keys().collect::<Vec<_>>());
        prop_assert!((a.top1 - b.top1).abs() < 1e-15);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
        prop_assert!((a.step_mae.unwrap_or(0.0) - b.step_mae.unwrap_or(0.0)).abs() < 1e-12);
    }
}

#[test]
fn transcript_scoring_agrees_with_evaluate() {
    let corpus = build_corpus(&DatagenConfig {
        n_pairs: 60,
        quality_mode: true,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let space = &corpus.config.space;
    let out = train_grpo(
        None,
        &corpus,
        &TrainConfig {
            mode: Mode::GrpoQ,
            steps: 100,
            ..Default::default()
        },
    )
    .unwrap();
    let direct = evaluate(&out.params, corpus.split(Split::Test), space, space).unwrap();

    let records: Vec<TranscriptRecord> = predict(&out.params, corpus.split(Split::Test))
        .unwrap()
        .into_iter()
        .zip(corpus.split(Split::Test))
        .map(|(p, s)| TranscriptRecord {
            id: s.id.clone(),
            truth: s.truth,
            transcript: format!(
                "frames look fine. {}",
                Annotation::canonical(p.predicted.unwrap()).transcript
            ),
            source: Some(p.source),
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcripts.jsonl");
    write_jsonl(&path, &records).unwrap();
    let scored = score_transcripts(&path, space).unwrap();
    assert_eq!(scored, direct);
}
