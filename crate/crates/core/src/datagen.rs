//! Synthetic paired real/fake corpus.
//!
//! Real videos are smooth low-frequency trajectories per feature channel with
//! light observation noise. Each fake starts from its real counterpart's
//! first frame and trajectory, then adds generation noise whose amplitude
//! shrinks as the quality grade of its diffusion step rises, plus a mild
//! temporal jitter. All videos share the standardized frame count, frame rate
//! and resolution so metadata carries no label signal.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::answer::{AnswerLabel, AnswerSpace};
use crate::error::{io_err, Error, Result};
use crate::rng::{stream, Stream};
use crate::sample::{Frame, Split, VideoMeta, VideoSample};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Step used for the single fake per real video in binary mode.
pub const BINARY_FAKE_STEP: u32 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub n_pairs: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub feature_dim: usize,
    pub noise_base: f64,
    /// Observation noise on real videos.
    pub real_noise: f64,
    pub seed: u64,
    /// Five graded fakes per real video instead of one.
    pub quality_mode: bool,
    pub test_frac: f64,
    pub space: AnswerSpace,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            n_pairs: 100,
            frame_count: 49,
            fps: 8.0,
            width: 720,
            height: 480,
            feature_dim: 16,
            noise_base: 1.0,
            real_noise: 0.02,
            seed: 0,
            quality_mode: false,
            test_frac: 0.1,
            space: AnswerSpace::default(),
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if self.frame_count < 8 {
            return Err(Error::Config("frame_count must be at least 8".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        if !(self.noise_base >= 0.0 && self.real_noise >= 0.0) {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.test_frac) {
            return Err(Error::Config("test_frac must lie in [0, 1)".into()));
        }
        if !self.quality_mode && !self.space.contains_step(BINARY_FAKE_STEP) {
            return Err(Error::Config(format!(
                "binary corpora generate step-{BINARY_FAKE_STEP} fakes; the step grid lacks it"
            )));
        }
        Ok(())
    }

    pub fn meta(&self) -> VideoMeta {
        VideoMeta {
            frame_count: self.frame_count,
            fps: self.fps,
            width: self.width,
            height: self.height,
        }
    }

    /// Noise amplitude of a fake generated with `step` reverse-diffusion steps.
    pub fn amplitude(&self, step: u32) -> Result<f64> {
        Ok(self.noise_base * (1.0 - self.space.quality_percent(step)? / 100.0))
    }
}

fn gaussian(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

/// One real video.
pub fn gen_real(id: &str, cfg: &DatagenConfig, rng: &mut Stream) -> VideoSample {
    let t_len = cfg.frame_count as f64;
    let channels: Vec<[(f64, f64, f64); 2]> = (0..cfg.feature_dim)
        .map(|_| {
            let mut wave = || {
                (
                    rng.gen_range(0.5..1.5),
                    rng.gen_range(0.2..1.0) * std::f64::consts::TAU / t_len,
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            };
            [wave(), wave()]
        })
        .collect();
    let frames = (0..cfg.frame_count)
        .map(|t| {
            channels
                .iter()
                .map(|waves| {
                    let smooth: f64 = waves.iter().map(|(a, w, p)| a * (w * t as f64 + p).sin()).sum();
                    smooth + cfg.real_noise * gaussian(rng)
                })
                .collect()
        })
        .collect();
    VideoSample {
        id: id.to_string(),
        pair_id: id.to_string(),
        truth: AnswerLabel::REAL,
        split: Split::Train,
        meta: cfg.meta(),
        frames,
        artifact: None,
    }
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Frame {
    a.iter().zip(b).map(|(x, y)| x + (y - x) * w).collect()
}

/// Generated counterpart of `real` at diffusion step `step`.
pub fn gen_fake(
    real: &VideoSample,
    step: u32,
    truth: AnswerLabel,
    cfg: &DatagenConfig,
    rng: &mut Stream,
) -> Result<VideoSample> {
    let amp = cfg.amplitude(step)?;
    let last = real.frames.len().saturating_sub(1);
    let mut frames = Vec::with_capacity(real.frames.len());
    for t in 0..real.frames.len() {
        if t == 0 {
            frames.push(real.frames[0].clone());
            continue;
        }
        let pos = (t as f64 + rng.gen_range(-0.3..0.3)).clamp(0.0, last as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(last);
        let mut frame = lerp(&real.frames[lo], &real.frames[hi], pos - lo as f64);
        for v in frame.iter_mut() {
            *v += amp * gaussian(rng);
        }
        frames.push(frame);
    }
    Ok(VideoSample {
        id: format!("{}-fake-{step}", real.id),
        pair_id: real.id.clone(),
        truth,
        split: real.split,
        meta: real.meta,
        frames,
        artifact: None,
    })
}

/// Nearest-index temporal resampling to the configured frame count, plus the
/// standardized fps and resolution.
pub fn standardize_metadata(sample: &VideoSample, cfg: &DatagenConfig) -> Result<VideoSample> {
    let n_in = sample.frames.len();
    if n_in == 0 {
        return Err(Error::EmptyVideo);
    }
    let n_out = cfg.frame_count;
    let frames = (0..n_out).map(|i| sample.frames[i * n_in / n_out].clone()).collect();
    Ok(VideoSample {
        frames,
        meta: cfg.meta(),
        ..sample.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: DatagenConfig,
    pub samples: Vec<VideoSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: DatagenConfig,
    counts: HashMap<String, usize>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_jsonl(&dir.join(SAMPLES_FILE), &self.samples)?;
        let pairs = build_preference_pairs(&self.samples)?;
        write_jsonl(&dir.join(PREFERENCES_FILE), &pairs)?;
        let mut counts = HashMap::new();
        for s in &self.samples {
            let key = format!("{:?}", s.split).to_lowercase();
            *counts.entry(key).or_insert(0) += 1;
        }
        counts.insert("preference_pairs".into(), pairs.len());
        let manifest = Manifest {
            config: self.config.clone(),
            counts,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let samples: Vec<VideoSample> = read_jsonl(&dir.join(SAMPLES_FILE))?;
        for s in &samples {
            s.validate()?;
        }
        Ok(Corpus {
            config: manifest.config,
            samples,
        })
    }
}

/// Generates the full corpus. Pairs are assigned to splits as units so a
/// fake never lands in a different split than its real counterpart.
pub fn build_corpus(cfg: &DatagenConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..cfg.n_pairs).collect();
    order.shuffle(&mut stream(cfg.seed, &[u64::MAX]));
    let n_test = (cfg.n_pairs as f64 * cfg.test_frac).round() as usize;
    let mut is_test = vec![false; cfg.n_pairs];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }

    let steps: Vec<u32> = if cfg.quality_mode {
        cfg.space.step_grid.clone()
    } else {
        vec![BINARY_FAKE_STEP]
    };
    let mut samples = Vec::with_capacity(cfg.n_pairs * (1 + steps.len()));
    for (i, test) in is_test.iter().enumerate() {
        let mut real = gen_real(&format!("real-{i:05}"), cfg, &mut stream(cfg.seed, &[i as u64]));
        real.split = if *test { Split::Test } else { Split::Train };
        let mut fakes = Vec::with_capacity(steps.len());
        for &step in &steps {
            // Binary corpora carry no step information in their labels.
            let truth = if cfg.quality_mode {
                AnswerLabel::fake_at(step)
            } else {
                AnswerLabel::FAKE
            };
            let mut rng = stream(cfg.seed, &[i as u64, u64::from(step)]);
            fakes.push(gen_fake(&real, step, truth, cfg, &mut rng)?);
        }
        samples.push(real);
        samples.extend(fakes);
    }
    Ok(Corpus {
        config: cfg.clone(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub answer: AnswerLabel,
    pub transcript: String,
}

impl Annotation {
    pub fn canonical(answer: AnswerLabel) -> Self {
        Annotation {
            answer,
            transcript: format!("<answer>{answer}</answer>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub input_id: String,
    pub preferred: Annotation,
    pub dispreferred: Annotation,
}

/// Preference pairs built by swapping the annotations of paired videos: a
/// real video prefers its own annotation over its fake's, and each fake
/// prefers its own over the real one's. Manipulated samples are skipped.
pub fn build_preference_pairs(samples: &[VideoSample]) -> Result<Vec<PreferencePair>> {
    let originals: Vec<&VideoSample> = samples.iter().filter(|s| s.artifact.is_none()).collect();
    let by_id: HashMap<&str, &VideoSample> = originals.iter().map(|s| (s.id.as_str(), *s)).collect();
    let mut fakes_of: HashMap<&str, Vec<&VideoSample>> = HashMap::new();
    for s in originals.iter().filter(|s| s.truth.is_fake()) {
        let real = by_id
            .get(s.pair_id.as_str())
            .filter(|r| r.truth.is_real())
            .ok_or_else(|| Error::UnpairedSample(s.id.clone()))?;
        fakes_of.entry(real.id.as_str()).or_default().push(s);
    }
    let mut pairs = Vec::new();
    for s in &originals {
        if s.truth.is_real() {
            let fakes = fakes_of
                .get(s.id.as_str())
                .ok_or_else(|| Error::UnpairedSample(s.id.clone()))?;
            for fake in fakes {
                pairs.push(PreferencePair {
                    input_id: s.id.clone(),
                    preferred: Annotation::canonical(s.truth),
                    dispreferred: Annotation::canonical(fake.truth),
                });
            }
        } else {
            let real = by_id[s.pair_id.as_str()];
            pairs.push(PreferencePair {
                input_id: s.id.clone(),
                preferred: Annotation::canonical(s.truth),
                dispreferred: Annotation::canonical(real.truth),
            });
        }
    }
    Ok(pairs)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads JSON lines, skipping blank lines. Errors carry 1-based line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
