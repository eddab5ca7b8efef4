//! Two-stage fine-tuning: supervised initialization, then DPO or one of the
//! group-relative RL variants against a reference frozen at the start of the
//! run.
//!
//! Every random draw in step `k` comes from streams keyed by `(seed, k, ..)`,
//! so a run is a pure function of its config, data and initial parameters,
//! and resuming from a checkpoint replays the uninterrupted run bit for bit.

mod checkpoint;
mod optimizer;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    decode_floats, encode_floats, Checkpoint, OptimizerBlock, ParamBlock, RngState, CHECKPOINT_VERSION,
};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState};

use crate::answer::{is_binary_correct, AnswerLabel, AnswerMode, AnswerSpace};
use crate::artifacts::{inject, ArtifactConfig};
use crate::datagen::{build_preference_pairs, Corpus, PreferencePair};
use crate::error::{Error, Result};
use crate::objectives::{dpo_loss, group_advantages, grpo_objective, sft_loss, ObjectiveConfig, PreferenceLogprobs};
use crate::policy::{
    accumulate_grad_kl, accumulate_grad_logprob, featurize, greedy_answer, kl_to, logprob, response_distribution,
    sample_group, snapshot, FeatureVector, PolicyParams, ReferencePolicy, LENGTH_BUCKETS,
};
use crate::response::{LengthBucket, Response, RolloutGroup};
use crate::rewards::{exact_match_reward, grpo_reward, length_bonus, q_reward, ta_rewards, RewardConfig};
use crate::rng::stream;
use crate::sample::{Split, VideoSample};

/// Length bucket used for annotated (SFT and DPO) target responses.
pub const ANNOTATION_BUCKET: LengthBucket = LengthBucket::Mid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sft,
    Dpo,
    Grpo,
    GrpoTa,
    GrpoQ,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sft => "sft",
            Mode::Dpo => "dpo",
            Mode::Grpo => "grpo",
            Mode::GrpoTa => "grpo-ta",
            Mode::GrpoQ => "grpo-q",
        }
    }

    pub fn is_group_rl(self) -> bool {
        matches!(self, Mode::Grpo | Mode::GrpoTa | Mode::GrpoQ)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sft" => Ok(Mode::Sft),
            "dpo" => Ok(Mode::Dpo),
            "grpo" => Ok(Mode::Grpo),
            "grpo-ta" => Ok(Mode::GrpoTa),
            "grpo-q" => Ok(Mode::GrpoQ),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub steps: usize,
    pub batch_inputs: usize,
    /// Responses sampled per input.
    #[serde(rename = "G")]
    pub g: usize,
    /// Responses sampled per manipulated input (GRPO-TA).
    #[serde(rename = "G_prime")]
    pub g_prime: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub reward: RewardConfig,
    pub artifact: ArtifactConfig,
    /// Adds the length bonus in the RL modes.
    pub length_reward_enabled: bool,
    /// GRPO-TA: also update on the manipulated responses, rewarding `fake`.
    pub ta_update_manipulated: bool,
    /// GRPO-Q: partial credit for near-miss steps; exact match only when off.
    pub q_partial_credit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Grpo,
            steps: 2000,
            batch_inputs: 16,
            g: 8,
            g_prime: 4,
            learning_rate: 1e-2,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            objective: ObjectiveConfig::default(),
            reward: RewardConfig::default(),
            artifact: ArtifactConfig::default(),
            length_reward_enabled: true,
            ta_update_manipulated: true,
            q_partial_credit: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.reward.validate()?;
        self.artifact.validate()?;
        if self.batch_inputs == 0 {
            return Err(Error::Config("batch_inputs must be at least 1".into()));
        }
        if self.mode.is_group_rl() && self.g < 2 {
            return Err(Error::Config("G must be at least 2 for group statistics".into()));
        }
        if self.mode == Mode::GrpoTa && self.g_prime == 0 {
            return Err(Error::Config("G_prime must be at least 1 in grpo-ta mode".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Answer head used by `mode` on `corpus`.
pub fn answer_mode_for(mode: Mode, corpus: &Corpus) -> Result<AnswerMode> {
    match mode {
        Mode::GrpoQ if !corpus.config.quality_mode => Err(Error::Config(
            "grpo-q needs a quality-mode corpus with stepped fake labels".into(),
        )),
        Mode::GrpoQ => Ok(AnswerMode::Quality),
        Mode::Grpo | Mode::GrpoTa => Ok(AnswerMode::Binary),
        Mode::Sft | Mode::Dpo if corpus.config.quality_mode => Ok(AnswerMode::Quality),
        Mode::Sft | Mode::Dpo => Ok(AnswerMode::Binary),
    }
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tilde: Option<f64>,
    /// DPO implicit-reward margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

struct Input {
    sample: usize,
    truth: AnswerLabel,
    x: FeatureVector,
}

struct PairInput {
    x: FeatureVector,
    chosen: usize,
    rejected: usize,
}

/// A training run in progress.
pub struct Session {
    cfg: TrainConfig,
    digest: String,
    space: AnswerSpace,
    samples: Vec<VideoSample>,
    inputs: Vec<Input>,
    pairs: Vec<PairInput>,
    params: PolicyParams,
    reference: ReferencePolicy,
    opt: OptimizerState,
    step: usize,
    responses_sampled: usize,
}

impl Session {
    /// Starts a run from `params0`, or from all-zero parameters.
    pub fn new(
        cfg: TrainConfig,
        corpus: &Corpus,
        params0: Option<PolicyParams>,
        pairs: Option<&[PreferencePair]>,
    ) -> Result<Self> {
        cfg.validate()?;
        corpus.config.space.validate()?;
        let mode = answer_mode_for(cfg.mode, corpus)?;
        let space = corpus.config.space.clone();
        let expected = space.classes(mode);
        let params = match params0 {
            Some(p) => {
                p.validate()?;
                if p.labels != expected {
                    return Err(Error::Config(format!(
                        "initial parameters answer {:?} but {} on this corpus needs {:?}",
                        p.labels.iter().map(ToString::to_string).collect::<Vec<_>>(),
                        cfg.mode,
                        expected.iter().map(ToString::to_string).collect::<Vec<_>>()
                    )));
                }
                p
            }
            None => PolicyParams::zeros(&space, mode),
        };

        let samples: Vec<VideoSample> = corpus.split(Split::Train).cloned().collect();
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut inputs = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if cfg.mode == Mode::GrpoQ && s.truth.is_fake() && s.truth.step().is_none() {
                return Err(Error::MissingStep);
            }
            inputs.push(Input {
                sample: i,
                truth: s.truth,
                x: featurize(s)?,
            });
        }

        let pair_inputs = if cfg.mode == Mode::Dpo {
            let built;
            let pairs = match pairs {
                Some(p) => p,
                None => {
                    built = build_preference_pairs(&samples)?;
                    &built
                }
            };
            let by_id: HashMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
            let class = |label: &AnswerLabel| {
                params
                    .class_of(label)
                    .ok_or_else(|| Error::Config(format!("annotation {label} not in policy classes")))
            };
            let mut out = Vec::new();
            for p in pairs {
                if let Some(&i) = by_id.get(p.input_id.as_str()) {
                    out.push(PairInput {
                        x: inputs[i].x,
                        chosen: class(&p.preferred.answer)?,
                        rejected: class(&p.dispreferred.answer)?,
                    });
                }
            }
            if out.is_empty() {
                return Err(Error::EmptyPairs);
            }
            out
        } else {
            Vec::new()
        };

        let n = params.len();
        Ok(Session {
            digest: cfg.digest(),
            reference: snapshot(&params),
            cfg,
            space,
            samples,
            inputs,
            pairs: pair_inputs,
            params,
            opt: OptimizerState::new(n),
            step: 0,
            responses_sampled: 0,
        })
    }

    /// Continues a run from a checkpoint written under the same config.
    pub fn resume(
        cfg: TrainConfig,
        corpus: &Corpus,
        ckpt: &Checkpoint,
        pairs: Option<&[PreferencePair]>,
    ) -> Result<Self> {
        ckpt.check_digest(&cfg.digest())?;
        if ckpt.mode != cfg.mode.as_str() {
            return Err(Error::Config(format!(
                "checkpoint mode {} vs config mode {}",
                ckpt.mode, cfg.mode
            )));
        }
        if ckpt.rng_state.seed != cfg.seed || ckpt.rng_state.next_step != ckpt.step {
            return Err(Error::Config("checkpoint rng state is inconsistent".into()));
        }
        let reference = match &ckpt.reference {
            Some(block) => block.to_params()?,
            None => ckpt.params.to_params()?,
        };
        let mut session = Session::new(cfg, corpus, Some(reference), pairs)?;
        session.params = ckpt.params.to_params()?;
        let n = session.params.len();
        let m = decode_floats(&ckpt.optimizer_state.m)?;
        let v = decode_floats(&ckpt.optimizer_state.v)?;
        if m.len() != n || v.len() != n {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        session.opt = OptimizerState {
            t: ckpt.optimizer_state.t,
            m,
            v,
        };
        session.step = ckpt.step;
        Ok(session)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION.into(),
            mode: self.cfg.mode.as_str().into(),
            step: self.step,
            params: ParamBlock::from_params(&self.params),
            reference: (self.cfg.mode != Mode::Sft).then(|| ParamBlock::from_params(self.reference.params())),
            optimizer_state: OptimizerBlock {
                t: self.opt.t,
                m: encode_floats(&self.opt.m),
                v: encode_floats(&self.opt.v),
            },
            rng_state: RngState {
                seed: self.cfg.seed,
                next_step: self.step,
            },
            config_digest: self.digest.clone(),
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        self.reference.params()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Steps completed so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.steps
    }

    /// Total policy responses sampled by this session.
    pub fn responses_sampled(&self) -> usize {
        self.responses_sampled
    }

    /// Runs until `cfg.steps` steps are complete, reporting each record.
    pub fn run(&mut self, mut on_record: impl FnMut(&LogRecord)) -> Result<Vec<LogRecord>> {
        self.run_until(self.cfg.steps, &mut on_record)
    }

    pub fn run_until(&mut self, until: usize, mut on_record: impl FnMut(&LogRecord)) -> Result<Vec<LogRecord>> {
        let mut log = Vec::new();
        while self.step < until.min(self.cfg.steps) {
            let record = self.step_once()?;
            on_record(&record);
            log.push(record);
        }
        Ok(log)
    }

    /// Runs one optimization step and returns its log record.
    pub fn step_once(&mut self) -> Result<LogRecord> {
        let mut grad = vec![0.0; self.params.len()];
        let mut record = match self.cfg.mode {
            Mode::Sft => self.sft_step(&mut grad)?,
            Mode::Dpo => self.dpo_step(&mut grad)?,
            Mode::Grpo | Mode::GrpoTa | Mode::GrpoQ => self.grpo_step(&mut grad)?,
        };
        let mut flat = self.params.flat();
        self.opt
            .step(&self.cfg.optimizer, self.cfg.learning_rate, &mut flat, &grad);
        self.params.set_flat(&flat)?;
        self.step += 1;
        record.step = self.step;
        Ok(record)
    }

    fn batch(&self, n: usize) -> Vec<usize> {
        if self.cfg.batch_inputs >= n {
            return (0..n).collect();
        }
        let mut rng = stream(self.cfg.seed, &[self.step as u64, 0]);
        index::sample(&mut rng, n, self.cfg.batch_inputs).into_vec()
    }

    fn sft_step(&mut self, grad: &mut [f64]) -> Result<LogRecord> {
        let batch = self.batch(self.inputs.len());
        let mut targets = Vec::with_capacity(batch.len());
        let mut lps = Vec::with_capacity(batch.len());
        let mut correct = 0;
        for &i in &batch {
            let input = &self.inputs[i];
            let class = self
                .params
                .class_of(&input.truth)
                .ok_or_else(|| Error::Config(format!("label {} not in policy classes", input.truth)))?;
            lps.push(logprob(&self.params, &input.x, class, ANNOTATION_BUCKET)?);
            targets.push(class);
            if is_binary_correct(&greedy_answer(&self.params, &input.x), &input.truth) {
                correct += 1;
            }
        }
        let lg = sft_loss(&lps)?;
        for ((&i, &class), g) in batch.iter().zip(&targets).zip(&lg.grad) {
            accumulate_grad_logprob(&self.params, &self.inputs[i].x, class, ANNOTATION_BUCKET, *g, grad)?;
        }
        Ok(LogRecord {
            step: 0,
            loss: lg.loss,
            mean_reward: None,
            kl: None,
            accuracy: correct as f64 / batch.len() as f64,
            p_tilde: None,
            margin: None,
        })
    }

    fn dpo_step(&mut self, grad: &mut [f64]) -> Result<LogRecord> {
        let batch = self.batch(self.pairs.len());
        let reference = self.reference.params();
        let mut terms = Vec::with_capacity(batch.len());
        let mut ordered = 0;
        for &i in &batch {
            let p = &self.pairs[i];
            let t = PreferenceLogprobs {
                chosen: logprob(&self.params, &p.x, p.chosen, ANNOTATION_BUCKET)?,
                rejected: logprob(&self.params, &p.x, p.rejected, ANNOTATION_BUCKET)?,
                chosen_ref: logprob(reference, &p.x, p.chosen, ANNOTATION_BUCKET)?,
                rejected_ref: logprob(reference, &p.x, p.rejected, ANNOTATION_BUCKET)?,
            };
            if t.chosen > t.rejected {
                ordered += 1;
            }
            terms.push(t);
        }
        let l = dpo_loss(&terms, self.cfg.objective.beta_dpo)?;
        for (k, &i) in batch.iter().enumerate() {
            let p = &self.pairs[i];
            accumulate_grad_logprob(&self.params, &p.x, p.chosen, ANNOTATION_BUCKET, l.grad_chosen[k], grad)?;
            accumulate_grad_logprob(
                &self.params,
                &p.x,
                p.rejected,
                ANNOTATION_BUCKET,
                l.grad_rejected[k],
                grad,
            )?;
        }
        Ok(LogRecord {
            step: 0,
            loss: l.loss,
            mean_reward: None,
            kl: None,
            accuracy: ordered as f64 / batch.len() as f64,
            p_tilde: None,
            margin: Some(l.mean_margin),
        })
    }

    fn score(&self, response: &Response, truth: &AnswerLabel) -> Result<f64> {
        let base = match self.cfg.mode {
            Mode::GrpoQ if self.cfg.q_partial_credit => {
                q_reward(&response.answer, truth, &self.space, &self.cfg.reward)?
            }
            Mode::GrpoQ => exact_match_reward(&response.answer, truth, &self.space, &self.cfg.reward)?,
            _ => grpo_reward(response, truth),
        };
        Ok(self.with_length(base, response, truth))
    }

    fn with_length(&self, base: f64, response: &Response, truth: &AnswerLabel) -> f64 {
        if self.cfg.length_reward_enabled {
            let correct = is_binary_correct(&response.answer, truth);
            length_bonus(base, correct, response.length, &self.cfg.reward)
        } else {
            base
        }
    }

    /// Adds `scale * ∇ loss` of one group's clipped surrogate into `grad`;
    /// returns the group loss and its KL.
    fn accumulate_group(
        &self,
        x: &FeatureVector,
        responses: &[Response],
        rewards: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(f64, f64)> {
        let reference = self.reference.params();
        let advantages = group_advantages(rewards, self.cfg.objective.sigma_floor);
        let mut classes = Vec::with_capacity(responses.len());
        let mut lp_theta = Vec::with_capacity(responses.len());
        let mut lp_ref = Vec::with_capacity(responses.len());
        for r in responses {
            let class = self
                .params
                .class_of(&r.answer)
                .ok_or_else(|| Error::ShapeMismatch(format!("answer {} not in policy classes", r.answer)))?;
            classes.push(class);
            lp_theta.push(r.logprob);
            lp_ref.push(logprob(reference, x, class, r.length_bucket)?);
        }
        let kl = kl_to(&self.params, reference, x);
        let obj = grpo_objective(&lp_theta, &lp_ref, &advantages, kl, &self.cfg.objective)?;
        for ((r, &class), g) in responses.iter().zip(&classes).zip(&obj.grad) {
            if *g != 0.0 {
                accumulate_grad_logprob(&self.params, x, class, r.length_bucket, scale * g, grad)?;
            }
        }
        if obj.grad_kl != 0.0 {
            accumulate_grad_kl(&self.params, reference, x, scale * obj.grad_kl, grad);
        }
        Ok((obj.loss, kl))
    }

    fn grpo_step(&mut self, grad: &mut [f64]) -> Result<LogRecord> {
        let batch = self.batch(self.inputs.len());
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut kl_sum = 0.0;
        let mut reward_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        let mut p_tilde_sum = 0.0;
        let mut sampled = 0usize;
        for (slot, &i) in batch.iter().enumerate() {
            let input = &self.inputs[i];
            let mut rng = stream(self.cfg.seed, &[self.step as u64, 1, slot as u64]);
            let responses = sample_group(&self.params, &input.x, self.cfg.g, &mut rng);
            sampled += responses.len();

            let rewards = if self.cfg.mode == Mode::GrpoTa {
                let manipulated = inject(&self.samples[input.sample], &self.cfg.artifact, &mut rng)?;
                let xm = featurize(&manipulated)?;
                let m_responses = sample_group(&self.params, &xm, self.cfg.g_prime, &mut rng);
                sampled += m_responses.len();
                let group = RolloutGroup {
                    input_id: self.samples[input.sample].id.clone(),
                    responses,
                    manipulated_responses: Some(m_responses),
                    truth: input.truth,
                };
                let p_tilde = crate::rewards::manipulated_fake_rate(&group)?;
                p_tilde_sum += p_tilde;
                let base = ta_rewards(&group, &self.cfg.reward)?;
                let rewards: Vec<f64> = group
                    .responses
                    .iter()
                    .zip(base)
                    .map(|(r, b)| self.with_length(b, r, &input.truth))
                    .collect();
                let m_responses = group.manipulated_responses.as_deref().unwrap_or_default();
                if self.cfg.ta_update_manipulated {
                    let m_rewards = m_responses
                        .iter()
                        .map(|r| self.score(r, &AnswerLabel::FAKE))
                        .collect::<Result<Vec<f64>>>()?;
                    let (l, k) = self.accumulate_group(&xm, m_responses, &m_rewards, scale, grad)?;
                    loss += scale * l;
                    kl_sum += k;
                }
                let responses = group.responses;
                let (l, k) = self.accumulate_group(&input.x, &responses, &rewards, scale, grad)?;
                loss += scale * l;
                kl_sum += k;
                correct += responses
                    .iter()
                    .filter(|r| is_binary_correct(&r.answer, &input.truth))
                    .count();
                total += responses.len();
                reward_sum += rewards.iter().sum::<f64>();
                continue;
            } else {
                responses
                    .iter()
                    .map(|r| self.score(r, &input.truth))
                    .collect::<Result<Vec<f64>>>()?
            };
            let (l, k) = self.accumulate_group(&input.x, &responses, &rewards, scale, grad)?;
            loss += scale * l;
            kl_sum += k;
            correct += responses
                .iter()
                .filter(|r| is_binary_correct(&r.answer, &input.truth))
                .count();
            total += responses.len();
            reward_sum += rewards.iter().sum::<f64>();
        }
        self.responses_sampled += sampled;
        Ok(LogRecord {
            step: 0,
            loss,
            mean_reward: Some(reward_sum / total as f64),
            kl: Some(kl_sum * scale),
            accuracy: correct as f64 / total as f64,
            p_tilde: (self.cfg.mode == Mode::GrpoTa).then_some(p_tilde_sum * scale),
            margin: None,
        })
    }
}

/// Output of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub log: Vec<LogRecord>,
}

fn finish(mut session: Session) -> Result<TrainOutcome> {
    let log = session.run(|_| {})?;
    Ok(TrainOutcome {
        params: session.params.clone(),
        reference: session.reference.params().clone(),
        log,
    })
}

fn expect_mode(cfg: &TrainConfig, allowed: &[Mode]) -> Result<()> {
    if !allowed.contains(&cfg.mode) {
        return Err(Error::Config(format!("mode {} not valid here", cfg.mode)));
    }
    Ok(())
}

/// Supervised initialization on the annotated training split.
pub fn train_sft(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_mode(cfg, &[Mode::Sft])?;
    finish(Session::new(cfg.clone(), corpus, None, None)?)
}

pub fn train_dpo(
    params0: PolicyParams,
    pairs: &[PreferencePair],
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    expect_mode(cfg, &[Mode::Dpo])?;
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    finish(Session::new(cfg.clone(), corpus, Some(params0), Some(pairs))?)
}

pub fn train_grpo(params0: Option<PolicyParams>, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    expect_mode(cfg, &[Mode::Grpo, Mode::GrpoTa, Mode::GrpoQ])?;
    finish(Session::new(cfg.clone(), corpus, params0, None)?)
}

/// Gradient of the expected group surrogate loss at one input, computed by
/// enumerating the response space instead of sampling. Advantages are
/// standardized under the policy's own response distribution. Used to check
/// the direction of updates without Monte-Carlo noise.
pub fn expected_grpo_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    x: &FeatureVector,
    reward: impl Fn(&AnswerLabel, LengthBucket) -> f64,
    cfg: &ObjectiveConfig,
) -> Result<Vec<f64>> {
    let probs = response_distribution(params, x);
    let responses: Vec<(usize, LengthBucket)> = (0..params.classes())
        .flat_map(|c| LengthBucket::ALL.into_iter().map(move |b| (c, b)))
        .collect();
    debug_assert_eq!(responses.len(), params.classes() * LENGTH_BUCKETS);
    let rewards: Vec<f64> = responses.iter().map(|(c, b)| reward(&params.labels[*c], *b)).collect();
    let mean: f64 = probs.iter().zip(&rewards).map(|(p, r)| p * r).sum();
    let std = probs
        .iter()
        .zip(&rewards)
        .map(|(p, r)| p * (r - mean).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut grad = vec![0.0; params.len()];
    for (((c, b), p), r) in responses.iter().zip(&probs).zip(&rewards) {
        let adv = if std < cfg.sigma_floor { 0.0 } else { (r - mean) / std };
        let lp = logprob(params, x, *c, *b)?;
        let lr = logprob(reference, x, *c, *b)?;
        let term = grpo_objective(&[lp], &[lr], &[adv], 0.0, cfg)?;
        accumulate_grad_logprob(params, x, *c, *b, p * term.grad[0], &mut grad)?;
    }
    accumulate_grad_kl(params, reference, x, cfg.beta_kl, &mut grad);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_corpus, DatagenConfig};

    fn corpus(quality: bool, n: usize, noise: f64) -> Corpus {
        build_corpus(&DatagenConfig {
            n_pairs: n,
            quality_mode: quality,
            noise_base: noise,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg(mode: Mode, steps: usize) -> TrainConfig {
        TrainConfig {
            mode,
            steps,
            ..Default::default()
        }
    }

    #[test]
    fn mode_strings() {
        for m in [Mode::Sft, Mode::Dpo, Mode::Grpo, Mode::GrpoTa, Mode::GrpoQ] {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("ppo".parse::<Mode>().is_err());
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        assert!(TrainConfig::from_json(r#"{"mode":"grpo","G":8,"G_prime":4}"#).is_ok());
        assert!(TrainConfig::from_json(r#"{"mode":"grpo","bogus":1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"reward":{"alpha9":1}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"G":1}"#).is_err());
    }

    #[test]
    fn digest_tracks_config() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            seed: 1,
            ..Default::default()
        };
        assert_eq!(a.digest(), TrainConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let c = corpus(false, 10, 3.0);
        let out = train_sft(&c, &cfg(Mode::Sft, 0)).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.params, PolicyParams::zeros(&c.config.space, AnswerMode::Binary));
    }

    #[test]
    fn grpo_q_rejects_binary_corpus() {
        let c = corpus(false, 5, 1.0);
        assert!(Session::new(cfg(Mode::GrpoQ, 1), &c, None, None).is_err());
    }

    #[test]
    fn mismatched_initial_params_rejected() {
        let c = corpus(false, 5, 1.0);
        let q = PolicyParams::zeros(&c.config.space, AnswerMode::Quality);
        assert!(Session::new(cfg(Mode::Grpo, 1), &c, Some(q), None).is_err());
    }

    #[test]
    fn group_accounting() {
        let c = corpus(false, 40, 3.0);
        let mut s = Session::new(
            TrainConfig {
                mode: Mode::GrpoTa,
                steps: 3,
                ..Default::default()
            },
            &c,
            None,
            None,
        )
        .unwrap();
        s.run(|_| {}).unwrap();
        assert_eq!(s.responses_sampled(), 3 * 16 * (8 + 4));
        let mut s = Session::new(cfg(Mode::Grpo, 2), &c, None, None).unwrap();
        s.run(|_| {}).unwrap();
        assert_eq!(s.responses_sampled(), 2 * 16 * 8);
    }

    #[test]
    fn reference_stays_frozen() {
        let c = corpus(false, 20, 3.0);
        let mut s = Session::new(cfg(Mode::Grpo, 20), &c, None, None).unwrap();
        let before = s.reference().clone();
        let log = s.run(|_| {}).unwrap();
        assert_eq!(log[0].kl, Some(0.0));
        assert!(log.iter().all(|r| r.kl.unwrap().is_finite()));
        assert_eq!(s.reference(), &before);
        assert_ne!(s.params(), &before);
    }

    #[test]
    fn ta_logs_p_tilde() {
        let c = corpus(false, 20, 3.0);
        let out = train_grpo(
            None,
            &c,
            &TrainConfig {
                mode: Mode::GrpoTa,
                steps: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out
            .log
            .iter()
            .all(|r| r.p_tilde.is_some_and(|p| (0.0..=1.0).contains(&p))));
    }

    #[test]
    fn dpo_starts_at_ln2_and_zero_beta_freezes() {
        let c = corpus(false, 20, 3.0);
        let init = PolicyParams::zeros(&c.config.space, AnswerMode::Binary);
        let pairs = build_preference_pairs(&c.samples).unwrap();
        let out = train_dpo(init.clone(), &pairs, &c, &cfg(Mode::Dpo, 5)).unwrap();
        assert!((out.log[0].loss - std::f64::consts::LN_2).abs() < 1e-12);
        let mut frozen = cfg(Mode::Dpo, 5);
        frozen.objective.beta_dpo = 0.0;
        let out = train_dpo(init.clone(), &pairs, &c, &frozen).unwrap();
        assert_eq!(out.params, init);
        assert!(matches!(
            train_dpo(init, &[], &c, &cfg(Mode::Dpo, 1)),
            Err(Error::EmptyPairs)
        ));
    }
}
