//! Rule-based rewards: the binary detection reward, the temporal-artifact
//! bonus, quality-graded partial credit and the response-length bonus.

use serde::{Deserialize, Serialize};

use crate::answer::{is_binary_correct, progress, AnswerLabel, AnswerMode, AnswerSpace};
use crate::error::{Error, Result};
use crate::response::{Response, RolloutGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Artifact bonus when the unmanipulated video is real.
    pub alpha1: f64,
    /// Artifact bonus when the unmanipulated video is fake.
    pub alpha2: f64,
    /// Gate on the manipulated group's fake rate; strict `p̃ > mu`.
    pub mu: f64,
    /// Exact-match reward.
    pub delta: f64,
    /// Length bonus.
    pub omega: f64,
    pub l_min: u32,
    pub l_max: u32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha1: 0.5,
            alpha2: 0.3,
            mu: 0.8,
            delta: 1.0,
            omega: 0.1,
            l_min: 320,
            l_max: 512,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > self.alpha2 && self.alpha2 > 0.0) {
            return Err(Error::Config("rewards need alpha1 > alpha2 > 0".into()));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config("mu must lie in (0, 1)".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config("omega must be finite and >= 0".into()));
        }
        if self.l_min > self.l_max {
            return Err(Error::Config("l_min must not exceed l_max".into()));
        }
        Ok(())
    }
}

/// 1 for a correct real/fake call, 0 otherwise.
pub fn grpo_reward(response: &Response, truth: &AnswerLabel) -> f64 {
    if is_binary_correct(&response.answer, truth) {
        1.0
    } else {
        0.0
    }
}

/// Fraction of manipulated responses that answered fake.
pub fn manipulated_fake_rate(group: &RolloutGroup) -> Result<f64> {
    let manipulated = group
        .manipulated_responses
        .as_deref()
        .filter(|m| !m.is_empty())
        .ok_or_else(|| Error::MissingManipulatedGroup(group.input_id.clone()))?;
    let fakes = manipulated.iter().filter(|r| r.answer.is_fake()).count();
    Ok(fakes as f64 / manipulated.len() as f64)
}

/// Rewards for the original responses of a group with a manipulated twin.
///
/// One fake rate `p̃` is computed per group; each correct original response
/// earns `alpha1` (real source) or `alpha2` (fake source) on top of its base
/// reward when `p̃ > mu`.
pub fn ta_rewards(group: &RolloutGroup, cfg: &RewardConfig) -> Result<Vec<f64>> {
    let p_tilde = manipulated_fake_rate(group)?;
    let bonus = if group.truth.is_real() { cfg.alpha1 } else { cfg.alpha2 };
    let gate = p_tilde > cfg.mu;
    Ok(group
        .responses
        .iter()
        .map(|r| {
            let base = grpo_reward(r, &group.truth);
            if gate && base == 1.0 {
                base + bonus
            } else {
                base
            }
        })
        .collect())
}

fn check_step(label: &AnswerLabel, space: &AnswerSpace) -> Result<()> {
    match label.step() {
        Some(s) if !space.contains_step(s) => Err(Error::UnknownStep(s)),
        _ => Ok(()),
    }
}

/// Quality-graded reward with partial credit for near-miss diffusion steps.
pub fn q_reward(answer: &AnswerLabel, truth: &AnswerLabel, space: &AnswerSpace, cfg: &RewardConfig) -> Result<f64> {
    check_step(answer, space)?;
    check_step(truth, space)?;
    if !is_binary_correct(answer, truth) {
        return Ok(0.0);
    }
    if answer.is_real() {
        return Ok(cfg.delta);
    }
    let s_answer = progress(answer, space)?;
    let s_truth = progress(truth, space)?;
    if answer == truth {
        return Ok(cfg.delta);
    }
    Ok(cfg.delta * (1.0 - (s_answer - s_truth).abs()))
}

/// Quality-graded reward without partial credit: `delta` for an exact label
/// match, 0 otherwise.
pub fn exact_match_reward(
    answer: &AnswerLabel,
    truth: &AnswerLabel,
    space: &AnswerSpace,
    cfg: &RewardConfig,
) -> Result<f64> {
    check_step(answer, space)?;
    check_step(truth, space)?;
    let stepless = |l: &AnswerLabel| l.is_fake() && l.step().is_none();
    if stepless(answer) || stepless(truth) {
        return Err(Error::MissingStep);
    }
    Ok(if answer == truth { cfg.delta } else { 0.0 })
}

/// Adds `omega` to a correct answer whose length lies in `[l_min, l_max]`.
pub fn length_bonus(base: f64, correct: bool, length: u32, cfg: &RewardConfig) -> f64 {
    if correct && (cfg.l_min..=cfg.l_max).contains(&length) {
        base + cfg.omega
    } else {
        base
    }
}

/// `q_reward` evaluated on every (answer, truth) cell of the quality space.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub labels: Vec<AnswerLabel>,
    /// `values[answer][truth]`.
    pub values: Vec<Vec<f64>>,
}

impl RewardTable {
    pub fn get(&self, answer: &AnswerLabel, truth: &AnswerLabel) -> Option<f64> {
        let a = self.labels.iter().position(|l| l == answer)?;
        let t = self.labels.iter().position(|l| l == truth)?;
        Some(self.values[a][t])
    }

    /// Rows are answers, columns are truths; cells carry 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("answer\\truth");
        for l in &self.labels {
            out.push(',');
            out.push_str(&l.to_string());
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(&label.to_string());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn reward_table(space: &AnswerSpace, cfg: &RewardConfig) -> Result<RewardTable> {
    space.validate()?;
    let labels = space.classes(AnswerMode::Quality);
    let values = labels
        .iter()
        .map(|a| labels.iter().map(|t| q_reward(a, t, space, cfg)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(RewardTable { labels, values })
}
