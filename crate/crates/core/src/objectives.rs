//! Training objectives over response log-probabilities.
//!
//! Each loss returns its value together with the derivative of the loss with
//! respect to every log-probability it consumed. Reference log-probabilities
//! and advantages are constants; the trainer chains these derivatives through
//! the policy's `grad_logprob`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub beta_dpo: f64,
    pub beta_kl: f64,
    pub clip_eps: f64,
    pub sigma_floor: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            beta_dpo: 0.1,
            beta_kl: 0.04,
            clip_eps: 0.2,
            sigma_floor: 1e-8,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return Err(Error::Config("beta_kl must be finite and >= 0".into()));
        }
        if !(self.beta_dpo >= 0.0 && self.beta_dpo.is_finite()) {
            return Err(Error::Config("beta_dpo must be finite and >= 0".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

/// A loss value and `d loss / d logprob` for each consumed log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Negative mean log-likelihood of the target responses.
pub fn sft_loss(logprobs: &[f64]) -> Result<LossGrad> {
    if logprobs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = logprobs.len() as f64;
    let loss = -logprobs.iter().sum::<f64>() / n;
    Ok(LossGrad {
        loss,
        grad: vec![-1.0 / n; logprobs.len()],
    })
}

/// Log-probabilities of one preference pair under the trained and the
/// reference policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceLogprobs {
    pub chosen: f64,
    pub rejected: f64,
    pub chosen_ref: f64,
    pub rejected_ref: f64,
}

impl PreferenceLogprobs {
    /// `beta * [(chosen - chosen_ref) - (rejected - rejected_ref)]`, the
    /// implicit reward margin.
    pub fn margin(&self, beta: f64) -> f64 {
        beta * ((self.chosen - self.chosen_ref) - (self.rejected - self.rejected_ref))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoLoss {
    pub loss: f64,
    pub mean_margin: f64,
    /// `d loss / d chosen` per pair.
    pub grad_chosen: Vec<f64>,
    /// `d loss / d rejected` per pair.
    pub grad_rejected: Vec<f64>,
}

/// `-log σ(z)` computed without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Batched DPO loss, averaged over pairs.
pub fn dpo_loss(pairs: &[PreferenceLogprobs], beta: f64) -> Result<DpoLoss> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut margin_sum = 0.0;
    let mut grad_chosen = Vec::with_capacity(pairs.len());
    let mut grad_rejected = Vec::with_capacity(pairs.len());
    for p in pairs {
        let z = p.margin(beta);
        loss += neg_log_sigmoid(z);
        margin_sum += z;
        // d/dz -log σ(z) = -σ(-z)
        let dz = -sigmoid(-z) / n;
        grad_chosen.push(dz * beta);
        grad_rejected.push(-dz * beta);
    }
    Ok(DpoLoss {
        loss: loss / n,
        mean_margin: margin_sum / n,
        grad_chosen,
        grad_rejected,
    })
}

/// Within-group standardization `(r - mean) / std` with the population
/// standard deviation. Groups whose std falls below `sigma_floor` carry no
/// signal and get all-zero advantages.
pub fn group_advantages(rewards: &[f64], sigma_floor: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < sigma_floor {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoLoss {
    pub loss: f64,
    /// `d loss / d lp_theta[i]`.
    pub grad: Vec<f64>,
    /// `d loss / d kl`, i.e. `beta_kl`.
    pub grad_kl: f64,
    /// Number of responses whose clipped branch was active.
    pub clipped: usize,
}

/// Clipped group surrogate with a KL penalty, negated into a loss:
/// `-[(1/G) Σ min(ρ_i A_i, clip(ρ_i, 1-ε, 1+ε) A_i) - β kl]` where
/// `ρ_i = exp(lp_theta_i - lp_ref_i)`.
pub fn grpo_objective(
    lp_theta: &[f64],
    lp_ref: &[f64],
    advantages: &[f64],
    kl: f64,
    cfg: &ObjectiveConfig,
) -> Result<GrpoLoss> {
    if lp_theta.len() != lp_ref.len() {
        return Err(Error::LengthMismatch(lp_theta.len(), lp_ref.len()));
    }
    if lp_theta.len() != advantages.len() {
        return Err(Error::LengthMismatch(lp_theta.len(), advantages.len()));
    }
    if lp_theta.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let g = lp_theta.len() as f64;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let mut surrogate = 0.0;
    let mut grad = Vec::with_capacity(lp_theta.len());
    let mut clipped = 0;
    for ((&lp, &lr), &a) in lp_theta.iter().zip(lp_ref).zip(advantages) {
        let ratio = (lp - lr).exp();
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(lo, hi) * a;
        if unclipped <= clipped_term {
            surrogate += unclipped;
            // d(ratio)/d(lp) = ratio
            grad.push(-unclipped / g);
        } else {
            surrogate += clipped_term;
            grad.push(0.0);
            clipped += 1;
        }
    }
    Ok(GrpoLoss {
        loss: -(surrogate / g - cfg.beta_kl * kl),
        grad,
        grad_kl: cfg.beta_kl,
        clipped,
    })
}

const SUM_TOL: f64 = 1e-9;

/// `KL(p ‖ q)` for two distributions over the same enumerable space.
pub fn kl_exact(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL || d.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::SupportMismatch(format!(
                "{name} is not a distribution (sum {sum})"
            )));
        }
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportMismatch("q lacks support where p > 0".into()));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Mean of `exp(d) - d - 1` with `d = lp_ref - lp_theta`, over samples drawn
/// from the trained policy. Each term is nonnegative.
pub fn kl_sampled(lp_theta: &[f64], lp_ref: &[f64]) -> Result<f64> {
    if lp_theta.len() != lp_ref.len() {
        return Err(Error::LengthMismatch(lp_theta.len(), lp_ref.len()));
    }
    if lp_theta.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = lp_theta
        .iter()
        .zip(lp_ref)
        .map(|(&t, &r)| {
            let d = r - t;
            // expm1 keeps the term accurate (and nonnegative) near d = 0.
            (d.exp_m1() - d).max(0.0)
        })
        .sum();
    Ok(sum / lp_theta.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn sft_examples() {
        let l = sft_loss(&[-0.5, -1.5]).unwrap();
        assert_eq!(l.loss, 1.0);
        assert_eq!(l.grad, vec![-0.5, -0.5]);
        assert_eq!(sft_loss(&[0.0]).unwrap().loss, 0.0);
        assert!(matches!(sft_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let p = PreferenceLogprobs {
            chosen: -1.2,
            rejected: -0.7,
            chosen_ref: -1.2,
            rejected_ref: -0.7,
        };
        let l = dpo_loss(&[p, p], 0.1).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.mean_margin, 0.0);
    }

    #[test]
    fn dpo_large_beta_limit() {
        let p = PreferenceLogprobs {
            chosen: -0.1,
            rejected: -3.0,
            chosen_ref: -1.0,
            rejected_ref: -1.0,
        };
        let l = dpo_loss(&[p], 1e4).unwrap();
        assert!(l.loss < 1e-12);
        let l = dpo_loss(
            &[PreferenceLogprobs {
                chosen: -3.0,
                rejected: -0.1,
                ..p
            }],
            1e4,
        )
        .unwrap();
        assert!(l.loss.is_finite() && l.loss > 1e3);
    }

    #[test]
    fn dpo_zero_beta_has_zero_gradient() {
        let p = PreferenceLogprobs {
            chosen: -0.1,
            rejected: -3.0,
            chosen_ref: -1.0,
            rejected_ref: -1.0,
        };
        let l = dpo_loss(&[p], 0.0).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(l.grad_chosen.iter().chain(&l.grad_rejected).all(|&g| g == 0.0));
    }

    #[test]
    fn dpo_grad_matches_finite_differences() {
        let mut rng = stream(21, &[]);
        for _ in 0..100 {
            let mut p = PreferenceLogprobs {
                chosen: -rng.gen_range(0.01..4.0),
                rejected: -rng.gen_range(0.01..4.0),
                chosen_ref: -rng.gen_range(0.01..4.0),
                rejected_ref: -rng.gen_range(0.01..4.0),
            };
            let beta = rng.gen_range(0.05..2.0);
            let l = dpo_loss(&[p], beta).unwrap();
            let h = 1e-6;
            let f = |p: PreferenceLogprobs| dpo_loss(&[p], beta).unwrap().loss;
            let base = p;
            p.chosen += h;
            let up = f(p);
            p.chosen -= 2.0 * h;
            let fd = (up - f(p)) / (2.0 * h);
            assert!((fd - l.grad_chosen[0]).abs() <= 1e-7 * fd.abs().max(1e-3));
            let mut p = base;
            p.rejected += h;
            let up = f(p);
            p.rejected -= 2.0 * h;
            let fd = (up - f(p)) / (2.0 * h);
            assert!((fd - l.grad_rejected[0]).abs() <= 1e-7 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(
            group_advantages(&[1.5, 1.5, 0.0, 0.0], 1e-8),
            vec![1.0, 1.0, -1.0, -1.0]
        );
        assert_eq!(group_advantages(&[1.0; 4], 1e-8), vec![0.0; 4]);
    }

    #[test]
    fn clip_arithmetic() {
        let cfg = ObjectiveConfig::default();
        let l = grpo_objective(&[1.5f64.ln()], &[0.0], &[1.0], 0.0, &cfg).unwrap();
        assert!((l.loss + 1.2).abs() < 1e-12);
        assert_eq!(l.grad, vec![0.0]);
        assert_eq!(l.clipped, 1);
        // Negative advantage below the lower clip: clipped as well.
        let l = grpo_objective(&[0.5f64.ln()], &[0.0], &[-1.0], 0.0, &cfg).unwrap();
        assert!((l.loss - 0.8).abs() < 1e-12);
        assert_eq!(l.grad, vec![0.0]);
        // Negative advantage above the upper clip keeps its gradient.
        let l = grpo_objective(&[1.5f64.ln()], &[0.0], &[-1.0], 0.0, &cfg).unwrap();
        assert!((l.loss - 1.5).abs() < 1e-12);
        assert!((l.grad[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_zero_loss() {
        let l = grpo_objective(
            &[-1.0, -2.0],
            &[-1.5, -1.0],
            &[0.0, 0.0],
            0.0,
            &ObjectiveConfig::default(),
        )
        .unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grpo_length_checks() {
        let cfg = ObjectiveConfig::default();
        assert!(matches!(
            grpo_objective(&[-1.0], &[-1.0, -1.0], &[0.0], 0.0, &cfg),
            Err(Error::LengthMismatch(1, 2))
        ));
        assert!(matches!(
            grpo_objective(&[-1.0], &[-1.0], &[0.0, 1.0], 0.0, &cfg),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn unclipped_gradient_is_ratio_times_advantage() {
        let cfg = ObjectiveConfig {
            beta_kl: 0.0,
            ..Default::default()
        };
        let lp = [-1.0, -2.0, -0.5];
        let lr = [-1.05, -1.9, -0.52];
        let adv = [0.7, -1.3, 0.2];
        let l = grpo_objective(&lp, &lr, &adv, 0.3, &cfg).unwrap();
        for i in 0..3 {
            let ratio = (lp[i] - lr[i]).exp();
            assert!((l.grad[i] + ratio * adv[i] / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_exact(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((kl_exact(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            kl_exact(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::SupportMismatch(_))
        ));
        assert!(matches!(
            kl_exact(&[0.5, 0.6], &[0.5, 0.5]),
            Err(Error::SupportMismatch(_))
        ));
        assert_eq!(kl_sampled(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), 0.0);
        assert!(matches!(kl_sampled(&[-1.0], &[]), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn gibbs_inequality_on_random_pairs() {
        let mut rng = stream(5, &[]);
        for _ in 0..1000 {
            let k = rng.gen_range(2..10);
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.001..1.0)).collect();
            let mut q: Vec<f64> = (0..k).map(|_| rng.gen_range(0.001..1.0)).collect();
            let sp: f64 = p.iter().sum();
            let sq: f64 = q.iter().sum();
            p.iter_mut().for_each(|x| *x /= sp);
            q.iter_mut().for_each(|x| *x /= sq);
            assert!(kl_exact(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn sampled_kl_converges_to_exact() {
        use rand::distributions::{Distribution, WeightedIndex};
        let p = [0.6, 0.3, 0.1];
        let q = [0.3, 0.3, 0.4];
        let exact = kl_exact(&p, &q).unwrap();
        let dist = WeightedIndex::new(p).unwrap();
        let mut rng = stream(77, &[]);
        let n = 100_000;
        let draws: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let lp: Vec<f64> = draws.iter().map(|&i| p[i].ln()).collect();
        let lr: Vec<f64> = draws.iter().map(|&i| q[i].ln()).collect();
        let est = kl_sampled(&lp, &lr).unwrap();
        let terms: Vec<f64> = lp.iter().zip(&lr).map(|(t, r)| (r - t).exp() - (r - t) - 1.0).collect();
        let var = terms.iter().map(|t| (t - est).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((est - exact).abs() < 2.0 * se, "est {est} exact {exact} se {se}");
    }

    proptest! {
        #[test]
        fn advantages_shift_and_scale_invariant(
            rewards in prop::collection::vec(-5.0f64..5.0, 2..16),
            shift in -10.0f64..10.0,
            scale in 0.1f64..10.0,
        ) {
            let base = group_advantages(&rewards, 1e-8);
            let moved: Vec<f64> = rewards.iter().map(|r| r * scale + shift).collect();
            let other = group_advantages(&moved, 1e-8);
            let spread = rewards.iter().cloned().fold(f64::MIN, f64::max) - rewards.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            for (a, b) in base.iter().zip(&other) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn grpo_permutation_invariant(
            rows in prop::collection::vec((-4.0f64..0.0, -4.0f64..0.0, -2.0f64..2.0), 1..10),
            kl in 0.0f64..1.0,
        ) {
            let cfg = ObjectiveConfig::default();
            let split = |rows: &[(f64, f64, f64)]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                (rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
            };
            let (a, b, c) = split(&rows);
            let l1 = grpo_objective(&a, &b, &c, kl, &cfg).unwrap().loss;
            let mut rev = rows.clone();
            rev.reverse();
            let (a, b, c) = split(&rev);
            let l2 = grpo_objective(&a, &b, &c, kl, &cfg).unwrap().loss;
            prop_assert!((l1 - l2).abs() < 1e-9 * l1.abs().max(1.0));
            prop_assert!(l1.is_finite());
        }

        #[test]
        fn sampled_kl_terms_nonnegative(lp in -30.0f64..0.0, lr in -30.0f64..0.0) {
            prop_assert!(kl_sampled(&[lp], &[lr]).unwrap() >= 0.0);
        }

        #[test]
        fn dpo_is_finite(a in -50.0f64..0.0, b in -50.0f64..0.0, c in -50.0f64..0.0, d in -50.0f64..0.0, beta in 0.0f64..100.0) {
            let l = dpo_loss(&[PreferenceLogprobs { chosen: a, rejected: b, chosen_ref: c, rejected_ref: d }], beta).unwrap();
            prop_assert!(l.loss.is_finite() && l.loss >= 0.0);
        }
    }
}
