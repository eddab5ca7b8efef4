//! A linear-softmax policy over temporal summary features.
//!
//! A response is a pair (answer class, length bucket) drawn from two
//! independent softmax heads: the answer head reads the feature vector, the
//! length head is a free logit vector. The response space is small enough to
//! enumerate, so probabilities, gradients and KL divergences are all exact.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::answer::{AnswerLabel, AnswerMode, AnswerSpace};
use crate::error::{Error, Result};
use crate::response::{LengthBucket, Response};
use crate::sample::{Frame, VideoSample};

pub const FEATURE_DIM: usize = 6;
pub const LENGTH_BUCKETS: usize = 3;

/// Summary statistics of a frame sequence, in this order: mean adjacent-frame
/// distance, variance of that distance, lag-2 autocorrelation of frame deltas,
/// high-frequency energy, segment-duplication score, reversal-symmetry score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
    pub fn mean_adjacent_distance(&self) -> f64 {
        self.0[0]
    }
    pub fn duplication_score(&self) -> f64 {
        self.0[4]
    }
    pub fn reversal_score(&self) -> f64 {
        self.0[5]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Per-channel RMS of a difference vector.
fn rms(v: &[f64]) -> f64 {
    (dot(v, v) / v.len().max(1) as f64).sqrt()
}

pub fn featurize(sample: &VideoSample) -> Result<FeatureVector> {
    featurize_frames(&sample.frames)
}

pub fn featurize_frames(frames: &[Frame]) -> Result<FeatureVector> {
    let t = frames.len();
    if t < 3 {
        return Err(Error::TooFewFrames(t));
    }
    let dim = frames[0].len();
    if dim == 0 || frames.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("frames must share a nonzero dimension".into()));
    }
    let deltas: Vec<Vec<f64>> = frames.windows(2).map(|w| sub(&w[1], &w[0])).collect();
    let dists: Vec<f64> = deltas.iter().map(|d| rms(d)).collect();
    let n = dists.len() as f64;
    let mean_adj = dists.iter().sum::<f64>() / n;
    let var_adj = dists.iter().map(|d| (d - mean_adj).powi(2)).sum::<f64>() / n;

    let energy: f64 = deltas.iter().map(|d| dot(d, d)).sum();
    let ratio = |num: f64| if energy > 0.0 { num / energy } else { 0.0 };

    let lag2 = ratio(deltas.iter().zip(deltas.iter().skip(2)).map(|(a, b)| dot(a, b)).sum());
    let reversal = ratio(deltas.iter().zip(deltas.iter().rev()).map(|(a, b)| dot(a, b)).sum());

    let hf = {
        let second: f64 = deltas
            .windows(2)
            .map(|w| {
                let dd = sub(&w[1], &w[0]);
                dot(&dd, &dd) / dim as f64
            })
            .sum();
        (second / (deltas.len() - 1) as f64).sqrt()
    };

    // Similarity is measured in units of the video's own adjacent-frame motion
    // so the score is scale free; lag 1 is excluded since neighbors are always
    // close in a smooth video.
    let duplication = if mean_adj == 0.0 {
        1.0
    } else {
        (2..=t / 2)
            .map(|lag| {
                let pairs = t - lag;
                frames[..pairs]
                    .iter()
                    .zip(&frames[lag..])
                    .map(|(a, b)| (-rms(&sub(a, b)) / mean_adj).exp())
                    .sum::<f64>()
                    / pairs as f64
            })
            .fold(0.0, f64::max)
    };

    let fv = [mean_adj, var_adj, lag2, hf, duplication, reversal];
    if fv.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("non-finite feature".into()));
    }
    Ok(FeatureVector(fv))
}

/// Policy parameters. The flat layout is `weights` (row-major, one row per
/// answer class), then `bias`, then `length_logits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub labels: Vec<AnswerLabel>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub length_logits: [f64; LENGTH_BUCKETS],
}

impl PolicyParams {
    /// All-zero parameters: uniform over the response space.
    pub fn zeros(space: &AnswerSpace, mode: AnswerMode) -> Self {
        let labels = space.classes(mode);
        let k = labels.len();
        PolicyParams {
            labels,
            weights: vec![0.0; k * FEATURE_DIM],
            bias: vec![0.0; k],
            length_logits: [0.0; LENGTH_BUCKETS],
        }
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len() + LENGTH_BUCKETS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.labels.len();
        if k < 2 || self.weights.len() != k * FEATURE_DIM || self.bias.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} classes with {} weights and {} biases",
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
        out.extend_from_slice(&self.length_logits);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let (w, rest) = flat.split_at(self.weights.len());
        let (b, l) = rest.split_at(self.bias.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        self.length_logits.copy_from_slice(l);
        Ok(())
    }

    pub fn class_of(&self, label: &AnswerLabel) -> Option<usize> {
        if let Some(i) = self.labels.iter().position(|l| l == label) {
            return Some(i);
        }
        // A binary head answers a stepped fake with its plain fake class.
        if label.is_fake() && self.labels.contains(&AnswerLabel::FAKE) {
            return self.labels.iter().position(|l| *l == AnswerLabel::FAKE);
        }
        None
    }

    fn offset_bias(&self) -> usize {
        self.weights.len()
    }

    fn offset_length(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn answer_logits(params: &PolicyParams, x: &FeatureVector) -> Vec<f64> {
    params
        .weights
        .chunks_exact(FEATURE_DIM)
        .zip(&params.bias)
        .map(|(row, b)| dot(row, &x.0) + b)
        .collect()
}

pub fn answer_log_probs(params: &PolicyParams, x: &FeatureVector) -> Vec<f64> {
    log_softmax(&answer_logits(params, x))
}

pub fn length_log_probs(params: &PolicyParams) -> Vec<f64> {
    log_softmax(&params.length_logits)
}

fn check_class(params: &PolicyParams, class: usize) -> Result<()> {
    if class >= params.classes() {
        return Err(Error::ShapeMismatch(format!(
            "class {class} outside {} answer classes",
            params.classes()
        )));
    }
    Ok(())
}

/// `log p(answer, bucket | x)`.
pub fn logprob(params: &PolicyParams, x: &FeatureVector, class: usize, bucket: LengthBucket) -> Result<f64> {
    check_class(params, class)?;
    Ok(answer_log_probs(params, x)[class] + length_log_probs(params)[bucket.index()])
}

pub fn response_logprob(params: &PolicyParams, x: &FeatureVector, response: &Response) -> Result<f64> {
    let class = params
        .class_of(&response.answer)
        .ok_or_else(|| Error::ShapeMismatch(format!("answer {} not in policy classes", response.answer)))?;
    logprob(params, x, class, response.length_bucket)
}

/// Exact gradient of `logprob` in the flat parameter layout.
pub fn grad_logprob(params: &PolicyParams, x: &FeatureVector, class: usize, bucket: LengthBucket) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    accumulate_grad_logprob(params, x, class, bucket, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale * grad_logprob(..)` into `out`.
pub fn accumulate_grad_logprob(
    params: &PolicyParams,
    x: &FeatureVector,
    class: usize,
    bucket: LengthBucket,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    check_class(params, class)?;
    let probs: Vec<f64> = answer_log_probs(params, x).iter().map(|l| l.exp()).collect();
    let mut dz: Vec<f64> = probs.iter().map(|p| -p * scale).collect();
    dz[class] += scale;
    let lengths: Vec<f64> = length_log_probs(params).iter().map(|l| l.exp()).collect();
    let mut dl: Vec<f64> = lengths.iter().map(|p| -p * scale).collect();
    dl[bucket.index()] += scale;
    add_head_grads(params, x, &dz, &dl, out);
    Ok(())
}

/// Chains logit-space gradients of both heads into the flat layout.
fn add_head_grads(params: &PolicyParams, x: &FeatureVector, dz: &[f64], dl: &[f64], out: &mut [f64]) {
    for (k, g) in dz.iter().enumerate() {
        for (j, xj) in x.0.iter().enumerate() {
            out[k * FEATURE_DIM + j] += g * xj;
        }
        out[params.offset_bias() + k] += g;
    }
    let off = params.offset_length();
    for (i, g) in dl.iter().enumerate() {
        out[off + i] += g;
    }
}

/// Probability of every (class, bucket) response, class-major.
pub fn response_distribution(params: &PolicyParams, x: &FeatureVector) -> Vec<f64> {
    let a = answer_log_probs(params, x);
    let l = length_log_probs(params);
    a.iter()
        .flat_map(|la| l.iter().map(move |ll| (la + ll).exp()))
        .collect()
}

/// Exact `KL(p_theta(.|x) ‖ p_ref(.|x))`; the heads are independent, so this
/// is the sum of the two head divergences.
pub fn kl_to(params: &PolicyParams, reference: &PolicyParams, x: &FeatureVector) -> f64 {
    let head = |p: &[f64], q: &[f64]| -> f64 { p.iter().zip(q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum::<f64>() };
    let ka = head(&answer_log_probs(params, x), &answer_log_probs(reference, x));
    let kl = head(&length_log_probs(params), &length_log_probs(reference));
    (ka + kl).max(0.0)
}

/// Adds `scale * ∇_theta KL(p_theta ‖ p_ref)` into `out`.
pub fn accumulate_grad_kl(
    params: &PolicyParams,
    reference: &PolicyParams,
    x: &FeatureVector,
    scale: f64,
    out: &mut [f64],
) {
    // For p = softmax(z): ∂KL/∂z_k = p_k (log p_k - log q_k - KL).
    let head = |lp: Vec<f64>, lq: Vec<f64>| -> Vec<f64> {
        let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
        lp.iter()
            .zip(&lq)
            .map(|(a, b)| scale * a.exp() * (a - b - kl))
            .collect()
    };
    let dz = head(answer_log_probs(params, x), answer_log_probs(reference, x));
    let dl = head(length_log_probs(params), length_log_probs(reference));
    add_head_grads(params, x, &dz, &dl, out);
}

/// Draws `g` independent responses.
pub fn sample_group<R: Rng + ?Sized>(params: &PolicyParams, x: &FeatureVector, g: usize, rng: &mut R) -> Vec<Response> {
    let a = answer_log_probs(params, x);
    let l = length_log_probs(params);
    let answer_dist = WeightedIndex::new(a.iter().map(|v| v.exp())).expect("softmax weights are positive");
    let length_dist = WeightedIndex::new(l.iter().map(|v| v.exp())).expect("softmax weights are positive");
    (0..g)
        .map(|_| {
            let class = answer_dist.sample(rng);
            let bucket = LengthBucket::from_index(length_dist.sample(rng)).expect("three buckets");
            Response {
                answer: params.labels[class],
                length_bucket: bucket,
                length: bucket.representative_length(),
                logprob: (a[class] + l[bucket.index()]).min(0.0),
                transcript: None,
            }
        })
        .collect()
}

/// Argmax of the answer head; ties go to the lowest class index.
pub fn greedy_answer(params: &PolicyParams, x: &FeatureVector) -> AnswerLabel {
    let logits = answer_logits(params, x);
    let mut best = 0;
    for (i, z) in logits.iter().enumerate() {
        if *z > logits[best] {
            best = i;
        }
    }
    params.labels[best]
}

/// A frozen copy of the parameters, used as the reference policy.
#[derive(Debug, Clone)]
pub struct ReferencePolicy(Arc<PolicyParams>);

impl ReferencePolicy {
    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

pub fn snapshot(params: &PolicyParams) -> ReferencePolicy {
    ReferencePolicy(Arc::new(params.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random_params<R: Rng>(rng: &mut R, mode: AnswerMode) -> PolicyParams {
        let mut p = PolicyParams::zeros(&AnswerSpace::default(), mode);
        let flat: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        p.set_flat(&flat).unwrap();
        p
    }

    fn random_x<R: Rng>(rng: &mut R) -> FeatureVector {
        let mut v = [0.0; FEATURE_DIM];
        v.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
        FeatureVector(v)
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = PolicyParams::zeros(&AnswerSpace::default(), AnswerMode::Quality);
        let x = FeatureVector([0.3, -1.0, 2.0, 0.1, 0.5, 0.0]);
        let expected = -(6f64).ln() - (3f64).ln();
        for c in 0..6 {
            for b in LengthBucket::ALL {
                assert!((logprob(&p, &x, c, b).unwrap() - expected).abs() < 1e-12);
            }
        }
        assert!(logprob(&p, &x, 6, LengthBucket::Mid).is_err());
    }

    #[test]
    fn distribution_is_normalized() {
        let mut rng = stream(1, &[]);
        for mode in [AnswerMode::Binary, AnswerMode::Quality] {
            for _ in 0..100 {
                let p = random_params(&mut rng, mode);
                let total: f64 = response_distribution(&p, &random_x(&mut rng)).iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn raising_a_logit_raises_its_logprob() {
        let mut rng = stream(2, &[]);
        let mut p = random_params(&mut rng, AnswerMode::Quality);
        let x = random_x(&mut rng);
        let before = logprob(&p, &x, 3, LengthBucket::Long).unwrap();
        p.bias[3] += 0.1;
        assert!(logprob(&p, &x, 3, LengthBucket::Long).unwrap() > before);
        let before = logprob(&p, &x, 3, LengthBucket::Long).unwrap();
        p.length_logits[2] += 0.1;
        assert!(logprob(&p, &x, 3, LengthBucket::Long).unwrap() > before);
    }

    #[test]
    fn grad_logprob_matches_finite_differences() {
        let mut rng = stream(3, &[]);
        for _ in 0..100 {
            let p = random_params(&mut rng, AnswerMode::Quality);
            let x = random_x(&mut rng);
            let class = rng.gen_range(0..6);
            let bucket = LengthBucket::from_index(rng.gen_range(0..3)).unwrap();
            let g = grad_logprob(&p, &x, class, bucket).unwrap();
            let base = p.flat();
            let h = 1e-5;
            for i in 0..base.len() {
                let mut q = p.clone();
                let mut v = base.clone();
                v[i] += h;
                q.set_flat(&v).unwrap();
                let up = logprob(&q, &x, class, bucket).unwrap();
                v[i] -= 2.0 * h;
                q.set_flat(&v).unwrap();
                let down = logprob(&q, &x, class, bucket).unwrap();
                let fd = (up - down) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-2);
                assert!(err < 1e-7, "param {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn heads_are_separable() {
        let mut rng = stream(4, &[]);
        let p = random_params(&mut rng, AnswerMode::Binary);
        let x = random_x(&mut rng);
        let g1 = grad_logprob(&p, &x, 0, LengthBucket::Short).unwrap();
        let g2 = grad_logprob(&p, &x, 1, LengthBucket::Short).unwrap();
        let off = p.len() - LENGTH_BUCKETS;
        assert_eq!(&g1[off..], &g2[off..]);
        let mut q = p.clone();
        q.weights.iter_mut().for_each(|w| *w += 0.7);
        let g3 = grad_logprob(&q, &x, 0, LengthBucket::Short).unwrap();
        assert_eq!(&g1[off..], &g3[off..]);
    }

    #[test]
    fn score_function_has_zero_mean() {
        let mut rng = stream(5, &[]);
        let p = random_params(&mut rng, AnswerMode::Quality);
        let x = random_x(&mut rng);
        // Exact expectation over the enumerable space.
        let dist = response_distribution(&p, &x);
        let mut exact = vec![0.0; p.len()];
        for (i, prob) in dist.iter().enumerate() {
            let b = LengthBucket::from_index(i % 3).unwrap();
            accumulate_grad_logprob(&p, &x, i / 3, b, *prob, &mut exact).unwrap();
        }
        assert!(exact.iter().all(|g| g.abs() < 1e-12));
        // Monte-Carlo estimate from the policy's own samples.
        let n = 20_000;
        let mut mc = vec![0.0; p.len()];
        let mut sq = vec![0.0; p.len()];
        for r in sample_group(&p, &x, n, &mut rng) {
            let g = grad_logprob(&p, &x, p.class_of(&r.answer).unwrap(), r.length_bucket).unwrap();
            for (i, v) in g.iter().enumerate() {
                mc[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..p.len() {
            let mean = mc[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
            assert!(mean.abs() <= 4.0 * se + 1e-12, "component {i}: {mean} vs se {se}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_calibrated() {
        let mut rng = stream(6, &[]);
        let p = random_params(&mut rng, AnswerMode::Quality);
        let x = random_x(&mut rng);
        assert_eq!(sample_group(&p, &x, 8, &mut stream(9, &[])).len(), 8);
        assert_eq!(
            sample_group(&p, &x, 8, &mut stream(9, &[])),
            sample_group(&p, &x, 8, &mut stream(9, &[]))
        );
        let n = 100_000;
        let mut counts = [0usize; 6];
        for r in sample_group(&p, &x, n, &mut stream(10, &[])) {
            counts[p.class_of(&r.answer).unwrap()] += 1;
            assert!((r.logprob - response_logprob(&p, &x, &r).unwrap()).abs() < 1e-12);
        }
        for (c, lp) in answer_log_probs(&p, &x).iter().enumerate() {
            let prob = lp.exp();
            let se = (prob * (1.0 - prob) / n as f64).sqrt();
            let freq = counts[c] as f64 / n as f64;
            assert!((freq - prob).abs() < 3.0 * se, "class {c}: {freq} vs {prob}");
        }
    }

    #[test]
    fn snapshot_is_frozen() {
        let mut rng = stream(7, &[]);
        let mut p = random_params(&mut rng, AnswerMode::Binary);
        let x = random_x(&mut rng);
        let r = snapshot(&p);
        assert_eq!(
            logprob(&p, &x, 1, LengthBucket::Mid).unwrap(),
            logprob(r.params(), &x, 1, LengthBucket::Mid).unwrap()
        );
        assert_eq!(kl_to(&p, r.params(), &x), 0.0);
        p.bias[0] += 1.0;
        assert_ne!(r.params().bias[0], p.bias[0]);
        assert!(kl_to(&p, r.params(), &x) > 0.0);
    }

    #[test]
    fn kl_matches_enumeration_and_its_gradient() {
        let mut rng = stream(8, &[]);
        for _ in 0..20 {
            let p = random_params(&mut rng, AnswerMode::Quality);
            let q = random_params(&mut rng, AnswerMode::Quality);
            let x = random_x(&mut rng);
            let exact =
                crate::objectives::kl_exact(&response_distribution(&p, &x), &response_distribution(&q, &x)).unwrap();
            assert!((kl_to(&p, &q, &x) - exact).abs() < 1e-10);
            let mut g = vec![0.0; p.len()];
            accumulate_grad_kl(&p, &q, &x, 1.0, &mut g);
            let base = p.flat();
            let h = 1e-5;
            for i in 0..base.len() {
                let mut v = base.clone();
                let mut pp = p.clone();
                v[i] += h;
                pp.set_flat(&v).unwrap();
                let up = kl_to(&pp, &q, &x);
                v[i] -= 2.0 * h;
                pp.set_flat(&v).unwrap();
                let fd = (up - kl_to(&pp, &q, &x)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn featurize_basics() {
        let constant: Vec<Frame> = vec![vec![1.0, 2.0]; 10];
        let f = featurize_frames(&constant).unwrap();
        assert_eq!(f.mean_adjacent_distance(), 0.0);
        assert!(f.0.iter().all(|v| v.is_finite()));
        assert!(matches!(featurize_frames(&constant[..2]), Err(Error::TooFewFrames(2))));
        let ragged = vec![vec![0.0, 1.0], vec![0.0], vec![1.0, 1.0]];
        assert!(featurize_frames(&ragged).is_err());
    }

    #[test]
    fn binary_head_maps_stepped_fakes() {
        let p = PolicyParams::zeros(&AnswerSpace::default(), AnswerMode::Binary);
        assert_eq!(p.class_of(&AnswerLabel::fake_at(50)), Some(1));
        let q = PolicyParams::zeros(&AnswerSpace::default(), AnswerMode::Quality);
        assert_eq!(q.class_of(&AnswerLabel::FAKE), None);
    }
}
