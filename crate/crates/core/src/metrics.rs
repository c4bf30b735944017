//! Diagnostic statistics for a model on a preference-pair dataset.
//!
//! Four numbers summarize how training went:
//!
//! * perplexity: certainty on the rewarded continuations, exp of the
//!   token-pooled mean negative log-likelihood;
//! * agility: mean of `P(y+|x+) - P(y-|x-)`, positive when the model puts
//!   more mass on rewarded than on penalized continuations;
//! * information difference: `|P(y+|x+) - P(y-|x-)|` per pair, the magnitude
//!   `|eps|` the gradient analysis keys on;
//! * gradient difference: p-norm distance between the step distributions the
//!   two contexts induce, the quantity that controls how good the shared-
//!   Jacobian approximation is.

use alloc::vec::Vec;

use crate::math;
use crate::model::ToyLm;
use crate::seq::PreferencePair;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("step {t} out of range: continuations have {t_pos} and {t_neg} tokens")]
    StepOutOfRange { t: usize, t_pos: usize, t_neg: usize },
}

/// Which p-norm [`gradient_difference`] uses over the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PNorm {
    /// Total-variation scale; bounded by 2 for probability vectors.
    #[default]
    One,
    Two,
    Inf,
}

impl PNorm {
    fn apply(self, diff: impl Iterator<Item = f64>) -> f64 {
        match self {
            PNorm::One => diff.map(f64::abs).sum(),
            PNorm::Two => math::sqrt(diff.map(|d| d * d).sum()),
            PNorm::Inf => diff.map(f64::abs).fold(0.0, f64::max),
        }
    }
}

/// One evaluation snapshot. The trainer stamps it with an epoch when logging.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub perplexity: f64,
    pub agility: f64,
    pub mean_info_diff: f64,
    /// Mean gradient difference at steps 1..=len, each averaged over the
    /// pairs long enough to have that step; 0.0 when no pair reaches it.
    pub grad_diff_per_step: Vec<f64>,
    pub n_pairs: usize,
}

/// How many leading steps the standard record tracks gradient difference at.
pub const GRAD_DIFF_STEPS: usize = 3;

/// Exp of the token-pooled mean negative log-likelihood of the positive
/// continuations. Pooling weights every token equally, so this is exactly
/// exp of the length-weighted training objective. Accumulated in base 2 on
/// the softmax probabilities, which makes the uniform-model identity
/// `perplexity == vocab_size` bit-exact for power-of-two vocabularies.
pub fn perplexity(model: &ToyLm, pairs: &[PreferencePair]) -> f64 {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    let mut nll2 = 0.0;
    let mut tokens = 0usize;
    for pair in pairs {
        for t in 0..pair.y_pos.len() {
            let dist = model.forward_step(&pair.x_pos, &pair.y_pos[..t]);
            nll2 -= math::log2(dist.prob(pair.y_pos[t]));
            tokens += 1;
        }
    }
    math::exp2(nll2 / tokens as f64)
}

/// Mean over pairs of `P(y+|x+) - P(y-|x-)`, each mass computed as exp of
/// the sequence log-probability. Positive agility means rewarded
/// continuations carry more mass than penalized ones.
pub fn agility(model: &ToyLm, pairs: &[PreferencePair]) -> f64 {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    let mut acc = 0.0;
    for pair in pairs {
        let f_pos = math::exp(model.seq_logprob(&pair.x_pos, &pair.y_pos));
        let f_neg = math::exp(model.seq_logprob(&pair.x_neg, &pair.y_neg));
        acc += f_pos - f_neg;
    }
    acc / pairs.len() as f64
}

/// Mean over pairs of `P(y+|x+)`, the mass kept on rewarded continuations.
pub fn mean_positive_probability(model: &ToyLm, pairs: &[PreferencePair]) -> f64 {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    pairs
        .iter()
        .map(|p| math::exp(model.seq_logprob(&p.x_pos, &p.y_pos)))
        .sum::<f64>()
        / pairs.len() as f64
}

/// `|P(y+|x+) - P(y-|x-)|` for one pair, in sequence-probability space.
pub fn information_difference(model: &ToyLm, pair: &PreferencePair) -> f64 {
    let f_pos = math::exp(model.seq_logprob(&pair.x_pos, &pair.y_pos));
    let f_neg = math::exp(model.seq_logprob(&pair.x_neg, &pair.y_neg));
    f64::abs(f_pos - f_neg)
}

/// Mean information difference over a dataset.
pub fn mean_information_difference(model: &ToyLm, pairs: &[PreferencePair]) -> f64 {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    pairs.iter().map(|p| information_difference(model, p)).sum::<f64>() / pairs.len() as f64
}

/// p-norm distance between the step distributions the two sides induce at
/// one-indexed step `t`: `|| P(.|x+,y+_<t) - P(.|x-,y-_<t) ||_p`.
pub fn gradient_difference(
    model: &ToyLm,
    pair: &PreferencePair,
    t: usize,
    p: PNorm,
) -> Result<f64, MetricError> {
    if t == 0 || t > pair.y_pos.len() || t > pair.y_neg.len() {
        return Err(MetricError::StepOutOfRange {
            t,
            t_pos: pair.y_pos.len(),
            t_neg: pair.y_neg.len(),
        });
    }
    let d_pos = model.forward_step(&pair.x_pos, &pair.y_pos[..t - 1]);
    let d_neg = model.forward_step(&pair.x_neg, &pair.y_neg[..t - 1]);
    Ok(p.apply(d_pos.probs.iter().zip(&d_neg.probs).map(|(a, b)| a - b)))
}

/// Full snapshot: perplexity, agility, mean information difference, and the
/// mean gradient difference at the first [`GRAD_DIFF_STEPS`] steps.
pub fn metric_record(model: &ToyLm, pairs: &[PreferencePair]) -> MetricRecord {
    assert!(!pairs.is_empty(), "dataset must be non-empty");
    let mut grad_diff = Vec::with_capacity(GRAD_DIFF_STEPS);
    for t in 1..=GRAD_DIFF_STEPS {
        let mut acc = 0.0;
        let mut n = 0usize;
        for pair in pairs {
            if let Ok(v) = gradient_difference(model, pair, t, PNorm::default()) {
                acc += v;
                n += 1;
            }
        }
        grad_diff.push(if n == 0 { 0.0 } else { acc / n as f64 });
    }
    MetricRecord {
        perplexity: perplexity(model, pairs),
        agility: agility(model, pairs),
        mean_info_diff: mean_information_difference(model, pairs),
        grad_diff_per_step: grad_diff,
        n_pairs: pairs.len(),
    }
}
