//! The four losses under study. All reward the positive continuation; they
//! differ in whether and how they penalize the negative one.
//!
//! With step probabilities written `P(y_t | x, y_<t)` and `T` the
//! continuation length, the per-pair losses are:
//!
//! ```text
//! MLE      (1/T+) Σ -ln P(y+_t)
//! DPO      -ln σ( β [ (S+ - S+_ref) - (S- - S-_ref) ] )      S = Σ ln P(y_t)
//! UL       (1/T+) Σ -ln P(y+_t)  -  β (1/T-) Σ ln(1 - P(y-_t))
//! ExMATE   (1/T+) Σ -ln P(y+_t)  +  β exp( (1/T-) Σ ln P(y-_t) )
//! ```
//!
//! DPO compares unnormalized sequence log-probabilities (no length division)
//! against a reference model; a missing reference means the reference term is
//! zero. The ExMATE penalty is β times the geometric mean of the negative
//! continuation's step probabilities, so it always lies in (0, β], while the
//! UL penalty grows without bound as any P(y-_t) approaches 1.

use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::math;
use crate::model::ToyLm;
use crate::seq::PreferencePair;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("beta must be finite and >= 0, got {0}")]
    InvalidBeta(f64),
    #[error("unknown loss method {0:?}, expected one of mle, dpo, ul, exmate")]
    UnknownMethod(String),
    #[error("schedule must contain at least one stage")]
    EmptySchedule,
    #[error("schedule stage {0} has zero epochs")]
    EmptyStage(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMethod {
    Mle,
    Dpo,
    Ul,
    Exmate,
}

impl LossMethod {
    pub const ALL: [LossMethod; 4] = [LossMethod::Mle, LossMethod::Dpo, LossMethod::Ul, LossMethod::Exmate];

    pub fn name(self) -> &'static str {
        match self {
            LossMethod::Mle => "mle",
            LossMethod::Dpo => "dpo",
            LossMethod::Ul => "ul",
            LossMethod::Exmate => "exmate",
        }
    }

    /// True for the methods whose loss reads the negative continuation.
    pub fn uses_negative(self) -> bool {
        !matches!(self, LossMethod::Mle)
    }
}

impl core::fmt::Display for LossMethod {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for LossMethod {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, LossError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(LossMethod::Mle),
            "dpo" => Ok(LossMethod::Dpo),
            "ul" => Ok(LossMethod::Ul),
            "exmate" => Ok(LossMethod::Exmate),
            other => Err(LossError::UnknownMethod(other.to_string())),
        }
    }
}

/// What DPO divides the model's sequence probability by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefPolicy {
    /// Reference probability 1 for every sequence; the reference term drops
    /// out. This is the setting the closed-form gradient analysis assumes.
    Unit,
    /// Snapshot of the model taken when the DPO stage starts, held fixed for
    /// the rest of that stage.
    #[default]
    FrozenCopy,
}

/// A loss method with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub method: LossMethod,
    /// Penalty strength. Ignored by MLE; β = 0 turns UL and ExMATE into MLE
    /// and freezes DPO at ln 2.
    pub beta: f64,
    /// Only consulted when `method` is DPO.
    pub ref_policy: RefPolicy,
}

impl LossSpec {
    pub fn new(method: LossMethod, beta: f64) -> Self {
        Self { method, beta, ref_policy: RefPolicy::default() }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(LossError::InvalidBeta(self.beta));
        }
        Ok(())
    }
}

/// A training recipe: a sequence of loss stages, each run for a number of
/// epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub stages: Vec<(LossSpec, usize)>,
}

impl Schedule {
    pub fn single(spec: LossSpec, epochs: usize) -> Self {
        Self { stages: alloc::vec![(spec, epochs)] }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.stages.is_empty() {
            return Err(LossError::EmptySchedule);
        }
        for (i, (spec, epochs)) in self.stages.iter().enumerate() {
            spec.validate()?;
            if *epochs == 0 {
                return Err(LossError::EmptyStage(i));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|(_, e)| e).sum()
    }

    /// The stage a zero-based epoch index falls into, with the epoch at which
    /// that stage began.
    pub fn stage_at(&self, epoch: usize) -> (usize, &LossSpec, usize) {
        let mut start = 0;
        for (i, (spec, epochs)) in self.stages.iter().enumerate() {
            if epoch < start + epochs {
                return (i, spec, start);
            }
            start += epochs;
        }
        let last = self.stages.len() - 1;
        (last, &self.stages[last].0, start - self.stages[last].1)
    }
}

/// Mean negative log-likelihood of the positive continuation.
pub fn mle_loss(model: &ToyLm, pair: &PreferencePair) -> f64 {
    assert!(!pair.y_pos.is_empty(), "positive continuation must be non-empty");
    let lps = model.step_log_probs(&pair.x_pos, &pair.y_pos);
    -math::mean(&lps)
}

/// Preference loss on the gap between positive and negative sequence
/// log-probabilities, each measured against `reference` (treated as assigning
/// probability 1 when absent).
pub fn dpo_loss(model: &ToyLm, reference: Option<&ToyLm>, beta: f64, pair: &PreferencePair) -> f64 {
    assert!(!pair.y_pos.is_empty() && !pair.y_neg.is_empty(), "continuations must be non-empty");
    let s_pos = model.seq_logprob(&pair.x_pos, &pair.y_pos);
    let s_neg = model.seq_logprob(&pair.x_neg, &pair.y_neg);
    let (r_pos, r_neg) = match reference {
        Some(r) => (r.seq_logprob(&pair.x_pos, &pair.y_pos), r.seq_logprob(&pair.x_neg, &pair.y_neg)),
        None => (0.0, 0.0),
    };
    math::neg_log_sigmoid(beta * ((s_pos - r_pos) - (s_neg - r_neg)))
}

/// MLE on the positive side plus an unlikelihood penalty that pushes every
/// negative step probability toward 0. Diverges to +inf as any P(y-_t)
/// approaches 1.
pub fn ul_loss(model: &ToyLm, beta: f64, pair: &PreferencePair) -> f64 {
    assert!(!pair.y_pos.is_empty() && !pair.y_neg.is_empty(), "continuations must be non-empty");
    let pos = mle_loss(model, pair);
    let mut neg = 0.0;
    for t in 0..pair.y_neg.len() {
        let p = model.forward_step(&pair.x_neg, &pair.y_neg[..t]).prob(pair.y_neg[t]);
        neg += math::ln_1p(-p);
    }
    pos - beta * neg / pair.y_neg.len() as f64
}

/// MLE on the positive side plus β times the geometric mean of the negative
/// step probabilities, a penalty that saturates at β instead of diverging.
pub fn exmate_loss(model: &ToyLm, beta: f64, pair: &PreferencePair) -> f64 {
    assert!(!pair.y_pos.is_empty() && !pair.y_neg.is_empty(), "continuations must be non-empty");
    let pos = mle_loss(model, pair);
    let neg_lps = model.step_log_probs(&pair.x_neg, &pair.y_neg);
    pos + beta * math::exp(math::mean(&neg_lps))
}

/// Dispatches on the method in `spec`. `reference` is only consulted by DPO.
pub fn pair_loss(model: &ToyLm, reference: Option<&ToyLm>, spec: &LossSpec, pair: &PreferencePair) -> f64 {
    match spec.method {
        LossMethod::Mle => mle_loss(model, pair),
        LossMethod::Dpo => dpo_loss(model, reference, spec.beta, pair),
        LossMethod::Ul => ul_loss(model, spec.beta, pair),
        LossMethod::Exmate => exmate_loss(model, spec.beta, pair),
    }
}

/// Mean of `pair_loss` over a batch, accumulated in index order.
pub fn batch_loss(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pairs: &[PreferencePair],
) -> f64 {
    assert!(!pairs.is_empty(), "batch must be non-empty");
    let mut acc = 0.0;
    for pair in pairs {
        acc += pair_loss(model, reference, spec, pair);
    }
    acc / pairs.len() as f64
}

/// Single-step loss as a function of scalar probabilities, the form the
/// landscape sweeps plot. `p_pos` is the probability on the rewarded token,
/// `p_neg` the probability on the penalized token, both in (0, 1).
pub fn scalar_loss(method: LossMethod, p_pos: f64, p_neg: f64, beta: f64) -> f64 {
    debug_assert!(p_pos > 0.0 && p_pos < 1.0 && p_neg > 0.0 && p_neg < 1.0);
    match method {
        LossMethod::Mle => -math::ln(p_pos),
        LossMethod::Dpo => math::neg_log_sigmoid(beta * (math::ln(p_pos) - math::ln(p_neg))),
        LossMethod::Ul => -math::ln(p_pos) - beta * math::ln_1p(-p_neg),
        LossMethod::Exmate => -math::ln(p_pos) + beta * p_neg,
    }
}
