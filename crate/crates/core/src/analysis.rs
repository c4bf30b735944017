//! Closed-form gradient structure of the four losses, small algebra that
//! predicts what the numeric engine in [`crate::backprop`] computes.
//!
//! Conventions, fixed once here: `u` is the positive-sample probability mass
//! `f+ = P(y+|x+)`, the signed difference `eps = f- - f+` separates the two
//! samples, and all factors are stated for gradient ascent (the engine's
//! descent gradient is their negation). `P+(.)` and `P-(.)` are the step
//! distributions following the positive and negative prefixes.
//!
//! Two regimes, split by whether the two continuations carry the same token
//! at step `t`:
//!
//! * `y+_t != y-_t`: each loss multiplies the shared logit Jacobian by one
//!   scalar per token class (the rewarded token, the penalized token, every
//!   other token). [`logit_factors_diff_token`] returns the three factors.
//! * `y+_t == y-_t`: the whole gradient collapses onto the token probability
//!   gradient with a single coefficient, [`same_token_coeff`].
//!
//! These formulas drop cross-terms of order `|P+ - P-|`, so in general they
//! are approximations. [`verify_exactness_regime`] constructs the setting
//! where the dropped terms are exactly zero (one-token continuations, shared
//! context, unit reference) and checks the engine against them to 1e-10,
//! turning the approximate analysis into a falsifiable identity.
//!
//! [`param_gradient_form`] is the sequence-level counterpart: the gradient
//! assembled from whole-sequence probabilities `f` and their gradients,
//! without per-step length normalization. It coincides with the per-step
//! losses at one-token continuations (DPO: at every length).

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::{accumulate_pair, accumulate_step};
use crate::gradcheck::GradReport;
use crate::losses::{LossMethod, LossSpec};
use crate::math;
use crate::model::{Gradient, InitPolicy, StepDistribution, ToyLm};
use crate::seq::PreferencePair;

/// Tolerance the exactness-regime identities are held to.
pub const EXACTNESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("u must lie in (0,1), got {0}")]
    UOutOfRange(f64),
    #[error("u + eps must lie in (0,1), got {0}")]
    FNegOutOfRange(f64),
    #[error("beta must be finite and >= 0, got {0}")]
    InvalidBeta(f64),
    #[error("token id {0} out of range for distributions of size {1}")]
    TokenOutOfRange(usize, usize),
    #[error("operation requires y_pos_t != y_neg_t")]
    SameToken,
    #[error("probe token must differ from y_pos_t and y_neg_t")]
    ProbeClash,
    #[error("{0} lies outside the coefficient's domain")]
    Domain(&'static str),
}

/// Everything the per-step closed forms read: the scalar coordinates
/// `(u, eps, beta)` plus the two step distributions and the token ids under
/// study. `z_other` names the non-referred token the `factor_other` entry is
/// evaluated at, since that factor genuinely depends on which bystander token
/// is probed.
///
/// The fields are deliberately free: `u` need not equal
/// `p_plus.prob(y_pos_t)`, because at continuation lengths beyond 1 the mass
/// `f+` is a whole-sequence product while the distributions are per-step.
/// [`AnalysisPoint::at_step`] ties them together for the one-step case.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisPoint {
    pub u: f64,
    pub eps: f64,
    pub beta: f64,
    pub p_plus: StepDistribution,
    pub p_minus: StepDistribution,
    pub y_pos_t: usize,
    pub y_neg_t: usize,
    pub z_other: usize,
}

impl AnalysisPoint {
    /// Point for a one-token-continuation step, where `f+` and `f-` are just
    /// the step probabilities of the two tokens.
    pub fn at_step(
        beta: f64,
        p_plus: StepDistribution,
        p_minus: StepDistribution,
        y_pos_t: usize,
        y_neg_t: usize,
        z_other: usize,
    ) -> Result<Self, AnalysisError> {
        let u = p_plus.prob(y_pos_t);
        let eps = p_minus.prob(y_neg_t) - u;
        let point = Self { u, eps, beta, p_plus, p_minus, y_pos_t, y_neg_t, z_other };
        point.validate()?;
        Ok(point)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(AnalysisError::UOutOfRange(self.u));
        }
        let f_neg = self.u + self.eps;
        if !(f_neg > 0.0 && f_neg < 1.0) {
            return Err(AnalysisError::FNegOutOfRange(f_neg));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(AnalysisError::InvalidBeta(self.beta));
        }
        let n = self.p_plus.probs.len().min(self.p_minus.probs.len());
        for id in [self.y_pos_t, self.y_neg_t, self.z_other] {
            if id >= n {
                return Err(AnalysisError::TokenOutOfRange(id, n));
            }
        }
        Ok(())
    }
}

/// The three per-token-class multipliers of the shared logit Jacobian at a
/// step where the continuations disagree, in the ascent convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitFactorSet {
    pub factor_ypos: f64,
    pub factor_yneg: f64,
    pub factor_other: f64,
}

/// DPO's scalar prefactor `β (u+ε)^β / ((u+ε)^β + u^β)`, computed through a
/// sigmoid in the log domain so extreme masses cannot overflow. Always in
/// (0, β); tends to 0 as `f- = u+ε` tends to 0, which is DPO's stop
/// condition.
pub fn dpo_prefactor(u: f64, eps: f64, beta: f64) -> f64 {
    debug_assert!(u > 0.0 && u + eps > 0.0);
    beta * math::sigmoid(beta * (math::ln(u + eps) - math::ln(u)))
}

/// Ascent factor on the shared logit Jacobian for probe token `z` at a step
/// with `y+_t != y-_t`. Dispatches on which class `z` falls into.
pub fn diff_token_factor(
    method: LossMethod,
    point: &AnalysisPoint,
    z: usize,
) -> Result<f64, AnalysisError> {
    point.validate()?;
    if point.y_pos_t == point.y_neg_t {
        return Err(AnalysisError::SameToken);
    }
    let n = point.p_plus.probs.len().min(point.p_minus.probs.len());
    if z >= n {
        return Err(AnalysisError::TokenOutOfRange(z, n));
    }
    let beta = point.beta;
    let pp = &point.p_plus.probs;
    let pm = &point.p_minus.probs;
    let (ypos, yneg) = (point.y_pos_t, point.y_neg_t);
    let pre = dpo_prefactor(point.u, point.eps, beta);

    let factor = if z == ypos {
        match method {
            LossMethod::Mle => 1.0 - pp[ypos],
            LossMethod::Dpo => pre * (1.0 - pp[ypos] + pm[ypos]),
            LossMethod::Ul => 1.0 - pp[ypos] + beta * pm[yneg] * pm[ypos] / (1.0 - pm[yneg]),
            LossMethod::Exmate => 1.0 - pp[ypos] + beta * pm[yneg] * pm[ypos],
        }
    } else if z == yneg {
        match method {
            LossMethod::Mle => -pp[yneg],
            LossMethod::Dpo => pre * (-pp[yneg] - (1.0 - pm[yneg])),
            LossMethod::Ul => -pp[yneg] - beta * pm[yneg],
            LossMethod::Exmate => -pp[yneg] - beta * pm[yneg] * (1.0 - pm[yneg]),
        }
    } else {
        match method {
            LossMethod::Mle => -pp[z],
            LossMethod::Dpo => pre * (-pp[z] + pm[z]),
            LossMethod::Ul => -pp[z] + beta * pm[yneg] / (1.0 - pm[yneg]) * pm[z],
            LossMethod::Exmate => -pp[z] + beta * pm[yneg] * pm[z],
        }
    };
    Ok(factor)
}

/// The factors for the rewarded token, the penalized token, and the point's
/// probe token, at a step where the continuations disagree.
pub fn logit_factors_diff_token(
    method: LossMethod,
    point: &AnalysisPoint,
) -> Result<LogitFactorSet, AnalysisError> {
    if point.z_other == point.y_pos_t || point.z_other == point.y_neg_t {
        return Err(AnalysisError::ProbeClash);
    }
    Ok(LogitFactorSet {
        factor_ypos: diff_token_factor(method, point, point.y_pos_t)?,
        factor_yneg: diff_token_factor(method, point, point.y_neg_t)?,
        factor_other: diff_token_factor(method, point, point.z_other)?,
    })
}

/// Ascent coefficient on the shared probability gradient at a step where
/// both continuations carry the same token:
///
/// ```text
/// DPO      β (u+ε)^(β-1) ε / (((u+ε)^β + u^β) u)
/// UL       (1 - (1+β)u - ε) / (u (1 - u - ε))
/// ExMATE   1/u - β
/// MLE      1/u
/// ```
///
/// Positive means both `P+(y_t)` and `P-(y_t)` rise under ascent.
pub fn same_token_coeff(method: LossMethod, u: f64, eps: f64, beta: f64) -> Result<f64, AnalysisError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(AnalysisError::UOutOfRange(u));
    }
    let f_neg = u + eps;
    if !(f_neg > 0.0 && f_neg < 1.0) {
        return Err(AnalysisError::FNegOutOfRange(f_neg));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(AnalysisError::InvalidBeta(beta));
    }
    Ok(match method {
        LossMethod::Mle => 1.0 / u,
        LossMethod::Dpo => {
            // (u+ε)^(β-1) splits into the bounded prefactor over (u+ε) so the
            // β < 1 case cannot overflow near f- = 0.
            dpo_prefactor(u, eps, beta) * eps / (u * f_neg)
        }
        LossMethod::Ul => (1.0 - (1.0 + beta) * u - eps) / (u * (1.0 - f_neg)),
        LossMethod::Exmate => 1.0 / u - beta,
    })
}

fn seq_logprob_gradient(model: &ToyLm, x: &[usize], y: &[usize]) -> Gradient {
    let mut g = Gradient::zeros_like(model);
    for t in 0..y.len() {
        let trace = model.forward_trace(x, &y[..t]);
        accumulate_step(model, &trace, 1.0, y[t], &mut g);
    }
    g
}

/// Descent gradient assembled from the sequence-level structure: whole-
/// sequence masses `f = P(y|x)`, their log-gradients, and each method's
/// scalar glue. No per-step length normalization is applied, so this equals
/// the engine's [`crate::backprop::pair_gradient`] exactly at one-token
/// continuations (and, for DPO, at every length); beyond that the per-step
/// penalties and this sequence-level form are genuinely different functions.
pub fn param_gradient_form(
    method: LossMethod,
    model: &ToyLm,
    pair: &PreferencePair,
    beta: f64,
    reference: Option<&ToyLm>,
) -> Gradient {
    assert!(!pair.y_pos.is_empty() && !pair.y_neg.is_empty(), "continuations must be non-empty");
    let grad_log_pos = seq_logprob_gradient(model, &pair.x_pos, &pair.y_pos);
    let mut out = Gradient::zeros_like(model);
    match method {
        LossMethod::Mle => {
            out.add_scaled(&grad_log_pos, -1.0);
        }
        LossMethod::Dpo => {
            let grad_log_neg = seq_logprob_gradient(model, &pair.x_neg, &pair.y_neg);
            let s_pos = model.seq_logprob(&pair.x_pos, &pair.y_pos);
            let s_neg = model.seq_logprob(&pair.x_neg, &pair.y_neg);
            let (r_pos, r_neg) = match reference {
                Some(r) => {
                    (r.seq_logprob(&pair.x_pos, &pair.y_pos), r.seq_logprob(&pair.x_neg, &pair.y_neg))
                }
                None => (0.0, 0.0),
            };
            let gate = math::sigmoid(beta * (s_neg - r_neg) - beta * (s_pos - r_pos));
            let mut bracket = grad_log_pos;
            bracket.add_scaled(&grad_log_neg, -1.0);
            out.add_scaled(&bracket, -beta * gate);
        }
        LossMethod::Ul => {
            let grad_log_neg = seq_logprob_gradient(model, &pair.x_neg, &pair.y_neg);
            let f_neg = math::exp(model.seq_logprob(&pair.x_neg, &pair.y_neg));
            out.add_scaled(&grad_log_pos, -1.0);
            out.add_scaled(&grad_log_neg, beta * f_neg / (1.0 - f_neg));
        }
        LossMethod::Exmate => {
            let grad_log_neg = seq_logprob_gradient(model, &pair.x_neg, &pair.y_neg);
            let f_neg = math::exp(model.seq_logprob(&pair.x_neg, &pair.y_neg));
            out.add_scaled(&grad_log_pos, -1.0);
            out.add_scaled(&grad_log_neg, beta * f_neg);
        }
    }
    out
}

/// Runs seeded one-step trials in the regime where the closed forms are
/// exact (shared context, one-token continuations, empty prefixes, unit
/// reference) and compares the engine's logit gradient, read off the output
/// bias block, against the closed forms token by token.
///
/// Each trial checks one disagreeing-token step over every probe token and
/// one same-token step against the coefficient times the probability
/// gradient.
pub fn verify_exactness_regime(method: LossMethod, beta: f64, trials: usize, seed: u64) -> GradReport {
    assert!(trials > 0, "need at least one trial");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 5;
    let spec = LossSpec::new(method, beta);
    let mut comparisons: Vec<(f64, f64)> = Vec::new();

    for _ in 0..trials {
        let model = ToyLm::new(vocab, 3, 4, InitPolicy::Uniform { scale: 1.2 }, rng.random());
        let ctx = [rng.random_range(0..vocab)];
        let dist = model.forward_step(&ctx, &[]);

        let y_pos = rng.random_range(0..vocab);
        let mut y_neg = rng.random_range(0..vocab);
        while y_neg == y_pos {
            y_neg = rng.random_range(0..vocab);
        }
        let z_other = (0..vocab).find(|z| *z != y_pos && *z != y_neg).unwrap();

        let pair = PreferencePair {
            x_pos: ctx.to_vec(),
            y_pos: alloc::vec![y_pos],
            x_neg: ctx.to_vec(),
            y_neg: alloc::vec![y_neg],
        };
        let engine = crate::backprop::pair_gradient(&model, None, &spec, &pair);
        let point =
            AnalysisPoint::at_step(beta, dist.clone(), dist.clone(), y_pos, y_neg, z_other)
                .expect("constructed point is valid");
        for z in 0..vocab {
            let factor = diff_token_factor(method, &point, z).expect("valid probe");
            comparisons.push((engine.b2[z], -factor));
        }

        let y_same = rng.random_range(0..vocab);
        let pair_same = PreferencePair {
            x_pos: ctx.to_vec(),
            y_pos: alloc::vec![y_same],
            x_neg: ctx.to_vec(),
            y_neg: alloc::vec![y_same],
        };
        let engine_same = crate::backprop::pair_gradient(&model, None, &spec, &pair_same);
        let u = dist.prob(y_same);
        let coeff = same_token_coeff(method, u, 0.0, beta).expect("u in (0,1)");
        for z in 0..vocab {
            let grad_f = u * (if z == y_same { 1.0 - dist.prob(z) } else { -dist.prob(z) });
            comparisons.push((engine_same.b2[z], -coeff * grad_f));
        }
    }

    GradReport::from_comparisons(method, EXACTNESS_TOL, comparisons)
}

/// Convenience wrapper: one pair's gradient per the engine, for callers that
/// have an `AnalysisPoint` world view but want the numeric truth.
pub fn engine_logit_gradient(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pair: &PreferencePair,
) -> Vec<f64> {
    let mut grad = Gradient::zeros_like(model);
    accumulate_pair(model, reference, spec, pair, 1.0, &mut grad);
    grad.b2
}
