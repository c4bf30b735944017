//! Hand-written reverse-mode gradients for every loss in [`crate::losses`].
//!
//! Each loss is a function of per-step token log-probabilities, so its
//! gradient is assembled from one identity: if a loss contains the term
//! `c * ln P(y_t | ...)`, the gradient of that term with respect to the
//! step's logits is `c * (onehot(y_t) - probs)`. The per-step coefficients
//! `c` are all each method differs by:
//!
//! ```text
//! MLE               positive steps   c = -1/T+
//! DPO               positive steps   c = -β σ(-β Δ)        Δ = reference-
//!                   negative steps   c = +β σ(-β Δ)        adjusted margin
//! UL                positive steps   c = -1/T+
//!                   negative steps   c = +(β/T-) P(y-_t) / (1 - P(y-_t))
//! ExMATE            positive steps   c = -1/T+
//!                   negative steps   c = +(β/T-) G          G = geometric
//!                                                           mean of P(y-_t)
//! ```
//!
//! From the logits the chain runs backwards through the output projection,
//! the tanh layer, and into the embedding rows that built the input. Nothing
//! here is approximate; finite differences in [`crate::gradcheck`] exist to
//! prove that, not to stand in for it.
//!
//! When UL meets a negative step with probability exactly 1 its coefficient
//! is infinite and the gradient goes non-finite; callers treat that as
//! divergence rather than clamping it away.

use alloc::vec;
use alloc::vec::Vec;

use crate::losses::{LossMethod, LossSpec};
use crate::math;
use crate::model::{Gradient, StepTrace, ToyLm};
use crate::seq::PreferencePair;

/// Adds `c * (onehot(target) - probs)` propagated through one step's
/// activations into `grad`.
pub(crate) fn accumulate_step(
    model: &ToyLm,
    trace: &StepTrace,
    coeff: f64,
    target: usize,
    grad: &mut Gradient,
) {
    let v = model.vocab_size;
    let h = model.hidden_dim;
    let d = model.embed_dim;

    let mut g_logits = vec![0.0; v];
    for j in 0..v {
        g_logits[j] = -coeff * trace.dist.probs[j];
    }
    g_logits[target] += coeff;

    for j in 0..v {
        grad.b2[j] += g_logits[j];
        let row = grad.w2.row_mut(j);
        for k in 0..h {
            row[k] += g_logits[j] * trace.hidden[k];
        }
    }

    let dh = model.w2.matvec_t(&g_logits);
    let mut dpre = vec![0.0; h];
    for k in 0..h {
        dpre[k] = dh[k] * (1.0 - trace.hidden[k] * trace.hidden[k]);
    }

    for k in 0..h {
        grad.b1[k] += dpre[k];
        let row = grad.w1.row_mut(k);
        for c in 0..2 * d {
            row[c] += dpre[k] * trace.input[c];
        }
    }

    let dinput = model.w1.matvec_t(&dpre);
    if !trace.ctx.is_empty() {
        let inv = 1.0 / trace.ctx.len() as f64;
        for &id in &trace.ctx {
            let row = grad.embed.row_mut(id);
            for j in 0..d {
                row[j] += dinput[j] * inv;
            }
        }
    }
    let row = grad.embed.row_mut(trace.prev_row);
    for j in 0..d {
        row[j] += dinput[d + j];
    }
}

fn traces_for(model: &ToyLm, x: &[usize], y: &[usize]) -> Vec<StepTrace> {
    (0..y.len()).map(|t| model.forward_trace(x, &y[..t])).collect()
}

fn accumulate_with_coeffs(
    model: &ToyLm,
    traces: &[StepTrace],
    y: &[usize],
    coeffs: &[f64],
    grad: &mut Gradient,
) {
    for (t, trace) in traces.iter().enumerate() {
        accumulate_step(model, trace, coeffs[t], y[t], grad);
    }
}

/// Adds `weight` times the gradient of one pair's loss into `grad`.
pub(crate) fn accumulate_pair(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pair: &PreferencePair,
    weight: f64,
    grad: &mut Gradient,
) {
    assert!(!pair.y_pos.is_empty() && !pair.y_neg.is_empty(), "continuations must be non-empty");
    let t_pos = pair.y_pos.len() as f64;
    let t_neg = pair.y_neg.len() as f64;

    match spec.method {
        LossMethod::Mle => {
            let traces = traces_for(model, &pair.x_pos, &pair.y_pos);
            let coeffs = vec![-weight / t_pos; pair.y_pos.len()];
            accumulate_with_coeffs(model, &traces, &pair.y_pos, &coeffs, grad);
        }
        LossMethod::Dpo => {
            let pos = traces_for(model, &pair.x_pos, &pair.y_pos);
            let neg = traces_for(model, &pair.x_neg, &pair.y_neg);
            let s_pos: f64 = pos.iter().zip(&pair.y_pos).map(|(tr, &y)| tr.dist.log_prob(y)).sum();
            let s_neg: f64 = neg.iter().zip(&pair.y_neg).map(|(tr, &y)| tr.dist.log_prob(y)).sum();
            let (r_pos, r_neg) = match reference {
                Some(r) => {
                    (r.seq_logprob(&pair.x_pos, &pair.y_pos), r.seq_logprob(&pair.x_neg, &pair.y_neg))
                }
                None => (0.0, 0.0),
            };
            let delta = (s_pos - r_pos) - (s_neg - r_neg);
            let swing = spec.beta * math::sigmoid(-spec.beta * delta);
            let c_pos = vec![-weight * swing; pair.y_pos.len()];
            let c_neg = vec![weight * swing; pair.y_neg.len()];
            // The two sides are summed separately and combined before they
            // touch the shared accumulator. An identical pair then produces
            // two bitwise-mirrored sums that cancel to exactly zero, so
            // training on it is a true no-op.
            let mut side_pos = Gradient::zeros_like(model);
            let mut side_neg = Gradient::zeros_like(model);
            accumulate_with_coeffs(model, &pos, &pair.y_pos, &c_pos, &mut side_pos);
            accumulate_with_coeffs(model, &neg, &pair.y_neg, &c_neg, &mut side_neg);
            side_pos.add_scaled(&side_neg, 1.0);
            grad.add_scaled(&side_pos, 1.0);
        }
        LossMethod::Ul => {
            let pos = traces_for(model, &pair.x_pos, &pair.y_pos);
            let coeffs = vec![-weight / t_pos; pair.y_pos.len()];
            accumulate_with_coeffs(model, &pos, &pair.y_pos, &coeffs, grad);

            let neg = traces_for(model, &pair.x_neg, &pair.y_neg);
            let mut c_neg = Vec::with_capacity(pair.y_neg.len());
            for (tr, &y) in neg.iter().zip(&pair.y_neg) {
                let p = tr.dist.prob(y);
                c_neg.push(weight * spec.beta / t_neg * p / (1.0 - p));
            }
            accumulate_with_coeffs(model, &neg, &pair.y_neg, &c_neg, grad);
        }
        LossMethod::Exmate => {
            let pos = traces_for(model, &pair.x_pos, &pair.y_pos);
            let coeffs = vec![-weight / t_pos; pair.y_pos.len()];
            accumulate_with_coeffs(model, &pos, &pair.y_pos, &coeffs, grad);

            let neg = traces_for(model, &pair.x_neg, &pair.y_neg);
            let mean_lp: f64 =
                neg.iter().zip(&pair.y_neg).map(|(tr, &y)| tr.dist.log_prob(y)).sum::<f64>() / t_neg;
            let geo = math::exp(mean_lp);
            let c_neg = vec![weight * spec.beta * geo / t_neg; pair.y_neg.len()];
            accumulate_with_coeffs(model, &neg, &pair.y_neg, &c_neg, grad);
        }
    }
}

/// Gradient of one pair's loss with respect to every model parameter.
pub fn pair_gradient(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pair: &PreferencePair,
) -> Gradient {
    let mut grad = Gradient::zeros_like(model);
    accumulate_pair(model, reference, spec, pair, 1.0, &mut grad);
    grad
}

/// Gradient of the batch-mean loss, accumulated in index order so repeated
/// calls are bit-identical.
pub fn batch_gradient(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pairs: &[PreferencePair],
) -> Gradient {
    assert!(!pairs.is_empty(), "batch must be non-empty");
    let mut grad = Gradient::zeros_like(model);
    let w = 1.0 / pairs.len() as f64;
    for pair in pairs {
        accumulate_pair(model, reference, spec, pair, w, &mut grad);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::engineered_model;
    use crate::gradcheck;
    use crate::losses::{batch_loss, LossSpec};
    use crate::model::InitPolicy;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, vocab: usize) -> PreferencePair {
        let mut seq = |lo: usize, hi: usize| -> Vec<usize> {
            let len = rng.random_range(lo..=hi);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        };
        PreferencePair { x_pos: seq(0, 3), y_pos: seq(1, 4), x_neg: seq(0, 3), y_neg: seq(1, 4) }
    }

    #[test]
    fn every_method_matches_finite_differences_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for method in LossMethod::ALL {
            for trial in 0..10 {
                let model = ToyLm::new(5, 3, 4, InitPolicy::Uniform { scale: 0.8 }, rng.random());
                let reference = ToyLm::new(5, 3, 4, InitPolicy::Uniform { scale: 0.8 }, rng.random());
                let pairs = [random_pair(&mut rng, 5), random_pair(&mut rng, 5)];
                let spec = LossSpec::new(method, 1.3);
                let report = gradcheck::check_gradient(
                    &model,
                    Some(&reference),
                    &spec,
                    &pairs,
                    gradcheck::FD_STEP,
                    gradcheck::FD_TOL,
                );
                assert!(
                    report.pass,
                    "{method} trial {trial}: max rel err {} at param {}",
                    report.max_rel_err,
                    report.worst_index
                );
            }
        }
    }

    #[test]
    fn mle_gradient_vanishes_when_positive_tokens_are_certain() {
        let mut m = ToyLm::zeros(3, 2, 2);
        m.b2[0] = 1000.0;
        let pair = PreferencePair { x_pos: vec![], y_pos: vec![0, 0], x_neg: vec![1], y_neg: vec![2] };
        assert_eq!(m.forward_step(&[], &[]).prob(0), 1.0);
        let g = pair_gradient(&m, None, &LossSpec::new(LossMethod::Mle, 0.0), &pair);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn dpo_gradient_on_identical_pair_cancels_exactly() {
        let m = ToyLm::new(6, 3, 4, InitPolicy::Uniform { scale: 1.1 }, 17);
        let pair = PreferencePair {
            x_pos: vec![1, 5],
            y_pos: vec![2, 0, 3],
            x_neg: vec![1, 5],
            y_neg: vec![2, 0, 3],
        };
        let g = pair_gradient(&m, None, &LossSpec::new(LossMethod::Dpo, 2.0), &pair);
        assert_eq!(g.max_abs(), 0.0, "positive and negative contributions should cancel bitwise");
    }

    #[test]
    fn ul_gradient_goes_non_finite_at_saturation() {
        let mut m = ToyLm::zeros(3, 2, 2);
        m.b2[1] = 1000.0;
        let pair = PreferencePair { x_pos: vec![0], y_pos: vec![0], x_neg: vec![0], y_neg: vec![1] };
        let g = pair_gradient(&m, None, &LossSpec::new(LossMethod::Ul, 1.0), &pair);
        assert!(!g.is_finite(), "saturated negative probability must surface as divergence");
    }

    #[test]
    fn ul_coefficient_explodes_near_saturation_but_stays_finite() {
        let hot = 1.0 - 1e-7;
        let m = engineered_model(&[[5e-8, hot, 5e-8]]);
        let pair = PreferencePair { x_pos: vec![0], y_pos: vec![0], x_neg: vec![0], y_neg: vec![1] };
        let p = m.forward_step(&[0], &[]).prob(1);
        let coeff = p / (1.0 - p);
        assert!(coeff > 1e6, "coefficient {coeff}");
        let g = pair_gradient(&m, None, &LossSpec::new(LossMethod::Ul, 1.0), &pair);
        assert!(g.is_finite(), "just short of saturation stays finite");
    }

    #[test]
    fn batch_gradient_is_mean_of_pair_gradients() {
        let m = ToyLm::new(4, 2, 3, InitPolicy::Uniform { scale: 0.9 }, 3);
        let p1 = PreferencePair { x_pos: vec![0], y_pos: vec![1], x_neg: vec![2], y_neg: vec![3] };
        let p2 = PreferencePair { x_pos: vec![3, 1], y_pos: vec![0, 2], x_neg: vec![], y_neg: vec![1] };
        let spec = LossSpec::new(LossMethod::Exmate, 0.7);
        let g1 = pair_gradient(&m, None, &spec, &p1);
        let g2 = pair_gradient(&m, None, &spec, &p2);
        let batch = batch_gradient(&m, None, &spec, &[p1, p2]);
        let mut want = Gradient::zeros_like(&m);
        want.add_scaled(&g1, 0.5);
        want.add_scaled(&g2, 0.5);
        for i in 0..m.n_params() {
            assert!((batch.flat(i) - want.flat(i)).abs() < 1e-15, "param {i}");
        }
    }

    #[test]
    fn gradients_are_deterministic() {
        let m = ToyLm::new(5, 2, 2, InitPolicy::Uniform { scale: 1.0 }, 9);
        let pair = PreferencePair { x_pos: vec![4], y_pos: vec![0, 1], x_neg: vec![2], y_neg: vec![3, 3] };
        let spec = LossSpec::new(LossMethod::Dpo, 1.0);
        let a = pair_gradient(&m, Some(&m), &spec, &pair);
        let b = pair_gradient(&m, Some(&m), &spec, &pair);
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_along_negative_gradient() {
        let m = ToyLm::new(5, 3, 3, InitPolicy::Uniform { scale: 0.8 }, 77);
        let pair = PreferencePair { x_pos: vec![1], y_pos: vec![2, 4], x_neg: vec![1], y_neg: vec![0] };
        for method in LossMethod::ALL {
            let spec = LossSpec::new(method, 1.0);
            let before = batch_loss(&m, None, &spec, core::slice::from_ref(&pair));
            let g = batch_gradient(&m, None, &spec, core::slice::from_ref(&pair));
            let mut stepped = m.clone();
            stepped.apply_update(&g, 1e-3);
            let after = batch_loss(&stepped, None, &spec, core::slice::from_ref(&pair));
            assert!(after < before, "{method}: {before} -> {after}");
        }
    }
}
