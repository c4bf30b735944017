//! Models engineered to put exact, hand-chosen probabilities on chosen
//! tokens. Analysis and metric tests need a model whose step distribution is
//! known in advance; these constructors solve the forward pass backwards so
//! the toy architecture lands on the requested numbers.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::model::{Mat, ToyLm};

/// Gain of the output projection. Larger values widen the range of reachable
/// probabilities; 40 covers anything down to about exp(-40).
const GAIN: f64 = 40.0;

/// A three-token model where context `[c]` produces next-token distribution
/// `dists[c]` at every continuation step, regardless of the prefix.
///
/// The trick: the hidden layer passes the context embedding straight through
/// a tanh, and the output projection scales it back up, so choosing
/// `embed[c][j] = atanh(ln(dists[c][j]) / GAIN)` makes the logits equal
/// `ln(dists[c][j])` and the softmax reproduce `dists[c]` to within a few
/// ulps. Because the prefix half of the input is ignored, every step of a
/// continuation sees the same distribution, which makes multi-step
/// expectations easy to compute by hand.
///
/// Panics unless `1 <= dists.len() <= 3`, every entry is in (0, 1), and each
/// row sums to 1 within 1e-9.
pub fn engineered_model(dists: &[[f64; 3]]) -> ToyLm {
    assert!(!dists.is_empty() && dists.len() <= 3, "need 1 to 3 context distributions");
    let mut m = ToyLm::zeros(3, 3, 3);
    for (c, dist) in dists.iter().enumerate() {
        let sum: f64 = dist.iter().sum();
        assert!(f64::abs(sum - 1.0) < 1e-9, "context {c} distribution sums to {sum}");
        for (j, &p) in dist.iter().enumerate() {
            assert!(p > 0.0 && p < 1.0, "probabilities must lie strictly in (0, 1)");
            m.embed.set(c, j, math::atanh(math::ln(p) / GAIN));
        }
    }
    let mut w1 = Mat::zeros(3, 6);
    for j in 0..3 {
        w1.set(j, j, 1.0);
    }
    m.w1 = w1;
    let mut w2 = Mat::zeros(3, 3);
    for j in 0..3 {
        w2.set(j, j, GAIN);
    }
    m.w2 = w2;
    m
}

/// Distribution over three tokens that puts probability `p` on `target` and
/// splits the rest evenly.
pub fn peaked(target: usize, p: f64) -> [f64; 3] {
    assert!(target < 3);
    assert!(p > 0.0 && p < 1.0);
    let rest = (1.0 - p) / 2.0;
    let mut d = [rest; 3];
    d[target] = p;
    d
}

/// The configuration closed-form gradient identities are stated in: a single
/// shared context (token 0), one-token continuations, and a distribution
/// putting `u + eps` on the rewarded token 0 and `u` on the penalized token 1.
///
/// Returns the model together with the achieved `(u, eps)`, read back from an
/// actual forward pass so callers compare closed forms against what the model
/// really does rather than what was requested.
pub fn shared_context_model(u: f64, eps: f64) -> (ToyLm, f64, f64) {
    let p_other = 1.0 - 2.0 * u - eps;
    assert!(u > 0.0 && u + eps > 0.0 && p_other > 0.0, "(u, eps) must leave room for a third token");
    let m = engineered_model(&[[u + eps, u, p_other]]);
    let dist = m.forward_step(&[0], &[]);
    let achieved_u = dist.prob(1);
    let achieved_eps = dist.prob(0) - dist.prob(1);
    (m, achieved_u, achieved_eps)
}

/// Token sequence of length `len` repeating token `tok`.
pub fn repeat(tok: usize, len: usize) -> Vec<usize> {
    vec![tok; len]
}
