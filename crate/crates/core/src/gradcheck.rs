//! Numerical verification of the hand-written gradients.
//!
//! Central finite differences perturb one parameter at a time and compare the
//! resulting slope against [`crate::backprop`]. The comparison uses relative
//! error with the denominator clamped at 1, so near-zero entries are judged
//! absolutely instead of amplifying rounding noise.
//!
//! [`GradReport`] is also the result shape for the closed-form checks in
//! [`crate::analysis`]: any procedure that compares engine values against an
//! independent oracle, entry by entry, reduces to one.

use alloc::vec::Vec;

use crate::backprop::batch_gradient;
use crate::losses::{batch_loss, LossSpec};
use crate::math;
use crate::model::ToyLm;
use crate::seq::PreferencePair;

/// Default half-width of the central-difference stencil.
pub const FD_STEP: f64 = 1e-5;

/// Default tolerance on the engine-vs-finite-difference relative error.
pub const FD_TOL: f64 = 1e-6;

/// Outcome of comparing engine values against an oracle, entry by entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub method: crate::losses::LossMethod,
    /// Number of (engine, oracle) comparisons folded in.
    pub n_compared: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// Position of the worst comparison in evaluation order; for
    /// [`check_gradient`] this is the flat parameter index under the embed,
    /// w1, b1, w2, b2 ordering.
    pub worst_index: usize,
    pub engine_at_worst: f64,
    pub oracle_at_worst: f64,
    pub tolerance: f64,
    /// True iff every comparison was finite and `max_rel_err < tolerance`.
    pub pass: bool,
}

impl GradReport {
    pub fn from_comparisons(
        method: crate::losses::LossMethod,
        tolerance: f64,
        comparisons: impl IntoIterator<Item = (f64, f64)>,
    ) -> Self {
        let mut n = 0usize;
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0f64;
        let mut worst = 0usize;
        let mut at_worst = (0.0, 0.0);
        let mut all_finite = true;
        for (i, (engine, oracle)) in comparisons.into_iter().enumerate() {
            if !engine.is_finite() || !oracle.is_finite() {
                all_finite = false;
            }
            let abs = f64::abs(engine - oracle);
            let rel = math::relative_error(engine, oracle);
            sum_rel += rel;
            if abs > max_abs {
                max_abs = abs;
            }
            if rel > max_rel || rel.is_nan() {
                max_rel = rel;
                worst = i;
                at_worst = (engine, oracle);
            }
            n += 1;
        }
        GradReport {
            method,
            n_compared: n,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            mean_rel_err: if n == 0 { 0.0 } else { sum_rel / n as f64 },
            worst_index: worst,
            engine_at_worst: at_worst.0,
            oracle_at_worst: at_worst.1,
            tolerance,
            pass: n > 0 && all_finite && max_rel < tolerance,
        }
    }
}

/// Gradient of an arbitrary scalar function of the model, one central
/// difference per parameter.
pub fn finite_difference_gradient<F>(model: &ToyLm, f: F, step: f64) -> Vec<f64>
where
    F: Fn(&ToyLm) -> f64,
{
    assert!(step > 0.0 && step.is_finite(), "step must be positive");
    let mut m = model.clone();
    let n = m.n_params();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = m.param(i);
        *m.param_mut(i) = orig + step;
        let up = f(&m);
        *m.param_mut(i) = orig - step;
        let down = f(&m);
        *m.param_mut(i) = orig;
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Compares the analytic batch gradient against finite differences of the
/// batch loss, parameter by parameter.
pub fn check_gradient(
    model: &ToyLm,
    reference: Option<&ToyLm>,
    spec: &LossSpec,
    pairs: &[PreferencePair],
    step: f64,
    tolerance: f64,
) -> GradReport {
    let analytic = batch_gradient(model, reference, spec, pairs);
    let numeric =
        finite_difference_gradient(model, |m| batch_loss(m, reference, spec, pairs), step);
    let comparisons = (0..model.n_params()).map(|i| (analytic.flat(i), numeric[i]));
    GradReport::from_comparisons(spec.method, tolerance, comparisons)
}
