//! Cross-module invariants checked at scale: softmax algebra, gradient
//! oracles, closed-form factor signs, loss-surface shape, and metric
//! identities, over large seeded scans and proptest-generated structures.

use prefloss_core::analysis::{
    diff_token_factor, dpo_prefactor, same_token_coeff, AnalysisPoint,
};
use prefloss_core::backprop::pair_gradient;
use prefloss_core::gradcheck::{check_gradient, FD_STEP, FD_TOL};
use prefloss_core::landscape::{gradient_surface, Grid};
use prefloss_core::losses::{exmate_loss, mle_loss, scalar_loss};
use prefloss_core::math;
use prefloss_core::metrics::{
    agility, gradient_difference, mean_information_difference, perplexity, PNorm,
};
use prefloss_core::model::{softmax_jacobian, InitPolicy, StepDistribution};
use prefloss_core::{LossMethod, LossSpec, PreferencePair, ToyLm};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model_with_vocab(rng: &mut ChaCha8Rng, vocab: usize) -> ToyLm {
    let embed = rng.random_range(1..=8);
    let hidden = rng.random_range(1..=8);
    let scale = rng.random_range(0.2..2.0);
    ToyLm::new(vocab, embed, hidden, InitPolicy::Uniform { scale }, rng.random())
}

fn random_model(rng: &mut ChaCha8Rng) -> ToyLm {
    let vocab = rng.random_range(2..=16);
    random_model_with_vocab(rng, vocab)
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, lo: usize, hi: usize) -> Vec<usize> {
    let len = rng.random_range(lo..=hi);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn random_pair(rng: &mut ChaCha8Rng, vocab: usize) -> PreferencePair {
    PreferencePair {
        x_pos: random_seq(rng, vocab, 0, 3),
        y_pos: random_seq(rng, vocab, 1, 5),
        x_neg: random_seq(rng, vocab, 0, 3),
        y_neg: random_seq(rng, vocab, 1, 5),
    }
}

fn random_dist(rng: &mut ChaCha8Rng, vocab: usize) -> StepDistribution {
    let raw: Vec<f64> = (0..vocab).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    let log_probs: Vec<f64> = probs.iter().map(|&p| math::ln(p)).collect();
    StepDistribution { logits: log_probs.clone(), log_probs, probs }
}

fn consistent_point(rng: &mut ChaCha8Rng, beta: f64) -> AnalysisPoint {
    let vocab = rng.random_range(4..=10);
    let p_plus = random_dist(rng, vocab);
    let p_minus = random_dist(rng, vocab);
    let u = p_plus.probs[0];
    let eps = p_minus.probs[1] - u;
    AnalysisPoint {
        u,
        eps,
        beta,
        p_plus,
        p_minus,
        y_pos_t: 0,
        y_neg_t: 1,
        z_other: 2,
    }
}

#[test]
fn step_distributions_normalize_for_ten_thousand_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for _ in 0..10_000 {
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let x = random_seq(&mut rng, vocab, 0, 3);
        let prefix = random_seq(&mut rng, vocab, 0, 4);
        let dist = model.forward_step(&x, &prefix);
        let sum: f64 = dist.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        assert!(dist.probs.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn logit_shift_leaves_probabilities_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    for _ in 0..500 {
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let shift = rng.random_range(-30.0..30.0);
        let mut shifted = model.clone();
        for b in shifted.b2.iter_mut() {
            *b += shift;
        }
        let x = random_seq(&mut rng, vocab, 0, 3);
        let prefix = random_seq(&mut rng, vocab, 0, 3);
        let a = model.forward_step(&x, &prefix);
        let b = shifted.forward_step(&x, &prefix);
        for (pa, pb) in a.probs.iter().zip(&b.probs) {
            assert!((pa - pb).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let softmax = |logits: &[f64]| -> Vec<f64> {
        let lse = math::log_sum_exp(logits);
        logits.iter().map(|&l| math::exp(l - lse)).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let h = 1e-6;
    for _ in 0..50 {
        let v = rng.random_range(2..=8);
        let logits: Vec<f64> = (0..v).map(|_| rng.random_range(-3.0..3.0)).collect();
        let probs = softmax(&logits);
        let jac = softmax_jacobian(&probs);
        for c in 0..v {
            let mut up = logits.clone();
            let mut down = logits.clone();
            up[c] += h;
            down[c] -= h;
            let pu = softmax(&up);
            let pd = softmax(&down);
            for r in 0..v {
                let fd = (pu[r] - pd[r]) / (2.0 * h);
                assert!(
                    (jac.get(r, c) - fd).abs() < 1e-7,
                    "d p_{r} / d logit_{c}: {} vs {fd}",
                    jac.get(r, c)
                );
            }
        }
    }
}

#[test]
fn every_loss_gradient_matches_finite_differences_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    for method in LossMethod::ALL {
        for trial in 0..15 {
            let model = random_model(&mut rng);
            let vocab = model.b2.len();
            let pairs = [random_pair(&mut rng, vocab)];
            let beta = [0.5, 1.0, 2.0][trial % 3];
            let spec = LossSpec::new(method, beta);
            let reference = if method == LossMethod::Dpo && trial % 2 == 0 {
                Some(random_model_with_vocab(&mut rng, vocab))
            } else {
                None
            };
            let report =
                check_gradient(&model, reference.as_ref(), &spec, &pairs, FD_STEP, FD_TOL);
            assert!(
                report.pass,
                "{method} trial {trial}: max rel err {}",
                report.max_rel_err
            );
        }
    }
}

#[test]
fn pair_gradients_are_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    for method in LossMethod::ALL {
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let pair = random_pair(&mut rng, vocab);
        let spec = LossSpec::new(method, 1.0);
        let a = pair_gradient(&model, Some(&model), &spec, &pair);
        let b = pair_gradient(&model, Some(&model), &spec, &pair);
        for i in 0..model.n_params() {
            assert_eq!(a.flat(i).to_bits(), b.flat(i).to_bits());
        }
    }
}

#[test]
fn referred_token_factors_keep_their_signs_over_a_hundred_thousand_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let methods = [LossMethod::Dpo, LossMethod::Ul, LossMethod::Exmate];
    for i in 0..100_000 {
        let beta = rng.random_range(0.05..5.0);
        let point = consistent_point(&mut rng, beta);
        for method in methods {
            let ypos = diff_token_factor(method, &point, point.y_pos_t).unwrap();
            let yneg = diff_token_factor(method, &point, point.y_neg_t).unwrap();
            assert!(ypos >= 0.0, "{method} iter {i}: factor_ypos {ypos}");
            assert!(yneg <= 0.0, "{method} iter {i}: factor_yneg {yneg}");
            if method == LossMethod::Exmate {
                let other = diff_token_factor(method, &point, point.z_other).unwrap();
                let bound = 1.0 + beta;
                assert!(ypos.abs() <= bound && yneg.abs() <= bound && other.abs() <= bound);
            }
        }
        let pre = dpo_prefactor(point.u, point.eps, beta);
        assert!(pre > 0.0 && pre < beta, "prefactor {pre} at beta {beta}");
    }
}

#[test]
fn dpo_prefactor_vanishes_as_the_negative_probability_does() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    for _ in 0..200 {
        let u = rng.random_range(0.05..0.95);
        let beta = rng.random_range(0.5..3.0);
        let eps = -u + 1e-12;
        let pre = dpo_prefactor(u, eps, beta);
        assert!(pre >= 0.0 && pre < 1e-5 * beta, "prefactor {pre}");
    }
}

#[test]
fn ul_positive_factor_explodes_as_the_negative_side_saturates() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    for beta in [0.5, 1.0, 2.0] {
        let mut point = consistent_point(&mut rng, beta);
        // The negative side concentrates on y_neg while still scoring the
        // positive token; probabilities here are free scalars, not one
        // normalized vector.
        point.p_minus.probs[point.y_neg_t] = 1.0 - 1e-7;
        point.p_minus.probs[point.y_pos_t] = 0.3;
        point.eps = point.p_minus.probs[point.y_neg_t] - point.u;
        let factor = diff_token_factor(LossMethod::Ul, &point, point.y_pos_t).unwrap();
        assert!(factor > 1e6, "beta {beta}: factor {factor}");
    }
}

#[test]
fn scalar_losses_move_monotonically_on_a_hundred_point_grid() {
    let n = 100;
    let grid: Vec<f64> = (0..n)
        .map(|i| 1e-3 + (1.0 - 2e-3) * i as f64 / (n - 1) as f64)
        .collect();
    for method in [LossMethod::Dpo, LossMethod::Ul, LossMethod::Exmate] {
        let down: Vec<f64> = grid.iter().map(|&p| scalar_loss(method, p, 0.1, 1.0)).collect();
        assert!(
            down.windows(2).all(|w| w[1] < w[0]),
            "{method} not decreasing in the positive probability"
        );
        let up: Vec<f64> = grid.iter().map(|&p| scalar_loss(method, 0.1, p, 1.0)).collect();
        assert!(
            up.windows(2).all(|w| w[1] > w[0]),
            "{method} not increasing in the negative probability"
        );
    }
    let flat: Vec<f64> =
        grid.iter().map(|&p| scalar_loss(LossMethod::Mle, 0.1, p, 1.0)).collect();
    assert!(flat.windows(2).all(|w| w[1] == w[0]));
}

#[test]
fn exmate_penalty_stays_within_its_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0009);
    for _ in 0..10_000 {
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let pair = random_pair(&mut rng, vocab);
        let beta = rng.random_range(0.05..5.0);
        let penalty = exmate_loss(&model, beta, &pair) - mle_loss(&model, &pair);
        assert!(penalty > 0.0 && penalty <= beta, "penalty {penalty} at beta {beta}");
    }
}

#[test]
fn ul_loss_clears_any_threshold_near_saturation() {
    for beta in [0.5, 1.0, 2.0] {
        for m in [5.0, 10.0, 20.0] {
            // 1 - exp(-m/beta)/2 must stay below 1.0 in f64 for the
            // single-step construction to exist at all.
            if m / beta > 30.0 {
                continue;
            }
            let p_neg = 1.0 - 0.5 * math::exp(-m / beta);
            let loss = scalar_loss(LossMethod::Ul, 0.5, p_neg, beta);
            assert!(loss > m, "beta {beta}: loss {loss} below threshold {m}");
        }
    }
}

#[test]
fn dpo_collapses_to_log_two_as_beta_vanishes() {
    let ln2 = math::ln(2.0);
    for (beta, tol) in [(1e-3, 1e-2), (1e-6, 1e-5)] {
        let mut worst = 0.0f64;
        for i in 0..50 {
            for j in 0..50 {
                let p_pos = 1e-3 + (1.0 - 2e-3) * i as f64 / 49.0;
                let p_neg = 1e-3 + (1.0 - 2e-3) * j as f64 / 49.0;
                let gap = (scalar_loss(LossMethod::Dpo, p_pos, p_neg, beta) - ln2).abs();
                worst = worst.max(gap);
            }
        }
        assert!(worst < tol, "beta {beta}: sup gap {worst}");
    }
}

#[test]
fn exmate_at_zero_beta_is_mle_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_000a);
    for _ in 0..200 {
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let pair = random_pair(&mut rng, vocab);
        assert_eq!(
            exmate_loss(&model, 0.0, &pair).to_bits(),
            mle_loss(&model, &pair).to_bits()
        );
    }
}

#[test]
fn same_token_sign_maps_match_their_closed_form_predictors() {
    let u_grid = Grid::new(1e-4, 1.0 - 1e-4, 200).unwrap();
    let eps_grid = Grid::new(-1.0 + 1e-4, 1.0 - 1e-4, 200).unwrap();
    for beta in [0.5, 1.0, 2.0] {
        for method in LossMethod::ALL {
            let predictor = |u: f64, eps: f64| -> f64 {
                match method {
                    LossMethod::Mle => 1.0,
                    LossMethod::Dpo => eps,
                    LossMethod::Ul => 1.0 - (1.0 + beta) * u - eps,
                    LossMethod::Exmate => 1.0 / beta - u,
                }
            };
            for cell in gradient_surface(method, beta, &u_grid, &eps_grid) {
                if !cell.valid {
                    continue;
                }
                let expected = predictor(cell.u, cell.eps);
                assert_eq!(
                    cell.coeff > 0.0,
                    expected > 0.0,
                    "{method} beta {beta} at ({}, {})",
                    cell.u,
                    cell.eps
                );
                assert_eq!(cell.coeff < 0.0, expected < 0.0);
            }
        }
    }
}

#[test]
fn same_token_coefficients_agree_with_scalar_loss_slopes() {
    // Descent direction sanity: a positive coefficient means raising the
    // shared token's probability lowers the loss at matched eps.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_000b);
    let h = 1e-7;
    for _ in 0..2_000 {
        let u = rng.random_range(0.05..0.9);
        let eps = rng.random_range(-0.8 * u..f64::min(0.95 - u, 0.5));
        let beta = rng.random_range(0.1..3.0);
        for method in LossMethod::ALL {
            let coeff = same_token_coeff(method, u, eps, beta).unwrap();
            let lo = scalar_loss(method, u - h, u + eps - h, beta);
            let hi = scalar_loss(method, u + h, u + eps + h, beta);
            let slope = (hi - lo) / (2.0 * h);
            if coeff.abs() > 1e-3 {
                assert_eq!(
                    coeff > 0.0,
                    slope < 0.0,
                    "{method} at u {u} eps {eps} beta {beta}: coeff {coeff}, slope {slope}"
                );
            }
        }
    }
}

proptest! {
    #[test]
    fn agility_is_the_mean_signed_probability_gap(
        seed in any::<u64>(),
        n_pairs in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let pairs: Vec<PreferencePair> =
            (0..n_pairs).map(|_| random_pair(&mut rng, vocab)).collect();
        let a = agility(&model, &pairs);
        prop_assert!(a.abs() <= 1.0);
        let direct: f64 = pairs
            .iter()
            .map(|p| {
                math::exp(model.seq_logprob(&p.x_pos, &p.y_pos))
                    - math::exp(model.seq_logprob(&p.x_neg, &p.y_neg))
            })
            .sum::<f64>()
            / n_pairs as f64;
        prop_assert!((a - direct).abs() < 1e-15);
        prop_assert!(a.abs() <= mean_information_difference(&model, &pairs) + 1e-15);
        prop_assert!(perplexity(&model, &pairs) >= 1.0);
    }

    #[test]
    fn gradient_difference_satisfies_the_triangle_inequality(
        seed in any::<u64>(),
        t in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let a = random_seq(&mut rng, vocab, 0, 3);
        let b = random_seq(&mut rng, vocab, 0, 3);
        let c = random_seq(&mut rng, vocab, 0, 3);
        let y = random_seq(&mut rng, vocab, t, t + 2);
        let pair_of = |x1: &[usize], x2: &[usize]| PreferencePair {
            x_pos: x1.to_vec(),
            y_pos: y.clone(),
            x_neg: x2.to_vec(),
            y_neg: y.clone(),
        };
        for p in [PNorm::One, PNorm::Two, PNorm::Inf] {
            let ab = gradient_difference(&model, &pair_of(&a, &b), t, p).unwrap();
            let bc = gradient_difference(&model, &pair_of(&b, &c), t, p).unwrap();
            let ac = gradient_difference(&model, &pair_of(&a, &c), t, p).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            let ba = gradient_difference(&model, &pair_of(&b, &a), t, p).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
        }
        let shared = gradient_difference(&model, &pair_of(&a, &a), 1, PNorm::One).unwrap();
        prop_assert_eq!(shared, 0.0);
    }

    #[test]
    fn dpo_gradient_vanishes_on_identical_pairs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng);
        let vocab = model.b2.len();
        let x = random_seq(&mut rng, vocab, 0, 3);
        let y = random_seq(&mut rng, vocab, 1, 4);
        let pair = PreferencePair {
            x_pos: x.clone(),
            y_pos: y.clone(),
            x_neg: x,
            y_neg: y,
        };
        let spec = LossSpec::new(LossMethod::Dpo, 1.0);
        let grad = pair_gradient(&model, Some(&model), &spec, &pair);
        prop_assert_eq!(grad.max_abs(), 0.0);
    }
}
