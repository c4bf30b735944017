//! Small numeric helpers shared across the crate.
//!
//! All transcendentals route through `libm` so the crate stays `no_std`; the
//! rest is the arithmetic glue (stable log-sum-exp, seed derivation, error
//! measures) that several modules need but none owns.

use alloc::string::String;
use alloc::vec::Vec;

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

pub fn exp2(x: f64) -> f64 {
    libm::exp2(x)
}

/// ln(1 + x), accurate for x near zero.
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn atanh(x: f64) -> f64 {
    libm::atanh(x)
}

pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Numerically stable log(sum(exp(xs))). Empty input yields -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0;
    for &x in xs {
        s += exp(x - m);
    }
    m + ln(s)
}

/// Logistic sigmoid, computed on the side of the axis that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// -log(sigmoid(x)) without forming sigmoid(x) first, so large |x| stays exact.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        ln(1.0 + exp(-x))
    } else {
        -x + ln(1.0 + exp(x))
    }
}

/// Relative error with the denominator clamped at 1, so tiny true values are
/// judged on absolute error instead of blowing up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = f64::max(1.0, f64::max(f64::abs(a), f64::abs(b)));
    f64::abs(a - b) / denom
}

/// splitmix64 step; the standard 64-bit mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a named sub-seed from a master seed. Each distinct label gives an
/// independent stream, so one `--seed` can drive data generation, model init,
/// and batch shuffling without the streams aliasing.
pub fn sub_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = master ^ h;
    splitmix64(&mut state)
}

/// Mean of a slice; 0.0 for empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a slice; 0.0 for empty input. Even lengths average the two
/// middle elements.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Spearman rank correlation between two equal-length slices. Ties get the
/// average of the ranks they straddle. Returns 0.0 when either side has zero
/// rank variance (including n < 2), since the correlation is then undefined.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman needs paired samples");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / sqrt(vx * vy)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("rank over NaN"));
    let mut out = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Formats a float the way the file formats expect: shortest representation
/// that round-trips, via the standard Display impl.
pub fn fmt_f64(x: f64) -> String {
    alloc::format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive_in_safe_range() {
        let xs: [f64; 3] = [0.1, -0.7, 2.3];
        let naive = xs.iter().map(|&x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
        let xs = [-1000.0, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn neg_log_sigmoid_at_zero_is_ln_two() {
        assert!((neg_log_sigmoid(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn neg_log_sigmoid_tracks_direct_form() {
        for &x in &[-3.0, -0.5, 0.0, 0.5, 3.0] {
            let direct = -(sigmoid(x)).ln();
            assert!((neg_log_sigmoid(x) - direct).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn relative_error_clamps_denominator() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-9).abs() < 1e-24);
        assert!((relative_error(200.0, 100.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sub_seed_separates_labels_and_masters() {
        let a = sub_seed(42, "data");
        let b = sub_seed(42, "init");
        let c = sub_seed(43, "data");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, sub_seed(42, "data"));
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn spearman_is_one_for_monotone_and_minus_one_for_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 25.0, 90.0];
        let down = [5.0, 4.0, 3.0, 1.0];
        assert!((spearman(&x, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_ties_average_ranks() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 1.0, 2.0, 3.0];
        let r = spearman(&x, &y);
        assert!(r > 0.9 && r <= 1.0, "r={r}");
    }

    #[test]
    fn fmt_f64_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 12345.678, -0.25] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
