//! The toy autoregressive language model every loss in this crate is applied
//! to, small enough that its gradients can be checked against finite
//! differences and its behavior reasoned about in closed form.
//!
//! One prediction step sees the context as a mean-pooled bag of embeddings and
//! the most recent continuation token as a second embedding, passes the pair
//! through one tanh layer, and projects to vocabulary logits:
//!
//! ```text
//! input  = [ mean(embed[x_i]) ; embed[prev] ]        prev = last generated
//! hidden = tanh(w1 * input + b1)                     token, or the reserved
//! logits = w2 * hidden + b2                          begin row if none
//! ```
//!
//! Everything is f64 and row-major `Vec<f64>`; there is no autograd framework
//! anywhere, the backward pass in [`crate::backprop`] is written by hand.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// self * x for a column vector x of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            out[r] = acc;
        }
        out
    }

    /// self^T * x for a column vector x of length `rows`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let xr = x[r];
            for c in 0..self.cols {
                out[c] += row[c] * xr;
            }
        }
        out
    }
}

/// How fresh model parameters are filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPolicy {
    Zeros,
    /// Independent draws from Uniform(-scale, scale).
    Uniform { scale: f64 },
}

/// The model: parameter blocks plus the dimensions that shape them.
///
/// `embed` has `vocab_size + 1` rows; the extra final row is the
/// begin-of-sequence embedding used when a continuation has no previous token.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub embed: Mat,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// The model's distribution at a single prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
}

impl StepDistribution {
    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    pub fn log_prob(&self, id: usize) -> f64 {
        self.log_probs[id]
    }
}

/// Intermediate activations of one forward step, kept so the backward pass
/// can reuse them instead of recomputing.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub ctx: Vec<usize>,
    pub prev_row: usize,
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub dist: StepDistribution,
}

impl ToyLm {
    /// A model with all parameters zero; it assigns the uniform distribution
    /// at every step regardless of input.
    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        assert!(vocab_size >= 1 && embed_dim >= 1 && hidden_dim >= 1, "dimensions must be positive");
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            embed: Mat::zeros(vocab_size + 1, embed_dim),
            w1: Mat::zeros(hidden_dim, 2 * embed_dim),
            b1: vec![0.0; hidden_dim],
            w2: Mat::zeros(vocab_size, hidden_dim),
            b2: vec![0.0; vocab_size],
        }
    }

    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        hidden_dim: usize,
        init: InitPolicy,
        seed: u64,
    ) -> Self {
        let mut m = Self::zeros(vocab_size, embed_dim, hidden_dim);
        if let InitPolicy::Uniform { scale } = init {
            assert!(scale >= 0.0 && scale.is_finite(), "init scale must be finite and >= 0");
            if scale > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for block in [
                    m.embed.data_mut(),
                    m.w1.data_mut(),
                    &mut m.b1,
                    m.w2.data_mut(),
                    &mut m.b2,
                ] {
                    for v in block.iter_mut() {
                        *v = rng.random_range(-scale..scale);
                    }
                }
            }
        }
        m
    }

    /// Total number of scalar parameters across all blocks.
    pub fn n_params(&self) -> usize {
        (self.vocab_size + 1) * self.embed_dim
            + self.hidden_dim * 2 * self.embed_dim
            + self.hidden_dim
            + self.vocab_size * self.hidden_dim
            + self.vocab_size
    }

    /// Reads parameter `i` under the flat ordering embed, w1, b1, w2, b2.
    pub fn param(&self, i: usize) -> f64 {
        *self.locate(i).0
    }

    /// Mutable access to parameter `i` under the same flat ordering.
    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (block, off) = self.block_of(i);
        match block {
            0 => &mut self.embed.data_mut()[off],
            1 => &mut self.w1.data_mut()[off],
            2 => &mut self.b1[off],
            3 => &mut self.w2.data_mut()[off],
            _ => &mut self.b2[off],
        }
    }

    fn block_of(&self, i: usize) -> (u8, usize) {
        let sizes = [
            (self.vocab_size + 1) * self.embed_dim,
            self.hidden_dim * 2 * self.embed_dim,
            self.hidden_dim,
            self.vocab_size * self.hidden_dim,
            self.vocab_size,
        ];
        let mut rem = i;
        for (b, &s) in sizes.iter().enumerate() {
            if rem < s {
                return (b as u8, rem);
            }
            rem -= s;
        }
        panic!("parameter index {i} out of range");
    }

    fn locate(&self, i: usize) -> (&f64, u8) {
        let (block, off) = self.block_of(i);
        let v = match block {
            0 => &self.embed.data()[off],
            1 => &self.w1.data()[off],
            2 => &self.b1[off],
            3 => &self.w2.data()[off],
            _ => &self.b2[off],
        };
        (v, block)
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.embed.data().iter().all(|v| v.is_finite())
            && self.w1.data().iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.data().iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// Largest parameter magnitude across all blocks.
    pub fn max_abs_param(&self) -> f64 {
        let mut m = 0.0;
        for block in [self.embed.data(), self.w1.data(), &self.b1, self.w2.data(), &self.b2] {
            for &v in block {
                let a = f64::abs(v);
                if a > m || a.is_nan() {
                    m = a;
                }
            }
        }
        m
    }

    pub(crate) fn forward_trace(&self, x: &[usize], y_prefix: &[usize]) -> StepTrace {
        for &id in x.iter().chain(y_prefix.iter()) {
            assert!(id < self.vocab_size, "token id {id} out of range for vocab of {}", self.vocab_size);
        }
        let d = self.embed_dim;
        let mut input = vec![0.0; 2 * d];
        if !x.is_empty() {
            let inv = 1.0 / x.len() as f64;
            for &id in x {
                let row = self.embed.row(id);
                for j in 0..d {
                    input[j] += row[j] * inv;
                }
            }
        }
        let prev_row = match y_prefix.last() {
            Some(&id) => id,
            None => self.vocab_size,
        };
        input[d..2 * d].copy_from_slice(self.embed.row(prev_row));

        let mut pre = self.w1.matvec(&input);
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| math::tanh(p)).collect();

        let mut logits = self.w2.matvec(&hidden);
        for (l, b) in logits.iter_mut().zip(&self.b2) {
            *l += b;
        }

        let lse = math::log_sum_exp(&logits);
        let log_probs: Vec<f64> = logits.iter().map(|&l| l - lse).collect();
        let mut max = f64::NEG_INFINITY;
        for &l in &logits {
            if l > max {
                max = l;
            }
        }
        let unnorm: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
        let z: f64 = unnorm.iter().sum();
        let probs: Vec<f64> = unnorm.iter().map(|&u| u / z).collect();

        StepTrace { ctx: x.to_vec(), prev_row, input, hidden, dist: StepDistribution { logits, log_probs, probs } }
    }

    /// Distribution over the next token given a context and the continuation
    /// tokens generated so far.
    ///
    /// Panics if any token id is out of range; sequences are expected to be
    /// validated against the vocabulary at the boundary.
    pub fn forward_step(&self, x: &[usize], y_prefix: &[usize]) -> StepDistribution {
        self.forward_trace(x, y_prefix).dist
    }

    /// Log-probability of each continuation token given everything before it.
    pub fn step_log_probs(&self, x: &[usize], y: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(y.len());
        for t in 0..y.len() {
            let dist = self.forward_step(x, &y[..t]);
            out.push(dist.log_prob(y[t]));
        }
        out
    }

    /// Unnormalized sequence log-probability: the sum of per-step token
    /// log-probabilities, computed in the log domain so long sequences do not
    /// underflow.
    pub fn seq_logprob(&self, x: &[usize], y: &[usize]) -> f64 {
        self.step_log_probs(x, y).iter().sum()
    }
}

/// Jacobian of softmax probabilities with respect to logits:
/// `J[j][i] = ∂p_j/∂logit_i`, which is `p_j (1 - p_j)` on the diagonal and
/// `-p_j p_i` off it. Every row sums to zero, which is why adding a constant
/// to all logits changes nothing.
pub fn softmax_jacobian(probs: &[f64]) -> Mat {
    let n = probs.len();
    let mut j = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let v = if r == c { probs[r] * (1.0 - probs[r]) } else { -probs[r] * probs[c] };
            j.set(r, c, v);
        }
    }
    j
}

/// Per-parameter-block gradient with the same shapes as [`ToyLm`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub embed: Mat,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(model: &ToyLm) -> Self {
        Self {
            embed: Mat::zeros(model.vocab_size + 1, model.embed_dim),
            w1: Mat::zeros(model.hidden_dim, 2 * model.embed_dim),
            b1: vec![0.0; model.hidden_dim],
            w2: Mat::zeros(model.vocab_size, model.hidden_dim),
            b2: vec![0.0; model.vocab_size],
        }
    }

    /// self += scale * other, blockwise.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.blocks_mut() {
            for x in block.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0;
        for block in self.blocks() {
            for &v in block {
                let a = f64::abs(v);
                if a > m || a.is_nan() {
                    m = a;
                }
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().into_iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Reads gradient entry `i` under the same flat ordering as
    /// [`ToyLm::param`].
    pub fn flat(&self, i: usize) -> f64 {
        let mut rem = i;
        for block in self.blocks() {
            if rem < block.len() {
                return block[rem];
            }
            rem -= block.len();
        }
        panic!("gradient index {i} out of range");
    }

    fn blocks(&self) -> [&[f64]; 5] {
        [self.embed.data(), self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        let Gradient { embed, w1, b1, w2, b2 } = self;
        [embed.data_mut(), w1.data_mut(), b1, w2.data_mut(), b2]
    }
}

impl ToyLm {
    /// One SGD step: every parameter moves against the gradient.
    pub fn apply_update(&mut self, grad: &Gradient, lr: f64) {
        let pairs: [(&mut [f64], &[f64]); 5] = [
            (self.embed.data_mut(), grad.embed.data()),
            (self.w1.data_mut(), grad.w1.data()),
            (&mut self.b1, &grad.b1),
            (self.w2.data_mut(), grad.w2.data()),
            (&mut self.b2, &grad.b2),
        ];
        for (p, g) in pairs {
            for (x, y) in p.iter_mut().zip(g) {
                *x -= lr * y;
            }
        }
    }
}
