//! Synthetic preference-pair datasets realizing two controllable regimes.
//!
//! LOW_EPS pairs keep the continuations identical and perturb the context
//! slightly, so the two sides assign nearly the same sequence probability
//! and the per-step token targets coincide everywhere (the same-token
//! gradient case). HIGH_EPS pairs share the context exactly and diverge in
//! the continuation after an optional common prefix, so post-prefix steps
//! hit the different-token gradient case and the sequence probabilities
//! decouple.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::mean_information_difference;
use crate::model::{InitPolicy, ToyLm};
use crate::seq::{PreferencePair, SeqError, Vocab};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("rate {name} = {value} outside [0, 1]")]
    BadRate { name: &'static str, value: f64 },
    #[error("unknown regime {0:?}, expected low_eps or high_eps")]
    BadRegime(String),
    #[error("vocab_size {0} too small, need at least 4")]
    VocabTooSmall(usize),
    #[error("n_pairs must be positive")]
    NoPairs,
    #[error("seq_len_range ({0}, {1}) needs 1 <= min <= max")]
    BadLenRange(usize, usize),
    #[error(
        "overlap {rate} infeasible: a length-{min_len} continuation leaves no room to diverge"
    )]
    InfeasibleOverlap { rate: f64, min_len: usize },
    #[error(transparent)]
    Seq(#[from] SeqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Same continuation on both sides, context lightly perturbed.
    LowEps,
    /// Same context on both sides, continuations diverge.
    HighEps,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::LowEps => "low_eps",
            Regime::HighEps => "high_eps",
        }
    }
}

impl core::fmt::Display for Regime {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Regime {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low_eps" | "low-eps" | "low" => Ok(Regime::LowEps),
            "high_eps" | "high-eps" | "high" => Ok(Regime::HighEps),
            other => Err(SynthError::BadRegime(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub regime: Regime,
    pub vocab_size: usize,
    pub n_pairs: usize,
    /// Inclusive length range used for contexts and continuations alike.
    pub seq_len_range: (usize, usize),
    /// LOW_EPS: fraction of context tokens replaced on the negative side.
    pub context_perturb_rate: f64,
    /// HIGH_EPS: fraction of the continuation shared as a common prefix.
    pub response_overlap_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Default low-information-difference dataset: identical continuations,
    /// a tenth of the context tokens swapped.
    pub fn low_eps(seed: u64) -> Self {
        SynthSpec {
            regime: Regime::LowEps,
            vocab_size: 12,
            n_pairs: 64,
            seq_len_range: (3, 6),
            context_perturb_rate: 0.1,
            response_overlap_rate: 0.0,
            seed,
        }
    }

    /// Default high-information-difference dataset: shared contexts,
    /// continuations diverging immediately.
    pub fn high_eps(seed: u64) -> Self {
        SynthSpec {
            regime: Regime::HighEps,
            vocab_size: 12,
            n_pairs: 64,
            seq_len_range: (3, 6),
            context_perturb_rate: 0.0,
            response_overlap_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in [
            ("context_perturb_rate", self.context_perturb_rate),
            ("response_overlap_rate", self.response_overlap_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::BadRate { name, value });
            }
        }
        if self.vocab_size < 4 {
            return Err(SynthError::VocabTooSmall(self.vocab_size));
        }
        if self.n_pairs == 0 {
            return Err(SynthError::NoPairs);
        }
        let (min, max) = self.seq_len_range;
        if min < 1 || min > max {
            return Err(SynthError::BadLenRange(min, max));
        }
        if self.regime == Regime::HighEps {
            let prefix = shared_prefix_len(self.response_overlap_rate, min);
            if prefix >= min {
                return Err(SynthError::InfeasibleOverlap {
                    rate: self.response_overlap_rate,
                    min_len: min,
                });
            }
        }
        Ok(())
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    File(String),
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<PreferencePair>,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl PairDataset {
    /// Wrap pairs after validating every one against the vocabulary.
    pub fn new(
        pairs: Vec<PreferencePair>,
        vocab: Vocab,
        provenance: Provenance,
    ) -> Result<Self, SeqError> {
        if pairs.is_empty() {
            return Err(SeqError::EmptyDataset);
        }
        for pair in &pairs {
            pair.validate(vocab.size())?;
        }
        Ok(PairDataset { pairs, vocab, provenance })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn shared_prefix_len(rate: f64, len: usize) -> usize {
    libm::ceil(rate * len as f64) as usize
}

fn draw_seq(rng: &mut ChaCha8Rng, vocab_size: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..vocab_size)).collect()
}

fn draw_len(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn resample_differently(rng: &mut ChaCha8Rng, vocab_size: usize, current: usize) -> usize {
    let draw = rng.random_range(0..vocab_size - 1);
    if draw >= current {
        draw + 1
    } else {
        draw
    }
}

/// Generate a dataset described by `spec`, bit-exactly determined by its seed.
pub fn synth(spec: &SynthSpec) -> Result<PairDataset, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let pair = match spec.regime {
            Regime::LowEps => {
                let x_len = draw_len(&mut rng, spec.seq_len_range);
                let y_len = draw_len(&mut rng, spec.seq_len_range);
                let x_pos = draw_seq(&mut rng, spec.vocab_size, x_len);
                let y = draw_seq(&mut rng, spec.vocab_size, y_len);
                let mut x_neg = x_pos.clone();
                let n_perturb =
                    libm::round(spec.context_perturb_rate * x_len as f64) as usize;
                for idx in sample(&mut rng, x_len, n_perturb.min(x_len)) {
                    x_neg[idx] = resample_differently(&mut rng, spec.vocab_size, x_neg[idx]);
                }
                PreferencePair { x_pos, y_pos: y.clone(), x_neg, y_neg: y }
            }
            Regime::HighEps => {
                let x_len = draw_len(&mut rng, spec.seq_len_range);
                let y_len = draw_len(&mut rng, spec.seq_len_range);
                let x = draw_seq(&mut rng, spec.vocab_size, x_len);
                let prefix_len = shared_prefix_len(spec.response_overlap_rate, y_len);
                debug_assert!(prefix_len < y_len);
                let prefix = draw_seq(&mut rng, spec.vocab_size, prefix_len);
                let mut y_pos = prefix.clone();
                let mut y_neg = prefix;
                for _ in prefix_len..y_len {
                    let pos_tok = rng.random_range(0..spec.vocab_size);
                    let neg_tok = resample_differently(&mut rng, spec.vocab_size, pos_tok);
                    y_pos.push(pos_tok);
                    y_neg.push(neg_tok);
                }
                PreferencePair { x_pos: x.clone(), y_pos, x_neg: x, y_neg }
            }
        };
        pairs.push(pair);
    }
    let vocab = Vocab::synthetic(spec.vocab_size)?;
    Ok(PairDataset::new(pairs, vocab, Provenance::Synthetic(spec.clone()))?)
}

/// Mean `|P(y+|x+) - P(y-|x-)|` under `n_models` random probe models, the
/// statistic separating the two regimes.
pub fn regime_statistic(dataset: &PairDataset, n_models: usize, seed: u64) -> f64 {
    assert!(n_models > 0);
    let mut acc = 0.0;
    for i in 0..n_models {
        let model = ToyLm::new(
            dataset.vocab.size(),
            4,
            8,
            InitPolicy::Uniform { scale: 0.5 },
            seed.wrapping_add(i as u64),
        );
        acc += mean_information_difference(&model, &dataset.pairs);
    }
    acc / n_models as f64
}
