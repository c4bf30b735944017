//! Gradient-descent training of the toy model under a loss schedule,
//! with per-epoch diagnostics and the method / beta comparison drivers.
//!
//! The optimizer is plain SGD on shuffled mini-batches: trajectories stay
//! directly interpretable against the closed-form gradient analysis, which
//! is the point of the exercise. Training aborts on a non-finite loss
//! instead of clipping, so a predicted gradient explosion shows up as an
//! abort rather than being hidden.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::batch_gradient;
use crate::losses::{batch_loss, LossError, LossMethod, LossSpec, RefPolicy, Schedule};
use crate::math;
use crate::metrics::{self, MetricRecord};
use crate::model::{InitPolicy, ToyLm};
use crate::synth::PairDataset;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}, batch {batch}: {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("parameters diverged at epoch {epoch}, batch {batch}: max |param| = {max_abs}")]
    ParamsDiverged { epoch: usize, batch: usize, max_abs: f64 },
    #[error("learning_rate must be finite and non-negative, got {0}")]
    BadLearningRate(f64),
    #[error("batch_size must be at least 1")]
    BadBatchSize,
    #[error("eval_every must be at least 1")]
    BadEvalEvery,
    #[error("init scale must be finite and positive, got {0}")]
    BadInitScale(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Parameter magnitude past which a run counts as diverged.
pub const PARAM_BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { embed_dim: 4, hidden_dim: 8 }
    }
}

/// Where the initial parameters come from: a seeded random draw, or a warm
/// start from an existing model (checkpoint restores route through this).
#[derive(Debug, Clone, PartialEq)]
pub enum TrainInit {
    Random { scale: f64 },
    Warm(ToyLm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs between metric snapshots; the initial state and the final
    /// epoch are always recorded.
    pub eval_every: usize,
    pub shape: ModelShape,
    pub init: TrainInit,
}

impl TrainConfig {
    pub fn new(schedule: Schedule, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            schedule,
            learning_rate,
            batch_size: 8,
            seed,
            eval_every: 1,
            shape: ModelShape::default(),
            init: TrainInit::Random { scale: 0.3 },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.schedule.validate()?;
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::BadLearningRate(self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadBatchSize);
        }
        if self.eval_every == 0 {
            return Err(TrainError::BadEvalEvery);
        }
        if let TrainInit::Random { scale } = self.init {
            if !scale.is_finite() || scale <= 0.0 {
                return Err(TrainError::BadInitScale(scale));
            }
        }
        Ok(())
    }
}

/// One metric snapshot. `epoch` counts completed epochs, so epoch 0 is the
/// untrained model. `ref_checksum` fingerprints the frozen reference while
/// one is active.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub ref_checksum: Option<u64>,
    pub metrics: MetricRecord,
}

/// Marks the epoch count at which a stage's method takes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageBoundary {
    pub epoch: usize,
    pub stage: usize,
    pub method: LossMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    pub stage_boundaries: Vec<StageBoundary>,
    pub final_model: ToyLm,
    pub epochs_run: usize,
}

/// FNV-1a over the parameter bit patterns; bit-identical models and only
/// those collide deliberately.
pub fn param_checksum(model: &ToyLm) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for i in 0..model.n_params() {
        for b in model.param(i).to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn initial_model(config: &TrainConfig, vocab_size: usize) -> ToyLm {
    match &config.init {
        TrainInit::Random { scale } => ToyLm::new(
            vocab_size,
            config.shape.embed_dim,
            config.shape.hidden_dim,
            InitPolicy::Uniform { scale: *scale },
            math::sub_seed(config.seed, "init"),
        ),
        TrainInit::Warm(model) => model.clone(),
    }
}

/// Mini-batch SGD over the schedule. A fresh frozen reference is
/// snapshotted at the start of every DPO stage configured with
/// [`RefPolicy::FrozenCopy`]; other stages run without a reference.
pub fn train(config: &TrainConfig, dataset: &PairDataset) -> Result<RunLog, TrainError> {
    config.validate()?;
    assert!(!dataset.pairs.is_empty(), "dataset must be non-empty");

    let mut model = initial_model(config, dataset.vocab.size());
    let mut shuffle_rng =
        ChaCha8Rng::seed_from_u64(math::sub_seed(config.seed, "shuffle"));
    let total = config.schedule.total_epochs();

    let mut records = Vec::new();
    let mut stage_boundaries = Vec::new();
    let mut reference: Option<ToyLm> = None;

    let snapshot = |model: &ToyLm, reference: &Option<ToyLm>, epoch: usize, stage: usize| {
        EpochRecord {
            epoch,
            stage,
            ref_checksum: reference.as_ref().map(param_checksum),
            metrics: metrics::metric_record(model, &dataset.pairs),
        }
    };

    records.push(snapshot(&model, &reference, 0, 0));

    let mut indices: Vec<usize> = (0..dataset.pairs.len()).collect();
    let mut batch: Vec<_> = Vec::with_capacity(config.batch_size);

    for epoch in 0..total {
        let (stage, spec, stage_start) = config.schedule.stage_at(epoch);
        if epoch == stage_start {
            stage_boundaries.push(StageBoundary { epoch, stage, method: spec.method });
            reference = match (spec.method, spec.ref_policy) {
                (LossMethod::Dpo, RefPolicy::FrozenCopy) => Some(model.clone()),
                _ => None,
            };
        }

        indices.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset.pairs[i].clone()));

            let loss = batch_loss(&model, reference.as_ref(), spec, &batch);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_idx, loss });
            }
            let grad = batch_gradient(&model, reference.as_ref(), spec, &batch);
            model.apply_update(&grad, config.learning_rate);
            if !model.is_finite() || model.max_abs_param() > PARAM_BLOWUP {
                return Err(TrainError::ParamsDiverged {
                    epoch,
                    batch: batch_idx,
                    max_abs: model.max_abs_param(),
                });
            }
        }

        let done = epoch + 1;
        if done % config.eval_every == 0 || done == total {
            records.push(snapshot(&model, &reference, done, stage));
        }
    }

    Ok(RunLog {
        config: config.clone(),
        records,
        stage_boundaries,
        final_model: model,
        epochs_run: total,
    })
}

/// Final standing of one training run in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub spec: LossSpec,
    pub perplexity: f64,
    pub agility: f64,
    pub mean_pos_prob: f64,
    pub log: RunLog,
}

/// Train each spec for `epochs` from the same seed and initialization and
/// report final perplexity / agility side by side.
pub fn compare_methods(
    dataset: &PairDataset,
    specs: &[LossSpec],
    epochs: usize,
    base: &TrainConfig,
) -> Result<Vec<MethodOutcome>, TrainError> {
    assert!(specs.len() >= 2, "comparison needs at least two methods");
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let config = TrainConfig {
            schedule: Schedule::single(spec.clone(), epochs),
            ..base.clone()
        };
        let log = train(&config, dataset)?;
        let last = log.records.last().expect("train always records");
        out.push(MethodOutcome {
            spec: spec.clone(),
            perplexity: last.metrics.perplexity,
            agility: last.metrics.agility,
            mean_pos_prob: metrics::mean_positive_probability(
                &log.final_model,
                &dataset.pairs,
            ),
            log,
        });
    }
    Ok(out)
}

/// One row of a beta sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaOutcome {
    pub beta: f64,
    pub perplexity: f64,
    pub agility: f64,
    pub mean_pos_prob: f64,
}

/// Train `method` once per beta, all else shared, and tabulate the final
/// metrics against beta. The reference policy is taken from the first stage
/// of `base.schedule` so sweeps can run under either DPO reference.
pub fn beta_sweep(
    dataset: &PairDataset,
    method: LossMethod,
    betas: &[f64],
    epochs: usize,
    base: &TrainConfig,
) -> Result<Vec<BetaOutcome>, TrainError> {
    assert!(!betas.is_empty(), "sweep needs at least one beta");
    let ref_policy = base
        .schedule
        .stages
        .first()
        .map(|(spec, _)| spec.ref_policy)
        .unwrap_or_default();
    let mut out = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut spec = LossSpec::new(method, beta);
        spec.ref_policy = ref_policy;
        let config = TrainConfig {
            schedule: Schedule::single(spec, epochs),
            ..base.clone()
        };
        let log = train(&config, dataset)?;
        let last = log.records.last().expect("train always records");
        out.push(BetaOutcome {
            beta,
            perplexity: last.metrics.perplexity,
            agility: last.metrics.agility,
            mean_pos_prob: metrics::mean_positive_probability(
                &log.final_model,
                &dataset.pairs,
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth, SynthSpec};

    fn small_dataset(seed: u64) -> PairDataset {
        synth(&SynthSpec { n_pairs: 16, ..SynthSpec::low_eps(seed) }).unwrap()
    }

    fn mle_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig::new(
            Schedule::single(LossSpec::new(LossMethod::Mle, 0.0), epochs),
            0.1,
            seed,
        )
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let ds = small_dataset(1);
        let mut config = mle_config(3, 5);
        config.learning_rate = 0.0;
        let init = initial_model(&config, ds.vocab.size());
        let log = train(&config, &ds).unwrap();
        assert_eq!(param_checksum(&log.final_model), param_checksum(&init));
        let first = &log.records.first().unwrap().metrics;
        let last = &log.records.last().unwrap().metrics;
        assert_eq!(first.perplexity, last.perplexity);
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        let mut c = mle_config(1, 0);
        c.learning_rate = -0.5;
        assert!(matches!(c.validate(), Err(TrainError::BadLearningRate(_))));
        c = mle_config(1, 0);
        c.batch_size = 0;
        assert!(matches!(c.validate(), Err(TrainError::BadBatchSize)));
        c = mle_config(1, 0);
        c.eval_every = 0;
        assert!(matches!(c.validate(), Err(TrainError::BadEvalEvery)));
        c = mle_config(1, 0);
        c.init = TrainInit::Random { scale: 0.0 };
        assert!(matches!(c.validate(), Err(TrainError::BadInitScale(_))));
    }

    #[test]
    fn mle_perplexity_strictly_decreases_early() {
        for seed in [11, 12, 13] {
            let ds = synth(&SynthSpec::low_eps(seed)).unwrap();
            let log = train(&mle_config(12, seed), &ds).unwrap();
            for w in log.records[..11.min(log.records.len())].windows(2) {
                assert!(
                    w[1].metrics.perplexity < w[0].metrics.perplexity,
                    "seed {seed}: epoch {} ppl {} !< epoch {} ppl {}",
                    w[1].epoch,
                    w[1].metrics.perplexity,
                    w[0].epoch,
                    w[0].metrics.perplexity
                );
            }
        }
    }

    #[test]
    fn schedule_stages_are_marked_at_their_start_epochs() {
        let ds = small_dataset(2);
        let schedule = Schedule {
            stages: alloc::vec![
                (LossSpec::new(LossMethod::Mle, 0.0), 2),
                (LossSpec::new(LossMethod::Dpo, 1.0), 3),
            ],
        };
        let log = train(&TrainConfig::new(schedule, 0.05, 9), &ds).unwrap();
        assert_eq!(log.epochs_run, 5);
        assert_eq!(log.stage_boundaries.len(), 2);
        assert_eq!(log.stage_boundaries[0].epoch, 0);
        assert_eq!(log.stage_boundaries[0].method, LossMethod::Mle);
        assert_eq!(log.stage_boundaries[1].epoch, 2);
        assert_eq!(log.stage_boundaries[1].method, LossMethod::Dpo);
        let epochs: Vec<usize> = log.records.iter().map(|r| r.epoch).collect();
        assert!(epochs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn frozen_reference_is_stable_within_a_dpo_stage() {
        let ds = synth(&SynthSpec::high_eps(3)).unwrap();
        let schedule = Schedule {
            stages: alloc::vec![
                (LossSpec::new(LossMethod::Mle, 0.0), 2),
                (LossSpec::new(LossMethod::Dpo, 1.0), 4),
            ],
        };
        let log = train(&TrainConfig::new(schedule, 0.05, 21), &ds).unwrap();
        let checksums: Vec<u64> = log
            .records
            .iter()
            .filter_map(|r| r.ref_checksum)
            .collect();
        assert!(!checksums.is_empty());
        assert!(checksums.iter().all(|&c| c == checksums[0]));
        for r in &log.records {
            assert_eq!(r.ref_checksum.is_some(), r.epoch > 2);
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let ds = synth(&SynthSpec::high_eps(8)).unwrap();
        let config = TrainConfig::new(
            Schedule::single(LossSpec::new(LossMethod::Exmate, 1.0), 4),
            0.1,
            33,
        );
        let a = train(&config, &ds).unwrap();
        let b = train(&config, &ds).unwrap();
        assert_eq!(param_checksum(&a.final_model), param_checksum(&b.final_model));
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn exmate_at_zero_beta_walks_the_mle_trajectory() {
        let ds = small_dataset(14);
        let base = mle_config(6, 77);
        let exmate_config = TrainConfig {
            schedule: Schedule::single(LossSpec::new(LossMethod::Exmate, 0.0), 6),
            ..base.clone()
        };
        let mle = train(&base, &ds).unwrap();
        let exmate = train(&exmate_config, &ds).unwrap();
        assert_eq!(
            param_checksum(&mle.final_model),
            param_checksum(&exmate.final_model)
        );
    }

    #[test]
    fn dpo_on_pairs_without_negatives_is_a_no_op() {
        let spec = SynthSpec {
            context_perturb_rate: 0.0,
            ..SynthSpec::low_eps(4)
        };
        let ds = synth(&spec).unwrap();
        assert!(ds.pairs.iter().all(|p| p.is_identical()));
        let config = TrainConfig::new(
            Schedule::single(LossSpec::new(LossMethod::Dpo, 1.0), 3),
            0.5,
            6,
        );
        let init = initial_model(&config, ds.vocab.size());
        let log = train(&config, &ds).unwrap();
        assert_eq!(param_checksum(&log.final_model), param_checksum(&init));
    }

    #[test]
    fn runaway_learning_rate_aborts_with_location() {
        let ds = synth(&SynthSpec::high_eps(17)).unwrap();
        let mut config = TrainConfig::new(
            Schedule::single(LossSpec::new(LossMethod::Ul, 5.0), 50),
            1e6,
            2,
        );
        config.eval_every = 50;
        match train(&config, &ds) {
            Err(TrainError::Diverged { .. } | TrainError::ParamsDiverged { .. }) => {}
            other => panic!("expected divergence abort, got {other:?}"),
        }
    }

    #[test]
    fn eval_every_thins_records_but_keeps_endpoints() {
        let ds = small_dataset(10);
        let mut config = mle_config(7, 3);
        config.eval_every = 3;
        let log = train(&config, &ds).unwrap();
        let epochs: Vec<usize> = log.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, alloc::vec![0, 3, 6, 7]);
    }

    #[test]
    fn compare_methods_shares_the_initialization() {
        let ds = synth(&SynthSpec { n_pairs: 8, ..SynthSpec::high_eps(5) }).unwrap();
        let base = mle_config(2, 50);
        let specs = [
            LossSpec::new(LossMethod::Mle, 0.0),
            LossSpec::new(LossMethod::Exmate, 1.0),
        ];
        let out = compare_methods(&ds, &specs, 2, &base).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[0].log.records[0].metrics.perplexity,
            out[1].log.records[0].metrics.perplexity
        );
        for o in &out {
            assert!(o.perplexity >= 1.0);
            assert!(o.mean_pos_prob > 0.0 && o.mean_pos_prob < 1.0);
        }
    }

    #[test]
    fn single_beta_sweep_reduces_to_a_train_run() {
        let ds = small_dataset(6);
        let base = mle_config(2, 40);
        let sweep = beta_sweep(&ds, LossMethod::Exmate, &[0.5], 2, &base).unwrap();
        assert_eq!(sweep.len(), 1);
        let config = TrainConfig {
            schedule: Schedule::single(LossSpec::new(LossMethod::Exmate, 0.5), 2),
            ..base
        };
        let log = train(&config, &ds).unwrap();
        let last = log.records.last().unwrap();
        assert_eq!(sweep[0].perplexity, last.metrics.perplexity);
        assert_eq!(sweep[0].agility, last.metrics.agility);
    }
}
