//! Flag definitions. Every optional flag can also come from a `--config`
//! key=value file; explicit flags win over file entries.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "prefloss", version, about = "Preference-loss laboratory on a toy language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check engine gradients against finite differences and closed forms.
    VerifyGrad(VerifyGradArgs),
    /// Sweep loss surfaces and gradient-coefficient surfaces to CSV.
    Landscape(LandscapeArgs),
    /// Generate a synthetic preference-pair dataset.
    Synth(SynthArgs),
    /// Train the toy model under a loss schedule.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train several methods side by side and check orderings.
    Compare(CompareArgs),
    /// Train one method across a list of betas.
    BetaSweep(BetaSweepArgs),
}

#[derive(Debug, Parser)]
pub struct VerifyGradArgs {
    /// Method to verify: all, mle, dpo, ul, or exmate.
    #[arg(long, default_value = "all")]
    pub method: String,
    /// Loss coefficient; must be positive.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Random instances per method and per check.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for report.txt and the manifest; stdout-only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct LandscapeArgs {
    /// 1 for loss curves over a single probability, 2 for the same-token
    /// coefficient surface over (u, epsilon).
    #[arg(long)]
    pub figure: u8,
    /// Method or "all" (the three preference methods).
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct SynthArgs {
    /// low_eps or high_eps.
    #[arg(long)]
    pub regime: String,
    /// Number of pairs.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub len_min: Option<usize>,
    #[arg(long)]
    pub len_max: Option<usize>,
    /// LOW_EPS: fraction of context tokens replaced on the negative side.
    #[arg(long)]
    pub perturb: Option<f64>,
    /// HIGH_EPS: fraction of the continuation shared as a prefix.
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct TrainArgs {
    /// Dataset directory (dataset.jsonl + vocab.txt) or a .jsonl file.
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file; defaults to vocab.txt beside the dataset.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Single-stage loss method; ignored when --schedule is given.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Multi-stage schedule, e.g. "mle:20,dpo:20@0.5"; stage beta defaults
    /// to --beta.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Warm-start checkpoint instead of a random initialization.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// DPO reference policy: frozen (snapshot at stage start) or unit.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or .jsonl file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct CompareArgs {
    /// Dataset directory or .jsonl file; mutually exclusive with --regime.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthesize the dataset in memory: low_eps or high_eps.
    #[arg(long)]
    pub regime: Option<String>,
    /// Pairs when synthesizing via --regime.
    #[arg(long)]
    pub n: Option<usize>,
    /// Dataset seed when synthesizing via --regime.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Comma-separated method list with optional per-method beta, e.g.
    /// "mle,dpo@1,ul@1,exmate@0.5".
    #[arg(long)]
    pub methods: Option<String>,
    /// Default beta for methods listed without "@".
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Number of training seeds; metrics are aggregated by median.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shared warm-start checkpoint every method trains from.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// Ordering assertion, repeatable: dpo_agility_near_zero,
    /// dpo_ppl_ge_mle, exmate_ppl_le_mle, exmate_agility_positive,
    /// dpo_agility_greatest, dpo_ppl_worst, exmate_ppl_best.
    #[arg(long = "assert")]
    pub assertions: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct BetaSweepArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Method trained at each beta.
    #[arg(long)]
    pub method: String,
    /// Comma-separated positive betas, e.g. "0.05,0.1,0.5,1,5".
    #[arg(long)]
    pub betas: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shared warm-start checkpoint every run trains from.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// DPO reference policy: frozen (snapshot at stage start) or unit.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
