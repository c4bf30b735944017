//! Subcommand implementations: argument resolution, the calls into the core
//! crate, and the artifact files each command leaves behind.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use prefloss_core::analysis::verify_exactness_regime;
use prefloss_core::backprop::batch_gradient;
use prefloss_core::gradcheck::{finite_difference_gradient, GradReport, FD_STEP, FD_TOL};
use prefloss_core::landscape::{
    gradient_surface, loss_surface, sign_fractions, zero_crossings, Grid, SweepSpec,
    SweepVariable, DEFAULT_GRID_POINTS,
};
use prefloss_core::losses::{batch_loss, LossMethod, LossSpec, RefPolicy, Schedule};
use prefloss_core::math::{self, fmt_f64};
use prefloss_core::metrics::metric_record;
use prefloss_core::model::{InitPolicy, ToyLm};
use prefloss_core::seq::PreferencePair;
use prefloss_core::synth::{regime_statistic, synth, PairDataset, Regime, SynthSpec};
use prefloss_core::trainer::{
    beta_sweep, compare_methods, train, ModelShape, TrainConfig, TrainError, TrainInit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{
    BetaSweepArgs, Cli, Command, CompareArgs, EvalArgs, LandscapeArgs, SynthArgs, TrainArgs,
    VerifyGradArgs,
};
use crate::config::FileConfig;
use crate::csvout::{self, CompareRow};
use crate::files;
use crate::manifest::Manifest;
use crate::CliError;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::VerifyGrad(a) => cmd_verify_grad(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::BetaSweep(a) => cmd_beta_sweep(a),
    }
}

fn require_positive_beta(beta: f64) -> Result<f64, CliError> {
    if beta.is_finite() && beta > 0.0 {
        Ok(beta)
    } else {
        Err(CliError::usage(format!("beta must be finite and positive, got {beta}")))
    }
}

fn parse_loss_method(s: &str) -> Result<LossMethod, CliError> {
    s.parse::<LossMethod>().map_err(|e| CliError::usage(e.to_string()))
}

fn parse_regime(s: &str) -> Result<Regime, CliError> {
    s.parse::<Regime>().map_err(|e: prefloss_core::synth::SynthError| CliError::usage(e.to_string()))
}

/// Divergence and blowup are runtime outcomes; everything else a train call
/// can return points at bad settings.
fn train_error_to_cli(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } | TrainError::ParamsDiverged { .. } => {
            CliError::check(e.to_string())
        }
        other => CliError::usage(other.to_string()),
    }
}

/// A dataset lives either in a directory (dataset.jsonl + vocab.txt) or in a
/// bare .jsonl file with the vocabulary beside it unless --vocab points
/// elsewhere.
fn load_dataset(data: &Path, vocab: Option<&Path>) -> Result<PairDataset, CliError> {
    let (jsonl, vocab_path) = if data.is_dir() {
        (
            data.join("dataset.jsonl"),
            vocab.map(Path::to_path_buf).unwrap_or_else(|| data.join("vocab.txt")),
        )
    } else {
        let sibling = data
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(|p| p.join("vocab.txt"))
            .unwrap_or_else(|| PathBuf::from("vocab.txt"));
        (data.to_path_buf(), vocab.map(Path::to_path_buf).unwrap_or(sibling))
    };
    let vocab = files::load_vocab(&vocab_path)?;
    files::load_jsonl(&jsonl, &vocab)
}

fn dataset_from(
    data: Option<&Path>,
    regime: Option<&str>,
    n: usize,
    data_seed: u64,
) -> Result<PairDataset, CliError> {
    match (data, regime) {
        (Some(_), Some(_)) => Err(CliError::usage("give either --data or --regime, not both")),
        (None, None) => Err(CliError::usage("one of --data or --regime is required")),
        (Some(d), None) => load_dataset(d, None),
        (None, Some(r)) => {
            let mut spec = match parse_regime(r)? {
                Regime::LowEps => SynthSpec::low_eps(data_seed),
                Regime::HighEps => SynthSpec::high_eps(data_seed),
            };
            spec.n_pairs = n;
            synth(&spec).map_err(|e| CliError::usage(e.to_string()))
        }
    }
}

/// Parses "mle:20,dpo:20@0.5" into a schedule; stages without "@" take the
/// default beta.
fn parse_schedule(s: &str, default_beta: f64, ref_policy: RefPolicy) -> Result<Schedule, CliError> {
    let mut stages = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let (name, rest) = part.split_once(':').ok_or_else(|| {
            CliError::usage(format!("schedule stage {part:?}: expected method:epochs[@beta]"))
        })?;
        let (epochs_s, beta_s) = match rest.split_once('@') {
            Some((e, b)) => (e, Some(b)),
            None => (rest, None),
        };
        let epochs: usize = epochs_s.trim().parse().map_err(|_| {
            CliError::usage(format!("schedule stage {part:?}: bad epoch count {epochs_s:?}"))
        })?;
        let beta = match beta_s {
            Some(b) => b.trim().parse().map_err(|_| {
                CliError::usage(format!("schedule stage {part:?}: bad beta {b:?}"))
            })?,
            None => default_beta,
        };
        let mut spec = LossSpec::new(parse_loss_method(name)?, beta);
        spec.ref_policy = ref_policy;
        stages.push((spec, epochs));
    }
    let schedule = Schedule { stages };
    schedule.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(schedule)
}

/// Parses "mle,dpo@1,ul@1,exmate@0.5" into loss specs; entries without "@"
/// take the default beta. Duplicate methods are rejected because comparison
/// rows are keyed by method.
fn parse_method_specs(s: &str, default_beta: f64) -> Result<Vec<LossSpec>, CliError> {
    let mut specs: Vec<LossSpec> = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(CliError::usage("empty entry in method list"));
        }
        let (name, beta) = match part.split_once('@') {
            Some((n, b)) => (
                n,
                b.trim().parse().map_err(|_| {
                    CliError::usage(format!("method entry {part:?}: bad beta {b:?}"))
                })?,
            ),
            None => (part, default_beta),
        };
        let method = parse_loss_method(name)?;
        if specs.iter().any(|sp| sp.method == method) {
            return Err(CliError::usage(format!("method {method} listed twice")));
        }
        specs.push(LossSpec::new(method, beta));
    }
    Ok(specs)
}

fn parse_beta_list(s: &str) -> Result<Vec<f64>, CliError> {
    let mut betas = Vec::new();
    for part in s.split(',') {
        let beta: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad beta {:?} in list", part.trim())))?;
        betas.push(require_positive_beta(beta)?);
    }
    Ok(betas)
}

fn random_seq(rng: &mut ChaCha8Rng, vocab: usize, lo: usize, hi: usize) -> Vec<usize> {
    let len = rng.random_range(lo..=hi);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

/// Backprop vs central finite differences on freshly drawn models and pairs,
/// folded into one report per method.
fn fd_report(method: LossMethod, beta: f64, trials: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LossSpec { method, beta, ref_policy: RefPolicy::Unit };
    let mut comparisons = Vec::new();
    for _ in 0..trials {
        let vocab = rng.random_range(2..=12);
        let embed = rng.random_range(1..=6);
        let hidden = rng.random_range(1..=6);
        let model = ToyLm::new(
            vocab,
            embed,
            hidden,
            InitPolicy::Uniform { scale: 0.8 },
            rng.random(),
        );
        let pair = PreferencePair {
            x_pos: random_seq(&mut rng, vocab, 0, 3),
            y_pos: random_seq(&mut rng, vocab, 1, 4),
            x_neg: random_seq(&mut rng, vocab, 0, 3),
            y_neg: random_seq(&mut rng, vocab, 1, 4),
        };
        let pairs = core::slice::from_ref(&pair);
        let analytic = batch_gradient(&model, None, &spec, pairs);
        let numeric =
            finite_difference_gradient(&model, |m| batch_loss(m, None, &spec, pairs), FD_STEP);
        comparisons.extend((0..model.n_params()).map(|i| (analytic.flat(i), numeric[i])));
    }
    GradReport::from_comparisons(method, FD_TOL, comparisons)
}

fn report_line(closed: &GradReport, fd: &GradReport) -> String {
    let verdict = if closed.pass && fd.pass { "ok" } else { "FAIL" };
    format!(
        "[{verdict}] {}: closed-form n={} max_rel={:.3e} (tol {:.0e}); finite-diff n={} max_rel={:.3e} (tol {:.0e})",
        closed.method,
        closed.n_compared,
        closed.max_rel_err,
        closed.tolerance,
        fd.n_compared,
        fd.max_rel_err,
        fd.tolerance
    )
}

fn cmd_verify_grad(a: VerifyGradArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let beta = cfg.resolve("beta", a.beta, 1.0)?;
    let trials = cfg.resolve("trials", a.trials, 100)?;
    let seed = cfg.resolve("seed", a.seed, 0)?;
    cfg.finish()?;
    let beta = require_positive_beta(beta)?;
    if trials == 0 {
        return Err(CliError::usage("trials must be at least 1"));
    }
    let methods: Vec<LossMethod> = if a.method == "all" {
        LossMethod::ALL.to_vec()
    } else {
        vec![parse_loss_method(&a.method)?]
    };

    let mut lines = Vec::new();
    let mut all_pass = true;
    for m in methods {
        let closed = verify_exactness_regime(m, beta, trials, math::sub_seed(seed, "closed"));
        let fd = fd_report(m, beta, trials, math::sub_seed(seed, "fd"));
        all_pass &= closed.pass && fd.pass;
        let line = report_line(&closed, &fd);
        println!("{line}");
        lines.push(line);
    }

    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        files::write_atomic(&out.join("report.txt"), (lines.join("\n") + "\n").as_bytes())?;
        let mut man = Manifest::new("verify-grad", seed);
        man.set("method", &a.method);
        man.set("beta", fmt_f64(beta));
        man.set("trials", trials);
        man.write(out, started)?;
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::check("gradient verification failed, see report lines"))
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "none".to_string())
}

fn cmd_landscape(a: LandscapeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let beta = cfg.resolve("beta", a.beta, 1.0)?;
    let points = cfg.resolve("points", a.points, DEFAULT_GRID_POINTS)?;
    cfg.finish()?;
    let beta = require_positive_beta(beta)?;
    if points < 2 {
        return Err(CliError::usage("points must be at least 2"));
    }
    let methods: Vec<LossMethod> = if a.method == "all" {
        vec![LossMethod::Dpo, LossMethod::Ul, LossMethod::Exmate]
    } else {
        vec![parse_loss_method(&a.method)?]
    };
    std::fs::create_dir_all(&a.out)?;

    match a.figure {
        1 => {
            for &m in &methods {
                for var in [SweepVariable::FPlus, SweepVariable::FMinus] {
                    let mut spec = SweepSpec::standard(m, beta, var);
                    spec.grid.n_points = points;
                    let surface =
                        loss_surface(&spec).map_err(|e| CliError::usage(e.to_string()))?;
                    let name = format!("fig1_{}_{}.csv", m, var.name());
                    let path = a.out.join(&name);
                    files::write_atomic(&path, csvout::surface_csv(&surface).as_bytes())?;
                    println!("wrote {} ({:?})", path.display(), surface.direction);
                }
            }
        }
        2 => {
            let mut crossing_lines = Vec::new();
            for &m in &methods {
                let mut u_grid = Grid::default_for(SweepVariable::U);
                let mut eps_grid = Grid::default_for(SweepVariable::Epsilon);
                u_grid.n_points = points;
                eps_grid.n_points = points;
                let cells = gradient_surface(m, beta, &u_grid, &eps_grid);
                let summary = sign_fractions(&cells);
                let name = format!("fig2_{}_beta{}.csv", m, fmt_f64(beta));
                let path = a.out.join(&name);
                files::write_atomic(&path, csvout::coeff_csv(&cells).as_bytes())?;
                println!(
                    "wrote {} ({:.1}% positive / {:.1}% negative over {} valid cells)",
                    path.display(),
                    summary.positive * 100.0,
                    summary.negative * 100.0,
                    summary.n_valid
                );
                for c in zero_crossings(m, beta) {
                    crossing_lines.push(format!(
                        "{m}: {} [predicted {}, found {}]",
                        c.description,
                        opt_f64(c.predicted),
                        opt_f64(c.found)
                    ));
                }
            }
            for l in &crossing_lines {
                println!("{l}");
            }
            files::write_atomic(
                &a.out.join("crossings.txt"),
                (crossing_lines.join("\n") + "\n").as_bytes(),
            )?;
        }
        other => return Err(CliError::usage(format!("figure must be 1 or 2, got {other}"))),
    }

    let mut man = Manifest::new("landscape", 0);
    man.set("figure", a.figure);
    man.set("method", &a.method);
    man.set("beta", fmt_f64(beta));
    man.set("points", points);
    man.write(&a.out, started)
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let regime = parse_regime(&a.regime)?;
    let mut spec = match regime {
        Regime::LowEps => SynthSpec::low_eps(0),
        Regime::HighEps => SynthSpec::high_eps(0),
    };
    spec.seed = cfg.resolve("seed", a.seed, 0)?;
    spec.n_pairs = cfg.resolve("n", a.n, spec.n_pairs)?;
    spec.vocab_size = cfg.resolve("vocab_size", a.vocab_size, spec.vocab_size)?;
    spec.seq_len_range.0 = cfg.resolve("len_min", a.len_min, spec.seq_len_range.0)?;
    spec.seq_len_range.1 = cfg.resolve("len_max", a.len_max, spec.seq_len_range.1)?;
    spec.context_perturb_rate = cfg.resolve("perturb", a.perturb, spec.context_perturb_rate)?;
    spec.response_overlap_rate = cfg.resolve("overlap", a.overlap, spec.response_overlap_rate)?;
    cfg.finish()?;

    let dataset = synth(&spec).map_err(|e| CliError::usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out)?;
    files::save_jsonl(&a.out.join("dataset.jsonl"), &dataset)?;
    files::save_vocab(&a.out.join("vocab.txt"), &dataset.vocab)?;
    let stat = regime_statistic(&dataset, 5, math::sub_seed(spec.seed, "probe"));
    println!(
        "wrote {} {} pairs (vocab {}) to {}",
        dataset.pairs.len(),
        regime,
        dataset.vocab.size(),
        a.out.display()
    );
    println!("mean information difference under 5 probe models: {}", fmt_f64(stat));

    let mut man = Manifest::new("synth", spec.seed);
    man.set("regime", regime);
    man.set("n", spec.n_pairs);
    man.set("vocab_size", spec.vocab_size);
    man.set("len_min", spec.seq_len_range.0);
    man.set("len_max", spec.seq_len_range.1);
    man.set("perturb", fmt_f64(spec.context_perturb_rate));
    man.set("overlap", fmt_f64(spec.response_overlap_rate));
    man.write(&a.out, started)
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let beta = cfg.resolve("beta", a.beta, 1.0)?;
    let epochs = cfg.resolve("epochs", a.epochs, 40)?;
    let loss = cfg.resolve_opt("loss", a.loss.clone())?;
    let schedule_s = cfg.resolve_opt("schedule", a.schedule.clone())?;
    let lr = cfg.resolve("lr", a.lr, 0.5)?;
    let batch = cfg.resolve("batch", a.batch, 8)?;
    let seed = cfg.resolve("seed", a.seed, 0)?;
    let eval_every = cfg.resolve("eval_every", a.eval_every, 1)?;
    let embed_dim = cfg.resolve("embed_dim", a.embed_dim, ModelShape::default().embed_dim)?;
    let hidden_dim = cfg.resolve("hidden_dim", a.hidden_dim, ModelShape::default().hidden_dim)?;
    let init_scale = cfg.resolve("init_scale", a.init_scale, 0.3)?;
    let reference = cfg.resolve("reference", a.reference.clone(), "frozen".to_string())?;
    cfg.finish()?;

    let ref_policy = match reference.as_str() {
        "frozen" => RefPolicy::FrozenCopy,
        "unit" => RefPolicy::Unit,
        other => {
            return Err(CliError::usage(format!("reference must be frozen or unit, got {other:?}")))
        }
    };
    let schedule = match (&schedule_s, &loss) {
        (Some(s), _) => parse_schedule(s, beta, ref_policy)?,
        (None, loss) => {
            let method = parse_loss_method(loss.as_deref().unwrap_or("mle"))?;
            let mut spec = LossSpec::new(method, beta);
            spec.ref_policy = ref_policy;
            Schedule::single(spec, epochs)
        }
    };

    let dataset = load_dataset(&a.data, a.vocab.as_deref())?;
    let init = match &a.warm {
        Some(p) => TrainInit::Warm(files::load_checkpoint(p)?),
        None => TrainInit::Random { scale: init_scale },
    };
    let config = TrainConfig {
        schedule,
        learning_rate: lr,
        batch_size: batch,
        seed,
        eval_every,
        shape: ModelShape { embed_dim, hidden_dim },
        init,
    };
    let log = train(&config, &dataset).map_err(train_error_to_cli)?;

    std::fs::create_dir_all(&a.out)?;
    files::write_atomic(&a.out.join("metrics.csv"), csvout::metrics_csv(&log).as_bytes())?;
    files::save_checkpoint(&a.out.join("model.ckpt"), &log.final_model)?;
    let last = log.records.last().expect("a finished run always has records");
    println!(
        "trained {} epochs on {} pairs; final perplexity {}, agility {}",
        log.epochs_run,
        dataset.pairs.len(),
        fmt_f64(last.metrics.perplexity),
        fmt_f64(last.metrics.agility)
    );

    let mut man = Manifest::new("train", seed);
    man.set("data", a.data.display());
    man.set("schedule", schedule_s.unwrap_or_else(|| {
        format!("{}:{epochs}@{}", loss.as_deref().unwrap_or("mle"), fmt_f64(beta))
    }));
    man.set("lr", fmt_f64(lr));
    man.set("batch", batch);
    man.set("eval_every", eval_every);
    man.set("embed_dim", embed_dim);
    man.set("hidden_dim", hidden_dim);
    man.set("init_scale", fmt_f64(init_scale));
    man.set("reference", reference);
    man.write(&a.out, started)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = FileConfig::load(a.config.as_deref())?;
    cfg.finish()?;
    let model = files::load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data, a.vocab.as_deref())?;
    if dataset.vocab.size() != model.vocab_size {
        return Err(CliError::data(format!(
            "vocabulary size {} does not match checkpoint vocabulary {}",
            dataset.vocab.size(),
            model.vocab_size
        )));
    }
    let rec = metric_record(&model, &dataset.pairs);
    println!(
        "perplexity {}, agility {}, mean info diff {} over {} pairs",
        fmt_f64(rec.perplexity),
        fmt_f64(rec.agility),
        fmt_f64(rec.mean_info_diff),
        rec.n_pairs
    );
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        files::write_atomic(&out.join("eval.csv"), csvout::eval_csv(&rec).as_bytes())?;
        let mut man = Manifest::new("eval", 0);
        man.set("checkpoint", a.checkpoint.display());
        man.set("data", a.data.display());
        man.write(out, started)?;
    }
    Ok(())
}

/// Ordering claims checkable on a comparison table; each names the methods
/// it needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Assertion {
    DpoAgilityNearZero,
    DpoPplGeMle,
    ExmatePplLeMle,
    ExmateAgilityPositive,
    DpoAgilityGreatest,
    DpoPplWorst,
    ExmatePplBest,
}

impl Assertion {
    const ALL: [(&'static str, Assertion); 7] = [
        ("dpo_agility_near_zero", Assertion::DpoAgilityNearZero),
        ("dpo_ppl_ge_mle", Assertion::DpoPplGeMle),
        ("exmate_ppl_le_mle", Assertion::ExmatePplLeMle),
        ("exmate_agility_positive", Assertion::ExmateAgilityPositive),
        ("dpo_agility_greatest", Assertion::DpoAgilityGreatest),
        ("dpo_ppl_worst", Assertion::DpoPplWorst),
        ("exmate_ppl_best", Assertion::ExmatePplBest),
    ];

    fn parse(s: &str) -> Result<Assertion, CliError> {
        Assertion::ALL
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, a)| *a)
            .ok_or_else(|| {
                let names: Vec<&str> = Assertion::ALL.iter().map(|(n, _)| *n).collect();
                CliError::usage(format!(
                    "unknown assertion {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }

    fn name(self) -> &'static str {
        Assertion::ALL.iter().find(|(_, a)| *a == self).map(|(n, _)| *n).unwrap()
    }

    /// Methods that must appear in the comparison for this claim to be
    /// evaluable. All claims also need at least one other method.
    fn requires(self) -> &'static [LossMethod] {
        match self {
            Assertion::DpoAgilityNearZero
            | Assertion::DpoAgilityGreatest
            | Assertion::DpoPplWorst => &[LossMethod::Dpo],
            Assertion::DpoPplGeMle => &[LossMethod::Dpo, LossMethod::Mle],
            Assertion::ExmatePplLeMle => &[LossMethod::Exmate, LossMethod::Mle],
            Assertion::ExmateAgilityPositive | Assertion::ExmatePplBest => &[LossMethod::Exmate],
        }
    }

    fn check(self, rows: &[CompareRow]) -> (bool, String) {
        let row = |m: LossMethod| rows.iter().find(|r| r.method == m).unwrap();
        let others = |m: LossMethod| rows.iter().filter(move |r| r.method != m);
        match self {
            Assertion::DpoAgilityNearZero => {
                let dpo = row(LossMethod::Dpo).agility.abs();
                let max_other = others(LossMethod::Dpo)
                    .map(|r| r.agility.abs())
                    .fold(0.0_f64, f64::max);
                (
                    dpo < 0.01 * max_other,
                    format!("|dpo agility| {} vs 0.01 * max other {}", fmt_f64(dpo), fmt_f64(max_other)),
                )
            }
            Assertion::DpoPplGeMle => {
                let (d, m) = (row(LossMethod::Dpo).perplexity, row(LossMethod::Mle).perplexity);
                (d >= m, format!("dpo ppl {} vs mle ppl {}", fmt_f64(d), fmt_f64(m)))
            }
            Assertion::ExmatePplLeMle => {
                let (e, m) = (row(LossMethod::Exmate).perplexity, row(LossMethod::Mle).perplexity);
                (e <= m, format!("exmate ppl {} vs mle ppl {}", fmt_f64(e), fmt_f64(m)))
            }
            Assertion::ExmateAgilityPositive => {
                let e = row(LossMethod::Exmate).agility;
                (e > 0.0, format!("exmate agility {}", fmt_f64(e)))
            }
            Assertion::DpoAgilityGreatest => {
                let d = row(LossMethod::Dpo).agility;
                let max_other = others(LossMethod::Dpo)
                    .map(|r| r.agility)
                    .fold(f64::NEG_INFINITY, f64::max);
                (
                    d > max_other,
                    format!("dpo agility {} vs max other {}", fmt_f64(d), fmt_f64(max_other)),
                )
            }
            Assertion::DpoPplWorst => {
                let d = row(LossMethod::Dpo).perplexity;
                let max_other = others(LossMethod::Dpo)
                    .map(|r| r.perplexity)
                    .fold(f64::NEG_INFINITY, f64::max);
                (
                    d > max_other,
                    format!("dpo ppl {} vs max other {}", fmt_f64(d), fmt_f64(max_other)),
                )
            }
            Assertion::ExmatePplBest => {
                let e = row(LossMethod::Exmate).perplexity;
                let min_other = others(LossMethod::Exmate)
                    .map(|r| r.perplexity)
                    .fold(f64::INFINITY, f64::min);
                (
                    e < min_other,
                    format!("exmate ppl {} vs min other {}", fmt_f64(e), fmt_f64(min_other)),
                )
            }
        }
    }
}

fn cmd_compare(a: CompareArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let methods_s = cfg.resolve("methods", a.methods.clone(), "mle,dpo,ul,exmate".to_string())?;
    let beta = cfg.resolve("beta", a.beta, 1.0)?;
    let epochs = cfg.resolve("epochs", a.epochs, 40)?;
    let lr = cfg.resolve("lr", a.lr, 0.5)?;
    let batch = cfg.resolve("batch", a.batch, 8)?;
    let seeds = cfg.resolve("seeds", a.seeds, 3)?;
    let seed = cfg.resolve("seed", a.seed, 0)?;
    let n = cfg.resolve("n", a.n, 64)?;
    let data_seed = cfg.resolve("data_seed", a.data_seed, 1)?;
    let regime = cfg.resolve_opt("regime", a.regime.clone())?;
    cfg.finish()?;

    let specs = parse_method_specs(&methods_s, beta)?;
    if specs.len() < 2 {
        return Err(CliError::usage("compare needs at least two methods"));
    }
    if seeds == 0 {
        return Err(CliError::usage("seeds must be at least 1"));
    }
    if epochs == 0 {
        return Err(CliError::usage("epochs must be at least 1"));
    }
    let assertions: Vec<Assertion> =
        a.assertions.iter().map(|s| Assertion::parse(s)).collect::<Result<_, _>>()?;
    let present: BTreeSet<&str> = specs.iter().map(|sp| sp.method.name()).collect();
    for asrt in &assertions {
        for needed in asrt.requires() {
            if !present.contains(needed.name()) {
                return Err(CliError::usage(format!(
                    "assertion {} needs method {} in --methods",
                    asrt.name(),
                    needed
                )));
            }
        }
    }

    let dataset = dataset_from(a.data.as_deref(), regime.as_deref(), n, data_seed)?;
    let warm = a.warm.as_deref().map(files::load_checkpoint).transpose()?;
    let mut per_seed = Vec::with_capacity(seeds);
    for s in 0..seeds {
        let mut base = TrainConfig::new(
            Schedule::single(specs[0].clone(), 1),
            lr,
            math::sub_seed(seed, &format!("run:{s}")),
        );
        base.batch_size = batch;
        base.eval_every = epochs;
        if let Some(model) = &warm {
            base.init = TrainInit::Warm(model.clone());
        }
        let outcomes = compare_methods(&dataset, &specs, epochs, &base).map_err(train_error_to_cli)?;
        per_seed.push(outcomes);
    }

    let rows: Vec<CompareRow> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let ppl: Vec<f64> = per_seed.iter().map(|o| o[i].perplexity).collect();
            let ag: Vec<f64> = per_seed.iter().map(|o| o[i].agility).collect();
            let mpp: Vec<f64> = per_seed.iter().map(|o| o[i].mean_pos_prob).collect();
            CompareRow {
                method: spec.method,
                beta: spec.beta,
                perplexity: math::median(&ppl),
                agility: math::median(&ag),
                mean_pos_prob: math::median(&mpp),
            }
        })
        .collect();

    println!("medians over {seeds} seeds, {epochs} epochs, {} pairs:", dataset.pairs.len());
    println!("{:<8} {:>6} {:>12} {:>10} {:>14}", "method", "beta", "perplexity", "agility", "mean_pos_prob");
    for r in &rows {
        println!(
            "{:<8} {:>6} {:>12.4} {:>10.4} {:>14.4}",
            r.method.name(),
            fmt_f64(r.beta),
            r.perplexity,
            r.agility,
            r.mean_pos_prob
        );
    }

    let mut failed = 0usize;
    for asrt in &assertions {
        let (ok, detail) = asrt.check(&rows);
        println!("[{}] {}: {detail}", if ok { "PASS" } else { "FAIL" }, asrt.name());
        if !ok {
            failed += 1;
        }
    }

    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        files::write_atomic(&out.join("compare.csv"), csvout::compare_csv(&rows).as_bytes())?;
        let mut man = Manifest::new("compare", seed);
        man.set("methods", &methods_s);
        man.set("beta", fmt_f64(beta));
        man.set("epochs", epochs);
        man.set("lr", fmt_f64(lr));
        man.set("batch", batch);
        man.set("seeds", seeds);
        if let Some(w) = &a.warm {
            man.set("warm", w.display());
        }
        match (&a.data, &regime) {
            (Some(d), _) => man.set("data", d.display()),
            (None, Some(r)) => {
                man.set("regime", r);
                man.set("n", n);
                man.set("data_seed", data_seed);
            }
            (None, None) => unreachable!("dataset_from requires one source"),
        }
        man.write(out, started)?;
    }

    if failed > 0 {
        Err(CliError::check(format!("{failed} comparison assertion(s) failed")))
    } else {
        Ok(())
    }
}

fn cmd_beta_sweep(a: BetaSweepArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let betas_s = cfg.resolve("betas", a.betas.clone(), "0.05,0.1,0.5,1,5".to_string())?;
    let epochs = cfg.resolve("epochs", a.epochs, 40)?;
    let lr = cfg.resolve("lr", a.lr, 0.5)?;
    let batch = cfg.resolve("batch", a.batch, 8)?;
    let seed = cfg.resolve("seed", a.seed, 0)?;
    let n = cfg.resolve("n", a.n, 64)?;
    let data_seed = cfg.resolve("data_seed", a.data_seed, 1)?;
    let regime = cfg.resolve_opt("regime", a.regime.clone())?;
    let reference = cfg.resolve("reference", a.reference.clone(), "frozen".to_string())?;
    cfg.finish()?;

    let method = parse_loss_method(&a.method)?;
    let betas = parse_beta_list(&betas_s)?;
    if epochs == 0 {
        return Err(CliError::usage("epochs must be at least 1"));
    }
    let ref_policy = match reference.as_str() {
        "frozen" => RefPolicy::FrozenCopy,
        "unit" => RefPolicy::Unit,
        other => {
            return Err(CliError::usage(format!("reference must be frozen or unit, got {other:?}")))
        }
    };
    let dataset = dataset_from(a.data.as_deref(), regime.as_deref(), n, data_seed)?;

    let mut spec = LossSpec::new(method, betas[0]);
    spec.ref_policy = ref_policy;
    let mut base = TrainConfig::new(Schedule::single(spec, 1), lr, math::sub_seed(seed, "sweep"));
    base.batch_size = batch;
    base.eval_every = epochs;
    if let Some(p) = &a.warm {
        base.init = TrainInit::Warm(files::load_checkpoint(p)?);
    }
    let outcomes = beta_sweep(&dataset, method, &betas, epochs, &base).map_err(train_error_to_cli)?;

    println!("{method} over {} betas, {epochs} epochs, {} pairs:", betas.len(), dataset.pairs.len());
    println!("{:>8} {:>12} {:>10} {:>14}", "beta", "perplexity", "agility", "mean_pos_prob");
    for o in &outcomes {
        println!(
            "{:>8} {:>12.4} {:>10.4} {:>14.4}",
            fmt_f64(o.beta),
            o.perplexity,
            o.agility,
            o.mean_pos_prob
        );
    }
    let bs: Vec<f64> = outcomes.iter().map(|o| o.beta).collect();
    let ag: Vec<f64> = outcomes.iter().map(|o| o.agility).collect();
    let mpp: Vec<f64> = outcomes.iter().map(|o| o.mean_pos_prob).collect();
    println!("spearman(agility, beta) = {}", fmt_f64(math::spearman(&ag, &bs)));
    println!("spearman(mean_pos_prob, beta) = {}", fmt_f64(math::spearman(&mpp, &bs)));

    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        files::write_atomic(&out.join("sweep.csv"), csvout::sweep_csv(&outcomes).as_bytes())?;
        let mut man = Manifest::new("beta-sweep", seed);
        man.set("method", method);
        man.set("betas", &betas_s);
        man.set("epochs", epochs);
        man.set("lr", fmt_f64(lr));
        man.set("batch", batch);
        man.set("reference", reference);
        if let Some(p) = &a.warm {
            man.set("warm", p.display());
        }
        match (&a.data, &regime) {
            (Some(d), _) => man.set("data", d.display()),
            (None, Some(r)) => {
                man.set("regime", r);
                man.set("n", n);
                man.set("data_seed", data_seed);
            }
            (None, None) => unreachable!("dataset_from requires one source"),
        }
        man.write(out, started)?;
    }
    Ok(())
}
