//! CSV renderers for the artifacts every subcommand writes.
//!
//! Floats are formatted with the shortest round-trip representation so a
//! rerun with the same seed produces byte-identical files.

use prefloss_core::landscape::{CoeffCell, LossSurface};
use prefloss_core::losses::LossMethod;
use prefloss_core::math::fmt_f64;
use prefloss_core::metrics::{MetricRecord, GRAD_DIFF_STEPS};
use prefloss_core::trainer::{BetaOutcome, RunLog};

fn metric_columns(metrics: &MetricRecord) -> String {
    let mut cols = vec![
        fmt_f64(metrics.perplexity),
        fmt_f64(metrics.agility),
        fmt_f64(metrics.mean_info_diff),
    ];
    for t in 0..GRAD_DIFF_STEPS {
        cols.push(fmt_f64(metrics.grad_diff_per_step.get(t).copied().unwrap_or(0.0)));
    }
    cols.push(metrics.n_pairs.to_string());
    cols.join(",")
}

pub fn metrics_header() -> String {
    let mut cols = vec!["epoch", "perplexity", "agility", "info_diff"];
    let steps: Vec<String> = (1..=GRAD_DIFF_STEPS).map(|t| format!("grad_diff_t{t}")).collect();
    cols.extend(steps.iter().map(String::as_str));
    cols.push("n_pairs");
    cols.join(",")
}

/// Per-epoch metrics with `# stage ...` marker lines where the schedule
/// switches methods.
pub fn metrics_csv(log: &RunLog) -> String {
    let mut out = String::new();
    out.push_str(&metrics_header());
    out.push('\n');
    let mut boundaries = log.stage_boundaries.iter().peekable();
    for record in &log.records {
        while let Some(b) = boundaries.peek() {
            if record.epoch >= b.epoch {
                out.push_str(&format!(
                    "# stage {} ({}) begins at epoch {}\n",
                    b.stage, b.method, b.epoch
                ));
                boundaries.next();
            } else {
                break;
            }
        }
        out.push_str(&format!("{},{}\n", record.epoch, metric_columns(&record.metrics)));
    }
    out
}

/// Single-record metrics table (no epoch column).
pub fn eval_csv(metrics: &MetricRecord) -> String {
    let header = metrics_header();
    let header = header.strip_prefix("epoch,").expect("header starts with epoch");
    format!("{header}\n{}\n", metric_columns(metrics))
}

/// One-dimensional loss sweep: swept variable, its value, the loss there.
pub fn surface_csv(surface: &LossSurface) -> String {
    let mut out = String::new();
    out.push_str(&format!("{},loss\n", surface.spec.variable.name()));
    for p in &surface.points {
        out.push_str(&format!("{},{}\n", fmt_f64(p.value), fmt_f64(p.loss)));
    }
    out
}

/// Two-dimensional gradient-coefficient table over (u, epsilon). Invalid
/// cells keep NaN in the coeff column with valid=0.
pub fn coeff_csv(cells: &[CoeffCell]) -> String {
    let mut out = String::from("u,epsilon,coeff,valid\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(c.u),
            fmt_f64(c.eps),
            fmt_f64(c.coeff),
            u8::from(c.valid)
        ));
    }
    out
}

/// One row of a method comparison, already aggregated across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub method: LossMethod,
    pub beta: f64,
    pub perplexity: f64,
    pub agility: f64,
    pub mean_pos_prob: f64,
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("method,beta,perplexity,agility,mean_pos_prob\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            fmt_f64(r.beta),
            fmt_f64(r.perplexity),
            fmt_f64(r.agility),
            fmt_f64(r.mean_pos_prob)
        ));
    }
    out
}

pub fn sweep_csv(outcomes: &[BetaOutcome]) -> String {
    let mut out = String::from("beta,perplexity,agility,mean_pos_prob\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(o.beta),
            fmt_f64(o.perplexity),
            fmt_f64(o.agility),
            fmt_f64(o.mean_pos_prob)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefloss_core::losses::{LossMethod, LossSpec, Schedule};
    use prefloss_core::synth::SynthSpec;
    use prefloss_core::trainer::{train, TrainConfig};

    #[test]
    fn metrics_csv_interleaves_stage_markers_in_order() {
        let dataset = prefloss_core::synth::synth(&SynthSpec::high_eps(3)).unwrap();
        let schedule = Schedule {
            stages: vec![
                (LossSpec::new(LossMethod::Mle, 0.0), 2),
                (LossSpec::new(LossMethod::Dpo, 1.0), 2),
            ],
        };
        let log = train(&TrainConfig::new(schedule, 0.1, 7), &dataset).unwrap();
        let csv = metrics_csv(&log);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,perplexity,agility,info_diff,grad_diff_t1,grad_diff_t2,grad_diff_t3,n_pairs");
        assert_eq!(lines[1], "# stage 0 (mle) begins at epoch 0");
        assert!(lines[2].starts_with("0,"));
        let dpo_marker = lines.iter().position(|l| *l == "# stage 1 (dpo) begins at epoch 2").unwrap();
        assert!(lines[dpo_marker + 1].starts_with("2,"));
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn coeff_csv_marks_invalid_cells() {
        let cells = vec![
            CoeffCell { u: 0.5, eps: 0.1, coeff: 2.0, valid: true },
            CoeffCell { u: 0.9, eps: 0.5, coeff: f64::NAN, valid: false },
        ];
        let csv = coeff_csv(&cells);
        assert!(csv.contains("0.5,0.1,2,1"));
        assert!(csv.contains("0.9,0.5,NaN,0"));
    }
}
