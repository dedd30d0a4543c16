//! CSV and JSON artifacts.
//!
//! Column schemas (header row always written):
//!
//! * `metrics.csv`: `epoch,phase,acc_c1..acc_cH,l_wce_s,l_ce_t,l_con,l_swd,total,
//!   n_tl,pseudo_precision,degenerate_batches,w_0..w_{K-1},pl_0..pl_{K-1}`
//! * `ablation.csv`: `row,variant,seed,reported_head,reported_accuracy,acc_c1..acc_cH,
//!   l_wce_s,l_ce_t,l_con,l_swd,w_shared,w_outlier`
//! * `sweep.csv`: `row,param,value,seed,reported_accuracy,acc_c1..acc_cH,n_tl,pseudo_precision`
//! * `class_sensitivity.csv`: `row,target_classes,seed,reported_accuracy,acc_c1..acc_cH,note`
//!
//! `row` is `run` for one experiment and `mean` for the average over seeds
//! (empty seed). Losses in `ablation.csv` are the final epoch's batch means.
//! Floats use the shortest representation that parses back to the same value.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde::Serialize;

use pda_core::trainer::{MetricsRecord, Phase, Summary};

pub fn acc_columns(num_heads: usize) -> Vec<String> {
    (1..=num_heads).map(|h| format!("acc_c{h}")).collect()
}

fn line<T: Display>(fields: impl IntoIterator<Item = T>) -> String {
    let mut s = fields.into_iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn metrics_csv(records: &[MetricsRecord], num_heads: usize, num_classes: usize) -> String {
    let mut header = vec!["epoch".to_string(), "phase".into()];
    header.extend(acc_columns(num_heads));
    header.extend(
        ["l_wce_s", "l_ce_t", "l_con", "l_swd", "total", "n_tl", "pseudo_precision", "degenerate_batches"]
            .map(String::from),
    );
    header.extend((0..num_classes).map(|k| format!("w_{k}")));
    header.extend((0..num_classes).map(|k| format!("pl_{k}")));
    let mut out = line(header);
    for r in records {
        let mut row = vec![
            r.epoch.to_string(),
            match r.phase {
                Phase::Pretrain => "pretrain".into(),
                Phase::Main => "main".into(),
            },
        ];
        row.extend(r.accuracies.iter().map(f64::to_string));
        let l = &r.losses;
        row.extend([l.l_wce_s, l.l_ce_t, l.l_con, l.l_swd, l.total].map(|v| v.to_string()));
        row.push(r.n_tl.to_string());
        row.push(opt(r.pseudo_precision));
        row.push(r.degenerate_batches.to_string());
        row.extend(r.w.iter().map(f64::to_string));
        row.extend(r.pseudo_histogram.iter().map(usize::to_string));
        out.push_str(&line(row));
    }
    out
}

/// One finished run inside a multi-run command.
pub struct RunRow<'a> {
    pub label: String,
    pub seed: u64,
    pub summary: &'a Summary,
    pub last: Option<&'a MetricsRecord>,
}

pub fn ablation_csv(rows: &[RunRow<'_>], num_heads: usize, labels: &[String]) -> String {
    let mut header = vec!["row", "variant", "seed", "reported_head", "reported_accuracy"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(acc_columns(num_heads));
    header.extend(["l_wce_s", "l_ce_t", "l_con", "l_swd", "w_shared", "w_outlier"].map(String::from));
    let mut out = line(header);
    let numbers = |r: &RunRow<'_>| -> Vec<f64> {
        let s = r.summary;
        let l = r.last.map(|m| m.losses).unwrap_or_default();
        let mut v = vec![s.reported_accuracy];
        v.extend(&s.final_accuracies);
        v.extend([l.l_wce_s, l.l_ce_t, l.l_con, l.l_swd]);
        v.push(s.mean_w(&s.shared_classes));
        v.push(s.mean_w(&s.outlier_classes));
        v
    };
    for r in rows {
        let mut row = vec!["run".to_string(), r.label.clone(), r.seed.to_string(), r.summary.reported_head.to_string()];
        row.extend(numbers(r).iter().map(f64::to_string));
        out.push_str(&line(row));
    }
    for label in labels {
        let group: Vec<_> = rows.iter().filter(|r| &r.label == label).collect();
        let Some(first) = group.first() else { continue };
        let cols: Vec<Vec<f64>> = group.iter().map(|r| numbers(r)).collect();
        let mut row = vec!["mean".to_string(), label.clone(), String::new(), first.summary.reported_head.to_string()];
        row.extend((0..cols[0].len()).map(|j| mean(cols.iter().map(|c| c[j])).to_string()));
        out.push_str(&line(row));
    }
    out
}

pub fn sweep_csv(param: &str, rows: &[(f64, RunRow<'_>)], values: &[f64], num_heads: usize) -> String {
    let mut header = ["row", "param", "value", "seed", "reported_accuracy"].map(String::from).to_vec();
    header.extend(acc_columns(num_heads));
    header.extend(["n_tl", "pseudo_precision"].map(String::from));
    let mut out = line(header);
    for (value, r) in rows {
        let s = r.summary;
        let mut row = vec!["run".to_string(), param.into(), value.to_string(), r.seed.to_string()];
        row.push(s.reported_accuracy.to_string());
        row.extend(s.final_accuracies.iter().map(f64::to_string));
        row.push(s.final_n_tl.to_string());
        row.push(opt(s.final_pseudo_precision));
        out.push_str(&line(row));
    }
    for &value in values {
        let group: Vec<&Summary> = rows.iter().filter(|(v, _)| *v == value).map(|(_, r)| r.summary).collect();
        if group.is_empty() {
            continue;
        }
        let mut row = vec!["mean".to_string(), param.into(), value.to_string(), String::new()];
        row.push(mean(group.iter().map(|s| s.reported_accuracy)).to_string());
        row.extend((0..num_heads).map(|h| mean(group.iter().map(|s| s.final_accuracies[h])).to_string()));
        row.push(mean(group.iter().map(|s| s.final_n_tl as f64)).to_string());
        let precisions: Vec<f64> = group.iter().filter_map(|s| s.final_pseudo_precision).collect();
        row.push(if precisions.is_empty() { String::new() } else { mean(precisions).to_string() });
        out.push_str(&line(row));
    }
    out
}

pub enum SensitivityRow<'a> {
    Run { count: usize, seed: u64, summary: &'a Summary },
    Rejected { count: usize, note: String },
}

/// Rows grouped by ascending count: runs, then their mean, or the rejection.
pub fn class_sensitivity_csv(rows: &[SensitivityRow<'_>], counts: &[usize], num_heads: usize) -> String {
    let mut header = ["row", "target_classes", "seed", "reported_accuracy"].map(String::from).to_vec();
    header.extend(acc_columns(num_heads));
    header.push("note".into());
    let mut out = line(header);
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for count in sorted {
        let mut runs = Vec::new();
        for r in rows {
            match r {
                SensitivityRow::Run { count: c, seed, summary } if *c == count => {
                    let mut row = vec!["run".to_string(), count.to_string(), seed.to_string()];
                    row.push(summary.reported_accuracy.to_string());
                    row.extend(summary.final_accuracies.iter().map(f64::to_string));
                    row.push(String::new());
                    out.push_str(&line(row));
                    runs.push(*summary);
                }
                SensitivityRow::Rejected { count: c, note } if *c == count => {
                    let mut row = vec!["rejected".to_string(), count.to_string(), String::new(), String::new()];
                    row.extend((0..num_heads).map(|_| String::new()));
                    row.push(note.clone());
                    out.push_str(&line(row));
                }
                _ => {}
            }
        }
        if !runs.is_empty() {
            let mut row = vec!["mean".to_string(), count.to_string(), String::new()];
            row.push(mean(runs.iter().map(|s| s.reported_accuracy)).to_string());
            row.extend((0..num_heads).map(|h| mean(runs.iter().map(|s| s.final_accuracies[h])).to_string()));
            row.push(String::new());
            out.push_str(&line(row));
        }
    }
    out
}

/// `summary.json`: final results plus the config echo, no timestamps.
#[derive(Serialize)]
pub struct SummaryFile<'a> {
    pub run_id: &'a str,
    pub config_text: &'a str,
    #[serde(flatten)]
    pub summary: &'a Summary,
}

/// `manifest.json`: where and when a command ran.
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub run_id: &'a str,
    pub command: &'a str,
    pub output_dir: String,
    pub started: String,
    pub finished: String,
    pub config_text: &'a str,
    pub runs: usize,
    /// Per-epoch wall time of a single run, in milliseconds.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epoch_wall_time_ms: Vec<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pda_core::losses::LossBreakdown;

    fn record(epoch: usize, phase: Phase) -> MetricsRecord {
        MetricsRecord {
            epoch,
            phase,
            accuracies: vec![0.5, 0.25, 1.0],
            losses: LossBreakdown::from_parts(0.1, 0.2, 0.3, 0.4, 0.1, 0.4),
            w: vec![0.5, 0.5],
            n_tl: 3,
            pseudo_histogram: vec![2, 1],
            pseudo_precision: None,
            degenerate_batches: 0,
            wall_time_ms: 12.0,
        }
    }

    #[test]
    fn metrics_header_and_rows() {
        let csv = metrics_csv(&[record(0, Phase::Pretrain), record(1, Phase::Main)], 3, 2);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "epoch,phase,acc_c1,acc_c2,acc_c3,l_wce_s,l_ce_t,l_con,l_swd,total,n_tl,pseudo_precision,degenerate_batches,w_0,w_1,pl_0,pl_1"
        );
        assert!(lines[1].starts_with("0,pretrain,0.5,0.25,1,0.1,0.2,0.3,0.4,"));
        assert!(lines[2].ends_with(",3,,0,0.5,0.5,2,1"));
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
    }

    #[test]
    fn mean_of_empty_is_nan() {
        assert!(mean([]).is_nan());
        assert_eq!(mean([1.0, 2.0]), 1.5);
    }
}
