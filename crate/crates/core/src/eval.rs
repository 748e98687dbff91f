//! Frame accuracy, macro F1, run aggregation and ribbon plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{N_CLASSES, TRANSITION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Drop seconds whose ground truth is the transition class.
    pub exclude_transition: bool,
    /// Average F1 over every class, scoring classes without ground-truth
    /// support as 0, instead of over supported classes only.
    pub include_zero_support: bool,
}

/// 9×9 counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], gt: &[usize], opts: MetricOptions) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "prediction covers {} s, ground truth {} s",
                pred.len(),
                gt.len()
            )));
        }
        let mut counts = [[0u64; N_CLASSES]; N_CLASSES];
        for (&p, &g) in pred.iter().zip(gt) {
            for l in [p, g] {
                if l >= N_CLASSES {
                    return Err(Error::LabelOutOfRange {
                        label: l,
                        n_classes: N_CLASSES,
                    });
                }
            }
            if opts.exclude_transition && g == TRANSITION {
                continue;
            }
            counts[g][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// `2PR / (P + R)`, 0 when both vanish.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.counts[c][c] as f64;
        let (pred, sup) = (self.predicted(c) as f64, self.support(c) as f64);
        let p = if pred > 0.0 { tp / pred } else { 0.0 };
        let r = if sup > 0.0 { tp / sup } else { 0.0 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("no frames to evaluate")),
            n => Ok(100.0 * self.correct() as f64 / n as f64),
        }
    }

    pub fn macro_f1(&self, opts: MetricOptions) -> Result<f64> {
        let classes: Vec<usize> = (0..N_CLASSES)
            .filter(|&c| !(opts.exclude_transition && c == TRANSITION))
            .filter(|&c| opts.include_zero_support || self.support(c) > 0)
            .collect();
        if !classes.iter().any(|&c| self.support(c) > 0) {
            return Err(Error::Empty("no class with ground-truth support"));
        }
        Ok(100.0 * classes.iter().map(|&c| self.f1(c)).sum::<f64>() / classes.len() as f64)
    }
}

/// Percentage of seconds predicted correctly.
pub fn frame_accuracy(pred: &[usize], gt: &[usize], opts: MetricOptions) -> Result<f64> {
    ConfusionMatrix::new(pred, gt, opts)?.accuracy()
}

/// Unweighted mean of per-class F1, as a percentage.
pub fn macro_f1(pred: &[usize], gt: &[usize], opts: MetricOptions) -> Result<f64> {
    ConfusionMatrix::new(pred, gt, opts)?.macro_f1(opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    pub std: f64,
}

impl std::fmt::Display for RunAggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Mean and population standard deviation.
pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::Empty("no runs to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RunAggregate { mean, std: var.sqrt() })
}

/// Per-operation scores of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationScore {
    pub operation_id: String,
    pub accuracy: f64,
    pub f1: f64,
}

/// Averages, over runs, the mean and the standard deviation each run
/// reports across its operations.
pub fn summarize_runs(runs: &[Vec<OperationScore>]) -> Result<BTreeMap<String, RunAggregate>> {
    if runs.is_empty() {
        return Err(Error::Empty("no runs to summarize"));
    }
    let mut acc = Vec::new();
    let mut f1 = Vec::new();
    for run in runs {
        acc.push(aggregate_runs(&run.iter().map(|s| s.accuracy).collect::<Vec<_>>())?);
        f1.push(aggregate_runs(&run.iter().map(|s| s.f1).collect::<Vec<_>>())?);
    }
    let avg = |xs: &[RunAggregate]| RunAggregate {
        mean: xs.iter().map(|a| a.mean).sum::<f64>() / xs.len() as f64,
        std: xs.iter().map(|a| a.std).sum::<f64>() / xs.len() as f64,
    };
    Ok([("accuracy".to_string(), avg(&acc)), ("f1".to_string(), avg(&f1))]
        .into_iter()
        .collect())
}

pub fn metrics_csv(scores: &[OperationScore], seed: u64) -> String {
    let mut out = format!("# seed={seed}\noperation_id,accuracy,f1\n");
    for s in scores {
        let _ = writeln!(out, "{},{:.6},{:.6}", s.operation_id, s.accuracy, s.f1);
    }
    out
}

pub const PHASE_COLORS: [&str; N_CLASSES] = [
    "#9e9e9e", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct RibbonPair<'a> {
    pub pred: &'a [usize],
    pub gt: &'a [usize],
    pub title: &'a str,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Constant-label runs as `(start, len, label)`.
fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.2 == l => r.1 += 1,
            _ => out.push((t, 1, l)),
        }
    }
    out
}

/// One two-row ribbon (prediction above ground truth) per operation, all
/// on a shared minute axis.
pub fn ribbon_svg(pairs: &[RibbonPair<'_>], label_names: &[String]) -> Result<String> {
    for p in pairs {
        if p.pred.len() != p.gt.len() {
            return Err(Error::Shape(format!(
                "{}: prediction {} s vs ground truth {} s",
                p.title,
                p.pred.len(),
                p.gt.len()
            )));
        }
        if let Some(&l) = p.pred.iter().chain(p.gt).find(|&&l| l >= N_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: l,
                n_classes: N_CLASSES,
            });
        }
    }
    const LEFT: f64 = 120.0;
    const PLOT_W: f64 = 800.0;
    const ROW_H: f64 = 14.0;
    const BLOCK_H: f64 = 2.0 * ROW_H + 34.0;
    let legend_h = 20.0 * N_CLASSES.div_ceil(3) as f64 + 10.0;
    let longest = pairs.iter().map(|p| p.gt.len()).max().unwrap_or(0).max(1);
    let scale = PLOT_W / longest as f64;
    let height = legend_h + BLOCK_H * pairs.len() as f64 + 10.0;
    let width = LEFT + PLOT_W + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    s.push_str("<g class=\"legend\">\n");
    for c in 0..N_CLASSES {
        let x = 10.0 + (c % 3) as f64 * 300.0;
        let y = 10.0 + (c / 3) as f64 * 20.0;
        let name = label_names.get(c).map_or_else(|| format!("class {c}"), |n| xml_escape(n));
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{c}: {name}</text>"#,
            PHASE_COLORS[c],
            x + 18.0,
            y + 10.0
        );
    }
    s.push_str("</g>\n");
    for (i, p) in pairs.iter().enumerate() {
        let top = legend_h + i as f64 * BLOCK_H;
        let _ = writeln!(
            s,
            r#"<g class="operation"><text x="10" y="{}">{}</text>"#,
            top + 10.0,
            xml_escape(p.title)
        );
        for (row, (name, labels)) in [("prediction", p.pred), ("ground truth", p.gt)].iter().enumerate() {
            let y = top + 14.0 + row as f64 * ROW_H;
            let _ = writeln!(
                s,
                r#"<g class="ribbon" data-row="{name}"><text x="10" y="{}">{name}</text>"#,
                y + 11.0
            );
            for (start, len, l) in runs(labels) {
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{y}" width="{:.2}" height="{}" fill="{}"/>"#,
                    LEFT + start as f64 * scale,
                    len as f64 * scale,
                    ROW_H - 1.0,
                    PHASE_COLORS[l]
                );
            }
            s.push_str("</g>\n");
        }
        let axis_y = top + 14.0 + 2.0 * ROW_H + 2.0;
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
            LEFT + p.gt.len() as f64 * scale
        );
        let minutes = p.gt.len() / 60;
        let step = (minutes / 10).max(1);
        for m in (0..=minutes).step_by(step) {
            let x = LEFT + (m * 60) as f64 * scale;
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{axis_y}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{m} min</text>"#,
                axis_y + 4.0,
                axis_y + 15.0
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: MetricOptions = MetricOptions {
        exclude_transition: false,
        include_zero_support: false,
    };

    #[test]
    fn accuracy_extremes() {
        let gt = [1, 2, 3, 3];
        assert_eq!(frame_accuracy(&gt, &gt, ALL).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&[2, 3, 4, 4], &gt, ALL).unwrap(), 0.0);
        assert!(frame_accuracy(&[1], &gt, ALL).is_err());
    }

    #[test]
    fn f1_extremes() {
        let gt = [1; 10];
        assert_eq!(macro_f1(&gt, &gt, ALL).unwrap(), 100.0);
        assert_eq!(macro_f1(&[2; 10], &gt, ALL).unwrap(), 0.0);
        let forced = MetricOptions {
            include_zero_support: true,
            ..ALL
        };
        assert_eq!(macro_f1(&gt, &gt, forced).unwrap(), 100.0 / 9.0);
    }

    #[test]
    fn transition_can_be_excluded() {
        let gt = [0, 0, 1, 1];
        let pred = [1, 1, 1, 1];
        let ex = MetricOptions {
            exclude_transition: true,
            ..ALL
        };
        assert_eq!(frame_accuracy(&pred, &gt, ALL).unwrap(), 50.0);
        assert_eq!(frame_accuracy(&pred, &gt, ex).unwrap(), 100.0);
        assert_eq!(macro_f1(&pred, &gt, ex).unwrap(), 100.0);
        assert!(frame_accuracy(&[1, 1], &[0, 0], ex).is_err());
    }

    #[test]
    fn aggregate_closed_form() {
        let a = aggregate_runs(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.mean, 2.0);
        assert!((a.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(aggregate_runs(&[92.65]).unwrap(), RunAggregate { mean: 92.65, std: 0.0 });
        assert!(aggregate_runs(&[]).is_err());
        assert_eq!(format!("{}", RunAggregate { mean: 92.65, std: 3.52 }), "92.65 ± 3.52");
    }

    #[test]
    fn run_summary_averages_per_run_statistics() {
        let score = |a, f| OperationScore {
            operation_id: "x".into(),
            accuracy: a,
            f1: f,
        };
        let runs = vec![vec![score(90.0, 80.0), score(100.0, 90.0)], vec![score(80.0, 70.0), score(80.0, 70.0)]];
        let s = summarize_runs(&runs).unwrap();
        assert_eq!(s["accuracy"], RunAggregate { mean: 87.5, std: 2.5 });
        assert_eq!(s["f1"], RunAggregate { mean: 77.5, std: 2.5 });
    }

    #[test]
    fn svg_structure() {
        let names = crate::data::default_label_names();
        let empty = ribbon_svg(&[], &names).unwrap();
        assert!(empty.starts_with("<?xml") && empty.trim_end().ends_with("</svg>"));
        assert_eq!(empty.matches("class=\"ribbon\"").count(), 0);
        assert!(empty.contains("Puncture"));
        let gt = vec![1; 120];
        let pred = vec![2; 120];
        let one = ribbon_svg(
            &[RibbonPair {
                pred: &pred,
                gt: &gt,
                title: "op <1>",
            }],
            &names,
        )
        .unwrap();
        assert_eq!(one.matches("class=\"ribbon\"").count(), 2);
        assert!(one.contains("op &lt;1&gt;"));
        assert!(one.contains("2 min"));
    }
}
