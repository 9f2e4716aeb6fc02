//! Precision, recall and F1 per class and micro-averaged, computed from a
//! confusion matrix (rows = true class, columns = predicted class).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![0; n * n],
        }
    }

    /// The three issue classes: bug, enhancement, question.
    pub fn issue_classes() -> Self {
        Self::zeros(Label::ALL.iter().map(|l| l.as_str().to_string()).collect())
    }

    /// Generic `n_classes` matrix with names `class_0`, `class_1`, ...
    pub fn with_classes(n_classes: usize) -> Self {
        Self::zeros((0..n_classes).map(|i| format!("class_{i}")).collect())
    }

    pub fn from_labels(mut self, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Data(format!(
                "length mismatch: {} true labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            self.add(t, p)?;
        }
        Ok(self)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n_classes();
        if truth >= n || pred >= n {
            return Err(Error::Data(format!(
                "label code out of range: ({truth}, {pred}) with {n} classes"
            )));
        }
        self.counts[truth * n + pred] += 1;
        Ok(())
    }

    /// Sums another shard into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names != self.class_names {
            return Err(Error::Shape("cannot merge confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes() + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        let n = self.n_classes();
        self.counts[c * n..(c + 1) * n].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.n_classes()).map(|r| self.get(r, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes().max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Confusion matrix over the three issue classes from label codes.
pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|&c| c as usize).collect();
    let p: Vec<usize> = pred.iter().map(|&c| c as usize).collect();
    ConfusionMatrix::issue_classes().from_labels(&t, &p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a precision or recall denominator was zero.
    #[serde(default)]
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl ClassMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let (precision, p_deg) = ratio(tp, tp + fp);
        let (recall, r_deg) = ratio(tp, tp + fn_);
        // 2PR/(P+R) rewritten over counts: 2tp / (2tp + fp + fn).
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            ratio(2 * tp, 2 * tp + fp + fn_).0
        };
        ClassMetrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            degenerate: p_deg || r_deg,
        }
    }
}

pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    let total = cm.total();
    (0..cm.n_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let fp = cm.col_sum(c) - tp;
            let fn_ = cm.row_sum(c) - tp;
            ClassMetrics::from_counts(tp, fp, fn_, total - tp - fp - fn_)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn micro(cm: &ConfusionMatrix) -> MicroMetrics {
    let classes = per_class(cm);
    let tp: u64 = classes.iter().map(|m| m.tp).sum();
    let tp_fp: u64 = classes.iter().map(|m| m.tp + m.fp).sum();
    let tp_fn: u64 = classes.iter().map(|m| m.tp + m.fn_).sum();
    let precision = ratio(tp, tp_fp).0;
    let recall = ratio(tp, tp_fn).0;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        ratio(2 * tp, tp_fp + tp_fn).0
    };
    MicroMetrics {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReportDoc", into = "ReportDoc")]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub micro: MicroMetrics,
    pub n_scored: u64,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct ReportDoc {
    per_class: BTreeMap<String, ClassMetrics>,
    micro: MicroMetrics,
    n_scored: u64,
    class_names: Vec<String>,
    confusion: Vec<Vec<u64>>,
}

impl From<MetricsReport> for ReportDoc {
    fn from(r: MetricsReport) -> Self {
        ReportDoc {
            per_class: r.class_names.iter().cloned().zip(r.per_class).collect(),
            micro: r.micro,
            n_scored: r.n_scored,
            class_names: r.class_names,
            confusion: r.confusion,
        }
    }
}

impl TryFrom<ReportDoc> for MetricsReport {
    type Error = Error;

    fn try_from(mut doc: ReportDoc) -> Result<Self> {
        let per_class = doc
            .class_names
            .iter()
            .map(|n| {
                doc.per_class
                    .remove(n)
                    .ok_or_else(|| Error::Data(format!("report lacks metrics for class {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport {
            class_names: doc.class_names,
            per_class,
            micro: doc.micro,
            n_scored: doc.n_scored,
            confusion: doc.confusion,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        MetricsReport {
            class_names: cm.class_names().to_vec(),
            per_class: per_class(cm),
            micro: micro(cm),
            n_scored: cm.total(),
            confusion: cm.rows(),
        }
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.render_table(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>6} {:>6} {:>6}", "Metric", "P", "R", "F1");
        let row = |out: &mut String, name: &str, p: f64, r: f64, f: f64| {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>6} {:>6}",
                name,
                round3(p),
                round3(r),
                round3(f)
            );
        };
        for (name, m) in self.class_names.iter().zip(&self.per_class) {
            row(&mut out, &display_name(name), m.precision, m.recall, m.f1);
        }
        row(
            &mut out,
            "Micro Avg",
            self.micro.precision,
            self.micro.recall,
            self.micro.f1,
        );
        out
    }
}

fn display_name(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Three decimals, ties to even.
pub fn round3(x: f64) -> String {
    format!("{:.3}", (x * 1000.0).round_ties_even() / 1000.0)
}
