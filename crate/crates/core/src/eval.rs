//! Scoring a predicted PAG against the oracle PAG.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKey, Edgemark, TsGraph};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("graphs differ in shape: {pred:?} vs {oracle:?} (n_vars, tau_max)")]
    ShapeMismatch {
        pred: (usize, usize),
        oracle: (usize, usize),
    },
    #[error("no graphs given")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkCategory {
    Auto,
    Contemporaneous,
    Lagged,
}

impl LinkCategory {
    pub const ALL: [LinkCategory; 3] = [LinkCategory::Auto, LinkCategory::Contemporaneous, LinkCategory::Lagged];

    pub fn of(key: &EdgeKey) -> LinkCategory {
        let (a, b) = key;
        if a.var == b.var {
            LinkCategory::Auto
        } else if a.lag == b.lag {
            LinkCategory::Contemporaneous
        } else {
            LinkCategory::Lagged
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkCategory::Auto => "auto",
            LinkCategory::Contemporaneous => "contemporaneous",
            LinkCategory::Lagged => "lagged",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CategoryCounts {
    pub fn add(&mut self, o: &CategoryCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 1 when nothing was there to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn scores(&self) -> Scores {
        let (p, r) = (self.precision(), self.recall());
        Scores {
            precision: p,
            recall: r,
            f1: f1(p, r),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Raw counts of one category; sums across replicates give micro averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub adjacency: CategoryCounts,
    pub edgemark: CategoryCounts,
    /// Predicted edge ends carrying a conflict mark.
    pub conflict_marks: u64,
    /// All predicted edge ends (two per predicted edge).
    pub predicted_marks: u64,
}

impl CellCounts {
    fn add(&mut self, o: &CellCounts) {
        self.adjacency.add(&o.adjacency);
        self.edgemark.add(&o.edgemark);
        self.conflict_marks += o.conflict_marks;
        self.predicted_marks += o.predicted_marks;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub auto: CellCounts,
    pub contemporaneous: CellCounts,
    pub lagged: CellCounts,
}

impl EvalCounts {
    pub fn cell(&self, c: LinkCategory) -> &CellCounts {
        match c {
            LinkCategory::Auto => &self.auto,
            LinkCategory::Contemporaneous => &self.contemporaneous,
            LinkCategory::Lagged => &self.lagged,
        }
    }

    fn cell_mut(&mut self, c: LinkCategory) -> &mut CellCounts {
        match c {
            LinkCategory::Auto => &mut self.auto,
            LinkCategory::Contemporaneous => &mut self.contemporaneous,
            LinkCategory::Lagged => &mut self.lagged,
        }
    }

    pub fn total(&self) -> CellCounts {
        let mut t = CellCounts::default();
        for c in LinkCategory::ALL {
            t.add(self.cell(c));
        }
        t
    }

    pub fn add(&mut self, o: &EvalCounts) {
        for c in LinkCategory::ALL {
            self.cell_mut(c).add(o.cell(c));
        }
    }

    /// Flat column names matching [`EvalCounts::csv_fields`].
    pub fn csv_header(prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for c in LinkCategory::ALL {
            for kind in ["adj", "mark"] {
                for m in ["tp", "fp", "fn"] {
                    out.push(format!("{prefix}{}_{kind}_{m}", c.name()));
                }
            }
            out.push(format!("{prefix}{}_conflicts", c.name()));
            out.push(format!("{prefix}{}_marks", c.name()));
        }
        out
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in LinkCategory::ALL {
            let cell = self.cell(c);
            for k in [&cell.adjacency, &cell.edgemark] {
                out.extend([k.tp, k.fp, k.fn_].map(|v| v.to_string()));
            }
            out.push(cell.conflict_marks.to_string());
            out.push(cell.predicted_marks.to_string());
        }
        out
    }

    pub fn report(&self) -> EvalReport {
        EvalReport::from_counts(self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub adjacency_counts: CategoryCounts,
    pub edgemark_counts: CategoryCounts,
    pub adjacency: Scores,
    pub edgemark: Scores,
    pub conflict_rate: f64,
}

impl CellReport {
    fn from_cell(c: &CellCounts) -> CellReport {
        CellReport {
            adjacency_counts: c.adjacency,
            edgemark_counts: c.edgemark,
            adjacency: c.adjacency.scores(),
            edgemark: c.edgemark.scores(),
            conflict_rate: if c.predicted_marks == 0 {
                0.0
            } else {
                c.conflict_marks as f64 / c.predicted_marks as f64
            },
        }
    }

    pub fn harmonic_score(&self) -> f64 {
        harmonic_score(
            self.adjacency.recall,
            self.adjacency.precision,
            self.edgemark.recall,
            self.edgemark.precision,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auto: CellReport,
    pub contemporaneous: CellReport,
    pub lagged: CellReport,
    pub total: CellReport,
    pub harmonic_score: f64,
    pub conflict_rate: f64,
    pub n_replicates: usize,
}

impl EvalReport {
    pub fn from_counts(c: &EvalCounts) -> EvalReport {
        let total = CellReport::from_cell(&c.total());
        EvalReport {
            auto: CellReport::from_cell(&c.auto),
            contemporaneous: CellReport::from_cell(&c.contemporaneous),
            lagged: CellReport::from_cell(&c.lagged),
            harmonic_score: total.harmonic_score(),
            conflict_rate: total.conflict_rate,
            total,
            n_replicates: 1,
        }
    }

    pub fn cell(&self, c: LinkCategory) -> &CellReport {
        match c {
            LinkCategory::Auto => &self.auto,
            LinkCategory::Contemporaneous => &self.contemporaneous,
            LinkCategory::Lagged => &self.lagged,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Sum counts over replicates, then compute ratios.
    #[default]
    Micro,
    /// Average per-replicate ratios.
    Macro,
}

/// Combine per-replicate counts into one report.
pub fn aggregate(per_replicate: &[EvalCounts], averaging: Averaging) -> Result<EvalReport, EvalError> {
    if per_replicate.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = per_replicate.len();
    let mut sum = EvalCounts::default();
    for c in per_replicate {
        sum.add(c);
    }
    let mut report = sum.report();
    if averaging == Averaging::Macro {
        let reports: Vec<EvalReport> = per_replicate.iter().map(EvalCounts::report).collect();
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
        let mean_cell = |g: &dyn Fn(&EvalReport) -> &CellReport, base: CellReport| {
            let scores = |h: &dyn Fn(&CellReport) -> &Scores| Scores {
                precision: mean(&|r| h(g(r)).precision),
                recall: mean(&|r| h(g(r)).recall),
                f1: mean(&|r| h(g(r)).f1),
            };
            CellReport {
                adjacency: scores(&|c| &c.adjacency),
                edgemark: scores(&|c| &c.edgemark),
                conflict_rate: mean(&|r| g(r).conflict_rate),
                ..base
            }
        };
        report = EvalReport {
            auto: mean_cell(&|r| &r.auto, report.auto),
            contemporaneous: mean_cell(&|r| &r.contemporaneous, report.contemporaneous),
            lagged: mean_cell(&|r| &r.lagged, report.lagged),
            total: mean_cell(&|r| &r.total, report.total),
            harmonic_score: mean(&|r| r.harmonic_score),
            conflict_rate: mean(&|r| r.conflict_rate),
            n_replicates: n,
        };
    }
    report.n_replicates = n;
    Ok(report)
}

/// Count adjacency and edgemark agreement of `pred` with `oracle`.
pub fn compare_counts(pred: &TsGraph, oracle: &TsGraph) -> Result<EvalCounts, EvalError> {
    let shape = |g: &TsGraph| (g.n_vars(), g.tau_max());
    if shape(pred) != shape(oracle) {
        return Err(EvalError::ShapeMismatch {
            pred: shape(pred),
            oracle: shape(oracle),
        });
    }
    let mut out = EvalCounts::default();
    let (pm, om) = (pred.edge_map(), oracle.edge_map());
    for (key, &(pa, pb)) in pm {
        let cell = out.cell_mut(LinkCategory::of(key));
        cell.predicted_marks += 2;
        cell.conflict_marks += [pa, pb].iter().filter(|&&m| m == Edgemark::Conflict).count() as u64;
        match om.get(key) {
            Some(&(oa, ob)) => {
                cell.adjacency.tp += 1;
                for (p, o) in [(pa, oa), (pb, ob)] {
                    if p == o {
                        cell.edgemark.tp += 1;
                    } else {
                        cell.edgemark.fp += 1;
                        cell.edgemark.fn_ += 1;
                    }
                }
            }
            None => {
                cell.adjacency.fp += 1;
                cell.edgemark.fp += 2;
            }
        }
    }
    for key in om.keys().filter(|k| !pm.contains_key(k)) {
        let cell = out.cell_mut(LinkCategory::of(key));
        cell.adjacency.fn_ += 1;
        cell.edgemark.fn_ += 2;
    }
    Ok(out)
}

pub fn compare(pred: &TsGraph, oracle: &TsGraph) -> Result<EvalReport, EvalError> {
    Ok(compare_counts(pred, oracle)?.report())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Harmonic mean of adjacency recall/precision and edgemark
/// recall/precision; 0 if any of them is 0.
pub fn harmonic_score(ra: f64, pa: f64, re: f64, pe: f64) -> f64 {
    let xs = [ra, pa, re, pe];
    if xs.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    4.0 / xs.iter().map(|x| 1.0 / x).sum::<f64>()
}

/// Pooled fraction of predicted edge ends that carry a conflict mark.
pub fn conflict_rate(pred_pags: &[TsGraph]) -> Result<f64, EvalError> {
    if pred_pags.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut conflicts, mut marks) = (0usize, 0usize);
    for g in pred_pags {
        for e in g.edges() {
            marks += 2;
            conflicts += [e.mark_at_a, e.mark_at_b].iter().filter(|&&m| m == Edgemark::Conflict).count();
        }
    }
    Ok(if marks == 0 { 0.0 } else { conflicts as f64 / marks as f64 })
}

/// Grid of precision / recall / F1 per category and kind, with the
/// baseline F1 alongside when given.
pub fn format_table(report: &EvalReport, baseline: Option<&EvalReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} | {:>9} {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} {:>9}",
        "", "adj prec", "adj rec", "adj F1", "base F1", "mark prec", "mark rec", "mark F1", "base F1"
    );
    let _ = writeln!(s, "{}", "-".repeat(102));
    let rows = [
        ("auto", &report.auto, baseline.map(|b| &b.auto)),
        ("contemporaneous", &report.contemporaneous, baseline.map(|b| &b.contemporaneous)),
        ("lagged", &report.lagged, baseline.map(|b| &b.lagged)),
        ("total", &report.total, baseline.map(|b| &b.total)),
    ];
    let fmt_base = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    for (name, c, b) in rows {
        let _ = writeln!(
            s,
            "{:<16} | {:>9.2} {:>9.2} {:>9.2} {:>9} | {:>9.2} {:>9.2} {:>9.2} {:>9}",
            name,
            c.adjacency.precision,
            c.adjacency.recall,
            c.adjacency.f1,
            fmt_base(b.map(|b| b.adjacency.f1)),
            c.edgemark.precision,
            c.edgemark.recall,
            c.edgemark.f1,
            fmt_base(b.map(|b| b.edgemark.f1)),
        );
    }
    let _ = writeln!(s);
    let _ = write!(s, "harmonic score: {:.2}", report.harmonic_score);
    if let Some(b) = baseline {
        let _ = write!(s, " (baseline {:.2})", b.harmonic_score);
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "conflict rate: {:.3} (auto {:.3}, contemporaneous {:.3}, lagged {:.3})",
        report.conflict_rate, report.auto.conflict_rate, report.contemporaneous.conflict_rate, report.lagged.conflict_rate
    );
    let _ = writeln!(s, "replicates: {}", report.n_replicates);
    s
}
