//! Prediction files, scoring, cross-validation aggregation and report
//! tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stack::ClassLabel;

pub const PREDICTION_HEADER: &str = "id\tp0\tp1\tp2";
const PROB_SUM_TOLERANCE: f64 = 1e-6;
const LOSS_CLAMP: f64 = 1e-12;

/// Run metadata carried in the `#key=value` block of a prediction file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMeta {
    pub model: String,
    pub fold: Option<usize>,
    pub epochs: Option<usize>,
    pub pretrained: bool,
    pub seconds_per_epoch: Option<f64>,
    pub layers: Option<usize>,
    /// Which split the rows come from (`val` or `test`), when known.
    pub split: Option<String>,
    /// Keys this toolkit does not interpret, preserved verbatim.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub meta: RunMeta,
    pub rows: Vec<PredictionRow>,
}

fn pred_err(file: &str, line: usize, reason: impl ToString) -> Error {
    Error::Prediction {
        file: file.to_string(),
        line,
        reason: reason.to_string(),
    }
}

/// Index of the largest probability; the lowest class id wins ties.
pub fn argmax3(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

impl PredictionSet {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut meta = RunMeta::default();
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        let mut saw_header = false;
        for (i, l) in text.lines().enumerate() {
            let line = i + 1;
            if !saw_header {
                if let Some(kv) = l.strip_prefix('#') {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| pred_err(file, line, "expected #key=value"))?;
                    let bad = |e: &dyn std::fmt::Display| pred_err(file, line, format!("{k}: {e}"));
                    match k {
                        "model" => meta.model = v.to_string(),
                        "fold" => meta.fold = Some(v.parse().map_err(|e| bad(&e))?),
                        "epochs" => meta.epochs = Some(v.parse().map_err(|e| bad(&e))?),
                        "layers" => meta.layers = Some(v.parse().map_err(|e| bad(&e))?),
                        "pretrained" => meta.pretrained = v.parse().map_err(|e| bad(&e))?,
                        "seconds_per_epoch" => {
                            meta.seconds_per_epoch = Some(v.parse().map_err(|e| bad(&e))?)
                        }
                        "split" => meta.split = Some(v.to_string()),
                        _ => {
                            meta.extra.insert(k.to_string(), v.to_string());
                        }
                    }
                    continue;
                }
                if l != PREDICTION_HEADER {
                    return Err(pred_err(file, line, format!("expected header {PREDICTION_HEADER:?}")));
                }
                saw_header = true;
                continue;
            }
            if l.is_empty() {
                continue;
            }
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(pred_err(file, line, "expected 4 tab-separated fields"));
            }
            let mut probs = [0.0; 3];
            for (p, s) in probs.iter_mut().zip(&f[1..]) {
                *p = s
                    .parse::<f64>()
                    .map_err(|e| pred_err(file, line, format!("{s:?}: {e}")))?;
                if !p.is_finite() || *p < 0.0 {
                    return Err(pred_err(file, line, format!("invalid probability {s}")));
                }
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(pred_err(file, line, format!("probabilities sum to {sum}")));
            }
            if !seen.insert(f[0].to_string()) {
                return Err(pred_err(file, line, format!("duplicate id {:?}", f[0])));
            }
            rows.push(PredictionRow {
                id: f[0].to_string(),
                probs,
            });
        }
        if !saw_header {
            return Err(pred_err(file, 0, "missing header"));
        }
        Ok(PredictionSet { meta, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "#model={}", m.model);
        if let Some(v) = m.fold {
            let _ = writeln!(s, "#fold={v}");
        }
        if let Some(v) = m.epochs {
            let _ = writeln!(s, "#epochs={v}");
        }
        let _ = writeln!(s, "#pretrained={}", m.pretrained);
        if let Some(v) = m.seconds_per_epoch {
            let _ = writeln!(s, "#seconds_per_epoch={v}");
        }
        if let Some(v) = m.layers {
            let _ = writeln!(s, "#layers={v}");
        }
        if let Some(v) = &m.split {
            let _ = writeln!(s, "#split={v}");
        }
        for (k, v) in &m.extra {
            let _ = writeln!(s, "#{k}={v}");
        }
        s.push_str(PREDICTION_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.id, r.probs[0], r.probs[1], r.probs[2]);
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; 3],
    /// `confusion[truth][predicted]`.
    pub confusion: [[usize; 3]; 3],
    pub support: [usize; 3],
    pub seconds_per_epoch: Option<f64>,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }
}

fn f1_scores(confusion: &[[usize; 3]; 3]) -> [f64; 3] {
    let mut f1 = [0.0; 3];
    for c in 0..3 {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..3).map(|t| confusion[t][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        f1[c] = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    f1
}

/// Scores predictions against ground truth: argmax accuracy, macro F1,
/// confusion matrix and mean clamped cross-entropy.
pub fn score(pred: &PredictionSet, truth: &BTreeMap<String, ClassLabel>) -> Result<EvalReport> {
    if pred.rows.is_empty() {
        return Err(Error::EmptySplit("prediction"));
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut loss = 0.0;
    for row in &pred.rows {
        let t = truth
            .get(&row.id)
            .ok_or_else(|| Error::MissingTruth(row.id.clone()))?
            .id();
        confusion[t][argmax3(&row.probs)] += 1;
        loss -= row.probs[t].max(LOSS_CLAMP).ln();
    }
    let total = pred.rows.len();
    let support = [
        confusion[0].iter().sum(),
        confusion[1].iter().sum(),
        confusion[2].iter().sum(),
    ];
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let per_class_f1 = f1_scores(&confusion);
    Ok(EvalReport {
        loss: loss / total as f64,
        accuracy: correct as f64 / total as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / 3.0,
        per_class_f1,
        confusion,
        support,
        seconds_per_epoch: pred.meta.seconds_per_epoch,
    })
}

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
}

fn spread(values: &[f64]) -> Spread {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Spread { mean, sd }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub folds: usize,
    pub loss: Spread,
    pub accuracy: Spread,
    pub macro_f1: Spread,
    /// Present only when every fold reported a timing.
    pub seconds_per_epoch: Option<Spread>,
}

pub fn aggregate_cv(reports: &[EvalReport]) -> Result<CvSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyReports);
    }
    let pick = |f: fn(&EvalReport) -> f64| spread(&reports.iter().map(f).collect::<Vec<_>>());
    let times: Option<Vec<f64>> = reports.iter().map(|r| r.seconds_per_epoch).collect();
    Ok(CvSummary {
        folds: reports.len(),
        loss: pick(|r| r.loss),
        accuracy: pick(|r| r.accuracy),
        macro_f1: pick(|r| r.macro_f1),
        seconds_per_epoch: times.map(|t| spread(&t)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    /// Rows are layer counts; includes a Time column.
    Layers,
    /// Rows are epoch budgets.
    Epochs,
    /// Rows are models; pre-trained rows get a `*` suffix.
    Models,
}

impl std::str::FromStr for TableStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(TableStyle::Layers),
            "epochs" => Ok(TableStyle::Epochs),
            "models" => Ok(TableStyle::Models),
            _ => Err(Error::Config(format!(
                "table style must be layers, epochs or models, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub pretrained: bool,
    pub loss: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub seconds_per_epoch: Option<f64>,
}

impl TableRow {
    pub fn from_report(label: impl Into<String>, report: &EvalReport, pretrained: bool) -> Self {
        TableRow {
            label: label.into(),
            pretrained,
            loss: report.loss,
            f1: report.macro_f1,
            accuracy: report.accuracy,
            seconds_per_epoch: report.seconds_per_epoch,
        }
    }
}

/// Renders a pipe-separated text table with 3-decimal values.
pub fn render_table(rows: &[TableRow], style: TableStyle) -> String {
    let first = match style {
        TableStyle::Layers => "Layers",
        TableStyle::Epochs => "Epochs",
        TableStyle::Models => "Model",
    };
    let mut header = vec![first.to_string(), "loss".into(), "F1-score".into(), "accuracy".into()];
    if style == TableStyle::Layers {
        header.push("Time".into());
    }
    let mut cells: Vec<Vec<String>> = vec![header];
    for r in rows {
        let mut label = r.label.clone();
        if style == TableStyle::Models && r.pretrained && !label.ends_with('*') {
            label.push('*');
        }
        let mut row = vec![
            label,
            format!("{:.3}", r.loss),
            format!("{:.3}", r.f1),
            format!("{:.3}", r.accuracy),
        ];
        if style == TableStyle::Layers {
            row.push(r.seconds_per_epoch.map(|t| format!("{t:.3}")).unwrap_or_default());
        }
        cells.push(row);
    }
    let ncol = cells[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, &w)| format!("{v:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut out = String::new();
    out.push_str(&line(&cells[0]));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&rule.join("-+-"));
    out.push('\n');
    for row in &cells[1..] {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Renders fold aggregates as `mean ± sd` per metric.
pub fn render_cv_table(rows: &[(String, CvSummary)]) -> String {
    let mut out = String::from("run\tfolds\tloss\tF1-score\taccuracy\tTime\n");
    for (label, s) in rows {
        let pm = |v: &Spread| format!("{:.3} ± {:.3}", v.mean, v.sd);
        let _ = writeln!(
            out,
            "{label}\t{}\t{}\t{}\t{}\t{}",
            s.folds,
            pm(&s.loss),
            pm(&s.macro_f1),
            pm(&s.accuracy),
            s.seconds_per_epoch.as_ref().map(pm).unwrap_or_default()
        );
    }
    out
}

/// Machine-readable TSV with one line per scored prediction file.
pub fn metrics_tsv(rows: &[(String, &RunMeta, &EvalReport)]) -> String {
    let mut out = String::from(
        "label\tmodel\tsplit\tfold\tlayers\tepochs\tpretrained\tloss\taccuracy\tmacro_f1\t\
         f1_0\tf1_1\tf1_2\tsupport_0\tsupport_1\tsupport_2\tseconds_per_epoch\tconfusion\n",
    );
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for (label, m, r) in rows {
        let confusion: Vec<String> = r
            .confusion
            .iter()
            .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .collect();
        let _ = writeln!(
            out,
            "{label}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.model,
            m.split.as_deref().unwrap_or(""),
            opt(m.fold),
            opt(m.layers),
            opt(m.epochs),
            m.pretrained,
            r.loss,
            r.accuracy,
            r.macro_f1,
            r.per_class_f1[0],
            r.per_class_f1[1],
            r.per_class_f1[2],
            r.support[0],
            r.support[1],
            r.support[2],
            r.seconds_per_epoch.map(|v| v.to_string()).unwrap_or_default(),
            confusion.join(";")
        );
    }
    out
}
