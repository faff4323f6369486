use serde_json::{json, Map, Value};

use super::bootstrap::{bootstrap_many, BootstrapSpec, Interval};
use super::{confusion_metrics, roc_auc, youden_threshold};
use crate::error::{Error, Result};
use crate::numcore::{LabelMatrix, Matrix, RngStream};

pub const CI_METHOD_PER_CLASS: &str = "percentile bootstrap over (score, label) pairs of the class, threshold fixed at c*";
pub const CI_METHOD_MEAN: &str = "percentile bootstrap over whole rows, mean of per-class values, thresholds fixed at c*";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricCis {
    pub auc: Interval,
    pub sensitivity: Interval,
    pub specificity: Interval,
    pub f1: Interval,
}

impl MetricCis {
    fn from_vec(v: &[Interval]) -> MetricCis {
        MetricCis {
            auc: v[0],
            sensitivity: v[1],
            specificity: v[2],
            f1: v[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub auc: f64,
    /// Youden-optimal cut-off `c*`.
    pub threshold: f64,
    pub youden: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub ci: Option<MetricCis>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassRow {
    Reported(ClassMetrics),
    /// Labels of the class are all positive or all negative.
    Missing { name: String, reason: String },
}

impl ClassRow {
    pub fn name(&self) -> &str {
        match self {
            ClassRow::Reported(m) => &m.name,
            ClassRow::Missing { name, .. } => name,
        }
    }

    pub fn metrics(&self) -> Option<&ClassMetrics> {
        match self {
            ClassRow::Reported(m) => Some(m),
            ClassRow::Missing { .. } => None,
        }
    }
}

/// Arithmetic means over the reported classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanMetrics {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub ci: Option<MetricCis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub classes: Vec<ClassRow>,
    pub mean: MeanMetrics,
    pub warnings: Vec<String>,
}

/// AUC, sensitivity, specificity and F1 at a fixed threshold.
fn class_values(scores: &[f64], labels: &[bool], threshold: f64) -> Result<[f64; 4]> {
    let auc = roc_auc(scores, labels)?;
    let m = confusion_metrics(scores, labels, threshold)?;
    Ok([auc, m.sensitivity, m.specificity, m.f1])
}

/// Per-class table with Youden cut-offs, optional bootstrap intervals and a
/// mean row. Classes whose labels are one-sided are reported as missing and
/// left out of the mean.
pub fn per_class_report(
    probs: &Matrix,
    labels: &LabelMatrix,
    class_names: &[String],
    spec: Option<&BootstrapSpec>,
) -> Result<MetricReport> {
    if probs.shape() != labels.shape() {
        return Err(Error::Shape(format!(
            "probabilities {}x{} vs labels {}x{}",
            probs.rows(),
            probs.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    if class_names.len() != labels.cols() {
        return Err(Error::Shape(format!(
            "{} class names for {} classes",
            class_names.len(),
            labels.cols()
        )));
    }
    let n = probs.rows();
    let mut classes = Vec::with_capacity(labels.cols());
    let mut warnings = Vec::new();
    let mut reported: Vec<(usize, f64)> = Vec::new();
    for (k, name) in class_names.iter().enumerate() {
        let s = probs.column(k);
        let y = labels.column(k);
        let (threshold, youden) = match youden_threshold(&s, &y) {
            Ok(t) => t,
            Err(Error::UndefinedAuc) => {
                warnings.push(format!("class {name}: labels are one-sided; excluded from the mean"));
                classes.push(ClassRow::Missing {
                    name: name.clone(),
                    reason: "one-sided labels".into(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let [auc, sensitivity, specificity, f1] = class_values(&s, &y, threshold)?;
        let ci = match spec {
            Some(spec) => {
                let stream = RngStream::named(spec.seed, &format!("bootstrap/class/{k}"));
                let (mut bs, mut by) = (Vec::with_capacity(n), Vec::with_capacity(n));
                let v = bootstrap_many(n, spec, &stream, |idx| {
                    bs.clear();
                    by.clear();
                    bs.extend(idx.iter().map(|&i| s[i]));
                    by.extend(idx.iter().map(|&i| y[i]));
                    Ok(class_values(&bs, &by, threshold)?.to_vec())
                })?;
                Some(MetricCis::from_vec(&v))
            }
            None => None,
        };
        reported.push((k, threshold));
        classes.push(ClassRow::Reported(ClassMetrics {
            name: name.clone(),
            auc,
            threshold,
            youden,
            sensitivity,
            specificity,
            f1,
            ci,
        }));
    }
    if reported.is_empty() {
        return Err(Error::UndefinedAuc);
    }

    let rows: Vec<&ClassMetrics> = classes.iter().filter_map(ClassRow::metrics).collect();
    let m = rows.len() as f64;
    let avg = |f: fn(&ClassMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / m;
    let mean = MeanMetrics {
        auc: avg(|r| r.auc),
        sensitivity: avg(|r| r.sensitivity),
        specificity: avg(|r| r.specificity),
        f1: avg(|r| r.f1),
        ci: None,
    };
    let mut report = MetricReport {
        classes,
        mean,
        warnings,
    };
    if let Some(spec) = spec {
        report.attach_mean_ci(probs, labels, spec)?;
    }
    Ok(report)
}

/// JSON number, with infinities as the strings `"inf"` / `"-inf"`.
pub fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        Value::Null
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn cis_json(ci: &MetricCis, method: &str) -> Value {
    let pair = |iv: &Interval| json!([json_num(iv.lo), json_num(iv.hi)]);
    json!({
        "auc": pair(&ci.auc),
        "sensitivity": pair(&ci.sensitivity),
        "specificity": pair(&ci.specificity),
        "f1": pair(&ci.f1),
        "undefined_replicates": ci.auc.undefined,
        "method": method,
    })
}

fn fmt_threshold(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.4}")
    } else if t > 0.0 {
        "+inf".into()
    } else {
        "-inf".into()
    }
}

impl MetricReport {
    /// Bootstraps the mean row over whole rows, with each reported class
    /// kept at its Youden cut-off.
    pub fn attach_mean_ci(&mut self, probs: &Matrix, labels: &LabelMatrix, spec: &BootstrapSpec) -> Result<()> {
        let n = probs.rows();
        let stream = RngStream::named(spec.seed, "bootstrap/mean");
        let cols: Vec<(Vec<f64>, Vec<bool>, f64)> = self
            .classes
            .iter()
            .enumerate()
            .filter_map(|(k, row)| row.metrics().map(|m| (probs.column(k), labels.column(k), m.threshold)))
            .collect();
        let (mut bs, mut by) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let v = bootstrap_many(n, spec, &stream, |idx| {
            let mut acc = [0.0; 4];
            for (s, y, t) in &cols {
                bs.clear();
                by.clear();
                bs.extend(idx.iter().map(|&i| s[i]));
                by.extend(idx.iter().map(|&i| y[i]));
                for (a, v) in acc.iter_mut().zip(class_values(&bs, &by, *t)?) {
                    *a += v;
                }
            }
            Ok(acc.iter().map(|a| a / cols.len() as f64).collect())
        })?;
        self.mean.ci = Some(MetricCis::from_vec(&v));
        Ok(())
    }

    /// `{"classes": {name: {...}}, "mean": {...}, "warnings": [...]}`;
    /// infinite thresholds are written as the strings `"inf"` / `"-inf"`.
    pub fn to_json(&self) -> Value {
        let mut classes = Map::new();
        for row in &self.classes {
            let v = match row {
                ClassRow::Reported(m) => json!({
                    "auc": json_num(m.auc),
                    "ci": m.ci.as_ref().map(|c| cis_json(c, CI_METHOD_PER_CLASS)),
                    "threshold": json_num(m.threshold),
                    "youden": json_num(m.youden),
                    "sensitivity": json_num(m.sensitivity),
                    "specificity": json_num(m.specificity),
                    "f1": json_num(m.f1),
                }),
                ClassRow::Missing { reason, .. } => json!({ "missing": reason }),
            };
            classes.insert(row.name().to_string(), v);
        }
        json!({
            "classes": classes,
            "mean": {
                "auc": json_num(self.mean.auc),
                "ci": self.mean.ci.as_ref().map(|c| cis_json(c, CI_METHOD_MEAN)),
                "sensitivity": json_num(self.mean.sensitivity),
                "specificity": json_num(self.mean.specificity),
                "f1": json_num(self.mean.f1),
            },
            "warnings": self.warnings,
        })
    }

    /// Aligned table: class, AUC with interval, cut-off, sensitivity,
    /// specificity, F1, and a final mean row.
    pub fn to_text(&self) -> String {
        let auc_cell = |auc: f64, ci: Option<&MetricCis>| match ci {
            Some(c) => format!("{auc:.3} ({:.3}-{:.3})", c.auc.lo, c.auc.hi),
            None => format!("{auc:.3}"),
        };
        let mut rows: Vec<Vec<String>> = vec![vec![
            "Class".into(),
            "AUC (95% CI)".into(),
            "Cut-off".into(),
            "Sensitivity".into(),
            "Specificity".into(),
            "F1".into(),
        ]];
        for row in &self.classes {
            rows.push(match row {
                ClassRow::Reported(m) => vec![
                    m.name.clone(),
                    auc_cell(m.auc, m.ci.as_ref()),
                    fmt_threshold(m.threshold),
                    format!("{:.3}", m.sensitivity),
                    format!("{:.3}", m.specificity),
                    format!("{:.3}", m.f1),
                ],
                ClassRow::Missing { name, reason } => vec![
                    name.clone(),
                    format!("n/a ({reason})"),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                ],
            });
        }
        rows.push(vec![
            "Mean".into(),
            auc_cell(self.mean.auc, self.mean.ci.as_ref()),
            "-".into(),
            format!("{:.3}", self.mean.sensitivity),
            format!("{:.3}", self.mean.specificity),
            format!("{:.3}", self.mean.f1),
        ]);
        let mut out = format_table(&rows);
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Space-aligned table; the first column is left-aligned, the rest right.
pub fn format_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|k| format!("c{k}")).collect()
    }

    fn toy() -> (Matrix, LabelMatrix) {
        let probs = Matrix::from_rows(&[
            [0.9, 0.9, 0.1],
            [0.2, 0.2, 0.3],
            [0.8, 0.8, 0.2],
            [0.4, 0.4, 0.7],
            [0.6, 0.6, 0.5],
        ])
        .unwrap();
        let labels = LabelMatrix::from_rows(&[
            [true, true, false],
            [true, true, false],
            [false, false, false],
            [false, false, false],
            [true, true, false],
        ])
        .unwrap();
        (probs, labels)
    }

    #[test]
    fn duplicated_columns_give_identical_rows_and_mean_is_average() {
        let (probs, labels) = toy();
        let spec = BootstrapSpec {
            replications: 200,
            seed: 1,
            ..BootstrapSpec::default()
        };
        let r = per_class_report(&probs, &labels, &names(3), Some(&spec)).unwrap();
        let a = r.classes[0].metrics().unwrap();
        let b = r.classes[1].metrics().unwrap();
        assert_eq!((a.auc, a.threshold, a.sensitivity, a.f1), (b.auc, b.threshold, b.sensitivity, b.f1));
        assert!(matches!(r.classes[2], ClassRow::Missing { .. }));
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.mean.auc, (a.auc + b.auc) / 2.0);
        assert_eq!(r.mean.f1, (a.f1 + b.f1) / 2.0);
        assert!(r.mean.ci.is_some());
    }

    #[test]
    fn json_and_text_layouts() {
        let (probs, labels) = toy();
        let r = per_class_report(&probs, &labels, &names(3), None).unwrap();
        let j = r.to_json();
        assert!(j["classes"]["c0"]["auc"].is_number());
        assert_eq!(j["classes"]["c2"]["missing"], "one-sided labels");
        assert!(j["mean"]["ci"].is_null());
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Class"));
        assert!(lines[4].starts_with("Mean"));
        assert!(lines[3].contains("n/a"));
        assert!(lines.last().unwrap().starts_with("warning:"));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (probs, labels) = toy();
        assert!(per_class_report(&probs, &labels, &names(2), None).is_err());
        assert!(per_class_report(&Matrix::zeros(5, 2), &labels, &names(3), None).is_err());
    }

    #[test]
    fn infinite_threshold_is_serialized_as_string() {
        assert_eq!(json_num(f64::INFINITY), json!("inf"));
        assert_eq!(json_num(f64::NEG_INFINITY), json!("-inf"));
        assert_eq!(fmt_threshold(f64::NEG_INFINITY), "-inf");
    }
}
