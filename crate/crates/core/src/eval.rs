//! Segmentation evaluation: confusion matrices, per-class IoU, mIoU and
//! reference-vs-measured error tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::label::{LabelMap, IGNORE_LABEL};

/// The 19 Cityscapes evaluation classes in train-id order.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "light",
    "sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Rendered in place of an IoU that is undefined (class absent from both
/// prediction and ground truth).
pub const UNDEFINED_MARK: &str = "—";

/// Published error entries may differ from recomputation by this much (in
/// percentage points) before a row is flagged.
pub const ERROR_MATCH_TOLERANCE: f64 = 0.05;

/// `counts[g * classes + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    ignored_pixels: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 || classes > IGNORE_LABEL as usize {
            return Err(Error::Parameter(format!("class count {classes} outside [1, 255]")));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            ignored_pixels: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn ignored_pixels(&self) -> u64 {
        self.ignored_pixels
    }

    pub fn total_pixels(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.ignored_pixels
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|g| self.count(g, pred)).sum()
    }

    /// Adds one prediction/ground-truth pair. A pixel is ignored when either
    /// side carries the ignore label.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::Dimension(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        // Validate first so a bad pixel leaves the matrix untouched.
        gt.validate(self.classes)
            .map_err(|e| Error::Data(format!("ground truth: {e}")))?;
        pred.validate(self.classes)
            .map_err(|e| Error::Data(format!("prediction: {e}")))?;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE_LABEL || p == IGNORE_LABEL {
                self.ignored_pixels += 1;
            } else {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum with another matrix of the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Dimension(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.ignored_pixels += other.ignored_pixels;
        Ok(())
    }
}

pub fn confusion_accumulate(pred: &LabelMap, gt: &LabelMap, cm: ConfusionMatrix) -> Result<ConfusionMatrix> {
    let mut cm = cm;
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIouReport {
    /// IoU in `[0, 1]`, `None` where undefined.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined classes; `None` if no class is defined.
    pub miou: Option<f64>,
    pub class_names: Vec<String>,
}

impl ClassIouReport {
    /// Builds a report from already computed per-class values (in any unit)
    /// and averages the defined ones.
    pub fn from_per_class(per_class: Vec<Option<f64>>, class_names: Vec<String>) -> Result<Self> {
        if per_class.len() != class_names.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} class names",
                per_class.len(),
                class_names.len()
            )));
        }
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        Ok(ClassIouReport {
            per_class,
            miou,
            class_names,
        })
    }

    /// Table of class name and IoU in percent, closed by an `mIoU` row.
    pub fn render(&self, format: ReportFormat) -> String {
        let pct = |v: Option<f64>| v.map_or(UNDEFINED_MARK.to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut rows: Vec<[String; 2]> = self
            .class_names
            .iter()
            .zip(&self.per_class)
            .map(|(n, &v)| [n.clone(), pct(v)])
            .collect();
        rows.push(["mIoU".to_string(), pct(self.miou)]);
        render_table(&["class", "IoU (%)"], &rows, format)
    }
}

/// Default class names: Cityscapes for 19 classes, `class_<k>` otherwise.
pub fn default_class_names(classes: usize) -> Vec<String> {
    if classes == CITYSCAPES_CLASSES.len() {
        CITYSCAPES_CLASSES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|k| format!("class_{k}")).collect()
    }
}

/// `IoU_k = TP / (TP + FP + FN)`; classes with an empty union are undefined.
pub fn class_iou(cm: &ConfusionMatrix) -> ClassIouReport {
    let per_class = (0..cm.classes)
        .map(|k| {
            let tp = cm.count(k, k);
            let union = cm.row_sum(k) + cm.col_sum(k) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    ClassIouReport::from_per_class(per_class, default_class_names(cm.classes))
        .expect("names generated for every class")
}

/// Percentage by which `measured` falls short of `reference`; negative when
/// it exceeds it.
pub fn relative_error(reference: f64, measured: f64) -> Result<f64> {
    if !reference.is_finite() || reference <= 0.0 {
        return Err(Error::Parameter(format!("reference must be positive, got {reference}")));
    }
    Ok(100.0 * (reference - measured) / reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub experiment: String,
    pub reference_miou: f64,
    pub measured_miou: f64,
    /// Error value printed alongside the reference, if any, to cross-check.
    pub published_error: Option<f64>,
}

impl ExperimentRow {
    pub fn new(experiment: impl Into<String>, reference_miou: f64, measured_miou: f64) -> Self {
        ExperimentRow {
            experiment: experiment.into(),
            reference_miou,
            measured_miou,
            published_error: None,
        }
    }

    pub fn with_published_error(mut self, error: f64) -> Self {
        self.published_error = Some(error);
        self
    }

    pub fn error(&self) -> Result<f64> {
        relative_error(self.reference_miou, self.measured_miou)
    }

    /// True when a published error is present and recomputation disagrees
    /// with it by more than [`ERROR_MATCH_TOLERANCE`].
    pub fn is_anomalous(&self) -> Result<bool> {
        let computed = self.error()?;
        Ok(self
            .published_error
            .is_some_and(|p| (p - computed).abs() > ERROR_MATCH_TOLERANCE))
    }
}

/// Renders rows as `experiment, reference mIoU, measured mIoU, error %`,
/// followed by a note column that flags rows whose published error does not
/// match recomputation.
pub fn emit_report(rows: &[ExperimentRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Parameter("report needs at least one row".into()));
    }
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        let err = r.error()?;
        let note = match r.published_error {
            Some(p) if r.is_anomalous()? => format!("published {p:.2}% does not match"),
            _ => String::new(),
        };
        table.push([
            r.experiment.clone(),
            format!("{:.2}", r.reference_miou),
            format!("{:.2}", r.measured_miou),
            format!("{err:.2}"),
            note,
        ]);
    }
    Ok(render_table(
        &["experiment", "reference mIoU", "measured mIoU", "error %", "note"],
        &table,
        format,
    ))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_table<const N: usize>(header: &[&str; N], rows: &[[String; N]], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let line = |cells: Vec<String>| cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",");
            out.push_str(&line(header.iter().map(|s| s.to_string()).collect()));
            out.push('\n');
            for r in rows {
                out.push_str(&line(r.to_vec()));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let mut widths = header.map(|h| h.chars().count());
            for r in rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: &[String]| {
                let mut s = String::new();
                for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                    let pad = w - c.chars().count();
                    // First column left-aligned, the rest right-aligned.
                    if i == 0 {
                        let _ = write!(s, "{c}{}", " ".repeat(pad));
                    } else {
                        let _ = write!(s, "  {}{c}", " ".repeat(pad));
                    }
                }
                s.trim_end().to_string()
            };
            out.push_str(&line(&header.map(|h| h.to_string())));
            out.push('\n');
            let rule: usize = widths.iter().sum::<usize>() + 2 * (N - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
            for r in rows {
                out.push_str(&line(r));
                out.push('\n');
            }
        }
    }
    out
}
