use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fda_core::dataprep::{load_label, remap_labels, LabelRemap};
use fda_core::eval::{
    class_iou, default_class_names, emit_report, ClassIouReport, ConfusionMatrix, ExperimentRow,
    ReportFormat, CITYSCAPES_CLASSES,
};
use rayon::prelude::*;

use crate::settings::{usage, Resolver, RunManifest};
use crate::{Global, Status};

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted label PNGs.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Directory of ground-truth label PNGs with matching file stems.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Number of classes [default: 19]
    #[arg(long)]
    classes: Option<usize>,
    /// Table of `source_id target_id` lines applied to ground truth first.
    #[arg(long)]
    remap: Option<PathBuf>,
    /// Output prefix; writes PREFIX.txt and PREFIX.csv.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-class IoU values in percent, one `[name] value` per line, instead
    /// of label directories.
    #[arg(long, conflicts_with_all = ["pred_dir", "gt_dir", "remap"])]
    from_per_class: Option<PathBuf>,
    /// Reference mIoU in percent; adds an error row comparing against it.
    #[arg(long)]
    reference_miou: Option<f64>,
    /// Name of the error row [default: eval]
    #[arg(long, requires = "reference_miou")]
    experiment: Option<String>,
    /// Published error in percent to cross-check the computed one.
    #[arg(long, requires = "reference_miou")]
    published_error: Option<f64>,
}

pub const DEFAULT_CLASSES: usize = CITYSCAPES_CLASSES.len();

pub fn run(args: EvalArgs, global: Global) -> anyhow::Result<Status> {
    let mut r = Resolver::new(global.config, "eval")?;
    let from_per_class: Option<PathBuf> = r.optional("from-per-class", args.from_per_class)?;
    let report_prefix: Option<PathBuf> = r.optional("report", args.report)?;
    let reference: Option<f64> = r.optional("reference-miou", args.reference_miou)?;
    let experiment: String = if reference.is_some() {
        r.with_default("experiment", args.experiment, "eval".to_string())?
    } else {
        "eval".to_string()
    };
    let published: Option<f64> = r.optional("published-error", args.published_error)?;
    if let Some(v) = reference {
        if !v.is_finite() || v <= 0.0 {
            return Err(usage(format!("--reference-miou must be positive, got {v}")));
        }
    }

    let mut manifest_items = RunManifest::new(Vec::new());
    let (report, status, settings) = match from_per_class {
        Some(path) => {
            let explicit_classes: Option<usize> = r.optional("classes", args.classes)?;
            let settings = r.finish();
            let report = read_per_class(&path, explicit_classes)?;
            (report, Status::Success, settings)
        }
        None => {
            let pred_dir: PathBuf = r.required("pred-dir", args.pred_dir)?;
            let gt_dir: PathBuf = r.required("gt-dir", args.gt_dir)?;
            let classes = r.with_default("classes", args.classes, DEFAULT_CLASSES)?;
            if classes == 0 || classes > 255 {
                return Err(usage(format!("--classes must lie in 1..=255, got {classes}")));
            }
            let remap_path: Option<PathBuf> = r.optional("remap", args.remap)?;
            let workers = crate::resolve_workers(&mut r, global.workers)?;
            let settings = r.finish();
            let remap = remap_path
                .map(|p| LabelRemap::load(&p).map_err(|e| usage(e.to_string())))
                .transpose()?;
            let (cm, status) =
                accumulate_dirs(&pred_dir, &gt_dir, classes, remap.as_ref(), workers, &mut manifest_items)?;
            (class_iou(&cm), status, settings)
        }
    };

    let text = report.render(ReportFormat::Text);
    print!("{text}");
    let mut outputs = vec![(".txt", text), (".csv", report.render(ReportFormat::Csv))];

    if let Some(reference) = reference {
        let measured = report
            .miou
            .ok_or_else(|| anyhow::anyhow!("no class has a defined IoU, so there is no mIoU to compare"))?;
        let mut row = ExperimentRow::new(experiment, reference, 100.0 * measured);
        if let Some(p) = published {
            row = row.with_published_error(p);
        }
        if row.is_anomalous()? {
            log::warn!(
                "published error {:.2}% does not match the recomputed {:.2}%",
                published.unwrap_or_default(),
                row.error()?
            );
        }
        let rows = [row];
        let table = emit_report(&rows, ReportFormat::Text)?;
        print!("\n{table}");
        outputs.push(("_experiments.txt", table));
        outputs.push(("_experiments.csv", emit_report(&rows, ReportFormat::Csv)?));
    }

    if let Some(prefix) = report_prefix {
        if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            crate::create_dir(parent)?;
        }
        for (suffix, body) in &outputs {
            let path = with_suffix(&prefix, suffix);
            std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        }
        let mut manifest = RunManifest::new(settings);
        manifest.extend(manifest_items);
        manifest.write(&with_suffix(&prefix, "_run_manifest.txt"))?;
    }
    Ok(status)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn accumulate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    classes: usize,
    remap: Option<&LabelRemap>,
    workers: usize,
    manifest: &mut RunManifest,
) -> anyhow::Result<(ConfusionMatrix, Status)> {
    let preds: BTreeMap<String, PathBuf> = crate::list_pngs(pred_dir)?.into_iter().collect();
    let gts: BTreeMap<String, PathBuf> = crate::list_pngs(gt_dir)?.into_iter().collect();
    for id in preds.keys().filter(|id| !gts.contains_key(*id)) {
        log::warn!("skipping {id}: no ground truth in {}", gt_dir.display());
        manifest.item(["skipped", id.as_str(), "no ground truth"]);
    }
    for id in gts.keys().filter(|id| !preds.contains_key(*id)) {
        log::warn!("skipping {id}: no prediction in {}", pred_dir.display());
        manifest.item(["skipped", id.as_str(), "no prediction"]);
    }
    let matched: Vec<(&String, &PathBuf, &PathBuf)> = preds
        .iter()
        .filter_map(|(id, p)| gts.get(id).map(|g| (id, p, g)))
        .collect();
    if matched.is_empty() {
        anyhow::bail!(
            "no prediction in {} matches a ground-truth id in {}",
            pred_dir.display(),
            gt_dir.display()
        );
    }

    let pool = crate::thread_pool(workers)?;
    let per_image: Vec<anyhow::Result<ConfusionMatrix>> = pool.install(|| {
        matched
            .par_iter()
            .map(|(_, pred, gt)| {
                let pred = load_label(pred)?;
                let mut gt = load_label(gt)?;
                if let Some(table) = remap {
                    gt = remap_labels(&gt, table);
                }
                let mut cm = ConfusionMatrix::new(classes)?;
                cm.accumulate(&pred, &gt)?;
                Ok(cm)
            })
            .collect()
    });

    let mut total = ConfusionMatrix::new(classes)?;
    let mut failed = 0;
    for ((id, _, _), result) in matched.iter().zip(per_image) {
        match result {
            Ok(cm) => {
                total.merge(&cm)?;
                manifest.item(["evaluated", id.as_str()]);
            }
            Err(e) => {
                failed += 1;
                log::error!("{id}: {e:#}");
                manifest.item(["failed".to_string(), id.to_string(), format!("{e:#}")]);
            }
        }
    }
    if failed == matched.len() {
        anyhow::bail!("every matched image failed to evaluate");
    }
    log::info!(
        "evaluated {} image(s), {} pixel(s) ignored",
        matched.len() - failed,
        total.ignored_pixels()
    );
    Ok((total, if failed > 0 { Status::Partial } else { Status::Success }))
}

fn is_undefined(token: &str) -> bool {
    matches!(token.to_ascii_lowercase().as_str(), "—" | "-" | "nan" | "undefined" | "n/a")
}

/// Reads `[name] value` lines; values are IoU percentages or an undefined
/// marker such as `—` or `nan`.
fn read_per_class(path: &Path, classes: Option<usize>) -> anyhow::Result<ClassIouReport> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, token) = match line.rfind(|c: char| c.is_whitespace() || c == ',') {
            Some(at) => {
                let name = line[..at].trim().trim_end_matches(',').trim();
                (Some(name.to_string()).filter(|n| !n.is_empty()), line[at + 1..].trim())
            }
            None => (None, line),
        };
        let value = if is_undefined(token) {
            None
        } else {
            let v: f64 = token
                .parse()
                .map_err(|_| usage(format!("{}:{}: bad IoU value {token:?}", path.display(), i + 1)))?;
            if !(0.0..=100.0).contains(&v) {
                return Err(usage(format!("{}:{}: IoU {v} is outside 0..=100", path.display(), i + 1)));
            }
            Some(v / 100.0)
        };
        names.push(name);
        values.push(value);
    }
    if values.is_empty() {
        return Err(usage(format!("{} lists no classes", path.display())));
    }
    if let Some(k) = classes {
        if k != values.len() {
            return Err(usage(format!("--classes is {k} but {} lists {}", path.display(), values.len())));
        }
    }
    let defaults = default_class_names(values.len());
    let names = names
        .into_iter()
        .zip(defaults)
        .map(|(n, d)| n.unwrap_or(d))
        .collect();
    Ok(ClassIouReport::from_per_class(values, names)?)
}
