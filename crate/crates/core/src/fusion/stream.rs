//! Disk-backed pseudo-label generation under a fixed memory budget.
//!
//! Each image owns one running-sum accumulator. Model maps are decoded one at
//! a time into a single reusable buffer, added into the accumulator and
//! released, so resident tensor memory per worker never exceeds two
//! decompressed maps plus one label plane, however many models or images
//! there are. Every tensor allocation goes through a [`BufferLedger`] that
//! records the process-wide peak.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use super::cache::{read_header, ProbMapReader};
use super::{accumulate, finish_mean, pseudo_labels, GatePolicy, LabelMap, ProbMap};
use crate::dataprep::save_label;
use crate::error::{Error, Result};

/// Tracks live tensor bytes against a hard budget.
#[derive(Debug)]
pub struct BufferLedger {
    budget: usize,
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl BufferLedger {
    pub fn new(budget: usize) -> Self {
        BufferLedger {
            budget,
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Registers `bytes` of tensor memory; released when the guard drops.
    pub fn reserve(&self, bytes: usize, what: &str) -> Result<Reservation<'_>> {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        if now > self.budget {
            self.current.fetch_sub(bytes, Ordering::SeqCst);
            return Err(Error::Budget(format!(
                "allocating {bytes} bytes for {what} would raise resident tensor memory to {now} bytes, \
                 over the {} byte budget",
                self.budget
            )));
        }
        self.peak.fetch_max(now, Ordering::SeqCst);
        Ok(Reservation { ledger: self, bytes })
    }
}

#[must_use]
pub struct Reservation<'a> {
    ledger: &'a BufferLedger,
    bytes: usize,
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        self.ledger.current.fetch_sub(self.bytes, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionEntry {
    pub image_id: String,
    /// One cache file per model, in model order.
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionManifest {
    entries: Vec<FusionEntry>,
    model_count: usize,
    memory_budget: usize,
}

impl FusionManifest {
    pub fn new(entries: Vec<FusionEntry>, memory_budget: usize) -> Result<Self> {
        let model_count = entries
            .first()
            .map(|e| e.paths.len())
            .ok_or_else(|| Error::Parameter("manifest has no entries".into()))?;
        if model_count == 0 {
            return Err(Error::Parameter(format!(
                "entry {:?} lists no model files",
                entries[0].image_id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.paths.len() != model_count {
                return Err(Error::Parameter(format!(
                    "entry {:?} lists {} model files, expected {model_count}",
                    e.image_id,
                    e.paths.len()
                )));
            }
            if e.image_id.is_empty()
                || e.image_id.contains(['/', '\\'])
                || e.image_id == "."
                || e.image_id == ".."
            {
                return Err(Error::Parameter(format!(
                    "image id {:?} cannot be used as a file name",
                    e.image_id
                )));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::Parameter(format!("image id {:?} appears twice", e.image_id)));
            }
        }
        Ok(FusionManifest {
            entries,
            model_count,
            memory_budget,
        })
    }

    /// Parses `image_id<TAB>path_1<TAB>...<TAB>path_M` lines. Blank lines and
    /// lines starting with `#` are skipped; relative paths resolve against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, memory_budget: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let image_id = fields.next().unwrap_or_default().trim().to_string();
            let paths: Vec<PathBuf> = fields
                .map(|f| {
                    let p = PathBuf::from(f.trim());
                    if p.is_absolute() { p } else { base_dir.join(p) }
                })
                .collect();
            if paths.is_empty() {
                return Err(Error::Parameter(format!(
                    "manifest line {}: expected image id followed by tab-separated paths",
                    lineno + 1
                )));
            }
            entries.push(FusionEntry { image_id, paths });
        }
        Self::new(entries, memory_budget)
    }

    pub fn load(path: &Path, memory_budget: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, memory_budget)
    }

    pub fn entries(&self) -> &[FusionEntry] {
        &self.entries
    }

    pub fn model_count(&self) -> usize {
        self.model_count
    }

    pub fn memory_budget(&self) -> usize {
        self.memory_budget
    }
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub policy: GatePolicy,
    pub output_dir: PathBuf,
    /// Requested worker count; lowered if the budget cannot cover that many.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFailure {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct FusionReport {
    pub images_processed: usize,
    pub peak_buffer_bytes: usize,
    /// Documented ceiling for one worker: two maps plus one label plane of the
    /// largest image in the manifest.
    pub per_worker_bound_bytes: usize,
    pub workers: usize,
    pub model_count: usize,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<ImageFailure>,
}

impl FusionReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("images_processed = {}\n", self.images_processed));
        s.push_str(&format!("images_failed = {}\n", self.failures.len()));
        s.push_str(&format!("model_count = {}\n", self.model_count));
        s.push_str(&format!("workers = {}\n", self.workers));
        s.push_str(&format!("peak_buffer_bytes = {}\n", self.peak_buffer_bytes));
        s.push_str(&format!("per_worker_bound_bytes = {}\n", self.per_worker_bound_bytes));
        for f in &self.failures {
            s.push_str(&format!("failed\t{}\t{}\n", f.image_id, f.reason));
        }
        s
    }
}

/// Bytes one worker may hold for an image of this shape.
pub fn per_image_bound(height: usize, width: usize, classes: usize) -> usize {
    2 * super::map_bytes(height, width, classes) + height * width
}

enum Outcome {
    Written(PathBuf),
    Failed(String),
}

/// Fuses every manifest entry into a pseudo-label image under `output_dir`,
/// named `<image_id>.png`.
///
/// Unreadable or inconsistent inputs fail only their own image. A budget too
/// small for even one image aborts the whole run before any work is done.
pub fn streaming_fuse(manifest: &FusionManifest, options: &StreamOptions) -> Result<FusionReport> {
    options.policy.validate()?;
    std::fs::create_dir_all(&options.output_dir).map_err(|e| Error::io(&options.output_dir, e))?;

    // Size the workers from the largest readable header.
    let per_worker = manifest
        .entries
        .iter()
        .flat_map(|e| e.paths.iter())
        .filter_map(|p| read_header(p).ok())
        .map(|h| per_image_bound(h.height, h.width, h.classes))
        .max()
        .unwrap_or(0);
    let budget = manifest.memory_budget;
    if per_worker > budget {
        return Err(Error::Budget(format!(
            "memory budget of {budget} bytes is below the {per_worker} bytes needed to fuse one image \
             (two decompressed maps plus one label plane)"
        )));
    }
    let affordable = budget.checked_div(per_worker).unwrap_or(usize::MAX);
    let workers = options.workers.max(1).min(affordable).min(manifest.entries.len().max(1));

    let ledger = BufferLedger::new(budget);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    let outcomes: Mutex<Vec<Option<Outcome>>> =
        Mutex::new((0..manifest.entries.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = manifest.entries.get(i) else { break };
                let outcome = match fuse_one(entry, manifest.model_count, options, &ledger) {
                    Ok(path) => Outcome::Written(path),
                    Err(e @ Error::Budget(_)) => {
                        abort.store(true, Ordering::SeqCst);
                        fatal.lock().unwrap().get_or_insert(e);
                        break;
                    }
                    Err(e) => Outcome::Failed(e.to_string()),
                };
                outcomes.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }

    let mut report = FusionReport {
        images_processed: 0,
        peak_buffer_bytes: ledger.peak(),
        per_worker_bound_bytes: per_worker,
        workers,
        model_count: manifest.model_count,
        outputs: Vec::new(),
        failures: Vec::new(),
    };
    for (entry, outcome) in manifest.entries.iter().zip(outcomes.into_inner().unwrap()) {
        match outcome.expect("every entry is visited unless aborted") {
            Outcome::Written(path) => {
                report.images_processed += 1;
                report.outputs.push(path);
            }
            Outcome::Failed(reason) => report.failures.push(ImageFailure {
                image_id: entry.image_id.clone(),
                reason,
            }),
        }
    }
    Ok(report)
}

fn fuse_one(
    entry: &FusionEntry,
    models: usize,
    options: &StreamOptions,
    ledger: &BufferLedger,
) -> Result<PathBuf> {
    let first = read_header(&entry.paths[0])?;
    let (h, w, k) = (first.height, first.width, first.classes);
    let n = h * w;
    let map_bytes = first.map_bytes();

    let acc_guard = ledger.reserve(map_bytes, "the accumulator")?;
    let mut acc = vec![0.0_f64; n * k];
    let mut normalized = true;
    {
        let _model_guard = ledger.reserve(map_bytes, "a decoded model map")?;
        let mut model = vec![0.0_f64; n * k];
        for path in &entry.paths {
            let mut reader = ProbMapReader::open(path)?;
            let hdr = *reader.header();
            if (hdr.height, hdr.width, hdr.classes) != (h, w, k) {
                return Err(Error::Dimension(format!(
                    "{} is {}x{}x{}, first model is {h}x{w}x{k}",
                    path.display(),
                    hdr.height,
                    hdr.width,
                    hdr.classes
                )));
            }
            for plane in model.chunks_exact_mut(n) {
                reader.read_plane_into(plane)?;
            }
            reader.finish()?;
            // Same validation the in-memory loader applies.
            let checked = ProbMap::new(h, w, k, std::mem::take(&mut model), hdr.normalized)
                .map_err(|e| match e {
                    Error::Precondition(d) => Error::format("normalized", format!("{}: {d}", path.display())),
                    other => other,
                })?;
            normalized &= hdr.normalized;
            accumulate(&mut acc, checked.scores());
            model = checked.scores;
        }
    }
    finish_mean(&mut acc, models);
    let mean = ProbMap::from_parts_unchecked(h, w, k, acc, normalized);

    let _label_guard = ledger.reserve(n + options.policy.scratch_bytes(h, w), "the label plane")?;
    let labels: LabelMap = pseudo_labels(&mean, &options.policy)?;
    drop(mean);
    drop(acc_guard);

    let out = options.output_dir.join(format!("{}.png", entry.image_id));
    save_label(&labels, &out)?;
    Ok(out)
}
