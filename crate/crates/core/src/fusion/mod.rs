//! Multi-band transfer fusion: average the class probabilities of several
//! segmentation models and turn the mean into confidence-gated pseudo-labels.

mod cache;
mod stream;

pub use cache::{
    load_probmap, read_header, store_probmap, store_probmap_with, Codec, ProbMapHeader,
    ProbMapReader, HEADER_LEN, MAGIC, VERSION,
};
pub use stream::{
    per_image_bound, streaming_fuse, BufferLedger, FusionEntry, FusionManifest, FusionReport,
    ImageFailure, Reservation, StreamOptions,
};

pub use crate::label::{LabelMap, IGNORE_LABEL};
use crate::error::{Error, Result};

/// Per-pixel sums of a normalized map must be within this of 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// Default global confidence gate.
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// `classes` planes of `height × width` nonnegative scores, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    scores: Vec<f64>,
    normalized: bool,
}

impl ProbMap {
    /// Validates shape, finiteness, nonnegativity and (when `normalized` is
    /// set) per-pixel sums.
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        scores: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::Dimension(format!(
                "probability map must be non-empty, got {height}x{width}x{classes}"
            )));
        }
        if classes > IGNORE_LABEL as usize {
            return Err(Error::Dimension(format!(
                "at most {} classes fit in 8-bit labels, got {classes}",
                IGNORE_LABEL
            )));
        }
        if scores.len() != height * width * classes {
            return Err(Error::Dimension(format!(
                "expected {} scores for {height}x{width}x{classes}, got {}",
                height * width * classes,
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Domain(format!(
                "score {} at flat index {i} is negative or non-finite",
                scores[i]
            )));
        }
        let map = ProbMap {
            height,
            width,
            classes,
            scores,
            normalized,
        };
        if normalized {
            if let Some((pixel, sum)) = map.worst_pixel_sum() {
                return Err(Error::Precondition(format!(
                    "map flagged normalized but pixel {pixel} sums to {sum}"
                )));
            }
        }
        Ok(map)
    }

    /// First pixel whose class scores do not sum to 1, if any.
    fn worst_pixel_sum(&self) -> Option<(usize, f64)> {
        let n = self.plane_len();
        (0..n)
            .map(|p| (p, (0..self.classes).map(|k| self.scores[k * n + p]).sum::<f64>()))
            .find(|(_, s)| (s - 1.0).abs() > NORMALIZATION_TOLERANCE)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn plane(&self, class: usize) -> &[f64] {
        let n = self.plane_len();
        &self.scores[class * n..(class + 1) * n]
    }

    pub fn score(&self, class: usize, row: usize, col: usize) -> f64 {
        self.scores[class * self.plane_len() + row * self.width + col]
    }

    /// Bytes held by the score tensor.
    pub fn tensor_bytes(&self) -> usize {
        self.scores.len() * std::mem::size_of::<f64>()
    }

    pub fn same_shape(&self, other: &ProbMap) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        classes: usize,
        scores: Vec<f64>,
        normalized: bool,
    ) -> Self {
        ProbMap {
            height,
            width,
            classes,
            scores,
            normalized,
        }
    }
}

/// Bytes of one decompressed map with the given shape.
pub fn map_bytes(height: usize, width: usize, classes: usize) -> usize {
    height * width * classes * std::mem::size_of::<f64>()
}

// The streaming engine reuses these two steps so both paths round identically.
pub(crate) fn accumulate(acc: &mut [f64], scores: &[f64]) {
    for (a, s) in acc.iter_mut().zip(scores) {
        *a += s;
    }
}

pub(crate) fn finish_mean(acc: &mut [f64], models: usize) {
    let m = models as f64;
    for a in acc.iter_mut() {
        *a /= m;
    }
}

/// Elementwise mean of `maps`, summed in slice order (the slice position is the
/// model index) and divided once at the end.
pub fn mbt_mean(maps: &[&ProbMap]) -> Result<ProbMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Parameter("cannot average an empty list of maps".into()))?;
    if let Some(i) = maps.iter().position(|m| !m.same_shape(first)) {
        return Err(Error::Dimension(format!(
            "map {i} is {}x{}x{}, map 0 is {}x{}x{}",
            maps[i].height, maps[i].width, maps[i].classes, first.height, first.width, first.classes
        )));
    }
    let mut acc = vec![0.0; first.scores.len()];
    for m in maps {
        accumulate(&mut acc, &m.scores);
    }
    finish_mean(&mut acc, maps.len());
    let normalized = maps.iter().all(|m| m.normalized);
    Ok(ProbMap::from_parts_unchecked(
        first.height,
        first.width,
        first.classes,
        acc,
        normalized,
    ))
}

/// Mean over maps tagged with their model index. Summation follows ascending
/// model index, so the result does not depend on the order of `maps`.
pub fn mbt_mean_indexed(maps: &[(usize, &ProbMap)]) -> Result<ProbMap> {
    let mut ordered: Vec<(usize, &ProbMap)> = maps.to_vec();
    ordered.sort_by_key(|&(idx, _)| idx);
    if let Some(w) = ordered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Parameter(format!("model index {} appears twice", w[0].0)));
    }
    let refs: Vec<&ProbMap> = ordered.into_iter().map(|(_, m)| m).collect();
    mbt_mean(&refs)
}

/// Per-pixel winning class and its score; ties go to the lowest class index.
fn winners(map: &ProbMap) -> impl Iterator<Item = (u8, f64)> + '_ {
    let n = map.plane_len();
    (0..n).map(move |p| {
        let mut best = 0;
        let mut best_score = map.scores[p];
        for k in 1..map.classes {
            let s = map.scores[k * n + p];
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        (best as u8, best_score)
    })
}

pub fn argmax_labels(map: &ProbMap) -> LabelMap {
    let labels = winners(map).map(|(k, _)| k).collect();
    LabelMap::new(map.height, map.width, labels).expect("shape comes from a valid map")
}

/// How confident a pixel's winning class must be to become a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GatePolicy {
    /// Keep pixels whose winning score is at least this value.
    Threshold(f64),
    /// For each class, keep this fraction (rounded up) of the pixels it wins,
    /// most confident first; ties resolved in row-major order.
    TopFraction(f64),
}

impl Default for GatePolicy {
    fn default() -> Self {
        GatePolicy::Threshold(DEFAULT_THRESHOLD)
    }
}

impl GatePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GatePolicy::Threshold(t) if !(0.0..=1.0).contains(&t) => Err(Error::Parameter(format!(
                "threshold must lie in [0, 1], got {t}"
            ))),
            GatePolicy::TopFraction(f) if !(f > 0.0 && f <= 1.0) => Err(Error::Parameter(format!(
                "top fraction must lie in (0, 1], got {f}"
            ))),
            _ => Ok(()),
        }
    }

    /// Transient bytes [`pseudo_labels`] allocates besides its output.
    pub fn scratch_bytes(&self, height: usize, width: usize) -> usize {
        match self {
            GatePolicy::Threshold(_) => 0,
            GatePolicy::TopFraction(_) => height * width * std::mem::size_of::<u32>(),
        }
    }
}

pub fn pseudo_labels(map: &ProbMap, policy: &GatePolicy) -> Result<LabelMap> {
    policy.validate()?;
    if !map.normalized {
        return Err(Error::Precondition(
            "pseudo-labels need a normalized probability map".into(),
        ));
    }
    let labels = match *policy {
        GatePolicy::Threshold(t) => winners(map)
            .map(|(k, s)| if s >= t { k } else { IGNORE_LABEL })
            .collect(),
        GatePolicy::TopFraction(fraction) => top_fraction_labels(map, fraction),
    };
    LabelMap::new(map.height, map.width, labels)
}

fn top_fraction_labels(map: &ProbMap, fraction: f64) -> Vec<u8> {
    let n = map.plane_len();
    let mut labels: Vec<u8> = winners(map).map(|(k, _)| k).collect();

    // Bucket pixel indices by winning class, each bucket in scan order.
    let mut starts = vec![0usize; map.classes + 1];
    for &l in &labels {
        starts[l as usize + 1] += 1;
    }
    for k in 0..map.classes {
        starts[k + 1] += starts[k];
    }
    let mut fill = starts.clone();
    let mut order = vec![0u32; n];
    for (p, &l) in labels.iter().enumerate() {
        order[fill[l as usize]] = p as u32;
        fill[l as usize] += 1;
    }

    for k in 0..map.classes {
        let bucket = &mut order[starts[k]..starts[k + 1]];
        if bucket.is_empty() {
            continue;
        }
        let plane = map.plane(k);
        // Stable sort keeps row-major order among equal scores.
        bucket.sort_by(|&a, &b| plane[b as usize].total_cmp(&plane[a as usize]));
        // The slack keeps products such as 0.3 * 10 = 3.0000000000000004 at 3.
        let keep = ((fraction * bucket.len() as f64 - 1e-9).ceil() as usize).min(bucket.len());
        for &p in &bucket[keep..] {
            labels[p as usize] = IGNORE_LABEL;
        }
    }
    labels
}
