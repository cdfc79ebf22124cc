//! Image and label I/O, deterministic resize/crop preprocessing, source/target
//! pairing and class-index remapping.
//!
//! All randomness comes from [`RngStream`]s derived from a seed plus a purpose
//! and an item id, so results do not depend on processing order or on how many
//! workers share the batch.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, Rgba};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::label::{LabelMap, IGNORE_LABEL};
use crate::spectral::ImageTensor;

/// Identifies the generator and the way streams are derived. Recorded in
/// manifests; bump it whenever either changes.
pub const RNG_ID: &str = "chacha8-sha256-v1";

pub const DEFAULT_RESIZE: (usize, usize) = (1280, 720);
pub const DEFAULT_CROP: (usize, usize) = (1024, 512);

/// A deterministic random stream keyed by `(seed, purpose, id)`.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn derive(seed: u64, purpose: &str, id: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(RNG_ID.as_bytes());
        hasher.update(seed.to_le_bytes());
        hasher.update((purpose.len() as u64).to_le_bytes());
        hasher.update(purpose.as_bytes());
        hasher.update(id.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, n)` by rejection, free of modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.rng.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepConfig {
    /// `(width, height)`
    pub resize_to: (usize, usize),
    /// `(width, height)`
    pub crop_to: (usize, usize),
    pub seed: u64,
    pub pairing_seed: u64,
}

impl PrepConfig {
    pub fn new(seed: u64, pairing_seed: u64) -> Self {
        PrepConfig {
            resize_to: DEFAULT_RESIZE,
            crop_to: DEFAULT_CROP,
            seed,
            pairing_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ((rw, rh), (cw, ch)) = (self.resize_to, self.crop_to);
        if rw == 0 || rh == 0 || cw == 0 || ch == 0 {
            return Err(Error::Parameter("resize and crop sizes must be positive".into()));
        }
        if cw > rw || ch > rh {
            return Err(Error::Parameter(format!(
                "crop {cw}x{ch} does not fit inside resize {rw}x{rh}"
            )));
        }
        Ok(())
    }
}

/// Resizes to `resize_to` then takes a seeded random `crop_to` window. The
/// crop stream is keyed by `image_id`.
pub fn prep_image(img: &ImageTensor, config: &PrepConfig, image_id: &str) -> Result<(ImageTensor, (usize, usize))> {
    config.validate()?;
    let (rw, rh) = config.resize_to;
    let (cw, ch) = config.crop_to;
    let resized = resize_bilinear(img, rw, rh)?;
    let mut rng = RngStream::derive(config.seed, "crop", image_id);
    random_crop(&resized, cw, ch, &mut rng)
}

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let rgb = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = f64::from(px[c]);
        }
    }
    ImageTensor::new(h, w, 3, data)
}

/// Rounds half away from zero, then clamps into `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes 1-, 3- or 4-channel tensors as 8-bit images; format follows the
/// path extension.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let n = img.plane_len();
    let interleaved: Vec<u8> = (0..n)
        .flat_map(|i| (0..img.channels()).map(move |c| (c, i)))
        .map(|(c, i)| quantize(img.plane(c)[i]))
        .collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, interleaved).unwrap()),
        3 => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleaved).unwrap()),
        4 => DynamicImage::ImageRgba8(ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, interleaved).unwrap()),
        c => {
            return Err(Error::Dimension(format!(
                "cannot encode a {c}-channel tensor as an 8-bit image"
            )))
        }
    };
    dynamic.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit grayscale label image; pixel value = class index.
pub fn load_label(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            LabelMap::new(h, w, gray.into_raw())
        }
        other => Err(Error::Data(format!(
            "{} is {:?}, label maps must be 8-bit grayscale",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_label(labels: &LabelMap, path: &Path) -> Result<()> {
    let gray = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.labels().to_vec())
        .expect("label buffer matches its dimensions");
    gray.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Maps output index `i` of `out` samples onto the input axis of `len` samples
/// with corners aligned.
fn align_corners(i: usize, out: usize, len: usize) -> f64 {
    if out <= 1 || len <= 1 {
        0.0
    } else {
        i as f64 * (len - 1) as f64 / (out - 1) as f64
    }
}

/// Bilinear resize to `width × height`, corners aligned, edges clamped.
pub fn resize_bilinear(img: &ImageTensor, width: usize, height: usize) -> Result<ImageTensor> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("target size {width}x{height} must be positive")));
    }
    let (ih, iw) = (img.height(), img.width());
    if (ih, iw) == (height, width) {
        return Ok(img.clone());
    }
    let taps = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let s = align_corners(i, out, len);
                let lo = (s.floor() as usize).min(len - 1);
                let hi = (lo + 1).min(len - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let rows = taps(height, ih);
    let cols = taps(width, iw);

    let mut data = Vec::with_capacity(height * width * img.channels());
    for plane in img.planes() {
        for &(y0, y1, fy) in &rows {
            let (r0, r1) = (&plane[y0 * iw..(y0 + 1) * iw], &plane[y1 * iw..(y1 + 1) * iw]);
            for &(x0, x1, fx) in &cols {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bottom = (1.0 - fx) * r1[x0] + fx * r1[x1];
                data.push((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    ImageTensor::new(height, width, img.channels(), data)
}

/// Nearest-neighbour resize for label maps, using the same corner-aligned
/// coordinates as [`resize_bilinear`] so labels stay registered with images.
pub fn resize_labels_nearest(labels: &LabelMap, width: usize, height: usize) -> Result<LabelMap> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("target size {width}x{height} must be positive")));
    }
    let (ih, iw) = (labels.height(), labels.width());
    let src = labels.labels();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = (align_corners(y, height, ih).round() as usize).min(ih - 1);
        for x in 0..width {
            let sx = (align_corners(x, width, iw).round() as usize).min(iw - 1);
            out.push(src[sy * iw + sx]);
        }
    }
    LabelMap::new(height, width, out)
}

/// Copies the `width × height` window whose top-left corner is `(x, y)`.
pub fn crop(img: &ImageTensor, x: usize, y: usize, width: usize, height: usize) -> Result<ImageTensor> {
    if x + width > img.width() || y + height > img.height() || width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "window {width}x{height} at ({x}, {y}) does not fit in {}x{}",
            img.width(),
            img.height()
        )));
    }
    let iw = img.width();
    let mut data = Vec::with_capacity(width * height * img.channels());
    for plane in img.planes() {
        for row in y..y + height {
            data.extend_from_slice(&plane[row * iw + x..row * iw + x + width]);
        }
    }
    ImageTensor::new(height, width, img.channels(), data)
}

/// Draws a uniformly placed `width × height` window; returns it with its
/// top-left offset `(x, y)`.
pub fn random_crop(
    img: &ImageTensor,
    width: usize,
    height: usize,
    rng: &mut RngStream,
) -> Result<(ImageTensor, (usize, usize))> {
    if width > img.width() || height > img.height() {
        return Err(Error::Dimension(format!(
            "crop {width}x{height} is larger than image {}x{}",
            img.width(),
            img.height()
        )));
    }
    let x = rng.below((img.width() - width + 1) as u64) as usize;
    let y = rng.below((img.height() - height + 1) as u64) as usize;
    Ok((crop(img, x, y, width, height)?, (x, y)))
}

/// Pairs every source with a target drawn uniformly, with replacement. Each
/// source draws from its own stream keyed by its id.
pub fn pair_source_target(
    source_ids: &[String],
    target_ids: &[String],
    pairing_seed: u64,
) -> Result<Vec<(String, String)>> {
    if source_ids.is_empty() || target_ids.is_empty() {
        return Err(Error::Parameter(format!(
            "need at least one source and one target, got {} and {}",
            source_ids.len(),
            target_ids.len()
        )));
    }
    Ok(source_ids
        .iter()
        .map(|s| {
            let mut rng = RngStream::derive(pairing_seed, "pair", s);
            let t = rng.below(target_ids.len() as u64) as usize;
            (s.clone(), target_ids[t].clone())
        })
        .collect())
}

/// Total map from every 8-bit class id to a new id or ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRemap {
    table: [u8; 256],
}

impl LabelRemap {
    pub fn identity() -> Self {
        let mut table = [0u8; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        LabelRemap { table }
    }

    /// Everything maps to ignore until set.
    pub fn all_ignore() -> Self {
        LabelRemap {
            table: [IGNORE_LABEL; 256],
        }
    }

    pub fn set(&mut self, from: u8, to: u8) {
        self.table[from as usize] = to;
    }

    pub fn get(&self, from: u8) -> u8 {
        self.table[from as usize]
    }

    /// Parses `src_id target_id` pairs, one per line, `#` starting a comment.
    /// Unlisted ids map to ignore; 255 keeps mapping to 255 unless listed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut remap = Self::all_ignore();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_id = |s: &str| -> Result<u8> {
                s.parse::<u8>().map_err(|_| {
                    Error::Parameter(format!("remap line {}: {s:?} is not an id in 0..=255", lineno + 1))
                })
            };
            match fields.as_slice() {
                [from, to] => {
                    let (from, to) = (parse_id(from)?, parse_id(to)?);
                    remap.set(from, to);
                }
                _ => {
                    return Err(Error::Parameter(format!(
                        "remap line {}: expected two ids, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(remap)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub fn remap_labels(labels: &LabelMap, remap: &LabelRemap) -> LabelMap {
    let out = labels.labels().iter().map(|&l| remap.get(l)).collect();
    LabelMap::new(labels.height(), labels.width(), out).expect("shape unchanged")
}
