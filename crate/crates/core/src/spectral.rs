//! Fourier domain adaptation: low-frequency amplitude transfer between images.
//!
//! An image channel is moved into the frequency domain, split into amplitude
//! and phase, and the amplitude inside a small centered window around DC is
//! replaced by the amplitude of a target image. Keeping the source phase keeps
//! the source's semantic layout; the swapped low band carries the target's
//! global "style" (illumination, color cast, texture energy).
//!
//! Spectra are stored unshifted, DC at `(0, 0)`. The centered window is mapped
//! onto that layout by index wrap-around, so no explicit fftshift is needed.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{Direction, Fft2d};

/// Planar multi-channel raster: `channels` contiguous row-major planes of
/// `height × width` samples. Samples nominally live in `[0, 255]` but are never
/// clamped in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at flat index {i}")));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_planes(height: usize, width: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        let data = planes.into_iter().flatten().collect();
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.plane_len())
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[channel * self.plane_len() + row * self.width + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Largest absolute sample value.
    pub fn peak_magnitude(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn channel_mean(&self, channel: usize) -> f64 {
        self.plane(channel).iter().sum::<f64>() / self.plane_len() as f64
    }

    /// Euclidean distance over all samples.
    pub fn l2_distance(&self, other: &ImageTensor) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "cannot compare {}x{}x{} with {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// Complex `height × width` frequency grid, row-major, DC at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("spectrum must be non-empty, got {height}x{width}")));
        }
        if coeffs.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} coefficients for {height}x{width}, got {}",
                height * width,
                coeffs.len()
            )));
        }
        Ok(Spectrum {
            height,
            width,
            coeffs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeff(&self, h: usize, w: usize) -> Complex64 {
        self.coeffs[h * self.width + w]
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Largest deviation from `coeff(h, w) = conj(coeff(-h, -w))`, relative to
    /// the largest coefficient magnitude.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let (hh, ww) = (self.height, self.width);
        let peak = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
        if peak == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for h in 0..hh {
            for w in 0..ww {
                let mirror = self.coeff((hh - h) % hh, (ww - w) % ww).conj();
                worst = worst.max((self.coeff(h, w) - mirror).norm());
            }
        }
        worst / peak
    }
}

/// Polar view of a [`Spectrum`]: `amplitude = |F|`, `phase = arg F ∈ (−π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudePhase {
    height: usize,
    width: usize,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl AmplitudePhase {
    pub fn new(height: usize, width: usize, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if n == 0 || amplitude.len() != n || phase.len() != n {
            return Err(Error::Dimension(format!(
                "amplitude/phase must both hold {height}x{width} values, got {} and {}",
                amplitude.len(),
                phase.len()
            )));
        }
        Ok(AmplitudePhase {
            height,
            width,
            amplitude,
            phase,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn amplitude_mut(&mut self) -> &mut [f64] {
        &mut self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }
}

/// Centered rectangular low-frequency window of half-extent `⌊β·H⌋ × ⌊β·W⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMask {
    beta: f64,
    height: usize,
    width: usize,
    half_height: usize,
    half_width: usize,
}

/// The window sizes used for multi-band transfer.
pub const CANONICAL_BETAS: [f64; 3] = [0.01, 0.05, 0.09];

impl BetaMask {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn half_height(&self) -> usize {
        self.half_height
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// A window with zero half-extent on either axis selects nothing.
    pub fn is_active(&self) -> bool {
        self.half_height >= 1 && self.half_width >= 1
    }

    pub fn cell_count(&self) -> usize {
        if self.is_active() {
            (2 * self.half_height + 1) * (2 * self.half_width + 1)
        } else {
            0
        }
    }

    /// Whether unshifted bin `(h, w)` lies inside the window.
    pub fn contains(&self, h: usize, w: usize) -> bool {
        if !self.is_active() {
            return false;
        }
        let dh = h.min(self.height - h);
        let dw = w.min(self.width - w);
        dh <= self.half_height && dw <= self.half_width
    }

    /// Unshifted row indices inside the window, DC first.
    fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        wrapped_band(self.half_height, self.height)
    }

    fn cols(&self) -> impl Iterator<Item = usize> + '_ {
        wrapped_band(self.half_width, self.width)
    }
}

fn wrapped_band(half: usize, len: usize) -> impl Iterator<Item = usize> {
    (0..=half).chain((len - half..len).filter(move |&i| i > half))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::Parameter(format!("beta must lie in [0, 0.5), got {beta}")));
    }
    Ok(())
}

pub fn build_mask(beta: f64, height: usize, width: usize) -> Result<BetaMask> {
    check_beta(beta)?;
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("mask needs a non-empty grid, got {height}x{width}")));
    }
    Ok(BetaMask {
        beta,
        height,
        width,
        half_height: (beta * height as f64).floor() as usize,
        half_width: (beta * width as f64).floor() as usize,
    })
}

/// Reusable forward/inverse transforms for one grid size.
#[derive(Debug, Clone)]
pub struct SpectralPlan {
    height: usize,
    width: usize,
    forward: Fft2d,
    inverse: Fft2d,
}

impl SpectralPlan {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty plane {height}x{width}")));
        }
        Ok(SpectralPlan {
            height,
            width,
            forward: Fft2d::new(height, width, Direction::Forward),
            inverse: Fft2d::new(height, width, Direction::Inverse),
        })
    }

    pub fn forward(&self, plane: &[f64]) -> Result<Spectrum> {
        if plane.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "plane has {} samples, plan expects {}x{}",
                plane.len(),
                self.height,
                self.width
            )));
        }
        let mut coeffs: Vec<Complex64> = plane.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut coeffs);
        Spectrum::new(self.height, self.width, coeffs)
    }

    /// Returns the real part of the normalized inverse and the largest
    /// magnitude of the discarded imaginary parts.
    pub fn inverse(&self, spec: &Spectrum) -> Result<(Vec<f64>, f64)> {
        if spec.height != self.height || spec.width != self.width {
            return Err(Error::Dimension(format!(
                "spectrum is {}x{}, plan expects {}x{}",
                spec.height, spec.width, self.height, self.width
            )));
        }
        let mut buf = spec.coeffs.clone();
        self.inverse.process(&mut buf);
        let scale = 1.0 / (self.height * self.width) as f64;
        let mut residual = 0.0_f64;
        let plane = buf
            .iter()
            .map(|c| {
                residual = residual.max((c.im * scale).abs());
                c.re * scale
            })
            .collect();
        Ok((plane, residual))
    }
}

/// Unnormalized forward 2D DFT of a row-major plane.
pub fn dft2d_forward(plane: &[f64], height: usize, width: usize) -> Result<Spectrum> {
    if height == 0 || width == 0 || plane.is_empty() {
        return Err(Error::Dimension("cannot transform an empty plane".into()));
    }
    if let Some(i) = plane.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite sample at flat index {i}")));
    }
    SpectralPlan::new(height, width)?.forward(plane)
}

/// Inverse 2D DFT scaled by `1/(H·W)`; yields the real plane and the
/// largest discarded imaginary magnitude.
pub fn dft2d_inverse(spec: &Spectrum) -> Result<(Vec<f64>, f64)> {
    SpectralPlan::new(spec.height, spec.width)?.inverse(spec)
}

pub fn decompose(spec: &Spectrum) -> AmplitudePhase {
    let amplitude = spec.coeffs.iter().map(|c| c.norm()).collect();
    let phase = spec
        .coeffs
        .iter()
        .map(|c| {
            if c.re == 0.0 && c.im == 0.0 {
                // -0.0 components would otherwise give ±π.
                0.0
            } else {
                let p = c.im.atan2(c.re);
                // atan2 returns -π for a negative real with -0.0 imaginary part.
                if p <= -PI { PI } else { p }
            }
        })
        .collect();
    AmplitudePhase {
        height: spec.height,
        width: spec.width,
        amplitude,
        phase,
    }
}

pub fn recompose(ap: &AmplitudePhase) -> Result<Spectrum> {
    if let Some(i) = ap.amplitude.iter().position(|&a| a.is_nan() || a < 0.0) {
        return Err(Error::Domain(format!(
            "amplitude must be nonnegative, got {} at flat index {i}",
            ap.amplitude[i]
        )));
    }
    let coeffs = ap
        .amplitude
        .iter()
        .zip(&ap.phase)
        .map(|(&a, &p)| Complex64::from_polar(a, p))
        .collect();
    Spectrum::new(ap.height, ap.width, coeffs)
}

/// Result of a transfer together with its numerical health.
#[derive(Debug, Clone)]
pub struct TransferOutput {
    pub image: ImageTensor,
    /// Largest discarded imaginary part over all channels.
    pub imag_residual: f64,
}

impl TransferOutput {
    /// Residual bound that a conjugate-symmetric composite spectrum must respect.
    pub fn residual_bound(src: &ImageTensor, tgt: &ImageTensor) -> f64 {
        1e-8 * src.peak_magnitude().max(tgt.peak_magnitude()).max(1.0)
    }
}

/// Replaces the low-frequency amplitude of `src` with that of `tgt` inside the
/// `beta` window, keeping the source phase, channel by channel.
pub fn spectral_transfer(src: &ImageTensor, tgt: &ImageTensor, beta: f64) -> Result<ImageTensor> {
    spectral_transfer_detailed(src, tgt, beta).map(|out| out.image)
}

pub fn spectral_transfer_detailed(
    src: &ImageTensor,
    tgt: &ImageTensor,
    beta: f64,
) -> Result<TransferOutput> {
    check_beta(beta)?;
    if !src.same_shape(tgt) {
        return Err(Error::Dimension(format!(
            "source is {}x{}x{}, target is {}x{}x{}",
            src.height, src.width, src.channels, tgt.height, tgt.width, tgt.channels
        )));
    }
    let plan = SpectralPlan::new(src.height, src.width)?;
    transfer_with_plan(&plan, src, tgt, beta)
}

pub(crate) fn transfer_with_plan(
    plan: &SpectralPlan,
    src: &ImageTensor,
    tgt: &ImageTensor,
    beta: f64,
) -> Result<TransferOutput> {
    let mask = build_mask(beta, src.height, src.width)?;
    let mut out = Vec::with_capacity(src.data.len());
    let mut imag_residual = 0.0_f64;

    for c in 0..src.channels {
        let src_ap = decompose(&plan.forward(src.plane(c))?);
        let mut mixed = src_ap;
        if mask.is_active() {
            let tgt_ap = decompose(&plan.forward(tgt.plane(c))?);
            let width = src.width;
            for h in mask.rows() {
                for w in mask.cols() {
                    let i = h * width + w;
                    mixed.amplitude[i] = tgt_ap.amplitude[i];
                }
            }
        }
        let (plane, residual) = plan.inverse(&recompose(&mixed)?)?;
        imag_residual = imag_residual.max(residual);
        out.extend(plane);
    }

    Ok(TransferOutput {
        image: ImageTensor::new(src.height, src.width, src.channels, out)?,
        imag_residual,
    })
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub beta: f64,
    pub image: ImageTensor,
    pub l2_distance_from_src: f64,
}

/// One transfer per window size, with each output's distance from the source.
pub fn beta_sweep(src: &ImageTensor, tgt: &ImageTensor, betas: &[f64]) -> Result<Vec<SweepResult>> {
    for &b in betas {
        check_beta(b)?;
    }
    if betas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter(format!("betas must be sorted ascending, got {betas:?}")));
    }
    if !src.same_shape(tgt) {
        return Err(Error::Dimension("source and target shapes differ".into()));
    }
    let plan = SpectralPlan::new(src.height, src.width)?;
    betas
        .iter()
        .map(|&beta| {
            let image = transfer_with_plan(&plan, src, tgt, beta)?.image;
            let l2_distance_from_src = image.l2_distance(src)?;
            Ok(SweepResult {
                beta,
                image,
                l2_distance_from_src,
            })
        })
        .collect()
}
