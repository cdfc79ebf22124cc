//! Exact-length complex FFTs in double precision.
//!
//! Lengths whose prime factors are all at most [`MAX_DIRECT_RADIX`] run through a
//! recursive mixed-radix decimation-in-time transform. Any larger prime factor
//! switches the whole length to Bluestein's chirp-z algorithm, which turns the
//! transform into a power-of-two convolution. Both paths are unnormalized:
//! callers apply `1/n` themselves when inverting.
//!
//! Twiddle factors are evaluated once per plan with `sin_cos` of the exact
//! angle, never by recurrence, so error does not accumulate with length.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Largest prime radix handled by the generic butterfly before Bluestein takes over.
pub const MAX_DIRECT_RADIX: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `exp(-2πi jk/n)`
    Forward,
    /// `exp(+2πi jk/n)`
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Algorithm {
    MixedRadix {
        factors: Vec<usize>,
        twiddles: Vec<Complex64>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
        forward: Box<FftPlan>,
        inverse: Box<FftPlan>,
    },
}

/// A precomputed 1D transform of fixed length and direction.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    direction: Direction,
    algorithm: Algorithm,
}

impl FftPlan {
    pub fn new(len: usize, direction: Direction) -> Self {
        assert!(len >= 1, "FFT length must be at least 1");
        let factors = factorize(len);
        let algorithm = if factors.iter().all(|&p| p <= MAX_DIRECT_RADIX) {
            Algorithm::MixedRadix {
                factors,
                twiddles: twiddle_table(len, direction),
            }
        } else {
            bluestein(len, direction)
        };
        FftPlan {
            len,
            direction,
            algorithm,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Transforms `buf` in place. `scratch` is resized as needed and may be
    /// reused across calls.
    pub fn process(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        if self.len == 1 {
            return;
        }
        match &self.algorithm {
            Algorithm::MixedRadix { factors, twiddles } => {
                scratch.clear();
                scratch.resize(self.len, Complex64::default());
                mixed_radix(buf, 1, scratch, factors, twiddles, 1);
                buf.copy_from_slice(scratch);
            }
            Algorithm::Bluestein {
                chirp,
                kernel_spectrum,
                forward,
                inverse,
            } => {
                let m = kernel_spectrum.len();
                let mut work = vec![Complex64::default(); m];
                for (k, (w, &x)) in work.iter_mut().zip(buf.iter()).enumerate() {
                    *w = x * chirp[k];
                }
                forward.process(&mut work, scratch);
                for (w, &kf) in work.iter_mut().zip(kernel_spectrum) {
                    *w *= kf;
                }
                inverse.process(&mut work, scratch);
                let scale = 1.0 / m as f64;
                for (k, x) in buf.iter_mut().enumerate() {
                    *x = work[k] * chirp[k] * scale;
                }
            }
        }
    }
}

/// Prime factorization with pairs of 2 merged into radix-4 stages.
fn factorize(mut n: usize) -> Vec<usize> {
    let mut factors = Vec::new();
    while n.is_multiple_of(4) {
        factors.push(4);
        n /= 4;
    }
    let mut p = 2;
    while p * p <= n {
        while n.is_multiple_of(p) {
            factors.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        factors.push(n);
    }
    factors
}

fn twiddle_table(n: usize, direction: Direction) -> Vec<Complex64> {
    let sign = direction.sign();
    (0..n)
        .map(|t| {
            let (s, c) = (sign * 2.0 * PI * t as f64 / n as f64).sin_cos();
            Complex64::new(c, s)
        })
        .collect()
}

/// Decimation in time: `out` receives the DFT of `input[0], input[stride], ...`.
/// `tw_step` maps this sub-problem's roots of unity onto the full-length table.
fn mixed_radix(
    input: &[Complex64],
    stride: usize,
    out: &mut [Complex64],
    factors: &[usize],
    twiddles: &[Complex64],
    tw_step: usize,
) {
    let n = out.len();
    let p = factors[0];
    let m = n / p;

    if m == 1 {
        for (r, o) in out.iter_mut().enumerate() {
            *o = input[r * stride];
        }
    } else {
        for (r, sub) in out.chunks_exact_mut(m).enumerate() {
            mixed_radix(
                &input[r * stride..],
                stride * p,
                sub,
                &factors[1..],
                twiddles,
                tw_step * p,
            );
        }
    }

    match p {
        2 => {
            for k in 0..m {
                let a = out[k];
                let b = out[m + k] * twiddles[k * tw_step];
                out[k] = a + b;
                out[m + k] = a - b;
            }
        }
        4 => {
            // Quarter-turn in this direction: w^(n/4) = ∓i.
            let quarter = twiddles[(n / 4) * tw_step];
            for k in 0..m {
                let a0 = out[k];
                let a1 = out[m + k] * twiddles[k * tw_step];
                let a2 = out[2 * m + k] * twiddles[2 * k * tw_step];
                let a3 = out[3 * m + k] * twiddles[3 * k * tw_step];
                let s02 = a0 + a2;
                let d02 = a0 - a2;
                let s13 = a1 + a3;
                let d13 = (a1 - a3) * quarter;
                out[k] = s02 + s13;
                out[m + k] = d02 + d13;
                out[2 * m + k] = s02 - s13;
                out[3 * m + k] = d02 - d13;
            }
        }
        _ => {
            let mut tmp = [Complex64::default(); MAX_DIRECT_RADIX];
            for k in 0..m {
                for r in 0..p {
                    tmp[r] = out[r * m + k];
                }
                for q in 0..p {
                    let idx = q * m + k;
                    let mut acc = tmp[0];
                    for (r, &v) in tmp.iter().enumerate().take(p).skip(1) {
                        acc += v * twiddles[((r * idx) % n) * tw_step];
                    }
                    out[idx] = acc;
                }
            }
        }
    }
}

fn bluestein(n: usize, direction: Direction) -> Algorithm {
    let m = (2 * n - 1).next_power_of_two();
    let sign = direction.sign();
    let two_n = 2 * n as u128;
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            // k² mod 2n keeps the angle small and exact.
            let k2 = (k as u128 * k as u128 % two_n) as f64;
            let (s, c) = (sign * PI * k2 / n as f64).sin_cos();
            Complex64::new(c, s)
        })
        .collect();

    let forward = FftPlan::new(m, Direction::Forward);
    let inverse = FftPlan::new(m, Direction::Inverse);

    let mut kernel = vec![Complex64::default(); m];
    kernel[0] = chirp[0].conj();
    for k in 1..n {
        kernel[k] = chirp[k].conj();
        kernel[m - k] = chirp[k].conj();
    }
    let mut scratch = Vec::new();
    forward.process(&mut kernel, &mut scratch);

    Algorithm::Bluestein {
        chirp,
        kernel_spectrum: kernel,
        forward: Box::new(forward),
        inverse: Box::new(inverse),
    }
}

/// Row/column separable 2D transform over a row-major `height × width` grid.
#[derive(Debug, Clone)]
pub struct Fft2d {
    height: usize,
    width: usize,
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2d {
    pub fn new(height: usize, width: usize, direction: Direction) -> Self {
        Fft2d {
            height,
            width,
            rows: FftPlan::new(width, direction),
            cols: FftPlan::new(height, direction),
        }
    }

    pub fn process(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.height * self.width);
        let mut scratch = Vec::new();
        for row in data.chunks_exact_mut(self.width) {
            self.rows.process(row, &mut scratch);
        }
        if self.height == 1 {
            return;
        }
        let mut column = vec![Complex64::default(); self.height];
        for w in 0..self.width {
            for (h, c) in column.iter_mut().enumerate() {
                *c = data[h * self.width + w];
            }
            self.cols.process(&mut column, &mut scratch);
            for (h, c) in column.iter().enumerate() {
                data[h * self.width + w] = *c;
            }
        }
    }
}
