#![allow(dead_code)]

use fda_core::fusion::ProbMap;
use fda_core::{ImageTensor, LabelMap, IGNORE_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..255.0)).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::new(h, w, c, random_plane(rng, h * w * c)).unwrap()
}

/// Softmax of random logits, so every pixel sums to one.
pub fn random_probmap(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> ProbMap {
    let n = h * w;
    let mut scores = vec![0.0; n * k];
    let mut logits = vec![0.0; k];
    for p in 0..n {
        for l in logits.iter_mut() {
            *l = rng.gen_range(-4.0..4.0);
        }
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for c in 0..k {
            scores[c * n + p] = (logits[c] - max).exp() / sum;
        }
    }
    ProbMap::new(h, w, k, scores, true).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: u8, ignore_rate: f64) -> LabelMap {
    let labels = (0..h * w)
        .map(|_| if rng.gen_bool(ignore_rate) { IGNORE_LABEL } else { rng.gen_range(0..k) })
        .collect();
    LabelMap::new(h, w, labels).unwrap()
}

pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}
