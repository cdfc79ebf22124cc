#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fda_core::dataprep::{save_image, save_label, RngStream};
use fda_core::fusion::ProbMap;
use fda_core::{ImageTensor, LabelMap};

pub fn fda() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fda"))
}

pub fn run(args: &[&str]) -> Output {
    let out = fda().args(args).output().expect("binary runs");
    if std::env::var_os("FDA_TEST_ECHO").is_some() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Uniform in [0, 1).
pub fn uniform(rng: &mut RngStream) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Random integer-valued RGB image, so saving is lossless.
pub fn random_rgb(rng: &mut RngStream, h: usize, w: usize) -> ImageTensor {
    let data = (0..3 * h * w).map(|_| rng.below(256) as f64).collect();
    ImageTensor::new(h, w, 3, data).unwrap()
}

pub fn write_rgb_dir(dir: &Path, prefix: &str, count: usize, h: usize, w: usize, seed: u64) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..count)
        .map(|i| {
            let mut rng = RngStream::derive(seed, "fixture", &format!("{prefix}{i}"));
            let path = dir.join(format!("{prefix}{i:02}.png"));
            save_image(&random_rgb(&mut rng, h, w), &path).unwrap();
            path
        })
        .collect()
}

pub fn random_labels(rng: &mut RngStream, h: usize, w: usize, k: u64, ignore_per_mille: u64) -> LabelMap {
    let labels = (0..h * w)
        .map(|_| {
            if rng.below(1000) < ignore_per_mille {
                255
            } else {
                rng.below(k) as u8
            }
        })
        .collect();
    LabelMap::new(h, w, labels).unwrap()
}

pub fn write_label(path: &Path, labels: &LabelMap) {
    save_label(labels, path).unwrap();
}

pub fn random_probmap(rng: &mut RngStream, h: usize, w: usize, k: usize) -> ProbMap {
    let n = h * w;
    let mut scores = vec![0.0; n * k];
    let mut logits = vec![0.0; k];
    for p in 0..n {
        for l in logits.iter_mut() {
            *l = 8.0 * uniform(rng) - 4.0;
        }
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for c in 0..k {
            scores[c * n + p] = (logits[c] - max).exp() / sum;
        }
    }
    ProbMap::new(h, w, k, scores, true).unwrap()
}

/// Every regular file under `dir` with its bytes, sorted by name.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Run manifest lines minus the settings expected to differ between the
/// compared runs (output directory and worker count).
pub fn manifest_without_run_location(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.starts_with("workers =") && !l.starts_with("out ="))
        .map(String::from)
        .collect()
}
