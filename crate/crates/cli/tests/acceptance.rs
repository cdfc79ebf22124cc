//! Acceptance criteria, one test each. Every test writes a `PASS`/`FAIL` line
//! to stderr (bypassing the test harness capture) before asserting.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use common::{code, p, run, stderr, uniform};
use fda_core::dataprep::{load_label, RngStream};
use fda_core::eval::{
    class_iou, relative_error, ClassIouReport, ConfusionMatrix, ExperimentRow, CITYSCAPES_CLASSES,
};
use fda_core::fusion::{
    mbt_mean, per_image_bound, pseudo_labels, store_probmap, streaming_fuse, FusionEntry,
    FusionManifest, GatePolicy, ProbMap, StreamOptions,
};
use fda_core::spectral::{
    build_mask, dft2d_forward, dft2d_inverse, spectral_transfer, spectral_transfer_detailed,
    TransferOutput,
};
use fda_core::{ImageTensor, LabelMap, IGNORE_LABEL};
use num_complex::Complex64;

fn verdict(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Option<Duration>) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let limit_text = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    let line = format!(
        "acceptance {id:>2} {}: {name}: {detail}; {:.2?}{limit_text}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} took {elapsed:?}");
}

fn random_image(rng: &mut RngStream, h: usize, w: usize, c: usize) -> ImageTensor {
    let data = (0..h * w * c).map(|_| 255.0 * uniform(rng)).collect();
    ImageTensor::new(h, w, c, data).unwrap()
}

fn naive_dft(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let angle = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    acc += plane[y * w + x] * Complex64::from_polar(1.0, angle);
                }
            }
            out.push(acc);
        }
    }
    out
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_fft_matches_direct_dft() {
    let start = Instant::now();
    let mut rng = RngStream::derive(1, "acceptance", "fft");
    let mut worst = 0.0f64;
    for h in 1..=8 {
        for w in 1..=8 {
            let plane: Vec<f64> = (0..h * w).map(|_| 255.0 * uniform(&mut rng)).collect();
            let fast = dft2d_forward(&plane, h, w).unwrap();
            let slow = naive_dft(&plane, h, w);
            for (a, b) in fast.coeffs().iter().zip(&slow) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    verdict(
        1,
        "forward transform vs direct DFT, all sizes 1..8 x 1..8",
        worst < 1e-9,
        format!("max abs error {worst:.3e} (< 1e-9)"),
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn criterion_02_roundtrip() {
    let start = Instant::now();
    let mut rng = RngStream::derive(2, "acceptance", "roundtrip");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let plane: Vec<f64> = (0..64 * 64).map(|_| 255.0 * uniform(&mut rng)).collect();
        let (back, _) = dft2d_inverse(&dft2d_forward(&plane, 64, 64).unwrap()).unwrap();
        worst = worst.max(max_abs(&back, &plane));
    }
    verdict(
        2,
        "inverse(forward(x)) on 100 random 64x64 planes",
        worst < 1e-9,
        format!("max abs error {worst:.3e} (< 1e-9)"),
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

#[test]
fn criterion_03_self_transfer_identity() {
    let start = Instant::now();
    let mut rng = RngStream::derive(3, "acceptance", "self");
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let img = random_image(&mut rng, 128, 256, 3);
        for beta in [0.0, 0.01, 0.05, 0.09, 0.49] {
            let out = spectral_transfer(&img, &img, beta).unwrap();
            worst = worst.max(max_abs(out.as_slice(), img.as_slice()));
        }
    }
    verdict(
        3,
        "transfer(x, x, beta) = x on 10 random 128x256 RGB images, 5 betas",
        worst < 1e-8,
        format!("max abs deviation {worst:.3e} (< 1e-8)"),
        start.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn criterion_04_real_output() {
    let start = Instant::now();
    let mut rng = RngStream::derive(4, "acceptance", "real");
    let betas = [0.01, 0.05, 0.09, 0.2, 0.3];
    let mut worst_ratio = 0.0f64;
    let mut parities = [0usize; 4];
    for i in 0..100 {
        let h = 16 + rng.below(113) as usize;
        let w = 16 + rng.below(113) as usize;
        parities[(h % 2) * 2 + w % 2] += 1;
        let src = random_image(&mut rng, h, w, 3);
        let tgt = random_image(&mut rng, h, w, 3);
        let out = spectral_transfer_detailed(&src, &tgt, betas[i % betas.len()]).unwrap();
        let bound = TransferOutput::residual_bound(&src, &tgt);
        worst_ratio = worst_ratio.max(out.imag_residual / bound);
    }
    let mixed = parities.iter().all(|&n| n > 0);
    verdict(
        4,
        "imaginary residual of 100 cross transfers, mixed odd/even sizes",
        worst_ratio < 1.0 && mixed,
        format!("worst residual / (1e-8 * peak) = {worst_ratio:.3e}; size parities (ee, eo, oe, oo) = {parities:?}"),
        start.elapsed(),
        Some(Duration::from_secs(60)),
    );
}

#[test]
fn criterion_05_dc_swap() {
    let start = Instant::now();
    let mut rng = RngStream::derive(5, "acceptance", "dc");
    let mut worst = 0.0f64;
    for i in 0..50 {
        let h = 20 + rng.below(80) as usize;
        let w = 20 + rng.below(80) as usize;
        let beta = [0.05, 0.09, 0.2][i % 3];
        assert!(build_mask(beta, h, w).unwrap().is_active());
        let src = random_image(&mut rng, h, w, 3);
        let tgt = random_image(&mut rng, h, w, 3);
        let out = spectral_transfer(&src, &tgt, beta).unwrap();
        for c in 0..3 {
            let (got, want) = (out.channel_mean(c), tgt.channel_mean(c));
            worst = worst.max((got - want).abs() / want.abs());
        }
    }
    verdict(
        5,
        "output channel means equal target means, 50 pairs, active mask",
        worst < 1e-6,
        format!("max relative deviation {worst:.3e} (< 1e-6)"),
        start.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn criterion_06_mask_arithmetic() {
    let start = Instant::now();
    let mut rng = RngStream::derive(6, "acceptance", "mask");
    let mut mismatches = 0;
    for _ in 0..1000 {
        let beta = 0.5 * uniform(&mut rng);
        let h = 1 + rng.below(2048) as usize;
        let w = 1 + rng.below(2048) as usize;
        let (hh, hw) = ((beta * h as f64).floor() as usize, (beta * w as f64).floor() as usize);
        let expect = if hh >= 1 && hw >= 1 { (2 * hh + 1) * (2 * hw + 1) } else { 0 };
        if build_mask(beta, h, w).unwrap().cell_count() != expect {
            mismatches += 1;
        }
    }
    let mut not_increasing = 0;
    for _ in 0..200 {
        let h = 100 + rng.below(2000) as usize;
        let w = 100 + rng.below(2000) as usize;
        let c: Vec<usize> = [0.01, 0.05, 0.09]
            .iter()
            .map(|&b| build_mask(b, h, w).unwrap().cell_count())
            .collect();
        if !(c[0] < c[1] && c[1] < c[2]) {
            not_increasing += 1;
        }
    }
    verdict(
        6,
        "mask cell count formula on 1000 random (beta, H, W); growth over 0.01, 0.05, 0.09",
        mismatches == 0 && not_increasing == 0,
        format!("{mismatches} formula mismatches, {not_increasing} non-increasing sweeps"),
        start.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

#[test]
fn criterion_07_streaming_fusion() {
    let start = Instant::now();
    let (images, h, w, k) = (20, 64, 128, 19);
    let bound = per_image_bound(h, w, k);
    let policy = GatePolicy::Threshold(0.2);
    let mut mismatched = 0;
    let mut peaks = Vec::new();
    let mut within_bound = true;
    for models in [1, 3] {
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = RngStream::derive(7, "acceptance", &format!("fusion{models}"));
        let mut entries = Vec::new();
        let mut expected = Vec::new();
        for i in 0..images {
            let id = format!("img{i:02}");
            let maps: Vec<ProbMap> = (0..models).map(|_| common::random_probmap(&mut rng, h, w, k)).collect();
            let paths: Vec<_> = (0..models).map(|m| tmp.path().join(format!("{id}_{m}.fdap"))).collect();
            for (map, path) in maps.iter().zip(&paths) {
                store_probmap(map, path).unwrap();
            }
            let refs: Vec<&ProbMap> = maps.iter().collect();
            expected.push(pseudo_labels(&mbt_mean(&refs).unwrap(), &policy).unwrap());
            entries.push(FusionEntry { image_id: id, paths });
        }
        // One worker's budget, so the peak is that of a single pipeline.
        let manifest = FusionManifest::new(entries, bound).unwrap();
        let out = tmp.path().join("out");
        let options = StreamOptions { policy, output_dir: out.clone(), workers: 4 };
        let report = streaming_fuse(&manifest, &options).unwrap();
        assert!(report.failures.is_empty());
        for (i, want) in expected.iter().enumerate() {
            let got: LabelMap = load_label(&out.join(format!("img{i:02}.png"))).unwrap();
            if &got != want {
                mismatched += 1;
            }
        }
        within_bound &= report.peak_buffer_bytes <= bound;
        peaks.push(report.peak_buffer_bytes);
    }
    let flat = peaks[0] == peaks[1];
    verdict(
        7,
        "streaming fusion vs in-memory mean + gate, 20 images, M in {1, 3}, K = 19, 64x128",
        mismatched == 0 && within_bound && flat,
        format!(
            "{mismatched} label maps differ; peak bytes M=1 {} / M=3 {} vs bound {bound}",
            peaks[0], peaks[1]
        ),
        start.elapsed(),
        Some(Duration::from_secs(60)),
    );
}

#[test]
fn criterion_08_published_class_iou_mean() {
    let start = Instant::now();
    let published = [
        90.56, 44.31, 82.97, 23.69, 31.89, 34.17, 36.32, 30.44, 84.68, 42.07, 79.15, 61.39, 27.18,
        82.21, 38.04, 52.02, 0.12, 29.49, 40.66,
    ];
    let report = ClassIouReport::from_per_class(
        published.iter().map(|v| Some(v / 100.0)).collect(),
        CITYSCAPES_CLASSES.iter().map(|s| s.to_string()).collect(),
    )
    .unwrap();
    let miou = 100.0 * report.miou.unwrap();
    verdict(
        8,
        "mean of the 19 published DeepLabV2 per-class IoUs",
        (miou - 47.97).abs() <= 0.01,
        format!("mIoU {miou:.4} vs printed 47.97 (+/- 0.01)"),
        start.elapsed(),
        None,
    );
}

#[test]
fn criterion_09_relative_error() {
    let start = Instant::now();
    let a = relative_error(44.61, 42.71).unwrap();
    let b = relative_error(47.03, 47.37).unwrap();
    let erratum = ExperimentRow::new("0.09 (T=0)", 45.01, 41.35).with_published_error(1.33);
    let flagged = erratum.is_anomalous().unwrap();
    let recomputed = erratum.error().unwrap();
    verdict(
        9,
        "relative error formula on published rows; inconsistent 1.33% row flagged",
        (a - 4.26).abs() <= 0.02 && (b + 0.72).abs() <= 0.02 && flagged,
        format!("{a:.3}% (want 4.26), {b:.3}% (want -0.72), 1.33% row recomputes to {recomputed:.2}%, flagged = {flagged}"),
        start.elapsed(),
        None,
    );
}

#[test]
fn criterion_10_cli_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    let tgt = tmp.path().join("tgt");
    common::write_rgb_dir(&src, "s", 10, 600, 900, 10);
    common::write_rgb_dir(&tgt, "t", 4, 760, 1300, 11);

    let mut runs = Vec::new();
    for (i, workers) in [1, 1, 2, 4, 7].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        let o = run(&[
            "transfer", "--source-dir", p(&src), "--target-dir", p(&tgt), "--out", p(&out),
            "--seed", "2024", "--beta", "0.05", "--workers", &workers.to_string(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let files = common::dir_bytes(&out);
        let images: Vec<(String, Vec<u8>)> = files.iter().filter(|(n, _)| n.ends_with(".png")).cloned().collect();
        let manifest = String::from_utf8(files.iter().find(|(n, _)| n == "run_manifest.txt").unwrap().1.clone()).unwrap();
        runs.push((images, common::manifest_without_run_location(&manifest)));
    }
    let count = runs[0].0.len();
    let identical = runs.iter().all(|r| r == &runs[0]);
    verdict(
        10,
        "CLI transfer of 10 images, same seed, workers 1, 1, 2, 4, 7",
        count == 10 && identical,
        format!("{count} outputs per run, bitwise identical across runs = {identical}"),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

#[test]
fn criterion_11_confusion_and_iou_oracle() {
    let start = Instant::now();
    let k = 19usize;
    let mut rng = RngStream::derive(11, "acceptance", "confusion");
    let mut cm = ConfusionMatrix::new(k).unwrap();
    let mut counts = vec![0u64; k * k];
    let mut ignored = 0u64;
    let mut pairs = Vec::new();
    for _ in 0..50 {
        let gt = common::random_labels(&mut rng, 64, 64, k as u64, 60);
        let pred = common::random_labels(&mut rng, 64, 64, k as u64, 30);
        cm.accumulate(&pred, &gt).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let (pv, gv) = (pred.get(r, c), gt.get(r, c));
                if pv == IGNORE_LABEL || gv == IGNORE_LABEL {
                    ignored += 1;
                } else {
                    counts[gv as usize * k + pv as usize] += 1;
                }
            }
        }
        pairs.push((pred, gt));
    }
    let mut iou_mismatch = 0;
    let report = class_iou(&cm);
    for class in 0..k as u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (pred, gt) in &pairs {
            for (&pv, &gv) in pred.labels().iter().zip(gt.labels()) {
                if pv == IGNORE_LABEL || gv == IGNORE_LABEL {
                    continue;
                }
                inter += (pv == class && gv == class) as u64;
                union += (pv == class || gv == class) as u64;
            }
        }
        let want = (union > 0).then(|| inter as f64 / union as f64);
        if report.per_class[class as usize] != want {
            iou_mismatch += 1;
        }
    }
    let counts_match = cm.counts() == counts.as_slice() && cm.ignored_pixels() == ignored;
    verdict(
        11,
        "confusion counts and IoU vs per-pixel brute force, 50 random 64x64 pairs with ignore",
        counts_match && iou_mismatch == 0,
        format!("counts exact = {counts_match}, {iou_mismatch} IoU mismatches, {ignored} ignored pixels"),
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );
}
