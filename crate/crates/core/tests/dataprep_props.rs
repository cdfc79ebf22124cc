mod common;

use fda_core::dataprep::{
    crop, load_image, load_label, pair_source_target, prep_image, random_crop, remap_labels,
    resize_bilinear, resize_labels_nearest, save_image, save_label, LabelRemap, PrepConfig,
    RngStream,
};
use fda_core::{ImageTensor, LabelMap, IGNORE_LABEL};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn crop_offsets_are_uniform() {
    // Width 110 with a 10-wide crop leaves 101 valid x offsets.
    let img = ImageTensor::filled(12, 110, 1, 0.0).unwrap();
    let draws = 10_000;
    let mut counts = vec![0usize; 101];
    for i in 0..draws {
        let mut rng = RngStream::derive(42, "crop", &format!("img{i}"));
        let (_, (x, y)) = random_crop(&img, 10, 12, &mut rng).unwrap();
        assert_eq!(y, 0);
        counts[x] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0), "offset range not covered");
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.1% point of chi-square with 100 degrees of freedom.
    assert!(chi2 < 149.45, "chi-square {chi2}");
}

#[test]
fn pairing_is_binomially_balanced() {
    let sources: Vec<String> = (0..10_000).map(|i| format!("src{i:05}")).collect();
    let targets: Vec<String> = (0..10).map(|i| format!("tgt{i}")).collect();
    let pairs = pair_source_target(&sources, &targets, 7).unwrap();
    assert_eq!(pairs.len(), sources.len());
    for t in &targets {
        let n = pairs.iter().filter(|(_, p)| p == t).count();
        // Three standard deviations of Binomial(10000, 0.1).
        assert!((910..=1090).contains(&n), "{t}: {n}");
    }
    assert_eq!(pair_source_target(&sources, &targets, 7).unwrap(), pairs);
    assert_ne!(pair_source_target(&sources, &targets, 8).unwrap(), pairs);
}

#[test]
fn pairing_does_not_depend_on_source_order() {
    let sources: Vec<String> = (0..50).map(|i| format!("s{i}")).collect();
    let targets: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let forward = pair_source_target(&sources, &targets, 3).unwrap();
    let reversed: Vec<String> = sources.iter().rev().cloned().collect();
    let mut backward = pair_source_target(&reversed, &targets, 3).unwrap();
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn crop_copies_exact_window() {
    let mut rng = common::rng(21);
    let img = common::random_image(&mut rng, 9, 11, 3);
    for y in 0..=4 {
        for x in 0..=5 {
            let out = crop(&img, x, y, 6, 5).unwrap();
            for c in 0..3 {
                for r in 0..5 {
                    for col in 0..6 {
                        assert_eq!(out.get(c, r, col), img.get(c, y + r, x + col));
                    }
                }
            }
        }
    }
    assert!(crop(&img, 6, 0, 6, 5).is_err());
}

#[test]
fn prep_is_identical_across_threads() {
    let mut rng = common::rng(22);
    let images: Vec<ImageTensor> = (0..8).map(|_| common::random_image(&mut rng, 30, 50, 3)).collect();
    let mut config = PrepConfig::new(99, 5);
    config.resize_to = (64, 40);
    config.crop_to = (32, 16);
    let sequential: Vec<_> = images
        .iter()
        .enumerate()
        .map(|(i, img)| prep_image(img, &config, &format!("id{i}")).unwrap())
        .collect();
    let parallel: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = images
            .iter()
            .enumerate()
            .rev()
            .map(|(i, img)| s.spawn(move || prep_image(img, &config, &format!("id{i}")).unwrap()))
            .collect();
        let mut out: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        out.reverse();
        out
    });
    for ((a, oa), (b, ob)) in sequential.iter().zip(&parallel) {
        assert_eq!(oa, ob);
        assert_eq!(a.as_slice(), b.as_slice());
    }
}

#[test]
fn prep_config_rejects_oversized_crop() {
    let mut config = PrepConfig::new(1, 1);
    config.crop_to = (2000, 100);
    assert!(config.validate().is_err());
    let img = ImageTensor::filled(10, 10, 3, 1.0).unwrap();
    assert!(prep_image(&img, &config, "x").is_err());
}

#[test]
fn image_and_label_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(23);
    let data: Vec<f64> = (0..3 * 7 * 5).map(|_| rng.gen_range(0..=255) as f64).collect();
    let img = ImageTensor::new(7, 5, 3, data).unwrap();
    let path = dir.path().join("img.png");
    save_image(&img, &path).unwrap();
    assert_eq!(load_image(&path).unwrap(), img);

    let labels = common::random_labels(&mut rng, 7, 5, 19, 0.2);
    let lpath = dir.path().join("lab.png");
    save_label(&labels, &lpath).unwrap();
    assert_eq!(load_label(&lpath).unwrap(), labels);
    // An RGB file is not a label map.
    assert!(load_label(&path).is_err());
    assert!(load_image(&dir.path().join("missing.png")).is_err());
}

#[test]
fn remap_matches_lookup_oracle() {
    let mut rng = common::rng(24);
    for _ in 0..20 {
        let mut table = [0u8; 256];
        let mut remap = LabelRemap::all_ignore();
        for (from, t) in table.iter_mut().enumerate() {
            *t = rng.gen();
            remap.set(from as u8, *t);
        }
        let labels = LabelMap::new(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap();
        let out = remap_labels(&labels, &remap);
        for (o, i) in out.labels().iter().zip(labels.labels()) {
            assert_eq!(*o, table[*i as usize]);
        }
    }
}

#[test]
fn parsed_remap_is_total() {
    let remap = LabelRemap::parse("# comment\n0 0\n1 1  # trailing\n10 9\n").unwrap();
    for id in 0..=255u8 {
        let expect = match id {
            0 => 0,
            1 => 1,
            10 => 9,
            _ => IGNORE_LABEL,
        };
        assert_eq!(remap.get(id), expect);
    }
    assert!(LabelRemap::parse("1 2 3\n").is_err());
    assert!(LabelRemap::parse("1 256\n").is_err());
    let identity = LabelRemap::identity();
    assert!((0..=255u8).all(|id| identity.get(id) == id));
}

#[test]
fn nearest_label_resize_never_invents_classes() {
    let mut rng = common::rng(25);
    let labels = common::random_labels(&mut rng, 13, 17, 5, 0.1);
    let big = resize_labels_nearest(&labels, 40, 29).unwrap();
    let present: std::collections::HashSet<u8> = labels.labels().iter().copied().collect();
    assert!(big.labels().iter().all(|l| present.contains(l)));
    assert_eq!(resize_labels_nearest(&labels, 17, 13).unwrap(), labels);
}

proptest! {
    #![proptest_config(common::proptest_config(64))]

    #[test]
    fn resize_stays_within_input_range(
        h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40, seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let img = common::random_image(&mut rng, h, w, 2);
        let out = resize_bilinear(&img, ow, oh).unwrap();
        prop_assert_eq!((out.height(), out.width(), out.channels()), (oh, ow, 2));
        let lo = img.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in out.as_slice() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn constant_images_stay_constant(
        h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40, value in 0.0f64..255.0,
    ) {
        let img = ImageTensor::filled(h, w, 3, value).unwrap();
        let out = resize_bilinear(&img, ow, oh).unwrap();
        for &v in out.as_slice() {
            prop_assert!((v - value).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_crop(seed in any::<u64>(), id in "[a-z0-9]{1,12}") {
        let img = ImageTensor::filled(50, 70, 1, 0.0).unwrap();
        let a = random_crop(&img, 20, 10, &mut RngStream::derive(seed, "crop", &id)).unwrap().1;
        let b = random_crop(&img, 20, 10, &mut RngStream::derive(seed, "crop", &id)).unwrap().1;
        prop_assert_eq!(a, b);
        prop_assert!(a.0 <= 50 && a.1 <= 40);
    }
}
