use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fda_core::dataprep::{
    load_image, pair_source_target, prep_image, resize_bilinear, save_image, PrepConfig, DEFAULT_CROP,
    DEFAULT_RESIZE, RNG_ID,
};
use fda_core::spectral::{spectral_transfer_detailed, TransferOutput};
use fda_core::ImageTensor;
use rayon::prelude::*;

use crate::settings::{usage, Resolver, RunManifest, Size, MANIFEST_NAME};
use crate::{Global, Status};

pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Directory of source PNG images.
    #[arg(long)]
    source_dir: Option<PathBuf>,
    /// Directory of target-style PNG images.
    #[arg(long)]
    target_dir: Option<PathBuf>,
    /// Half-size of the swapped low-frequency window, as a fraction of each side [default: 0.01]
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for pairing sources with targets [default: --seed]
    #[arg(long)]
    pairing_seed: Option<u64>,
    /// Skip resize and crop; each target is resized to its source's size instead.
    #[arg(long)]
    no_prep: bool,
    /// Resize before cropping, WIDTHxHEIGHT [default: 1280x720]
    #[arg(long)]
    resize: Option<Size>,
    /// Random crop size, WIDTHxHEIGHT [default: 1024x512]
    #[arg(long)]
    crop: Option<Size>,
}

struct Job {
    source_id: String,
    source: PathBuf,
    target_id: String,
    target: PathBuf,
}

struct Done {
    source_offset: Option<(usize, usize)>,
    target_offset: Option<(usize, usize)>,
    output: PathBuf,
}

pub fn run(args: TransferArgs, global: Global) -> anyhow::Result<Status> {
    let mut r = Resolver::new(global.config, "transfer")?;
    let source_dir: PathBuf = r.required("source-dir", args.source_dir)?;
    let target_dir: PathBuf = r.required("target-dir", args.target_dir)?;
    let out: PathBuf = r.required("out", args.out)?;
    let beta = r.with_default("beta", args.beta, DEFAULT_BETA)?;
    crate::check_beta(beta)?;
    let seed: u64 = r
        .optional("seed", global.seed)?
        .ok_or_else(|| usage("batch transfer needs --seed (or `seed =` in the config)"))?;
    let pairing_seed = r.with_default("pairing-seed", args.pairing_seed, seed)?;
    let prep = r.with_default("prep", args.no_prep.then_some(false), true)?;
    let default_resize = Size {
        width: DEFAULT_RESIZE.0,
        height: DEFAULT_RESIZE.1,
    };
    let default_crop = Size {
        width: DEFAULT_CROP.0,
        height: DEFAULT_CROP.1,
    };
    let resize = r.with_default("resize", args.resize, default_resize)?;
    let crop = r.with_default("crop", args.crop, default_crop)?;
    let workers = crate::resolve_workers(&mut r, global.workers)?;
    if let Some(recorded) = r.lookup::<String>("rng", None)? {
        if recorded != RNG_ID {
            log::warn!("config was recorded with generator {recorded:?}; this build uses {RNG_ID:?}");
        }
    }
    r.record("rng", RNG_ID.to_string());
    let settings = r.finish();

    let config = PrepConfig {
        resize_to: (resize.width, resize.height),
        crop_to: (crop.width, crop.height),
        seed,
        pairing_seed,
    };
    if prep {
        config.validate().map_err(|e| usage(e.to_string()))?;
    }

    let sources = crate::list_pngs(&source_dir)?;
    let targets = crate::list_pngs(&target_dir)?;
    if sources.is_empty() {
        return Err(usage(format!("no PNG images in {}", source_dir.display())));
    }
    if targets.is_empty() {
        return Err(usage(format!("no PNG images in {}", target_dir.display())));
    }
    crate::create_dir(&out)?;

    let source_ids: Vec<String> = sources.iter().map(|(id, _)| id.clone()).collect();
    let target_ids: Vec<String> = targets.iter().map(|(id, _)| id.clone()).collect();
    let pairs = pair_source_target(&source_ids, &target_ids, pairing_seed)?;
    let jobs: Vec<Job> = pairs
        .into_iter()
        .zip(&sources)
        .map(|((source_id, target_id), (_, source))| {
            let t = target_ids.binary_search(&target_id).expect("paired id comes from the list");
            Job {
                source_id,
                source: source.clone(),
                target_id,
                target: targets[t].1.clone(),
            }
        })
        .collect();

    let pool = crate::thread_pool(workers)?;
    let results: Vec<anyhow::Result<Done>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| transfer_one(job, beta, prep.then_some(&config), &out))
            .collect()
    });

    let mut manifest = RunManifest::new(settings);
    let mut failed = 0;
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(done) => manifest.item([
                "pair".to_string(),
                job.source_id.clone(),
                job.target_id.clone(),
                offset_text(done.source_offset),
                offset_text(done.target_offset),
                done.output.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            ]),
            Err(e) => {
                failed += 1;
                log::error!("{}: {e:#}", job.source.display());
                manifest.item(["failed".to_string(), job.source_id.clone(), format!("{e:#}")]);
            }
        }
    }
    manifest.write(&out.join(MANIFEST_NAME))?;
    log::info!(
        "transferred {} of {} images into {}",
        jobs.len() - failed,
        jobs.len(),
        out.display()
    );
    Ok(if failed > 0 { Status::Partial } else { Status::Success })
}

fn offset_text(offset: Option<(usize, usize)>) -> String {
    offset.map_or("-".to_string(), |(x, y)| format!("{x},{y}"))
}

fn transfer_one(job: &Job, beta: f64, prep: Option<&PrepConfig>, out: &Path) -> anyhow::Result<Done> {
    let source = load_image(&job.source)?;
    let target = load_image(&job.target)?;
    let (source, source_offset, target, target_offset) = match prep {
        Some(config) => {
            let (s, so) = prep_image(&source, config, &job.source_id)?;
            // Crops are keyed by image id alone, so an image prepped as a
            // target gets the same window it would get as a source.
            let (t, to) = prep_image(&target, config, &job.target_id)?;
            (s, Some(so), t, Some(to))
        }
        None => {
            let t = match_size(&target, &source)?;
            (source, None, t, None)
        }
    };
    let result = spectral_transfer_detailed(&source, &target, beta)?;
    let bound = TransferOutput::residual_bound(&source, &target);
    log::debug!("{}: imaginary residual {:e}", job.source_id, result.imag_residual);
    if result.imag_residual >= bound {
        anyhow::bail!("imaginary residual {:e} exceeds {:e}", result.imag_residual, bound);
    }
    let output = out.join(format!("{}.png", job.source_id));
    save_image(&result.image, &output).with_context(|| format!("saving {}", output.display()))?;
    Ok(Done {
        source_offset,
        target_offset,
        output,
    })
}

/// Bilinear-resizes `img` to the height and width of `like` if they differ.
pub fn match_size(img: &ImageTensor, like: &ImageTensor) -> anyhow::Result<ImageTensor> {
    if img.height() == like.height() && img.width() == like.width() {
        return Ok(img.clone());
    }
    Ok(resize_bilinear(img, like.width(), like.height())?)
}
