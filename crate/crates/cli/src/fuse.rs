use std::path::PathBuf;

use clap::Args;
use fda_core::fusion::{streaming_fuse, FusionManifest, GatePolicy, StreamOptions, DEFAULT_THRESHOLD};

use crate::settings::{usage, ByteSize, Resolver, RunManifest, Setting, MANIFEST_NAME};
use crate::{Global, Status};

pub const REPORT_NAME: &str = "fusion_report.txt";
pub const DEFAULT_BUDGET: &str = "2G";

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Tab-separated lines: image id, then one cached map per model.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Keep pixels whose fused winning score is at least this [default: 0.9]
    #[arg(long, conflicts_with = "top_fraction")]
    threshold: Option<f64>,
    /// Keep this share of each class's pixels, most confident first.
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Output directory for label images and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bytes shared by all workers, with optional K/M/G suffix [default: 2G]
    #[arg(long)]
    memory_budget: Option<ByteSize>,
}

pub fn run(args: FuseArgs, global: Global) -> anyhow::Result<Status> {
    let mut r = Resolver::new(global.config, "fuse")?;
    let manifest_path: PathBuf = r.required("manifest", args.manifest)?;
    let out: PathBuf = r.required("out", args.out)?;

    // A gating flag of either kind replaces any gating from the config.
    let cfg_threshold: Option<f64> = r.lookup("threshold", None)?;
    let cfg_fraction: Option<f64> = r.lookup("top-fraction", None)?;
    let policy = match (args.threshold, args.top_fraction) {
        (Some(t), _) => GatePolicy::Threshold(t),
        (None, Some(f)) => GatePolicy::TopFraction(f),
        (None, None) => match (cfg_threshold, cfg_fraction) {
            (Some(_), Some(_)) => {
                return Err(usage("config sets both `threshold` and `top-fraction`; choose one"))
            }
            (Some(t), None) => GatePolicy::Threshold(t),
            (None, Some(f)) => GatePolicy::TopFraction(f),
            (None, None) => GatePolicy::Threshold(DEFAULT_THRESHOLD),
        },
    };
    policy.validate().map_err(|e| usage(e.to_string()))?;
    match policy {
        GatePolicy::Threshold(t) => r.record("threshold", t.render()),
        GatePolicy::TopFraction(f) => r.record("top-fraction", f.render()),
    }
    let default_budget: ByteSize = DEFAULT_BUDGET.parse().expect("valid default");
    let budget = r.with_default("memory-budget", args.memory_budget, default_budget)?;
    let workers = crate::resolve_workers(&mut r, global.workers)?;
    let settings = r.finish();

    let manifest = FusionManifest::load(&manifest_path, budget.0).map_err(|e| usage(e.to_string()))?;
    let options = StreamOptions {
        policy,
        output_dir: out.clone(),
        workers,
    };
    let report = streaming_fuse(&manifest, &options)?;

    std::fs::write(out.join(REPORT_NAME), report.to_text())?;
    let mut run_manifest = RunManifest::new(settings);
    for path in &report.outputs {
        run_manifest.item(["output".to_string(), path.file_name().unwrap_or_default().to_string_lossy().into_owned()]);
    }
    for f in &report.failures {
        log::error!("{}: {}", f.image_id, f.reason);
        run_manifest.item(["failed", f.image_id.as_str(), f.reason.as_str()]);
    }
    run_manifest.write(&out.join(MANIFEST_NAME))?;
    log::info!(
        "fused {} of {} images with {} worker(s); peak buffers {} bytes (bound {} per worker)",
        report.images_processed,
        manifest.entries().len(),
        report.workers,
        report.peak_buffer_bytes,
        report.per_worker_bound_bytes
    );
    Ok(if report.failures.is_empty() { Status::Success } else { Status::Partial })
}
