use std::path::PathBuf;

use clap::Args;
use fda_core::dataprep::{load_image, save_image};
use fda_core::spectral::{beta_sweep, CANONICAL_BETAS};

use crate::settings::{usage, BetaList, Resolver, RunManifest, MANIFEST_NAME};
use crate::transfer::match_size;
use crate::{Global, Status};

pub const DISTANCES_NAME: &str = "distances.txt";

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Source PNG image.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target-style PNG image; resized to the source's size if needed.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Comma-separated window sizes [default: 0.01,0.05,0.09]
    #[arg(long)]
    betas: Option<BetaList>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// File name of the output for one window size.
pub fn output_name(beta: f64) -> String {
    format!("beta_{beta}.png")
}

pub fn run(args: SweepArgs, global: Global) -> anyhow::Result<Status> {
    let mut r = Resolver::new(global.config, "sweep")?;
    let source_path: PathBuf = r.required("source", args.source)?;
    let target_path: PathBuf = r.required("target", args.target)?;
    let mut betas = r
        .lookup("betas", args.betas)?
        .unwrap_or_else(|| BetaList(CANONICAL_BETAS.to_vec()));
    if betas.0.is_empty() {
        return Err(usage("--betas is empty"));
    }
    for &b in &betas.0 {
        crate::check_beta(b)?;
    }
    betas.0.sort_by(f64::total_cmp);
    betas.0.dedup();
    r.record("betas", crate::settings::Setting::render(&betas));
    let out: PathBuf = r.required("out", args.out)?;
    let settings = r.finish();

    let source = load_image(&source_path).map_err(|e| usage(e.to_string()))?;
    let target = load_image(&target_path).map_err(|e| usage(e.to_string()))?;
    if source.height() != target.height() || source.width() != target.width() {
        log::info!(
            "resizing target {}x{} to source size {}x{}",
            target.width(),
            target.height(),
            source.width(),
            source.height()
        );
    }
    let target = match_size(&target, &source)?;
    crate::create_dir(&out)?;

    let results = beta_sweep(&source, &target, &betas.0)?;
    let mut manifest = RunManifest::new(settings);
    let mut listing = String::from("# beta\tl2_distance_from_source\tfile\n");
    for res in &results {
        let name = output_name(res.beta);
        save_image(&res.image, &out.join(&name))?;
        listing.push_str(&format!("{}\t{:.6}\t{name}\n", res.beta, res.l2_distance_from_src));
        manifest.item(["output".to_string(), res.beta.to_string(), name]);
    }
    std::fs::write(out.join(DISTANCES_NAME), &listing)?;
    manifest.write(&out.join(MANIFEST_NAME))?;
    print!("{listing}");
    Ok(Status::Success)
}
