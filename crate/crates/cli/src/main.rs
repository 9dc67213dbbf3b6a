use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use ufs_lab::attribution::{
    cam_file_name, compute_cam, heatmap_to_pgm, upsample_nearest, AttributionMap, CamVariant,
};
use ufs_lab::eval::{fit_gaussian, frechet_distance, manifold_metrics, random_feature_embed};
use ufs_lab::harness::formats::{load_idx_images, parse_points_csv, read_matrix};
use ufs_lab::harness::{load_checkpoint, load_config, preset, run_experiment, RunStatus};
use ufs_lab::selection::{
    format_index_list, instance_select, CovarianceMode, InstanceSelectionConfig,
};
use ufs_lab::ufs::{suppression_for, UfsConfig};
use ufs_lab::Tensor;

#[derive(Parser)]
#[command(
    name = "ufs-lab",
    version,
    about = "GAN training with unrealistic feature suppression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate an experiment config.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set training.iterations=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print a built-in preset config as JSON.
    Preset { name: String },
    /// Fréchet distance and manifold metrics between two sample files.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(short, default_value_t = 3)]
        k: usize,
        /// Seed of the random feature embedder (image inputs only).
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
    /// Write CAM, CAM_UFS and CAM_SUP heatmaps for images under a checkpoint.
    Cam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "run")]
        run_id: String,
        /// Only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        /// Upsample maps to input resolution.
        #[arg(long)]
        upsample: bool,
    },
    /// Prune a dataset to its highest-density samples.
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        retention: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diagonal: bool,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
}

/// Reads point CSV, flat f64 matrices or IDX images, picked by extension.
fn read_samples(path: &Path) -> Result<Tensor> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let t = match ext.as_str() {
        "csv" | "txt" => parse_points_csv(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        "idx" | "ubyte" | "idx3-ubyte" => load_idx_images(path)?,
        _ => read_matrix(path)?,
    };
    Ok(t)
}

fn features(t: Tensor, seed: u64) -> Result<Tensor> {
    Ok(if t.rank() == 4 {
        random_feature_embed(&t, seed)?
    } else {
        t
    })
}

fn cmd_eval(real: &Path, fake: &Path, k: usize, seed: u64) -> Result<()> {
    let r = features(read_samples(real)?, seed)?;
    let f = features(read_samples(fake)?, seed)?;
    let fd = frechet_distance(&fit_gaussian(&r)?, &fit_gaussian(&f)?)?;
    let m = manifold_metrics(&r, &f, k)?;
    let out = serde_json::json!({
        "frechet": fd,
        "precision": m.precision,
        "recall": m.recall,
        "density": m.density,
        "coverage": m.coverage,
        "k": k,
        "real_samples": r.rows(),
        "fake_samples": f.rows(),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_cam(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    run_id: &str,
    limit: Option<usize>,
    upsample: bool,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let d = &ck.state.discriminator;
    let mut x = load_idx_images(input)?;
    if let Some(n) = limit {
        let idx: Vec<usize> = (0..n.min(x.rows())).collect();
        x = x.select_rows(&idx)?;
    }
    if x.shape()[1..] != *d.input_shape() {
        bail!(
            "input images {:?} do not match the discriminator input {:?}",
            &x.shape()[1..],
            d.input_shape()
        );
    }
    if !ck.state.stats.initialized {
        bail!("checkpoint has no feature statistics; train at least one discriminator step first");
    }
    let ufs = ck.ufs.unwrap_or_else(UfsConfig::dismission);
    let (features, _) = d.forward_split(&x)?;
    let s = suppression_for(&ck.state.stats, &d.head.weight, &features, &ufs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    for variant in CamVariant::ALL {
        for (i, map) in compute_cam(d, &x, Some(&s), variant)?
            .into_iter()
            .enumerate()
        {
            let map = if upsample {
                AttributionMap {
                    variant,
                    values: upsample_nearest(&map.values, h, w)?,
                }
            } else {
                map
            };
            heatmap_to_pgm(&map, &out.join(cam_file_name(run_id, i, variant)))?;
        }
    }
    info!("wrote {} heatmaps to {}", 3 * x.rows(), out.display());
    Ok(())
}

fn cmd_select(dataset: &Path, retention: f64, out: &Path, diagonal: bool, seed: u64) -> Result<()> {
    let data = read_samples(dataset)?;
    let cfg = InstanceSelectionConfig {
        retention_ratio: retention,
        embedder_seed: seed,
        covariance: if diagonal {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::FullShrinkage
        },
    };
    let keep = instance_select(&data, &cfg)?;
    fs::write(out, format_index_list(&keep))
        .with_context(|| format!("writing {}", out.display()))?;
    info!("kept {} of {} samples", keep.len(), data.rows());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => load_config(&config, &overrides)
            .and_then(|c| run_experiment(&c))
            .map_err(Into::into)
            .and_then(|s| {
                println!("{}", serde_json::to_string_pretty(&s)?);
                if s.status != RunStatus::Completed {
                    bail!("run did not complete");
                }
                Ok(())
            }),
        Command::Preset { name } => preset(&name)
            .map(|c| print!("{}", c.to_json()))
            .map_err(Into::into),
        Command::Eval {
            real,
            fake,
            k,
            embed_seed,
        } => cmd_eval(&real, &fake, k, embed_seed),
        Command::Cam {
            checkpoint,
            input,
            out,
            run_id,
            limit,
            upsample,
        } => cmd_cam(&checkpoint, &input, &out, &run_id, limit, upsample),
        Command::Select {
            dataset,
            retention,
            out,
            diagonal,
            embed_seed,
        } => cmd_select(&dataset, retention, &out, diagonal, embed_seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
