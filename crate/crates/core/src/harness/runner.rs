use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use super::data::{make_dataset, DataSource};
use super::formats::{format_points_csv, tile_images, write_atomic};
use super::metrics::{MetricsLog, MetricsRecord};
use crate::attribution::write_pgm;
use crate::error::{Error, Result};
use crate::eval::{
    fit_gaussian, frechet_distance, manifold_metrics, mode_coverage, random_feature_embed,
    GaussianFit,
};
use crate::gan::{Architecture, GanState, GeneratorNet, Trainer};
use crate::numerics::{SeededRng, Tensor};
use crate::selection::{format_index_list, instance_select};

// Independent random streams derived from the experiment seed.
const STREAM_DATASET: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL_REAL: u64 = 4;
const STREAM_EVAL_LATENT: u64 = 5;
const STREAM_BATCHES: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    pub iterations_completed: u64,
    pub initial_frechet: f64,
    pub final_frechet: f64,
    pub best_frechet: f64,
    pub best_iteration: u64,
    pub final_covered_modes: Option<usize>,
    pub error: Option<String>,
}

/// Paths of the artifacts a run writes under its output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.ufsl")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    pub fn selected_indices(&self) -> PathBuf {
        self.root.join("selected_indices.txt")
    }
    pub fn samples_dir(&self) -> PathBuf {
        self.root.join("samples")
    }
}

/// Fixed real set and latent codes reused at every evaluation.
struct Evaluator {
    real_fit: GaussianFit,
    real_features: Tensor,
    latents: Tensor,
    modes: Option<(Tensor, f64)>,
    images: bool,
    embed_seed: u64,
    k: usize,
    coverage_sigmas: f64,
}

struct Evaluation {
    record: MetricsRecord,
    samples: Tensor,
}

impl Evaluator {
    fn features(&self, x: &Tensor) -> Result<Tensor> {
        if self.images {
            random_feature_embed(x, self.embed_seed)
        } else {
            Ok(x.clone())
        }
    }

    fn evaluate(&self, g: &GeneratorNet, iteration: u64) -> Result<Evaluation> {
        let samples = g.infer(&self.latents)?;
        samples.ensure_finite("generated samples")?;
        let feats = self.features(&samples)?;
        let frechet = frechet_distance(&self.real_fit, &fit_gaussian(&feats)?)?;
        let m = manifold_metrics(&self.real_features, &feats, self.k)?;
        let (covered, hq) = match &self.modes {
            Some((c, s)) => {
                let (n, f) = mode_coverage(&samples, c, *s, self.coverage_sigmas)?;
                (Some(n), Some(f))
            }
            None => (None, None),
        };
        Ok(Evaluation {
            record: MetricsRecord {
                iteration,
                frechet: Some(frechet),
                precision: Some(m.precision),
                recall: Some(m.recall),
                density: Some(m.density),
                coverage: Some(m.coverage),
                covered_modes: covered,
                hq_fraction: hq,
                ..Default::default()
            },
            samples,
        })
    }
}

fn dump_samples(dir: &Path, iteration: u64, samples: &Tensor, n: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let idx: Vec<usize> = (0..n.min(samples.rows())).collect();
    let s = samples.select_rows(&idx)?;
    if s.rank() == 2 {
        let header: Vec<String> = (0..s.shape()[1]).map(|j| format!("x{j}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let path = dir.join(format!("{iteration:06}.csv"));
        fs::write(&path, format_points_csv(&s, Some(&header))?).map_err(|e| Error::io(&path, e))
    } else {
        let (w, h, px) = tile_images(&s)?;
        write_pgm(&dir.join(format!("{iteration:06}.pgm")), w, h, &px)
    }
}

fn write_summary(paths: &RunPaths, s: &RunSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(s).expect("summary serialises") + "\n";
    write_atomic(&paths.summary(), text.as_bytes())
}

/// Trains and evaluates one configuration, writing metrics, sample dumps,
/// checkpoints and a summary under `cfg.out_dir`.
///
/// A non-finite loss stops the run: a diagnostic row is appended, the last
/// checkpoint is left in place, the summary is marked diverged and the
/// numeric error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let paths = RunPaths::new(&cfg.out_dir);
    fs::create_dir_all(paths.samples_dir()).map_err(|e| Error::io(paths.samples_dir(), e))?;
    write_atomic(&paths.config(), cfg.to_json().as_bytes())?;

    let root = SeededRng::new(cfg.seed);
    let mut source = make_dataset(&cfg.dataset, &mut root.fork(STREAM_DATASET))?;
    if let (Some(sel), DataSource::Finite { samples }) = (&cfg.instance_selection, &source) {
        let keep = instance_select(samples, sel)?;
        info!(
            "instance selection keeps {} of {} samples",
            keep.len(),
            samples.rows()
        );
        write_atomic(
            &paths.selected_indices(),
            format_index_list(&keep).as_bytes(),
        )?;
        source = DataSource::Finite {
            samples: samples.select_rows(&keep)?,
        };
    }
    let shape = source.sample_shape();
    let images = shape.len() == 3;
    let arch = if images {
        Architecture::Images
    } else {
        Architecture::Points
    };
    let (generator, discriminator) = arch.build(&shape, &mut root.fork(STREAM_INIT))?;
    let tcfg = cfg.train_config();
    let state = GanState::new(generator, discriminator, &tcfg)?;
    let mut trainer = Trainer::new(tcfg, state, root.fork(STREAM_TRAIN))?;

    let real = source.sample(cfg.eval.samples, &mut root.fork(STREAM_EVAL_REAL))?;
    let real_features = if images {
        random_feature_embed(&real, cfg.eval.embed_seed)?
    } else {
        real
    };
    let ev = Evaluator {
        real_fit: fit_gaussian(&real_features)?,
        real_features,
        latents: trainer
            .state
            .generator
            .latent(cfg.eval.samples, &mut root.fork(STREAM_EVAL_LATENT))?,
        modes: source.modes().map(|(c, s)| (c.clone(), s)),
        images,
        embed_seed: cfg.eval.embed_seed,
        k: cfg.eval.k,
        coverage_sigmas: cfg.eval.coverage_sigmas,
    };

    let mut log = MetricsLog::create(&paths.metrics(), images)?;
    let mut summary = RunSummary {
        run_id: cfg.run_id.clone(),
        status: RunStatus::Completed,
        iterations_completed: 0,
        initial_frechet: f64::NAN,
        final_frechet: f64::NAN,
        best_frechet: f64::INFINITY,
        best_iteration: 0,
        final_covered_modes: None,
        error: None,
    };
    let ufs = cfg.ufs;
    let eval_point = |trainer: &Trainer,
                      l_d: Option<f64>,
                      l_g: Option<f64>,
                      summary: &mut RunSummary,
                      log: &mut MetricsLog|
     -> Result<()> {
        let it = trainer.state.iteration;
        let mut e = ev.evaluate(&trainer.state.generator, it)?;
        e.record.l_d = l_d;
        e.record.l_g = l_g;
        e.record.wall_seconds = start.elapsed().as_secs_f64();
        log.append(&e.record)?;
        dump_samples(&paths.samples_dir(), it, &e.samples, cfg.eval.dump_samples)?;
        save_checkpoint(
            &paths.checkpoint(),
            &Checkpoint {
                state: trainer.state.clone(),
                ufs,
            },
        )?;
        let fd = e
            .record
            .frechet
            .expect("evaluation always computes Fréchet");
        if it == 0 {
            summary.initial_frechet = fd;
        }
        summary.final_frechet = fd;
        summary.final_covered_modes = e.record.covered_modes;
        if fd < summary.best_frechet {
            summary.best_frechet = fd;
            summary.best_iteration = it;
        }
        info!(
            "[{}] iter {it}: frechet {fd:.5} precision {:.3} recall {:.3} modes {:?}",
            cfg.run_id,
            e.record.precision.unwrap_or(f64::NAN),
            e.record.recall.unwrap_or(f64::NAN),
            e.record.covered_modes
        );
        Ok(())
    };

    eval_point(&trainer, None, None, &mut summary, &mut log)?;
    let mut batches = root.fork(STREAM_BATCHES);
    let total = cfg.training.iterations;
    for t in 1..=total {
        let step = trainer.iteration(|n| source.sample(n, &mut batches));
        let outcome = match step {
            Ok((l_d, l_g)) => {
                summary.iterations_completed = t;
                if t % cfg.eval.cadence == 0 || t == total {
                    eval_point(&trainer, Some(l_d), Some(l_g), &mut summary, &mut log)
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e),
        };
        if let Err(e) = outcome {
            if !matches!(e, Error::Numeric(_)) {
                return Err(e);
            }
            warn!("[{}] diverged at iteration {t}: {e}", cfg.run_id);
            log.append(&MetricsRecord {
                iteration: t,
                l_d: Some(f64::NAN),
                l_g: Some(f64::NAN),
                wall_seconds: start.elapsed().as_secs_f64(),
                ..Default::default()
            })?;
            summary.status = RunStatus::Diverged;
            summary.error = Some(e.to_string());
            write_summary(&paths, &summary)?;
            return Err(e);
        }
    }
    write_summary(&paths, &summary)?;
    Ok(summary)
}
