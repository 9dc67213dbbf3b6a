use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::gan::{AdversarialLoss, LossKind, TrainConfig};
use crate::numerics::AdamConfig;
use crate::selection::{InstanceSelectionConfig, SelectionConfig, SelectionMode};
use crate::ufs::UfsConfig;

/// Optimisation settings shared by every preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub loss: AdversarialLoss,
    #[serde(default)]
    pub n_critic: Option<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generator iterations between metric rows.
    pub cadence: u64,
    /// Real and fake samples per evaluation.
    pub samples: usize,
    pub k: usize,
    /// Mode radius for coverage, in units of the mode sigma.
    pub coverage_sigmas: f64,
    /// Generated samples written at each evaluation.
    pub dump_samples: usize,
    /// Seed of the random feature embedder used for image metrics.
    pub embed_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cadence: 250,
            samples: 2000,
            k: 3,
            coverage_sigmas: 3.0,
            dump_samples: 64,
            embed_seed: 0,
        }
    }
}

/// A full experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub instance_selection: Option<InstanceSelectionConfig>,
    pub training: TrainingConfig,
    #[serde(default)]
    pub ufs: Option<UfsConfig>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            n_critic: t.n_critic,
            iterations: t.iterations,
            seed: self.seed,
            loss: t.loss,
            adam: t.adam,
            ufs: self.ufs,
            selection: self.selection,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run_id {:?} must be a plain non-empty name",
                self.run_id
            )));
        }
        if self.eval.cadence < 1 {
            return Err(Error::Config("eval.cadence must be >= 1".into()));
        }
        if self.eval.samples < 2 {
            return Err(Error::Config("eval.samples must be >= 2".into()));
        }
        if self.eval.k < 1 || self.eval.k >= self.eval.samples {
            return Err(Error::Config(format!(
                "eval.k must lie in [1, samples), got {}",
                self.eval.k
            )));
        }
        if !(self.eval.coverage_sigmas > 0.0) {
            return Err(Error::Config(
                "eval.coverage_sigmas must be positive".into(),
            ));
        }
        self.dataset.validate()?;
        if self.instance_selection.is_some() && !self.dataset.is_image() {
            return Err(Error::Config(
                "instance_selection applies to finite image datasets only".into(),
            ));
        }
        self.train_config().validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}

/// Reads a config, applies `key=value` overrides and validates the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Sets a dotted key in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise; missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        cur = cur
            .as_object_mut()
            .expect("object")
            .entry(p.to_string())
            .or_insert(Value::Null);
    }
    if !cur.is_object() {
        *cur = Value::Object(Default::default());
    }
    cur.as_object_mut()
        .expect("object")
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Names of the built-in ablation presets.
pub const PRESETS: [&str; 4] = ["baseline", "ufs", "topk", "topk_ufs"];

/// Ring-of-eight ablation configs. They share everything except the `ufs`
/// and `selection` blocks.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (ufs, topk) = match name {
        "baseline" => (false, false),
        "ufs" => (true, false),
        "topk" => (false, true),
        "topk_ufs" => (true, true),
        _ => {
            return Err(Error::Config(format!(
                "unknown preset {name:?}; expected one of {PRESETS:?}"
            )))
        }
    };
    Ok(ExperimentConfig {
        run_id: format!("ring8_{name}"),
        seed: 7,
        out_dir: PathBuf::from(format!("runs/ring8_{name}")),
        dataset: DatasetConfig::ring8(),
        instance_selection: None,
        training: TrainingConfig {
            batch_size: 64,
            iterations: 5000,
            loss: AdversarialLoss::new(LossKind::WganGp),
            n_critic: None,
            // At the GAN default step of 1e-4 the ring is still collapsed
            // after 5000 iterations.
            adam: AdamConfig {
                lr: 1.5e-3,
                ..AdamConfig::GAN
            },
        },
        ufs: ufs.then(UfsConfig::dismission),
        selection: topk.then(|| SelectionConfig::new(SelectionMode::Top, 64, 32)),
        eval: EvalConfig::default(),
    })
}
