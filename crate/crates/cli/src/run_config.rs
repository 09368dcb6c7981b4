//! Merged run configuration: defaults, then the config file, then
//! command-line overrides. The merged result is dumped next to every
//! command's outputs and its hash is embedded in all artifacts.

use anyhow::{bail, Context};
use pretext_core::config::{config_hash, TrainConfig, TransformSet};
use pretext_core::data::{DatasetSource, DatasetSpec, SyntheticOrientedSpec, SyntheticVariant};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset name or path: `synthetic:generic`, `synthetic:face-like`,
    /// a directory tree of images, or a packaged `.pxd` file.
    pub dataset: String,
    pub dataset_classes: usize,
    pub dataset_per_class: usize,
    /// Every k-th image per class goes to the evaluation split.
    pub eval_every_k: usize,
    pub train: TrainConfig,
    pub probe_epochs: usize,
    pub probe_batch: usize,
    pub target_units: usize,
    pub k_list: Vec<usize>,
    pub retrieval_topk: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic:generic".into(),
            dataset_classes: 4,
            dataset_per_class: 96,
            eval_every_k: 4,
            train: TrainConfig::default(),
            probe_epochs: 65,
            probe_batch: 192,
            target_units: 9216,
            k_list: vec![1, 5, 10, 20, 50],
            retrieval_topk: 8,
        }
    }
}

impl RunConfig {
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn dataset_spec(&self) -> anyhow::Result<DatasetSpec> {
        let source = match self.dataset.as_str() {
            "synthetic:generic" => DatasetSource::Synthetic(SyntheticOrientedSpec {
                variant: SyntheticVariant::Generic,
                classes: self.dataset_classes,
                per_class: self.dataset_per_class,
                ..Default::default()
            }),
            "synthetic:face-like" => DatasetSource::Synthetic(SyntheticOrientedSpec {
                variant: SyntheticVariant::FaceLike,
                classes: self.dataset_classes,
                per_class: self.dataset_per_class,
                ..Default::default()
            }),
            other => {
                let path = PathBuf::from(other);
                if path.extension().map(|e| e == "pxd").unwrap_or(false) {
                    DatasetSource::Packaged(path)
                } else if path.is_dir() {
                    DatasetSource::Directory(path)
                } else {
                    bail!(
                        "dataset '{other}' is neither synthetic:generic, \
                         synthetic:face-like, a directory, nor a .pxd file"
                    );
                }
            }
        };
        Ok(DatasetSpec {
            source,
            image_size: self.train.image_size,
            seed: self.train.seed,
        })
    }
}

/// Command-line overrides shared by all subcommands.
#[derive(clap::Args, Debug, Clone, Default)]
pub struct Overrides {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Transform families, e.g. "rot,warp,lci".
    #[arg(long, global = true)]
    pub transforms: Option<String>,
    /// Dataset name or path.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub patch_size: Option<usize>,
    /// LCI border width in pixels.
    #[arg(long, global = true)]
    pub border: Option<usize>,
}

pub fn load_merged(overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match &overrides.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
    };
    if let Some(t) = &overrides.transforms {
        cfg.train.transforms = TransformSet::parse(t)?;
    }
    if let Some(d) = &overrides.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(s) = overrides.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = overrides.epochs {
        cfg.train.epochs = e;
    }
    if let Some(p) = overrides.patch_size {
        cfg.train.lci.patch_size = p;
    }
    if let Some(b) = overrides.border {
        cfg.train.lci.border_b = b;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

/// Write the merged config next to the outputs.
pub fn dump_config(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("run_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Warn when an artifact was produced under a different configuration.
pub fn warn_on_hash_mismatch(expected: &str, found: &str, what: &str) {
    if !found.is_empty() && expected != found {
        eprintln!(
            "warning: {what} was produced under config hash {found}, current config hashes to {expected}"
        );
    }
}
