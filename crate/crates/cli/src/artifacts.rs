//! Checkpoint writing and loading shared by the subcommands.

use anyhow::{bail, Context};
use pretext_core::classifier::{ClassifierNet, ModelBundle};
use pretext_core::config::{BackboneConfig, TrainConfig};
use pretext_core::io;
use pretext_core::lci::{DiscriminatorNet, InpainterNet};
use pretext_core::rng;
use std::path::Path;

pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const INPAINTER_FILE: &str = "inpainter.ckpt";
pub const DISCRIMINATOR_FILE: &str = "discriminator.ckpt";

pub fn save_bundle_parts(
    dir: &Path,
    classifier: &ClassifierNet<f32>,
    inpainter: Option<&InpainterNet<f32>>,
    discriminator: Option<&DiscriminatorNet<f32>>,
    train_cfg: &TrainConfig,
    config_hash: &str,
    step: usize,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    io::save_net(
        dir.join(CLASSIFIER_FILE),
        "classifier",
        classifier.net(),
        config_hash,
        step,
        serde_json::json!({ "train_config": train_cfg }),
    )?;
    if let Some(f) = inpainter {
        io::save_net(
            dir.join(INPAINTER_FILE),
            "inpainter",
            f.net(),
            config_hash,
            step,
            serde_json::json!({
                "patch_size": f.patch_size(),
                "f_channels": train_cfg.lci.f_channels,
            }),
        )?;
    }
    if let Some(d) = discriminator {
        io::save_net(
            dir.join(DISCRIMINATOR_FILE),
            "discriminator",
            d.net(),
            config_hash,
            step,
            serde_json::json!({ "d_channels": train_cfg.lci.d_channels }),
        )?;
    }
    Ok(())
}

pub fn save_bundle(
    dir: &Path,
    bundle: &ModelBundle<f32>,
    train_cfg: &TrainConfig,
    config_hash: &str,
) -> anyhow::Result<()> {
    save_bundle_parts(
        dir,
        &bundle.classifier,
        bundle.inpainter.as_ref(),
        bundle.discriminator.as_ref(),
        train_cfg,
        config_hash,
        bundle.steps,
    )
}

/// A classifier restored from disk with its training configuration.
pub struct LoadedClassifier {
    pub net: ClassifierNet<f32>,
    pub train_cfg: TrainConfig,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub step: usize,
}

pub fn load_classifier(path: &Path) -> anyhow::Result<LoadedClassifier> {
    let container =
        io::read_container(path).with_context(|| format!("reading {}", path.display()))?;
    if container.kind != "classifier" {
        bail!(
            "{} is a '{}' container, expected a classifier checkpoint",
            path.display(),
            container.kind
        );
    }
    let train_cfg: TrainConfig = serde_json::from_value(
        container
            .meta
            .get("train_config")
            .cloned()
            .unwrap_or_default(),
    )
    .context("checkpoint lacks an embedded train_config")?;
    let mut net = ClassifierNet::<f32>::new(&train_cfg.backbone, &mut rng::root(0));
    io::load_net(net.net_mut(), &container)?;
    Ok(LoadedClassifier {
        net,
        config_hash: container.config_hash.clone(),
        checkpoint_hash: io::file_hash(path)?,
        step: container.step,
        train_cfg,
    })
}

/// A randomly initialized classifier with the same architecture as the
/// checkpoint; the untrained baseline row of the probe report.
pub fn random_like(backbone: &BackboneConfig, seed: u64) -> ClassifierNet<f32> {
    ClassifierNet::<f32>::new(backbone, &mut rng::root(seed))
}

pub fn load_inpainter(path: &Path) -> anyhow::Result<InpainterNet<f32>> {
    let container =
        io::read_container(path).with_context(|| format!("reading {}", path.display()))?;
    if container.kind != "inpainter" {
        bail!("{} is not an inpainter checkpoint", path.display());
    }
    let patch_size = container
        .meta
        .get("patch_size")
        .and_then(|v| v.as_u64())
        .context("inpainter checkpoint lacks patch_size")? as usize;
    let f_channels = container
        .meta
        .get("f_channels")
        .and_then(|v| v.as_u64())
        .context("inpainter checkpoint lacks f_channels")? as usize;
    let mut net = InpainterNet::<f32>::new(patch_size, f_channels, &mut rng::root(0));
    io::load_net(net.net_mut(), &container)?;
    Ok(net)
}
