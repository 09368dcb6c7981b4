//! Run configuration: schema, defaults, validation and hashing.
//!
//! Every command runs from one merged `RunConfig`; the merged result is
//! dumped next to the outputs and its hash is embedded in every artifact,
//! so any result can be traced back to the exact settings that produced it.

use crate::error::{Error, Result};
use crate::transforms::NUM_TRANSFORMS;
use serde::{Deserialize, Serialize};

/// Which transformation families feed the classification task. The
/// identity class is always present. The families are kept mutually
/// distinguishable by construction: rotations permute pixels globally,
/// warping deforms coordinates globally and smoothly, and inpainting
/// rewrites one local window, so no configuration can make two classes
/// produce the same output; compositions of warp and LCI on the same
/// image are deliberately not expressible.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformSet {
    pub rot: bool,
    pub warp: bool,
    pub lci: bool,
}

impl Default for TransformSet {
    fn default() -> Self {
        Self {
            rot: true,
            warp: true,
            lci: true,
        }
    }
}

impl TransformSet {
    /// Per-label enabled flags; index 0 (identity) is always on.
    pub fn enabled_labels(&self) -> [bool; NUM_TRANSFORMS] {
        [true, self.rot, self.rot, self.rot, self.warp, self.lci]
    }

    pub fn any(&self) -> bool {
        self.rot || self.warp || self.lci
    }

    /// Parse a comma-separated list like "rot,warp,lci".
    pub fn parse(csv: &str) -> Result<Self> {
        let mut set = Self {
            rot: false,
            warp: false,
            lci: false,
        };
        for tok in csv.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "rot" => set.rot = true,
                "warp" => set.warp = true,
                "lci" => set.lci = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown transform '{other}' (expected rot, warp, lci)"
                    )))
                }
            }
        }
        Ok(set)
    }
}

impl std::fmt::Display for TransformSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.rot {
            parts.push("rot");
        }
        if self.warp {
            parts.push("warp");
        }
        if self.lci {
            parts.push("lci");
        }
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Every source image contributes one example per enabled label.
    AllPerImage,
    /// Every source image contributes one example with a uniformly
    /// sampled enabled label.
    SampledPerImage,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug)]
#[serde(default)]
pub struct WarpConfig {
    pub grid_m: usize,
    /// Displacement bound in pixels; `None` means width / 10.
    pub displacement: Option<f64>,
    pub order: usize,
    /// Keep border control points fixed so warping never replicates
    /// border pixels into locally detectable streaks.
    pub pin_border: bool,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            grid_m: 4,
            displacement: None,
            order: 2,
            pin_border: true,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug)]
#[serde(default)]
pub struct LciConfig {
    pub patch_size: usize,
    pub border_b: usize,
    pub lambda_border: f64,
    pub lambda_ae: f64,
    pub d_lr: f64,
    pub f_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Discriminator / inpainter updates per classifier step.
    pub d_steps: usize,
    pub f_steps: usize,
    /// Adversarial feedback from the transformation classifier into the
    /// inpainter objective; disabling it reproduces the
    /// no-adversarial-classifier ablation.
    pub adversarial_c: bool,
    /// Base channel width of the inpainter (doubles per encoder stage).
    pub f_channels: usize,
    /// Base channel width of the patch discriminator.
    pub d_channels: usize,
}

impl Default for LciConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            border_b: 2,
            lambda_border: 50.0,
            lambda_ae: 50.0,
            d_lr: 2e-4,
            f_lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            d_steps: 1,
            f_steps: 1,
            adversarial_c: true,
            f_channels: 16,
            d_channels: 16,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default)]
pub struct BackboneConfig {
    pub channels: [usize; 5],
    pub kernels: [usize; 5],
    pub strides: [usize; 5],
    /// 2x2 max-pool after the stage.
    pub pools: [bool; 5],
    pub groups: [usize; 5],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        // desk-scale 5-stage backbone for 32x32 inputs
        Self {
            channels: [12, 24, 48, 64, 80],
            kernels: [3, 3, 3, 3, 3],
            strides: [1, 2, 2, 2, 1],
            pools: [false; 5],
            groups: [1; 5],
        }
    }
}

impl BackboneConfig {
    /// The reference full-scale configuration: 5 stages with the classic
    /// 11/5/3/3/3 kernels, two-stream grouping on stages 2, 4 and 5, and
    /// max-pooling after stages 1, 2 and 5.
    pub fn reference_full_scale() -> Self {
        Self {
            channels: [96, 256, 384, 384, 256],
            kernels: [11, 5, 3, 3, 3],
            strides: [4, 1, 1, 1, 1],
            pools: [true, true, false, false, true],
            groups: [1, 2, 1, 2, 2],
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug)]
#[serde(default)]
pub struct AugmentConfig {
    pub random_crop: bool,
    pub horizontal_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            random_crop: true,
            horizontal_flip: true,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub transforms: TransformSet,
    pub label_mode: LabelMode,
    pub ae_substitute_fraction: f64,
    pub seed: u64,
    /// Training resolution (square); larger inputs are random-cropped.
    pub image_size: usize,
    pub augment: AugmentConfig,
    pub warp: WarpConfig,
    pub lci: LciConfig,
    pub backbone: BackboneConfig,
    /// Emit a full confusion matrix every this many classifier steps.
    pub log_confusion_every: usize,
    /// Write an intermediate checkpoint every this many steps (0 = off).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr_start: 3e-4,
            lr_end: 3e-7,
            weight_decay: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            transforms: TransformSet::default(),
            label_mode: LabelMode::AllPerImage,
            ae_substitute_fraction: 0.5,
            seed: 0,
            image_size: 32,
            augment: AugmentConfig::default(),
            warp: WarpConfig::default(),
            lci: LciConfig::default(),
            backbone: BackboneConfig::default(),
            log_confusion_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.transforms.any() {
            return Err(Error::Config(
                "at least one transform family must be enabled".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ae_substitute_fraction) {
            return Err(Error::Config("ae_substitute_fraction must be in [0, 1]".into()));
        }
        if self.warp.grid_m < 2 {
            return Err(Error::Config("warp grid_m must be at least 2".into()));
        }
        if let Some(d) = self.warp.displacement {
            if d < 0.0 {
                return Err(Error::Config("warp displacement must be >= 0".into()));
            }
        }
        if self.transforms.lci {
            let p = self.lci.patch_size;
            let b = self.lci.border_b;
            if p > self.image_size {
                return Err(Error::Config(format!(
                    "LCI patch size {p} exceeds image size {}",
                    self.image_size
                )));
            }
            if p % 4 != 0 {
                return Err(Error::Config(format!(
                    "LCI patch size {p} must be divisible by 4 (two stride-2 stages)"
                )));
            }
            if !(2..=4).contains(&b) {
                return Err(Error::Config(format!("LCI border width {b} must be in 2..=4")));
            }
            if 2 * b >= p {
                return Err(Error::Config(format!(
                    "LCI border {b} leaves no interior in a {p}-pixel patch"
                )));
            }
        }
        Ok(())
    }
}

/// Stable FNV-1a hash of the canonical JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{h:016x}")
}
