//! Image transformations whose discrimination is the pretext task:
//! identity, three quarter-turn rotations, spline warping and limited
//! context inpainting, plus the patch algebra the last one composes.

pub mod patch;
pub mod rotate;
pub mod spline;
pub mod warp;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::Array3;
use rand::Rng as _;

pub use patch::{corrupt_patch, extract_patch, make_mask, paste_patch, paste_patch_grad, PatchSpec};
pub use rotate::rotate;
pub use spline::{polyharmonic_interpolate, PolyharmonicSpline};
pub use warp::{default_displacement, densify, sample_warp_spec, warp, warp_backward, WarpField, WarpSpec};

/// H x W x C image with pixel values in [-1, 1].
pub type ImageTensor<S> = Array3<S>;

/// Number of transformation classes (identity, 3 rotations, warp, LCI).
pub const NUM_TRANSFORMS: usize = 6;

/// Categorical transformation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransformLabel(usize);

impl TransformLabel {
    pub const IDENTITY: TransformLabel = TransformLabel(0);
    pub const ROT90: TransformLabel = TransformLabel(1);
    pub const ROT180: TransformLabel = TransformLabel(2);
    pub const ROT270: TransformLabel = TransformLabel(3);
    pub const WARP: TransformLabel = TransformLabel(4);
    pub const LCI: TransformLabel = TransformLabel(5);

    pub fn new(y: usize) -> Result<Self> {
        if y < NUM_TRANSFORMS {
            Ok(Self(y))
        } else {
            Err(Error::InvalidParam(format!("label {y} out of 0..=5")))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn all() -> [TransformLabel; NUM_TRANSFORMS] {
        [Self::IDENTITY, Self::ROT90, Self::ROT180, Self::ROT270, Self::WARP, Self::LCI]
    }
}

/// Inpainter handle used by the LCI transform; implemented by the trained
/// network and by test stubs.
pub trait PatchInpainter<S: Scalar> {
    /// Inference-mode forward pass on one patch (no parameter mutation).
    fn inpaint_patch(&self, patch: &Array3<S>) -> Array3<S>;

    /// Required patch side, when the implementation is size-specific.
    fn patch_size(&self) -> Option<usize> {
        None
    }
}

/// Identity stub; useful in tests where a perfect autoencoder is assumed.
pub struct IdentityInpainter;

impl<S: Scalar> PatchInpainter<S> for IdentityInpainter {
    fn inpaint_patch(&self, patch: &Array3<S>) -> Array3<S> {
        patch.clone()
    }
}

/// Warp sampling parameters.
#[derive(Debug, Clone, Copy)]
pub struct WarpParams<S: Scalar> {
    pub grid_m: usize,
    /// Displacement bound; `None` means the default W/10.
    pub d: Option<S>,
    pub order: usize,
    /// Zero the border control points (see [`WarpSpec::pin_border`]).
    pub pin_border: bool,
}

impl<S: Scalar> Default for WarpParams<S> {
    fn default() -> Self {
        Self { grid_m: 4, d: None, order: 2, pin_border: true }
    }
}

/// Patch sampling parameters for LCI.
#[derive(Debug, Clone, Copy)]
pub struct PatchParams {
    pub p: usize,
    pub b: usize,
}

/// Everything `apply_transform` needs besides the image.
pub struct TransformCtx<'a, S: Scalar> {
    pub rng: &'a mut Rng,
    pub warp: WarpParams<S>,
    pub patch: PatchParams,
    pub inpainter: Option<&'a dyn PatchInpainter<S>>,
}

/// Replayable record of one applied transformation.
#[derive(Debug, Clone)]
pub enum TransformRecord<S: Scalar> {
    Identity,
    Rotate(usize),
    Warp(WarpSpec<S>),
    Lci { spec: PatchSpec, noise_seed: u64 },
}

/// Apply the transform for `label`, returning the image and a record that
/// reproduces it bit-exactly (given the same inpainter state).
pub fn apply_transform_recorded<S: Scalar>(
    img: &ImageTensor<S>,
    label: TransformLabel,
    ctx: &mut TransformCtx<'_, S>,
) -> Result<(ImageTensor<S>, TransformRecord<S>)> {
    let (h, w, _) = img.dim();
    match label.index() {
        0 => Ok((img.clone(), TransformRecord::Identity)),
        k @ 1..=3 => Ok((rotate(img, k)?, TransformRecord::Rotate(k))),
        4 => {
            let d = ctx.warp.d.unwrap_or_else(|| default_displacement(w));
            let mut spec = sample_warp_spec(h, w, ctx.warp.grid_m, d, ctx.warp.order, ctx.rng)?;
            if ctx.warp.pin_border {
                spec.pin_border();
            }
            let out = replay_warp(img, &spec)?;
            Ok((out, TransformRecord::Warp(spec)))
        }
        5 => {
            let inpainter = ctx.inpainter.ok_or(Error::MissingInpainter)?;
            if let Some(ps) = inpainter.patch_size() {
                if ps != ctx.patch.p {
                    return Err(Error::Shape(format!(
                        "inpainter expects {ps}-pixel patches but context requests {}",
                        ctx.patch.p
                    )));
                }
            }
            let spec = PatchSpec::sample(ctx.patch.p, ctx.patch.b, h, w, ctx.rng)?;
            let noise_seed: u64 = ctx.rng.gen();
            let out = replay_lci(img, &spec, noise_seed, inpainter)?;
            Ok((out, TransformRecord::Lci { spec, noise_seed }))
        }
        _ => unreachable!(),
    }
}

/// Apply the transform for `label` (see [`apply_transform_recorded`]).
pub fn apply_transform<S: Scalar>(
    img: &ImageTensor<S>,
    label: TransformLabel,
    ctx: &mut TransformCtx<'_, S>,
) -> Result<ImageTensor<S>> {
    apply_transform_recorded(img, label, ctx).map(|(out, _)| out)
}

fn replay_warp<S: Scalar>(img: &ImageTensor<S>, spec: &WarpSpec<S>) -> Result<ImageTensor<S>> {
    let (h, w, _) = img.dim();
    let field = densify(spec, h, w)?;
    warp(img, &field)
}

fn replay_lci<S: Scalar>(
    img: &ImageTensor<S>,
    spec: &PatchSpec,
    noise_seed: u64,
    inpainter: &dyn PatchInpainter<S>,
) -> Result<ImageTensor<S>> {
    let patch = extract_patch(img, spec)?;
    let corrupted = corrupt_patch(&patch, &spec.mask, &mut crate::rng::root(noise_seed))?;
    let inpainted = inpainter.inpaint_patch(&corrupted);
    paste_patch(img, &inpainted, spec)
}

/// Re-apply a recorded transformation to its source image.
pub fn replay_transform<S: Scalar>(
    img: &ImageTensor<S>,
    record: &TransformRecord<S>,
    inpainter: Option<&dyn PatchInpainter<S>>,
) -> Result<ImageTensor<S>> {
    match record {
        TransformRecord::Identity => Ok(img.clone()),
        TransformRecord::Rotate(k) => rotate(img, *k),
        TransformRecord::Warp(spec) => replay_warp(img, spec),
        TransformRecord::Lci { spec, noise_seed } => {
            let inpainter = inpainter.ok_or(Error::MissingInpainter)?;
            replay_lci(img, spec, *noise_seed, inpainter)
        }
    }
}
