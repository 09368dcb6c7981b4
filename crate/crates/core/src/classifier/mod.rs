//! The transformation classifier and the joint SSL training loop.

pub mod net;

use crate::config::{LabelMode, TrainConfig};
use crate::data::augment;
use crate::error::{Error, Result};
use crate::lci::{autoencoded_substitute, discriminator_step, inpainter_step, DiscriminatorNet, InpainterNet};
use crate::nn::loss::cross_entropy_masked;
use crate::nn::{cosine_lr, AdamW, Mode};
use crate::rng::{stream, Rng};
use crate::scalar::Scalar;
use crate::tensor::images_to_batch;
use crate::transforms::{
    apply_transform_recorded, rotate, ImageTensor, PatchParams, PatchSpec, TransformCtx,
    TransformLabel, TransformRecord, WarpParams, NUM_TRANSFORMS,
};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use net::{ClassifierNet, STAGES};

// stream tags for deterministic, worker-independent RNG derivation
const TAG_SHUFFLE: u64 = 1;
const TAG_AUGMENT: u64 = 2;
const TAG_BATCH: u64 = 3;
const TAG_INIT_C: u64 = 4;
const TAG_INIT_F: u64 = 5;
const TAG_INIT_D: u64 = 6;
const TAG_LCI_STEPS: u64 = 7;

/// One transformed training example with full provenance: the recorded
/// parameters reproduce `image` from the source bit-exactly.
pub struct SslItem<S: Scalar> {
    pub image: ImageTensor<S>,
    pub label: TransformLabel,
    pub source_index: usize,
    /// Autoencoded-patch substitution applied before the transform
    /// (identity / rotation branches only).
    pub ae_spec: Option<PatchSpec>,
    pub record: TransformRecord<S>,
}

pub struct SslBatch<S: Scalar> {
    pub items: Vec<SslItem<S>>,
}

impl<S: Scalar> SslBatch<S> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.label.index()).collect()
    }

    pub fn to_tensor(&self) -> ndarray::Array4<S> {
        let images: Vec<_> = self.items.iter().map(|it| it.image.clone()).collect();
        images_to_batch(&images)
    }
}

fn enabled_label_list(enabled: &[bool; NUM_TRANSFORMS]) -> Vec<TransformLabel> {
    TransformLabel::all()
        .into_iter()
        .filter(|l| enabled[l.index()])
        .collect()
}

/// Build the classifier minibatch: optional autoencoded-patch substitution
/// on the identity and rotation branches, then every enabled transform per
/// image (all-per-image mode) or one sampled transform per image.
pub fn build_batch<S: Scalar>(
    sources: &[ImageTensor<S>],
    source_indices: &[usize],
    cfg: &TrainConfig,
    inpainter: Option<&InpainterNet<S>>,
    rng: &mut Rng,
) -> Result<SslBatch<S>> {
    if sources.is_empty() {
        return Err(Error::InvalidParam("empty source batch".into()));
    }
    if cfg.transforms.lci && inpainter.is_none() {
        return Err(Error::MissingInpainter);
    }
    let enabled = cfg.transforms.enabled_labels();
    let frac = if inpainter.is_some() {
        cfg.ae_substitute_fraction
    } else {
        0.0
    };

    // substitution is drawn independently for the identity stream and the
    // pre-rotation stream
    let (identity_base, identity_specs) = match inpainter {
        Some(f) if frac > 0.0 => autoencoded_substitute(
            sources,
            f,
            cfg.lci.patch_size,
            frac,
            cfg.lci.border_b,
            rng,
        )?,
        _ => (sources.to_vec(), vec![None; sources.len()]),
    };
    let (rot_base, rot_specs) = if enabled[1] {
        match inpainter {
            Some(f) if frac > 0.0 => autoencoded_substitute(
                sources,
                f,
                cfg.lci.patch_size,
                frac,
                cfg.lci.border_b,
                rng,
            )?,
            _ => (sources.to_vec(), vec![None; sources.len()]),
        }
    } else {
        (Vec::new(), Vec::new())
    };

    let mut items = Vec::new();
    let labels = enabled_label_list(&enabled);
    for (i, src) in sources.iter().enumerate() {
        let chosen: Vec<TransformLabel> = match cfg.label_mode {
            LabelMode::AllPerImage => labels.clone(),
            LabelMode::SampledPerImage => vec![labels[rng.gen_range(0..labels.len())]],
        };
        for label in chosen {
            let item = match label.index() {
                0 => SslItem {
                    image: identity_base[i].clone(),
                    label,
                    source_index: source_indices[i],
                    ae_spec: identity_specs[i].clone(),
                    record: TransformRecord::Identity,
                },
                k @ 1..=3 => SslItem {
                    image: rotate(&rot_base[i], k)?,
                    label,
                    source_index: source_indices[i],
                    ae_spec: rot_specs[i].clone(),
                    record: TransformRecord::Rotate(k),
                },
                _ => {
                    let mut ctx = TransformCtx {
                        rng,
                        warp: WarpParams {
                            grid_m: cfg.warp.grid_m,
                            d: cfg.warp.displacement.map(S::fl),
                            order: cfg.warp.order,
                            pin_border: cfg.warp.pin_border,
                        },
                        patch: PatchParams {
                            p: cfg.lci.patch_size,
                            b: cfg.lci.border_b,
                        },
                        inpainter: inpainter.map(|f| f as &dyn crate::transforms::PatchInpainter<S>),
                    };
                    let (image, record) = apply_transform_recorded(src, label, &mut ctx)?;
                    SslItem {
                        image,
                        label,
                        source_index: source_indices[i],
                        ae_spec: None,
                        record,
                    }
                }
            };
            items.push(item);
        }
    }
    Ok(SslBatch { items })
}

/// Mean cross-entropy of the classifier on a batch, softmax restricted to
/// the enabled labels (inference mode; no state mutation).
pub fn ssl_loss<S: Scalar>(
    c: &ClassifierNet<S>,
    batch: &SslBatch<S>,
    enabled: &[bool; NUM_TRANSFORMS],
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let logits = c.infer_logits(batch.to_tensor());
    let (loss, _) = cross_entropy_masked(logits.view(), &batch.labels(), enabled)?;
    Ok(loss)
}

/// Per-step statistics from one classifier update.
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub class_correct: [usize; NUM_TRANSFORMS],
    pub class_total: [usize; NUM_TRANSFORMS],
    pub confusion: [[usize; NUM_TRANSFORMS]; NUM_TRANSFORMS],
}

/// One decoupled-weight-decay adaptive step on the classifier.
pub fn classifier_step<S: Scalar>(
    c: &mut ClassifierNet<S>,
    batch: &SslBatch<S>,
    enabled: &[bool; NUM_TRANSFORMS],
    opt: &mut AdamW<S>,
    lr: f64,
) -> Result<StepStats> {
    let labels = batch.labels();
    let logits = c.forward_logits(batch.to_tensor(), Mode::Train);
    let (loss, grad) = cross_entropy_masked(logits.view(), &labels, enabled)?;

    let mut class_correct = [0usize; NUM_TRANSFORMS];
    let mut class_total = [0usize; NUM_TRANSFORMS];
    let mut confusion = [[0usize; NUM_TRANSFORMS]; NUM_TRANSFORMS];
    for (row, &label) in logits.rows().into_iter().zip(labels.iter()) {
        let mut best = S::neg_infinity();
        let mut pred = 0;
        for (j, &v) in row.iter().enumerate() {
            if enabled[j] && v > best {
                best = v;
                pred = j;
            }
        }
        class_total[label] += 1;
        confusion[label][pred] += 1;
        if pred == label {
            class_correct[label] += 1;
        }
    }

    let _ = c.backward_logits(grad);
    let mut grad_norm = 0.0f64;
    {
        let params = c.net_mut().params_mut();
        for p in &params {
            for &g in p.grad.iter() {
                let g = g.to_f64_();
                grad_norm += g * g;
            }
        }
    }
    let grad_norm = grad_norm.sqrt();
    let mut params = c.net_mut().params_mut();
    opt.step(&mut params, lr);
    c.net_mut().zero_grad();

    Ok(StepStats {
        loss: loss.to_f64_(),
        grad_norm,
        class_correct,
        class_total,
        confusion,
    })
}

pub use crate::nn::optim::cosine_lr as cosine_schedule;

/// Line-delimited metrics record; byte-identical across equal-seed runs.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_d: Option<f64>,
    pub class_correct: Vec<usize>,
    pub class_total: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
}

/// Trained parameter sets plus bookkeeping.
pub struct ModelBundle<S: Scalar> {
    pub classifier: ClassifierNet<S>,
    pub inpainter: Option<InpainterNet<S>>,
    pub discriminator: Option<DiscriminatorNet<S>>,
    pub steps: usize,
}

pub enum TrainEvent<'a, S: Scalar> {
    Step(&'a MetricsRecord),
    Checkpoint {
        step: usize,
        classifier: &'a ClassifierNet<S>,
        inpainter: Option<&'a InpainterNet<S>>,
        discriminator: Option<&'a DiscriminatorNet<S>>,
    },
}

fn check_finite(step: usize, name: &str, v: f64, diag: String) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NanLoss {
            step,
            diagnostics: format!("{name} diverged; {diag}"),
        })
    }
}

/// Run the interleaved D / F / C loop for `cfg.epochs` over `images`.
/// Fully seeded: equal config and seed give a bit-identical event stream.
pub fn pretrain<S: Scalar>(
    images: &[ImageTensor<S>],
    cfg: &TrainConfig,
    mut sink: impl FnMut(TrainEvent<'_, S>),
) -> Result<ModelBundle<S>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidParam("empty dataset".into()));
    }
    let n = images.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let enabled = cfg.transforms.enabled_labels();

    let mut classifier = ClassifierNet::<S>::new(&cfg.backbone, &mut stream(cfg.seed, &[TAG_INIT_C]));
    let (mut inpainter, mut discriminator) = if cfg.transforms.lci {
        (
            Some(InpainterNet::<S>::new(
                cfg.lci.patch_size,
                cfg.lci.f_channels,
                &mut stream(cfg.seed, &[TAG_INIT_F]),
            )),
            Some(DiscriminatorNet::<S>::new(
                cfg.lci.d_channels,
                &mut stream(cfg.seed, &[TAG_INIT_D]),
            )),
        )
    } else {
        (None, None)
    };

    let mut opt_c = AdamW::<S>::new(cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut opt_f = AdamW::<S>::new(cfg.lci.adam_beta1, cfg.lci.adam_beta2, 0.0);
    let mut opt_d = AdamW::<S>::new(cfg.lci.adam_beta1, cfg.lci.adam_beta2, 0.0);

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            // augmented source images for this step
            let mut aug_rng = stream(cfg.seed, &[TAG_AUGMENT, step as u64]);
            let sources: Vec<ImageTensor<S>> = chunk
                .iter()
                .map(|&i| {
                    augment(
                        &images[i],
                        cfg.augment.random_crop,
                        cfg.augment.horizontal_flip,
                        cfg.image_size,
                        &mut aug_rng,
                    )
                })
                .collect::<Result<_>>()?;

            let mut loss_d = None;
            let mut loss_f = None;
            if cfg.transforms.lci {
                let f = inpainter.as_mut().expect("lci enabled");
                let d = discriminator.as_mut().expect("lci enabled");
                let mut lci_rng = stream(cfg.seed, &[TAG_LCI_STEPS, step as u64]);
                for _ in 0..cfg.lci.d_steps {
                    let l = discriminator_step(d, f, &sources, &cfg.lci, &mut opt_d, &mut lci_rng)?
                        .to_f64_();
                    check_finite(step, "discriminator loss", l, format!("lr={}", cfg.lci.d_lr))?;
                    loss_d = Some(l);
                }
                for _ in 0..cfg.lci.f_steps {
                    let l = inpainter_step(
                        f,
                        d,
                        &mut classifier,
                        &sources,
                        &cfg.lci,
                        &enabled,
                        &mut opt_f,
                        &mut lci_rng,
                    )?
                    .to_f64_();
                    check_finite(step, "inpainter loss", l, format!("lr={}", cfg.lci.f_lr))?;
                    loss_f = Some(l);
                }
            }

            let mut batch_rng = stream(cfg.seed, &[TAG_BATCH, step as u64]);
            let batch = build_batch(&sources, chunk, cfg, inpainter.as_ref(), &mut batch_rng)?;
            let lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end);
            let batch_mean: f64 = batch
                .items
                .iter()
                .map(|it| it.image.iter().map(|v| v.to_f64_()).sum::<f64>() / it.image.len() as f64)
                .sum::<f64>()
                / batch.len() as f64;
            check_finite(
                step,
                "batch statistics",
                batch_mean,
                format!("lr={lr:.3e} batch_mean={batch_mean:.3e}"),
            )?;
            let stats = classifier_step(&mut classifier, &batch, &enabled, &mut opt_c, lr)?;
            check_finite(
                step,
                "classifier loss",
                stats.loss,
                format!(
                    "lr={lr:.3e} grad_norm={:.3e} batch_mean={batch_mean:.3e}",
                    stats.grad_norm
                ),
            )?;

            let record = MetricsRecord {
                step,
                epoch,
                lr,
                loss_c: stats.loss,
                loss_f,
                loss_d,
                class_correct: stats.class_correct.to_vec(),
                class_total: stats.class_total.to_vec(),
                confusion: if cfg.log_confusion_every > 0 && step % cfg.log_confusion_every == 0 {
                    Some(stats.confusion.iter().map(|r| r.to_vec()).collect())
                } else {
                    None
                },
            };
            sink(TrainEvent::Step(&record));
            step += 1;

            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < total_steps {
                sink(TrainEvent::Checkpoint {
                    step,
                    classifier: &classifier,
                    inpainter: inpainter.as_ref(),
                    discriminator: discriminator.as_ref(),
                });
            }
        }
    }
    sink(TrainEvent::Checkpoint {
        step,
        classifier: &classifier,
        inpainter: inpainter.as_ref(),
        discriminator: discriminator.as_ref(),
    });
    Ok(ModelBundle {
        classifier,
        inpainter,
        discriminator,
        steps: step,
    })
}

/// Replay an item's provenance against its source image; used to assert
/// label-transform consistency.
pub fn replay_item<S: Scalar>(
    item: &SslItem<S>,
    source: &ImageTensor<S>,
    inpainter: Option<&InpainterNet<S>>,
) -> Result<ImageTensor<S>> {
    let base = match &item.ae_spec {
        None => source.clone(),
        Some(spec) => {
            let f = inpainter.ok_or(Error::MissingInpainter)?;
            let e = crate::transforms::extract_patch(source, spec)?;
            let ae = f.inpaint(&e)?;
            crate::transforms::paste_patch(source, &ae, spec)?
        }
    };
    crate::transforms::replay_transform(
        &base,
        &item.record,
        inpainter.map(|f| f as &dyn crate::transforms::PatchInpainter<S>),
    )
}
