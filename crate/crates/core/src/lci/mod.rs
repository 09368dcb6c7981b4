//! Limited Context Inpainting: adversarial training of the inpainter F
//! against the patch discriminator D and the transformation classifier C,
//! plus the patch-autoencoding path that keeps F's processing footprint
//! out of the classification shortcut space.

pub mod nets;

use crate::classifier::net::ClassifierNet;
use crate::config::LciConfig;
use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy_masked, hinge_d_grads, hinge_d_loss, hinge_g_grad, hinge_g_loss};
use crate::nn::{AdamW, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{chw_to_image, images_to_batch};
use crate::transforms::{
    corrupt_patch, extract_patch, paste_patch, ImageTensor, PatchSpec, NUM_TRANSFORMS,
};
use ndarray::{concatenate, s, Array1, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub use nets::{DiscriminatorNet, InpainterNet};

/// Everything produced for one image on the LCI path.
pub struct LciBatchRecord<S: Scalar> {
    /// Original patch e at the sampled window (image layout P x P x C).
    pub original: Array3<S>,
    /// Border-preserving noise corruption of `original`.
    pub corrupted: Array3<S>,
    /// Inpainted patch r = F(corrupted).
    pub inpainted: Array3<S>,
    /// Plain autoencoding F(e) of the uncorrupted patch.
    pub autoencoded: Array3<S>,
    pub spec: PatchSpec,
    /// The transformed image: r pasted back into the source.
    pub composed: ImageTensor<S>,
}

/// Patch batch shared by the discriminator and inpainter steps.
struct PatchBatch<S: Scalar> {
    originals: Array4<S>,
    corrupted: Array4<S>,
    specs: Vec<PatchSpec>,
}

fn sample_patch_batch<S: Scalar>(
    images: &[ImageTensor<S>],
    p: usize,
    b: usize,
    rng: &mut Rng,
) -> Result<PatchBatch<S>> {
    let n = images.len();
    if n == 0 {
        return Err(Error::InvalidParam("empty LCI batch".into()));
    }
    let mut originals = Vec::with_capacity(n);
    let mut corrupted = Vec::with_capacity(n);
    let mut specs = Vec::with_capacity(n);
    for img in images {
        let (h, w, _) = img.dim();
        let spec = PatchSpec::sample(p, b, h, w, rng)?;
        let e = extract_patch(img, &spec)?;
        let c = corrupt_patch(&e, &spec.mask, rng)?;
        originals.push(e);
        corrupted.push(c);
        specs.push(spec);
    }
    Ok(PatchBatch {
        originals: images_to_batch(&originals),
        corrupted: images_to_batch(&corrupted),
        specs,
    })
}

/// Random in-batch partner for pairing, never the element itself when the
/// batch has more than one element.
fn partner_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n)
        .map(|i| {
            if n == 1 {
                0
            } else {
                let j = rng.gen_range(0..n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            }
        })
        .collect()
}

/// Channel-concatenate patches with their partners: pair i = (x[i], x[p(i)]).
fn make_pairs<S: Scalar>(patches: &Array4<S>, partners: &[usize]) -> Array4<S> {
    let (n, c, p, q) = patches.dim();
    let mut out = Array4::zeros((n, 2 * c, p, q));
    for (i, &j) in partners.iter().enumerate() {
        out.slice_mut(s![i, ..c, .., ..])
            .assign(&patches.index_axis(Axis(0), i));
        out.slice_mut(s![i, c.., .., ..])
            .assign(&patches.index_axis(Axis(0), j));
    }
    out
}

/// Mean squared difference restricted to the border ring (mask == 0),
/// averaged over batch, border pixels and channels; also returns its
/// gradient with respect to `r`.
fn border_term<S: Scalar>(
    r: &Array4<S>,
    e: &Array4<S>,
    specs: &[PatchSpec],
) -> (S, Array4<S>) {
    let (n, c, p, _) = r.dim();
    let border_px = specs[0].mask.iter().filter(|&&m| m == 0).count();
    let denom = S::fl((n * border_px * c) as f64);
    let mut loss = S::zero();
    let mut grad = Array4::<S>::zeros(r.dim());
    for i in 0..n {
        let mask = &specs[i].mask;
        for y in 0..p {
            for x in 0..p {
                if mask[(y, x)] == 0 {
                    for ch in 0..c {
                        let d = r[(i, ch, y, x)] - e[(i, ch, y, x)];
                        loss += d * d;
                        grad[(i, ch, y, x)] = S::fl(2.0) * d / denom;
                    }
                }
            }
        }
    }
    (loss / denom, grad)
}

/// Mean squared autoencoding error over all elements, with gradient.
fn ae_term<S: Scalar>(ae: &Array4<S>, e: &Array4<S>) -> (S, Array4<S>) {
    let denom = S::fl(ae.len() as f64);
    let mut loss = S::zero();
    let mut grad = Array4::<S>::zeros(ae.dim());
    for ((g, &a), &t) in grad.iter_mut().zip(ae.iter()).zip(e.iter()) {
        let d = a - t;
        loss += d * d;
        *g = S::fl(2.0) * d / denom;
    }
    (loss / denom, grad)
}

/// Build full per-image records (used by the loss op, visualization and
/// tests; the training steps below work on batch tensors directly).
pub fn make_lci_records<S: Scalar>(
    images: &[ImageTensor<S>],
    f: &InpainterNet<S>,
    b: usize,
    rng: &mut Rng,
) -> Result<Vec<LciBatchRecord<S>>> {
    let p = f.patch_size();
    let batch = sample_patch_batch(images, p, b, rng)?;
    let r = f.infer_batch(batch.corrupted.clone());
    let ae = f.infer_batch(batch.originals.clone());
    let mut records = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let spec = batch.specs[i].clone();
        let inpainted = chw_to_image(r.index_axis(Axis(0), i));
        let composed = paste_patch(img, &inpainted, &spec)?;
        records.push(LciBatchRecord {
            original: chw_to_image(batch.originals.index_axis(Axis(0), i)),
            corrupted: chw_to_image(batch.corrupted.index_axis(Axis(0), i)),
            inpainted,
            autoencoded: chw_to_image(ae.index_axis(Axis(0), i)),
            spec,
            composed,
        });
    }
    Ok(records)
}

/// The inpainter objective evaluated on finished records (forward only):
/// hinge generator term + lambda_border * border reconstruction +
/// lambda_ae * patch autoencoding - the classification loss on the
/// composed images. Passing `classifier: None` detaches the adversarial
/// classifier term.
pub fn inpainter_loss<S: Scalar>(
    records: &[LciBatchRecord<S>],
    d: &DiscriminatorNet<S>,
    classifier: Option<(&ClassifierNet<S>, &[bool; NUM_TRANSFORMS])>,
    lambda_border: f64,
    lambda_ae: f64,
) -> Result<S> {
    if records.is_empty() {
        return Err(Error::InvalidParam("empty record set".into()));
    }
    let n = records.len();
    let r: Vec<_> = records.iter().map(|rec| rec.inpainted.clone()).collect();
    let e: Vec<_> = records.iter().map(|rec| rec.original.clone()).collect();
    let ae: Vec<_> = records.iter().map(|rec| rec.autoencoded.clone()).collect();
    let r_batch = images_to_batch(&r);
    let e_batch = images_to_batch(&e);
    let ae_batch = images_to_batch(&ae);

    let partners: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    let fake_pairs = make_pairs(&r_batch, &partners);
    let scores = d.infer_scores(fake_pairs);
    let hinge = hinge_g_loss(scores.as_slice().expect("layout"));

    let specs: Vec<_> = records.iter().map(|rec| rec.spec.clone()).collect();
    let (border, _) = border_term(&r_batch, &e_batch, &specs);
    let (ae_loss, _) = ae_term(&ae_batch, &e_batch);

    let mut total = hinge + S::fl(lambda_border) * border + S::fl(lambda_ae) * ae_loss;
    if let Some((c, enabled)) = classifier {
        let composed: Vec<_> = records.iter().map(|rec| rec.composed.clone()).collect();
        let logits = c.infer_logits(images_to_batch(&composed));
        let labels = vec![crate::transforms::TransformLabel::LCI.index(); n];
        let (ssl, _) = cross_entropy_masked(logits.view(), &labels, enabled)?;
        total = total - ssl;
    }
    Ok(total)
}

/// One hinge-objective ascent step on the discriminator. Real and fake
/// pairs come from the same minibatch; one spectral-norm power iteration
/// is persisted. Only D's parameters change.
pub fn discriminator_step<S: Scalar>(
    d: &mut DiscriminatorNet<S>,
    f: &InpainterNet<S>,
    images: &[ImageTensor<S>],
    cfg: &LciConfig,
    opt: &mut AdamW<S>,
    rng: &mut Rng,
) -> Result<S> {
    let batch = sample_patch_batch(images, cfg.patch_size, cfg.border_b, rng)?;
    let r = f.infer_batch(batch.corrupted);
    let n = images.len();
    let partners = partner_indices(n, rng);
    let real_pairs = make_pairs(&batch.originals, &partners);
    let fake_pairs = make_pairs(&r, &partners);
    let all = concatenate(Axis(0), &[real_pairs.view(), fake_pairs.view()]).expect("pair concat");
    let scores = d.forward_scores(all, Mode::Train);
    let (real_s, fake_s) = scores.view().split_at(Axis(0), n);
    let real_v: Vec<S> = real_s.to_vec();
    let fake_v: Vec<S> = fake_s.to_vec();
    let loss = hinge_d_loss(&real_v, &fake_v);
    let (gr, gf) = hinge_d_grads(&real_v, &fake_v);
    let gall = concatenate(Axis(0), &[gr.view(), gf.view()]).expect("grad concat");
    let _ = d.backward_scores(&gall);
    let mut params = d.net_mut().params_mut();
    opt.step(&mut params, cfg.d_lr);
    d.net_mut().zero_grad();
    Ok(loss)
}

/// One descent step on the inpainter objective. Gradient flows into F
/// through three paths: the hinge generator term (through a frozen D),
/// the border/autoencoding reconstruction terms, and - when
/// `cfg.adversarial_c` is set - the negated classification loss through a
/// frozen C and the differentiable paste composition. C and D state is
/// bit-identical afterwards.
pub fn inpainter_step<S: Scalar>(
    f: &mut InpainterNet<S>,
    d: &mut DiscriminatorNet<S>,
    c: &mut ClassifierNet<S>,
    images: &[ImageTensor<S>],
    cfg: &LciConfig,
    enabled: &[bool; NUM_TRANSFORMS],
    opt: &mut AdamW<S>,
    rng: &mut Rng,
) -> Result<S> {
    let batch = sample_patch_batch(images, cfg.patch_size, cfg.border_b, rng)?;
    let n = images.len();

    let r = f.forward_batch(batch.corrupted.clone(), Mode::Train);
    let ae = f.forward_batch(batch.originals.clone(), Mode::Train);

    let (border, border_grad) = border_term(&r, &batch.originals, &batch.specs);
    let (ae_loss, mut ae_grad) = ae_term(&ae, &batch.originals);
    let lam_b = S::fl(cfg.lambda_border);
    let lam_ae = S::fl(cfg.lambda_ae);

    let mut r_grad = border_grad.mapv(|g| g * lam_b);
    ae_grad.mapv_inplace(|g| g * lam_ae);

    // hinge generator term through frozen D
    let partners = partner_indices(n, rng);
    let fake_pairs = make_pairs(&r, &partners);
    let scores = d.forward_scores(fake_pairs, Mode::Frozen);
    let fake_v: Vec<S> = scores.to_vec();
    let hinge = hinge_g_loss(&fake_v);
    let gs: Array1<S> = hinge_g_grad(&fake_v);
    let gpairs = d.backward_scores(&gs);
    let c_per = r.dim().1;
    for (i, &j) in partners.iter().enumerate() {
        let slot0 = gpairs.slice(s![i, ..c_per, .., ..]);
        let slot1 = gpairs.slice(s![i, c_per.., .., ..]);
        let mut gi = r_grad.index_axis_mut(Axis(0), i);
        gi += &slot0;
        let mut gj = r_grad.index_axis_mut(Axis(0), j);
        gj += &slot1;
    }
    d.net_mut().zero_grad();

    // adversarial term against the transformation classifier
    let mut ssl = S::zero();
    if cfg.adversarial_c {
        let mut composed = images_to_batch(images);
        for (i, spec) in batch.specs.iter().enumerate() {
            let (y0, x0) = spec.delta;
            let p = spec.p;
            composed
                .slice_mut(s![i, .., y0..y0 + p, x0..x0 + p])
                .assign(&r.index_axis(Axis(0), i));
        }
        let logits = c.forward_logits(composed, Mode::Frozen);
        let labels = vec![crate::transforms::TransformLabel::LCI.index(); n];
        let (ssl_loss, glogits) = cross_entropy_masked(logits.view(), &labels, enabled)?;
        ssl = ssl_loss;
        // F maximizes the classification loss: descend on -L
        let gimgs = c.backward_logits(glogits.mapv(|g| -g));
        for (i, spec) in batch.specs.iter().enumerate() {
            let (y0, x0) = spec.delta;
            let p = spec.p;
            let window = gimgs.slice(s![i, .., y0..y0 + p, x0..x0 + p]);
            let mut gi = r_grad.index_axis_mut(Axis(0), i);
            gi += &window;
        }
        c.net_mut().zero_grad();
    }

    // LIFO: pop the autoencoding cache first, then the inpainting cache
    let _ = f.backward_batch(ae_grad);
    let _ = f.backward_batch(r_grad);
    let mut params = f.net_mut().params_mut();
    opt.step(&mut params, cfg.f_lr);
    f.net_mut().zero_grad();

    Ok(hinge + lam_b * border + lam_ae * ae_loss - ssl)
}

/// Replace a `fraction` of the images by versions whose random patch went
/// through F as a plain autoencoder (no corruption). Returns the images
/// and, per image, the window that was substituted. Labels are the
/// caller's concern; substituted images stay on the untransformed /
/// rotation path.
pub fn autoencoded_substitute<S: Scalar>(
    images: &[ImageTensor<S>],
    f: &dyn crate::transforms::PatchInpainter<S>,
    patch_size: usize,
    fraction: f64,
    border_b: usize,
    rng: &mut Rng,
) -> Result<(Vec<ImageTensor<S>>, Vec<Option<PatchSpec>>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam(format!(
            "substitute fraction {fraction} outside [0, 1]"
        )));
    }
    if let Some(ps) = f.patch_size() {
        if ps != patch_size {
            return Err(Error::Shape(format!(
                "inpainter expects {ps}-pixel patches, substitution requested {patch_size}"
            )));
        }
    }
    let n = images.len();
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let chosen: std::collections::HashSet<usize> = order.into_iter().take(k).collect();
    let mut out = Vec::with_capacity(n);
    let mut specs = vec![None; n];
    for (i, img) in images.iter().enumerate() {
        if chosen.contains(&i) {
            let (h, w, _) = img.dim();
            let spec = PatchSpec::sample(patch_size, border_b, h, w, rng)?;
            let e = extract_patch(img, &spec)?;
            let ae = f.inpaint_patch(&e);
            out.push(paste_patch(img, &ae, &spec)?);
            specs[i] = Some(spec);
        } else {
            out.push(img.clone());
        }
    }
    Ok((out, specs))
}
