//! The inpainter and patch-discriminator networks.

use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm2d, Conv2d, ConvTranspose2d, GlobalAvgPool, LeakyRelu, Linear, Mode, Net, Tanh,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{chw_to_image, image_to_chw};
use crate::transforms::PatchInpainter;
use ndarray::{Array1, Array3, Array4};

const LEAK: f64 = 0.2;

fn conv_std(c_in: usize, k: usize) -> f64 {
    (2.0 / (c_in * k * k) as f64).sqrt()
}

/// Encoder-decoder inpainter mapping P x P x C patches to patches of the
/// same size with tanh-bounded output. Two stride-2 encoder stages, so the
/// patch side must be divisible by 4.
pub struct InpainterNet<S: Scalar> {
    net: Net<S>,
    patch_size: usize,
}

impl<S: Scalar> InpainterNet<S> {
    pub fn new(patch_size: usize, base_channels: usize, rng: &mut Rng) -> Self {
        assert!(patch_size % 4 == 0, "patch side must be divisible by 4");
        let c = base_channels;
        let mut net = Net::new();
        net.push("enc1.conv", Conv2d::new(3, c, 3, 1, 1, 1, conv_std(3, 3), rng));
        net.push("enc1.act", LeakyRelu::new(LEAK));
        net.push("enc2.conv", Conv2d::new(c, 2 * c, 4, 2, 1, 1, conv_std(c, 4), rng));
        net.push("enc2.bn", BatchNorm2d::new(2 * c));
        net.push("enc2.act", LeakyRelu::new(LEAK));
        net.push("enc3.conv", Conv2d::new(2 * c, 4 * c, 4, 2, 1, 1, conv_std(2 * c, 4), rng));
        net.push("enc3.bn", BatchNorm2d::new(4 * c));
        net.push("enc3.act", LeakyRelu::new(LEAK));
        net.push("dec1.deconv", ConvTranspose2d::new(4 * c, 2 * c, 4, 2, 1, conv_std(4 * c, 4), rng));
        net.push("dec1.bn", BatchNorm2d::new(2 * c));
        net.push("dec1.act", LeakyRelu::new(LEAK));
        net.push("dec2.deconv", ConvTranspose2d::new(2 * c, c, 4, 2, 1, conv_std(2 * c, 4), rng));
        net.push("dec2.bn", BatchNorm2d::new(c));
        net.push("dec2.act", LeakyRelu::new(LEAK));
        net.push("out.deconv", ConvTranspose2d::new(c, 3, 3, 1, 1, conv_std(c, 3), rng));
        net.push("out.tanh", Tanh::new());
        Self { net, patch_size }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn net(&self) -> &Net<S> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net<S> {
        &mut self.net
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }

    pub fn forward_batch(&mut self, patches: Array4<S>, mode: Mode) -> Array4<S> {
        self.net.forward(patches, mode)
    }

    pub fn backward_batch(&mut self, grad: Array4<S>) -> Array4<S> {
        self.net.backward(grad)
    }

    pub fn infer_batch(&self, patches: Array4<S>) -> Array4<S> {
        self.net.infer(patches)
    }

    /// Map one patch (image layout P x P x C) through the network in
    /// inference mode. Rejects patches that do not match the configured
    /// side length.
    pub fn inpaint(&self, patch: &Array3<S>) -> Result<Array3<S>> {
        let (h, w, c) = patch.dim();
        if h != self.patch_size || w != self.patch_size || c != 3 {
            return Err(Error::Shape(format!(
                "patch {h}x{w}x{c} does not match configured {0}x{0}x3",
                self.patch_size
            )));
        }
        let chw = image_to_chw(patch.view());
        let (cc, hh, ww) = chw.dim();
        let batch = chw
            .into_shape_with_order((1, cc, hh, ww))
            .expect("reshape patch");
        let out = self.infer_batch(batch);
        Ok(chw_to_image(out.index_axis(ndarray::Axis(0), 0)))
    }
}

impl<S: Scalar> PatchInpainter<S> for InpainterNet<S> {
    fn inpaint_patch(&self, patch: &Array3<S>) -> Array3<S> {
        self.inpaint(patch).expect("patch size checked by caller")
    }

    fn patch_size(&self) -> Option<usize> {
        Some(self.patch_size)
    }
}

/// Patch discriminator scoring channel-concatenated patch pairs
/// (P x P x 2C input). Every layer is spectrally normalized.
pub struct DiscriminatorNet<S: Scalar> {
    net: Net<S>,
    pair_channels: usize,
}

impl<S: Scalar> DiscriminatorNet<S> {
    pub fn new(base_channels: usize, rng: &mut Rng) -> Self {
        let m = base_channels;
        let pair_channels = 6;
        let mut net = Net::new();
        let dims = [
            (pair_channels, m, 3, 1),
            (m, m, 4, 2),
            (m, 2 * m, 3, 1),
            (2 * m, 2 * m, 4, 2),
            (2 * m, 4 * m, 3, 1),
        ];
        for (i, &(ci, co, k, s)) in dims.iter().enumerate() {
            net.push(
                format!("d{}.conv", i + 1),
                Conv2d::new(ci, co, k, s, k / 2, 1, conv_std(ci, k), rng).with_spectral_norm(rng),
            );
            net.push(format!("d{}.act", i + 1), LeakyRelu::new(LEAK));
        }
        net.push("head.gap", GlobalAvgPool::new());
        net.push(
            "head.fc",
            Linear::new(4 * m, 1, (1.0 / (4 * m) as f64).sqrt(), rng).with_spectral_norm(rng),
        );
        Self { net, pair_channels }
    }

    pub fn pair_channels(&self) -> usize {
        self.pair_channels
    }

    pub fn net(&self) -> &Net<S> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Net<S> {
        &mut self.net
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }

    /// Scores for a batch of pairs; one power iteration is persisted per
    /// Train-mode call.
    pub fn forward_scores(&mut self, pairs: Array4<S>, mode: Mode) -> Array1<S> {
        let y = self.net.forward(pairs, mode);
        let n = y.dim().0;
        y.into_shape_with_order(n).expect("score reshape")
    }

    pub fn backward_scores(&mut self, grad: &Array1<S>) -> Array4<S> {
        let n = grad.len();
        let g = grad
            .clone()
            .into_shape_with_order((n, 1, 1, 1))
            .expect("score grad reshape");
        self.net.backward(g)
    }

    pub fn infer_scores(&self, pairs: Array4<S>) -> Array1<S> {
        let y = self.net.infer(pairs);
        let n = y.dim().0;
        y.into_shape_with_order(n).expect("score reshape")
    }
}
