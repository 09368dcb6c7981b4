//! The transformation classifier: a 5-stage convolutional backbone with
//! batch-normalized stages named conv1..conv5, a global-average-pool head
//! and six logits.

use crate::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, Linear, MaxPool2d, Mode, Net, Relu};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::transforms::NUM_TRANSFORMS;
use ndarray::{Array2, Array4};

pub const STAGES: [&str; 5] = ["conv1", "conv2", "conv3", "conv4", "conv5"];

pub struct ClassifierNet<S: Scalar> {
    net: Net<S>,
    config: BackboneConfig,
}

impl<S: Scalar> ClassifierNet<S> {
    pub fn new(config: &BackboneConfig, rng: &mut Rng) -> Self {
        let mut net = Net::new();
        let mut c_in = 3;
        for (i, stage) in STAGES.iter().enumerate() {
            let c_out = config.channels[i];
            let k = config.kernels[i];
            let conv = Conv2d::new_kaiming(
                c_in,
                c_out,
                k,
                config.strides[i],
                k / 2,
                config.groups[i],
                rng,
            );
            net.push(format!("{stage}.conv"), conv);
            net.push(format!("{stage}.bn"), BatchNorm2d::new(c_out));
            net.push(format!("{stage}.relu"), Relu::new());
            if config.pools[i] {
                net.push(format!("{stage}.pool"), MaxPool2d::new(2, 2));
            }
            c_in = c_out;
        }
        net.push("head.gap", GlobalAvgPool::new());
        net.push(
            "head.fc",
            Linear::new_kaiming(c_in, NUM_TRANSFORMS, rng),
        );
        Self {
            net,
            config: config.clone(),
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
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

    fn squeeze_logits(y: Array4<S>) -> Array2<S> {
        let (n, c, _, _) = y.dim();
        y.into_shape_with_order((n, c)).expect("logit reshape")
    }

    /// Training-path forward; caches activations for `backward_logits`.
    pub fn forward_logits(&mut self, batch: Array4<S>, mode: Mode) -> Array2<S> {
        Self::squeeze_logits(self.net.forward(batch, mode))
    }

    /// Backward from the logit gradient down to the input image gradient.
    pub fn backward_logits(&mut self, grad: Array2<S>) -> Array4<S> {
        let (n, c) = grad.dim();
        let g4 = grad
            .into_shape_with_order((n, c, 1, 1))
            .expect("logit grad reshape");
        self.net.backward(g4)
    }

    /// Inference logits; no caches, no state mutation.
    pub fn infer_logits(&self, batch: Array4<S>) -> Array2<S> {
        Self::squeeze_logits(self.net.infer(batch))
    }

    /// Inference feature maps at a named stage (after its activation and
    /// pooling), batch-norm in inference mode.
    pub fn infer_stage(&self, batch: Array4<S>, stage: &str) -> Result<Array4<S>> {
        if !STAGES.contains(&stage) {
            return Err(Error::UnknownStage(stage.into()));
        }
        self.net
            .infer_prefix(batch, stage)
            .ok_or_else(|| Error::UnknownStage(stage.into()))
    }
}
