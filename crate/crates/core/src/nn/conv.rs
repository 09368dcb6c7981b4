//! Convolution and transposed convolution via im2col / col2im.

use super::{norm::SpectralNorm, Layer, Mode, ParamMut, StateMut, StateView};
use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array4, ArrayView4};

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Gather sliding windows: output row = (n, oh, ow), column = (c, u, v).
fn im2col<S: Scalar>(x: ArrayView4<S>, k: usize, stride: usize, pad: usize) -> Array2<S> {
    let (n, c, h, w) = x.dim();
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut cols = Array2::<S>::zeros((n * oh * ow, c * k * k));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    let row_len = c * k * k;
    for ni in 0..n {
        for ohi in 0..oh {
            let iy0 = (ohi * stride) as isize - pad as isize;
            for owi in 0..ow {
                let ix0 = (owi * stride) as isize - pad as isize;
                let row = ((ni * oh + ohi) * ow + owi) * row_len;
                for ci in 0..c {
                    let x_base = (ni * c + ci) * h * w;
                    let col_base = row + ci * k * k;
                    for u in 0..k {
                        let iy = iy0 + u as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_row = x_base + iy as usize * w;
                        let col_row = col_base + u * k;
                        for v in 0..k {
                            let ix = ix0 + v as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cs[col_row + v] = xs[x_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the inverse of `im2col` into an (n, c, h, w) tensor.
fn col2im<S: Scalar>(
    cols: &Array2<S>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array4<S> {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut out = Array4::<S>::zeros((n, c, h, w));
    let os = out.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    let row_len = c * k * k;
    for ni in 0..n {
        for ohi in 0..oh {
            let iy0 = (ohi * stride) as isize - pad as isize;
            for owi in 0..ow {
                let ix0 = (owi * stride) as isize - pad as isize;
                let row = ((ni * oh + ohi) * ow + owi) * row_len;
                for ci in 0..c {
                    let o_base = (ni * c + ci) * h * w;
                    let col_base = row + ci * k * k;
                    for u in 0..k {
                        let iy = iy0 + u as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let o_row = o_base + iy as usize * w;
                        let col_row = col_base + u * k;
                        for v in 0..k {
                            let ix = ix0 + v as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            os[o_row + ix as usize] += cs[col_row + v];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reorder (n*oh*ow, c) rows into an (n, c, oh, ow) tensor.
fn rows_to_nchw<S: Scalar>(rows: Array2<S>, n: usize, c: usize, oh: usize, ow: usize) -> Array4<S> {
    rows.into_shape_with_order((n, oh, ow, c))
        .expect("reshape rows")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
}

/// Flatten an (n, c, oh, ow) tensor into (n*oh*ow, c) rows.
fn nchw_to_rows<S: Scalar>(x: ArrayView4<S>, n: usize, c: usize, oh: usize, ow: usize) -> Array2<S> {
    x.permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((n * oh * ow, c))
        .expect("reshape nchw")
}

struct ConvCache<S: Scalar> {
    cols: Vec<Array2<S>>,
    in_dim: (usize, usize, usize, usize),
    sn: Option<(Array1<S>, Array1<S>, S)>,
}

/// 2-D convolution, optionally grouped and spectrally normalized.
pub struct Conv2d<S: Scalar> {
    weight: Array4<S>,
    bias: Array1<S>,
    wgrad: Array4<S>,
    bgrad: Array1<S>,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    spectral: Option<SpectralNorm<S>>,
    cache: Vec<ConvCache<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(c_in % groups == 0 && c_out % groups == 0, "channels divisible by groups");
        let weight = super::init::normal((c_out, c_in / groups, k, k), init_std, rng);
        Self {
            wgrad: Array4::zeros(weight.dim()),
            bgrad: Array1::zeros(c_out),
            bias: Array1::zeros(c_out),
            weight,
            k,
            stride,
            pad,
            groups,
            spectral: None,
            cache: Vec::new(),
        }
    }

    /// Kaiming-style init for ReLU stacks.
    pub fn new_kaiming(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (c_in / groups * k * k) as f64;
        Self::new(c_in, c_out, k, stride, pad, groups, (2.0 / fan_in).sqrt(), rng)
    }

    pub fn with_spectral_norm(mut self, rng: &mut Rng) -> Self {
        self.spectral = Some(SpectralNorm::new(self.weight.dim().0, rng));
        self
    }

    pub fn weight(&self) -> &Array4<S> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Array4<S> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Array1<S> {
        &mut self.bias
    }

    /// Effective weight after spectral normalization (identity when off).
    pub fn effective_weight(&self) -> Array4<S> {
        match &self.spectral {
            None => self.weight.clone(),
            Some(sn) => {
                let (c_out, cpg, kh, kw) = self.weight.dim();
                let w2d = self
                    .weight
                    .view()
                    .into_shape_with_order((c_out, cpg * kh * kw))
                    .expect("reshape weight");
                let (w_hat, _, _, _) = sn.normalized(&w2d.to_owned());
                w_hat
                    .into_shape_with_order((c_out, cpg, kh, kw))
                    .expect("reshape back")
            }
        }
    }

    fn run_forward(&self, x: &Array4<S>, weight: &Array4<S>) -> (Array4<S>, Vec<Array2<S>>) {
        let (n, c_in, h, w) = x.dim();
        let (c_out, cpg, _, _) = weight.dim();
        debug_assert_eq!(c_in, cpg * self.groups);
        let oh = conv_out_dim(h, self.k, self.stride, self.pad);
        let ow = conv_out_dim(w, self.k, self.stride, self.pad);
        let opg = c_out / self.groups;
        let mut out = Array4::<S>::zeros((n, c_out, oh, ow));
        let mut group_cols = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let xg = x.slice(s![.., g * cpg..(g + 1) * cpg, .., ..]);
            let cols = im2col(xg, self.k, self.stride, self.pad);
            let wg = weight
                .slice(s![g * opg..(g + 1) * opg, .., .., ..])
                .to_shape((opg, cpg * self.k * self.k))
                .expect("reshape group weight")
                .to_owned();
            let mut rows = cols.dot(&wg.t());
            for mut row in rows.rows_mut() {
                for (o, r) in row.iter_mut().enumerate() {
                    *r += self.bias[g * opg + o];
                }
            }
            let yg = rows_to_nchw(rows, n, opg, oh, ow);
            out.slice_mut(s![.., g * opg..(g + 1) * opg, .., ..]).assign(&yg);
            group_cols.push(cols);
        }
        (out, group_cols)
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
    fn forward(&mut self, x: Array4<S>, mode: Mode) -> Array4<S> {
        let (weight, sn_cache) = match &mut self.spectral {
            None => (self.weight.clone(), None),
            Some(sn) => {
                let (c_out, cpg, kh, kw) = self.weight.dim();
                let w2d = self
                    .weight
                    .view()
                    .into_shape_with_order((c_out, cpg * kh * kw))
                    .expect("reshape weight")
                    .to_owned();
                let (w_hat, u, v, sigma) = sn.normalized(&w2d);
                if mode == Mode::Train {
                    sn.update_u(&u);
                }
                (
                    w_hat
                        .into_shape_with_order((c_out, cpg, kh, kw))
                        .expect("reshape back"),
                    Some((u, v, sigma)),
                )
            }
        };
        let (out, cols) = self.run_forward(&x, &weight);
        self.cache.push(ConvCache {
            cols,
            in_dim: x.dim(),
            sn: sn_cache,
        });
        out
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        let weight = self.effective_weight();
        self.run_forward(&x, &weight).0
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let cache = self.cache.pop().expect("conv backward without forward");
        let (n, c_in, h, w) = cache.in_dim;
        let (c_out, cpg, kh, kw) = self.weight.dim();
        let opg = c_out / self.groups;
        let (_, _, oh, ow) = gy.dim();
        // effective weight used in this forward
        let weight = match &cache.sn {
            None => self.weight.clone(),
            Some((_, _, sigma)) => {
                let mut w = self.weight.clone();
                w.mapv_inplace(|v| v / *sigma);
                // subtractive term handled below on the gradient
                w
            }
        };
        let mut gx = Array4::<S>::zeros((n, c_in, h, w));
        let mut gw_hat = Array4::<S>::zeros(self.weight.dim());
        for g in 0..self.groups {
            let gyg = gy.slice(s![.., g * opg..(g + 1) * opg, .., ..]);
            let g2d = nchw_to_rows(gyg, n, opg, oh, ow);
            let cols = &cache.cols[g];
            // parameter gradients
            let gw2d = g2d.t().dot(cols);
            let gwg = gw2d
                .into_shape_with_order((opg, cpg, kh, kw))
                .expect("reshape gw");
            gw_hat
                .slice_mut(s![g * opg..(g + 1) * opg, .., .., ..])
                .assign(&gwg);
            for (o, gb) in self
                .bgrad
                .slice_mut(s![g * opg..(g + 1) * opg])
                .iter_mut()
                .enumerate()
            {
                *gb += g2d.column(o).sum();
            }
            // input gradient
            let wg = weight
                .slice(s![g * opg..(g + 1) * opg, .., .., ..])
                .to_shape((opg, cpg * kh * kw))
                .expect("reshape group weight")
                .to_owned();
            let gcols = g2d.dot(&wg);
            let gxg = col2im(&gcols, n, cpg, h, w, self.k, self.stride, self.pad);
            gx.slice_mut(s![.., g * cpg..(g + 1) * cpg, .., ..]).assign(&gxg);
        }
        // map gradient w.r.t. normalized weight back to the raw weight
        match &cache.sn {
            None => self.wgrad += &gw_hat,
            Some((u, v, sigma)) => {
                let g2 = gw_hat
                    .into_shape_with_order((c_out, cpg * kh * kw))
                    .expect("reshape");
                let w2 = weight
                    .view()
                    .into_shape_with_order((c_out, cpg * kh * kw))
                    .expect("reshape");
                let gw = SpectralNorm::backward(&g2, &w2.to_owned(), u, v, *sigma);
                let gw4 = gw
                    .into_shape_with_order((c_out, cpg, kh, kw))
                    .expect("reshape");
                self.wgrad += &gw4;
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        vec![
            ParamMut {
                name: "weight".into(),
                value: self.weight.as_slice_mut().expect("layout"),
                grad: self.wgrad.as_slice_mut().expect("layout"),
            },
            ParamMut {
                name: "bias".into(),
                value: self.bias.as_slice_mut().expect("layout"),
                grad: self.bgrad.as_slice_mut().expect("layout"),
            },
        ]
    }

    fn state(&self) -> Vec<StateView<'_, S>> {
        let mut out = vec![
            StateView {
                name: "weight".into(),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice().expect("layout"),
            },
            StateView {
                name: "bias".into(),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice().expect("layout"),
            },
        ];
        if let Some(sn) = &self.spectral {
            out.push(StateView {
                name: "sn_u".into(),
                shape: vec![sn.u().len()],
                data: sn.u().as_slice().expect("layout"),
            });
        }
        out
    }

    fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        let mut out = vec![
            StateMut {
                name: "weight".into(),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice_mut().expect("layout"),
            },
            StateMut {
                name: "bias".into(),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice_mut().expect("layout"),
            },
        ];
        if let Some(sn) = &mut self.spectral {
            let u = sn.u_mut();
            let len = u.len();
            out.push(StateMut {
                name: "sn_u".into(),
                shape: vec![len],
                data: u.as_slice_mut().expect("layout"),
            });
        }
        out
    }

    fn zero_grad(&mut self) {
        self.wgrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

struct DeconvCache<S: Scalar> {
    x_rows: Array2<S>,
    in_dim: (usize, usize, usize, usize),
}

/// Transposed convolution (fractional stride upsampling).
///
/// Weight layout is (c_in, c_out, k, k); the forward pass is exactly the
/// input-gradient of a `Conv2d` with that weight, so output size is
/// `(h - 1) * stride - 2 * pad + k`.
pub struct ConvTranspose2d<S: Scalar> {
    weight: Array4<S>,
    bias: Array1<S>,
    wgrad: Array4<S>,
    bgrad: Array1<S>,
    k: usize,
    stride: usize,
    pad: usize,
    cache: Vec<DeconvCache<S>>,
}

impl<S: Scalar> ConvTranspose2d<S> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = super::init::normal((c_in, c_out, k, k), init_std, rng);
        Self {
            wgrad: Array4::zeros(weight.dim()),
            bgrad: Array1::zeros(c_out),
            bias: Array1::zeros(c_out),
            weight,
            k,
            stride,
            pad,
            cache: Vec::new(),
        }
    }

    pub fn out_dim(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn weight_mut(&mut self) -> &mut Array4<S> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Array1<S> {
        &mut self.bias
    }

    fn run_forward(&self, x: &Array4<S>) -> (Array4<S>, Array2<S>) {
        let (n, c_in, h, w) = x.dim();
        let (wc_in, c_out, kh, kw) = self.weight.dim();
        debug_assert_eq!(c_in, wc_in);
        let oh = self.out_dim(h);
        let ow = self.out_dim(w);
        let x_rows = nchw_to_rows(x.view(), n, c_in, h, w);
        let w2d = self
            .weight
            .view()
            .into_shape_with_order((c_in, c_out * kh * kw))
            .expect("reshape weight");
        let cols = x_rows.dot(&w2d);
        let mut out = col2im(&cols, n, c_out, oh, ow, self.k, self.stride, self.pad);
        for ci in 0..c_out {
            let b = self.bias[ci];
            out.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| v + b);
        }
        (out, x_rows)
    }
}

impl<S: Scalar> Layer<S> for ConvTranspose2d<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        let (out, x_rows) = self.run_forward(&x);
        self.cache.push(DeconvCache {
            x_rows,
            in_dim: x.dim(),
        });
        out
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        self.run_forward(&x).0
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let cache = self.cache.pop().expect("deconv backward without forward");
        let (n, c_in, h, w) = cache.in_dim;
        let (_, c_out, kh, kw) = self.weight.dim();
        // gcols of the forward col2im is an im2col gather of gy
        let gcols = im2col(gy.view(), self.k, self.stride, self.pad);
        // bias gradient: plain sum of gy per output channel
        for ci in 0..c_out {
            self.bgrad[ci] += gy.slice(s![.., ci, .., ..]).sum();
        }
        // weight gradient: x_rows^T (n*h*w, c_in)^T x gcols (n*h*w, c_out*k*k)
        let gw2d = cache.x_rows.t().dot(&gcols);
        let gw = gw2d
            .into_shape_with_order((c_in, c_out, kh, kw))
            .expect("reshape gw");
        self.wgrad += &gw;
        // input gradient: rows = gcols x w2d^T
        let w2d = self
            .weight
            .view()
            .into_shape_with_order((c_in, c_out * kh * kw))
            .expect("reshape weight");
        let gx_rows = gcols.dot(&w2d.t());
        rows_to_nchw(gx_rows, n, c_in, h, w)
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        vec![
            ParamMut {
                name: "weight".into(),
                value: self.weight.as_slice_mut().expect("layout"),
                grad: self.wgrad.as_slice_mut().expect("layout"),
            },
            ParamMut {
                name: "bias".into(),
                value: self.bias.as_slice_mut().expect("layout"),
                grad: self.bgrad.as_slice_mut().expect("layout"),
            },
        ]
    }

    fn state(&self) -> Vec<StateView<'_, S>> {
        vec![
            StateView {
                name: "weight".into(),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice().expect("layout"),
            },
            StateView {
                name: "bias".into(),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice().expect("layout"),
            },
        ]
    }

    fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        vec![
            StateMut {
                name: "weight".into(),
                shape: self.weight.shape().to_vec(),
                data: self.weight.as_slice_mut().expect("layout"),
            },
            StateMut {
                name: "bias".into(),
                shape: self.bias.shape().to_vec(),
                data: self.bias.as_slice_mut().expect("layout"),
            },
        ]
    }

    fn zero_grad(&mut self) {
        self.wgrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}
