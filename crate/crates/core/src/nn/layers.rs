//! Activations, pooling and the fully connected layer.

use super::{norm::SpectralNorm, Layer, Mode, ParamMut, StateMut, StateView};
use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array4};

pub struct Relu<S: Scalar> {
    cache: Vec<Array4<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Self { cache: Vec::new() }
    }
}

impl<S: Scalar> Default for Relu<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Layer<S> for Relu<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        let y = x.mapv(|v| v.max(S::zero()));
        self.cache.push(y.clone());
        y
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        x.mapv(|v| v.max(S::zero()))
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let y = self.cache.pop().expect("relu backward without forward");
        let mut gx = gy;
        for (g, &v) in gx.iter_mut().zip(y.iter()) {
            if v <= S::zero() {
                *g = S::zero();
            }
        }
        gx
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

pub struct LeakyRelu<S: Scalar> {
    alpha: S,
    cache: Vec<Array4<S>>,
}

impl<S: Scalar> LeakyRelu<S> {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha: S::fl(alpha),
            cache: Vec::new(),
        }
    }
}

impl<S: Scalar> Layer<S> for LeakyRelu<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        let a = self.alpha;
        let y = x.mapv(|v| if v > S::zero() { v } else { v * a });
        self.cache.push(x);
        y
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        let a = self.alpha;
        x.mapv(|v| if v > S::zero() { v } else { v * a })
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let x = self.cache.pop().expect("leaky relu backward without forward");
        let a = self.alpha;
        let mut gx = gy;
        for (g, &v) in gx.iter_mut().zip(x.iter()) {
            if v <= S::zero() {
                *g = *g * a;
            }
        }
        gx
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

pub struct Tanh<S: Scalar> {
    cache: Vec<Array4<S>>,
}

impl<S: Scalar> Tanh<S> {
    pub fn new() -> Self {
        Self { cache: Vec::new() }
    }
}

impl<S: Scalar> Default for Tanh<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Layer<S> for Tanh<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        let y = x.mapv(|v| v.tanh());
        self.cache.push(y.clone());
        y
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        x.mapv(|v| v.tanh())
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let y = self.cache.pop().expect("tanh backward without forward");
        let mut gx = gy;
        for (g, &v) in gx.iter_mut().zip(y.iter()) {
            *g = *g * (S::one() - v * v);
        }
        gx
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

struct PoolCache {
    in_dim: (usize, usize, usize, usize),
    argmax: Vec<usize>,
}

/// Max pooling (no padding).
pub struct MaxPool2d<S: Scalar> {
    k: usize,
    stride: usize,
    cache: Vec<PoolCache>,
    _s: std::marker::PhantomData<S>,
}

impl<S: Scalar> MaxPool2d<S> {
    pub fn new(k: usize, stride: usize) -> Self {
        Self {
            k,
            stride,
            cache: Vec::new(),
            _s: std::marker::PhantomData,
        }
    }

    fn run(&self, x: &Array4<S>) -> (Array4<S>, Vec<usize>) {
        let (n, c, h, w) = x.dim();
        let oh = (h - self.k) / self.stride + 1;
        let ow = (w - self.k) / self.stride + 1;
        let mut out = Array4::<S>::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        let xs = x.as_slice().expect("layout");
        let mut idx = 0;
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * h * w;
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut best = S::neg_infinity();
                        let mut best_at = 0;
                        for u in 0..self.k {
                            let y = ohi * self.stride + u;
                            for v in 0..self.k {
                                let xcoord = owi * self.stride + v;
                                let val = xs[base + y * w + xcoord];
                                if val > best {
                                    best = val;
                                    best_at = base + y * w + xcoord;
                                }
                            }
                        }
                        out[(ni, ci, ohi, owi)] = best;
                        argmax[idx] = best_at;
                        idx += 1;
                    }
                }
            }
        }
        (out, argmax)
    }
}

impl<S: Scalar> Layer<S> for MaxPool2d<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        let (out, argmax) = self.run(&x);
        self.cache.push(PoolCache {
            in_dim: x.dim(),
            argmax,
        });
        out
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        self.run(&x).0
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let cache = self.cache.pop().expect("pool backward without forward");
        let mut gx = Array4::<S>::zeros(cache.in_dim);
        let gxs = gx.as_slice_mut().expect("layout");
        for (&at, &g) in cache.argmax.iter().zip(gy.iter()) {
            gxs[at] += g;
        }
        gx
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

/// Spatial mean over (H, W), emitting (N, C, 1, 1).
pub struct GlobalAvgPool<S: Scalar> {
    cache: Vec<(usize, usize, usize, usize)>,
    _s: std::marker::PhantomData<S>,
}

impl<S: Scalar> GlobalAvgPool<S> {
    pub fn new() -> Self {
        Self {
            cache: Vec::new(),
            _s: std::marker::PhantomData,
        }
    }

    fn run(x: &Array4<S>) -> Array4<S> {
        let (n, c, h, w) = x.dim();
        let m = S::fl((h * w) as f64);
        let mut out = Array4::<S>::zeros((n, c, 1, 1));
        for ni in 0..n {
            for ci in 0..c {
                out[(ni, ci, 0, 0)] = x.slice(s![ni, ci, .., ..]).sum() / m;
            }
        }
        out
    }
}

impl<S: Scalar> Default for GlobalAvgPool<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Layer<S> for GlobalAvgPool<S> {
    fn forward(&mut self, x: Array4<S>, _mode: Mode) -> Array4<S> {
        self.cache.push(x.dim());
        Self::run(&x)
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        Self::run(&x)
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let (n, c, h, w) = self.cache.pop().expect("gap backward without forward");
        let m = S::fl((h * w) as f64);
        let mut gx = Array4::<S>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = gy[(ni, ci, 0, 0)] / m;
                gx.slice_mut(s![ni, ci, .., ..]).fill(g);
            }
        }
        gx
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

struct LinearCache<S: Scalar> {
    x2d: Array2<S>,
    sn: Option<(Array1<S>, Array1<S>, S)>,
}

/// Fully connected layer on (N, C, 1, 1) tensors.
pub struct Linear<S: Scalar> {
    weight: Array2<S>,
    bias: Array1<S>,
    wgrad: Array2<S>,
    bgrad: Array1<S>,
    spectral: Option<SpectralNorm<S>>,
    cache: Vec<LinearCache<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(c_in: usize, c_out: usize, init_std: f64, rng: &mut Rng) -> Self {
        let weight = super::init::normal_2d((c_out, c_in), init_std, rng);
        Self {
            wgrad: Array2::zeros(weight.dim()),
            bgrad: Array1::zeros(c_out),
            bias: Array1::zeros(c_out),
            weight,
            spectral: None,
            cache: Vec::new(),
        }
    }

    pub fn new_kaiming(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        Self::new(c_in, c_out, (2.0 / c_in as f64).sqrt(), rng)
    }

    pub fn with_spectral_norm(mut self, rng: &mut Rng) -> Self {
        self.spectral = Some(SpectralNorm::new(self.weight.dim().0, rng));
        self
    }

    pub fn weight(&self) -> &Array2<S> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Array2<S> {
        &mut self.weight
    }

    pub fn effective_weight(&self) -> Array2<S> {
        match &self.spectral {
            None => self.weight.clone(),
            Some(sn) => sn.normalized(&self.weight).0,
        }
    }

    fn to_2d(x: &Array4<S>) -> Array2<S> {
        let (n, c, h, w) = x.dim();
        assert_eq!((h, w), (1, 1), "linear expects (n, c, 1, 1) input");
        x.view()
            .into_shape_with_order((n, c))
            .expect("reshape linear input")
            .to_owned()
    }
}

impl<S: Scalar> Layer<S> for Linear<S> {
    fn forward(&mut self, x: Array4<S>, mode: Mode) -> Array4<S> {
        let x2d = Self::to_2d(&x);
        let (weight, sn_cache) = match &mut self.spectral {
            None => (self.weight.clone(), None),
            Some(sn) => {
                let (w_hat, u, v, sigma) = sn.normalized(&self.weight);
                if mode == Mode::Train {
                    sn.update_u(&u);
                }
                (w_hat, Some((u, v, sigma)))
            }
        };
        let mut y = x2d.dot(&weight.t());
        for mut row in y.rows_mut() {
            for (o, r) in row.iter_mut().enumerate() {
                *r += self.bias[o];
            }
        }
        let n = y.nrows();
        let c = y.ncols();
        self.cache.push(LinearCache { x2d, sn: sn_cache });
        y.into_shape_with_order((n, c, 1, 1)).expect("reshape linear out")
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        let x2d = Self::to_2d(&x);
        let weight = self.effective_weight();
        let mut y = x2d.dot(&weight.t());
        for mut row in y.rows_mut() {
            for (o, r) in row.iter_mut().enumerate() {
                *r += self.bias[o];
            }
        }
        let n = y.nrows();
        let c = y.ncols();
        y.into_shape_with_order((n, c, 1, 1)).expect("reshape linear out")
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let cache = self.cache.pop().expect("linear backward without forward");
        let (n, c_out, _, _) = gy.dim();
        let g2d = gy
            .into_shape_with_order((n, c_out))
            .expect("reshape linear grad");
        for o in 0..c_out {
            self.bgrad[o] += g2d.column(o).sum();
        }
        let g_hat = g2d.t().dot(&cache.x2d);
        let weight = match &cache.sn {
            None => {
                self.wgrad += &g_hat;
                self.weight.clone()
            }
            Some((u, v, sigma)) => {
                let w_hat = self.weight.mapv(|x| x / *sigma);
                let gw = SpectralNorm::backward(&g_hat, &w_hat, u, v, *sigma);
                self.wgrad += &gw;
                w_hat
            }
        };
        let gx = g2d.dot(&weight);
        let c_in = gx.ncols();
        gx.into_shape_with_order((n, c_in, 1, 1))
            .expect("reshape linear gx")
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
