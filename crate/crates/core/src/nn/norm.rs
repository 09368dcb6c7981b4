//! Batch normalization and spectral normalization.

use super::{Layer, Mode, ParamMut, StateMut, StateView};
use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::{s, Array1, Array2, Array4};

struct BnCache<S: Scalar> {
    xhat: Array4<S>,
    inv_std: Array1<S>,
    batch_stats: bool,
}

/// Per-channel batch normalization over (N, H, W).
pub struct BatchNorm2d<S: Scalar> {
    gamma: Array1<S>,
    beta: Array1<S>,
    ggrad: Array1<S>,
    bgrad: Array1<S>,
    running_mean: Array1<S>,
    running_var: Array1<S>,
    momentum: S,
    eps: S,
    cache: Vec<BnCache<S>>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            ggrad: Array1::zeros(channels),
            bgrad: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: S::fl(0.1),
            eps: S::fl(1e-5),
            cache: Vec::new(),
        }
    }

    fn normalize_batch(&self, x: &Array4<S>) -> (Array4<S>, Array1<S>, Array1<S>, Array1<S>) {
        let (n, c, h, w) = x.dim();
        let m = S::fl((n * h * w) as f64);
        let mut mean = Array1::<S>::zeros(c);
        let mut var = Array1::<S>::zeros(c);
        for ci in 0..c {
            let xc = x.slice(s![.., ci, .., ..]);
            let mu = xc.sum() / m;
            let mut acc = S::zero();
            for &v in xc.iter() {
                let d = v - mu;
                acc += d * d;
            }
            mean[ci] = mu;
            var[ci] = acc / m;
        }
        let inv_std = var.mapv(|v| S::one() / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        for ci in 0..c {
            let mu = mean[ci];
            let is = inv_std[ci];
            xhat.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| (v - mu) * is);
        }
        (xhat, mean, var, inv_std)
    }

    fn scale_shift(&self, xhat: &Array4<S>) -> Array4<S> {
        let c = xhat.dim().1;
        let mut y = xhat.clone();
        for ci in 0..c {
            let g = self.gamma[ci];
            let b = self.beta[ci];
            y.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| v * g + b);
        }
        y
    }

    fn normalize_running(&self, x: &Array4<S>) -> Array4<S> {
        let c = x.dim().1;
        let mut xhat = x.clone();
        for ci in 0..c {
            let mu = self.running_mean[ci];
            let is = S::one() / (self.running_var[ci] + self.eps).sqrt();
            xhat.slice_mut(s![.., ci, .., ..]).mapv_inplace(|v| (v - mu) * is);
        }
        xhat
    }
}

impl<S: Scalar> Layer<S> for BatchNorm2d<S> {
    fn forward(&mut self, x: Array4<S>, mode: Mode) -> Array4<S> {
        match mode {
            Mode::Train | Mode::Frozen => {
                let (xhat, mean, var, inv_std) = self.normalize_batch(&x);
                if mode == Mode::Train {
                    let mom = self.momentum;
                    let keep = S::one() - mom;
                    for ci in 0..mean.len() {
                        self.running_mean[ci] = keep * self.running_mean[ci] + mom * mean[ci];
                        self.running_var[ci] = keep * self.running_var[ci] + mom * var[ci];
                    }
                }
                let y = self.scale_shift(&xhat);
                self.cache.push(BnCache {
                    xhat,
                    inv_std,
                    batch_stats: true,
                });
                y
            }
            Mode::Eval => {
                let xhat = self.normalize_running(&x);
                let y = self.scale_shift(&xhat);
                let inv_std = self
                    .running_var
                    .mapv(|v| S::one() / (v + self.eps).sqrt());
                self.cache.push(BnCache {
                    xhat,
                    inv_std,
                    batch_stats: false,
                });
                y
            }
        }
    }

    fn infer(&self, x: Array4<S>) -> Array4<S> {
        self.scale_shift(&self.normalize_running(&x))
    }

    fn backward(&mut self, gy: Array4<S>) -> Array4<S> {
        let cache = self.cache.pop().expect("bn backward without forward");
        let (n, c, h, w) = gy.dim();
        let m = S::fl((n * h * w) as f64);
        let mut gx = Array4::<S>::zeros((n, c, h, w));
        for ci in 0..c {
            let gyc = gy.slice(s![.., ci, .., ..]);
            let xhatc = cache.xhat.slice(s![.., ci, .., ..]);
            let sum_gy = gyc.sum();
            let mut sum_gy_xhat = S::zero();
            for (&g, &xh) in gyc.iter().zip(xhatc.iter()) {
                sum_gy_xhat += g * xh;
            }
            self.bgrad[ci] += sum_gy;
            self.ggrad[ci] += sum_gy_xhat;
            let gcoef = self.gamma[ci] * cache.inv_std[ci];
            let mut gxc = gx.slice_mut(s![.., ci, .., ..]);
            if cache.batch_stats {
                for ((gxv, &g), &xh) in gxc.iter_mut().zip(gyc.iter()).zip(xhatc.iter()) {
                    *gxv = gcoef * (g - sum_gy / m - xh * sum_gy_xhat / m);
                }
            } else {
                for (gxv, &g) in gxc.iter_mut().zip(gyc.iter()) {
                    *gxv = gcoef * g;
                }
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        vec![
            ParamMut {
                name: "gamma".into(),
                value: self.gamma.as_slice_mut().expect("layout"),
                grad: self.ggrad.as_slice_mut().expect("layout"),
            },
            ParamMut {
                name: "beta".into(),
                value: self.beta.as_slice_mut().expect("layout"),
                grad: self.bgrad.as_slice_mut().expect("layout"),
            },
        ]
    }

    fn state(&self) -> Vec<StateView<'_, S>> {
        [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
        .into_iter()
        .map(|(name, arr)| StateView {
            name: name.into(),
            shape: arr.shape().to_vec(),
            data: arr.as_slice().expect("layout"),
        })
        .collect()
    }

    fn state_mut(&mut self) -> Vec<StateMut<'_, S>> {
        [
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
        .into_iter()
        .map(|(name, arr)| StateMut {
            name: name.into(),
            shape: arr.shape().to_vec(),
            data: arr.as_slice_mut().expect("layout"),
        })
        .collect()
    }

    fn zero_grad(&mut self) {
        self.ggrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }

    fn clear_caches(&mut self) {
        self.cache.clear();
    }
}

/// Spectral normalization state for one weight matrix (largest singular
/// value estimated by power iteration on the (out, rest) reshape).
pub struct SpectralNorm<S: Scalar> {
    u: Array1<S>,
}

impl<S: Scalar> SpectralNorm<S> {
    pub fn new(out_dim: usize, rng: &mut Rng) -> Self {
        let mut u = super::init::normal_1d(out_dim, 1.0, rng);
        let norm = l2(&u);
        u.mapv_inplace(|v| v / norm);
        Self { u }
    }

    /// Rebuild from a stored power-iteration vector.
    pub fn with_u(u: Array1<S>) -> Self {
        Self { u }
    }

    pub fn u(&self) -> &Array1<S> {
        &self.u
    }

    pub fn u_mut(&mut self) -> &mut Array1<S> {
        &mut self.u
    }

    /// One power iteration from the stored `u`; returns the normalized
    /// weight, the refreshed left/right vectors and the sigma estimate.
    /// The stored state is not touched; callers persist `u` explicitly.
    pub fn normalized(&self, w2d: &Array2<S>) -> (Array2<S>, Array1<S>, Array1<S>, S) {
        let mut v = w2d.t().dot(&self.u);
        let vn = l2(&v).max(S::fl(1e-24));
        v.mapv_inplace(|x| x / vn);
        let mut u = w2d.dot(&v);
        let un = l2(&u).max(S::fl(1e-24));
        u.mapv_inplace(|x| x / un);
        let sigma = u.dot(&w2d.dot(&v)).max(S::fl(1e-12));
        let w_hat = w2d.mapv(|x| x / sigma);
        (w_hat, u, v, sigma)
    }

    pub fn update_u(&mut self, u: &Array1<S>) {
        self.u.assign(u);
    }

    /// Map the gradient w.r.t. the normalized weight back to the raw one:
    /// `gw = (g_hat - <g_hat, w_hat> u v^T) / sigma`.
    pub fn backward(
        g_hat: &Array2<S>,
        w_hat: &Array2<S>,
        u: &Array1<S>,
        v: &Array1<S>,
        sigma: S,
    ) -> Array2<S> {
        let mut inner = S::zero();
        for (&g, &w) in g_hat.iter().zip(w_hat.iter()) {
            inner += g * w;
        }
        let mut out = g_hat.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let ui = u[i];
            for (x, &vj) in row.iter_mut().zip(v.iter()) {
                *x = (*x - inner * ui * vj) / sigma;
            }
        }
        out
    }

    /// Dedicated sigma oracle: `iters` power iterations from a fresh vector.
    pub fn sigma_oracle(w2d: &Array2<S>, iters: usize) -> S {
        let mut u = Array1::<S>::ones(w2d.nrows());
        let n0 = l2(&u);
        u.mapv_inplace(|x| x / n0);
        let mut sigma = S::zero();
        for _ in 0..iters {
            let mut v = w2d.t().dot(&u);
            let vn = l2(&v).max(S::fl(1e-24));
            v.mapv_inplace(|x| x / vn);
            u = w2d.dot(&v);
            let un = l2(&u).max(S::fl(1e-24));
            u.mapv_inplace(|x| x / un);
            sigma = u.dot(&w2d.dot(&v));
        }
        sigma
    }
}

fn l2<S: Scalar>(v: &Array1<S>) -> S {
    v.iter().map(|&x| x * x).sum::<S>().sqrt()
}
