//! Parameter initialization. All draws go through f64 so f32 and f64
//! networks built from the same seed share a stream.

use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array4};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn normal<S: Scalar>(dim: (usize, usize, usize, usize), std: f64, rng: &mut Rng) -> Array4<S> {
    Array4::from_shape_fn(dim, |_| {
        let z: f64 = rng.sample(StandardNormal);
        S::fl(z * std)
    })
}

pub fn normal_2d<S: Scalar>(dim: (usize, usize), std: f64, rng: &mut Rng) -> Array2<S> {
    Array2::from_shape_fn(dim, |_| {
        let z: f64 = rng.sample(StandardNormal);
        S::fl(z * std)
    })
}

pub fn normal_1d<S: Scalar>(len: usize, std: f64, rng: &mut Rng) -> Array1<S> {
    Array1::from_shape_fn(len, |_| {
        let z: f64 = rng.sample(StandardNormal);
        S::fl(z * std)
    })
}

pub fn uniform_f64(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    rng.gen_range(lo..hi)
}
