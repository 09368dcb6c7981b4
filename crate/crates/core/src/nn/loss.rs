//! Classification and adversarial losses, with their gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::NUM_TRANSFORMS;
use ndarray::{Array1, Array2, ArrayView2};

/// Mean cross-entropy over rows, with the softmax restricted to the
/// enabled classes. Returns the loss and the gradient w.r.t. the logits
/// (zero on disabled columns).
pub fn cross_entropy_masked<S: Scalar>(
    logits: ArrayView2<S>,
    labels: &[usize],
    enabled: &[bool; NUM_TRANSFORMS],
) -> Result<(S, Array2<S>)> {
    let n = logits.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} labels",
            n,
            labels.len()
        )));
    }
    if logits.ncols() != NUM_TRANSFORMS {
        return Err(Error::Shape(format!(
            "expected {NUM_TRANSFORMS} logits per row, got {}",
            logits.ncols()
        )));
    }
    let mut grad = Array2::<S>::zeros((n, NUM_TRANSFORMS));
    let inv_n = S::one() / S::fl(n as f64);
    let mut loss = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= NUM_TRANSFORMS || !enabled[label] {
            return Err(Error::DisabledLabel(label));
        }
        let row = logits.row(i);
        let mut maxv = S::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if enabled[j] && v > maxv {
                maxv = v;
            }
        }
        let mut denom = S::zero();
        for (j, &v) in row.iter().enumerate() {
            if enabled[j] {
                denom += (v - maxv).exp();
            }
        }
        let logp = row[label] - maxv - denom.ln();
        loss -= logp;
        for j in 0..NUM_TRANSFORMS {
            if enabled[j] {
                let p = (row[j] - maxv).exp() / denom;
                let target = if j == label { S::one() } else { S::zero() };
                grad[(i, j)] = (p - target) * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Hinge discriminator loss:
/// `mean(max(0, 1 - s_real)) + mean(max(0, 1 + s_fake))`.
pub fn hinge_d_loss<S: Scalar>(real: &[S], fake: &[S]) -> S {
    let one = S::one();
    let r = real.iter().map(|&s| (one - s).max(S::zero())).sum::<S>() / S::fl(real.len() as f64);
    let f = fake.iter().map(|&s| (one + s).max(S::zero())).sum::<S>() / S::fl(fake.len() as f64);
    r + f
}

/// Gradients of [`hinge_d_loss`] w.r.t. the two score vectors.
pub fn hinge_d_grads<S: Scalar>(real: &[S], fake: &[S]) -> (Array1<S>, Array1<S>) {
    let one = S::one();
    let inv_r = S::one() / S::fl(real.len() as f64);
    let inv_f = S::one() / S::fl(fake.len() as f64);
    let gr = Array1::from_iter(real.iter().map(|&s| {
        if one - s > S::zero() {
            -inv_r
        } else {
            S::zero()
        }
    }));
    let gf = Array1::from_iter(fake.iter().map(|&s| {
        if one + s > S::zero() {
            inv_f
        } else {
            S::zero()
        }
    }));
    (gr, gf)
}

/// Hinge generator loss: `-mean(s_fake)`.
pub fn hinge_g_loss<S: Scalar>(fake: &[S]) -> S {
    -fake.iter().copied().sum::<S>() / S::fl(fake.len() as f64)
}

/// Gradient of [`hinge_g_loss`] w.r.t. the fake scores.
pub fn hinge_g_grad<S: Scalar>(fake: &[S]) -> Array1<S> {
    let g = -S::one() / S::fl(fake.len() as f64);
    Array1::from_elem(fake.len(), g)
}
