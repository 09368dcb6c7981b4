//! Optimizers and the cosine learning-rate schedule.

use super::ParamMut;
use crate::scalar::Scalar;

/// Cosine annealing between `lr_start` (step 0) and `lr_end` (final step).
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    assert!(step <= total_steps, "step beyond schedule");
    let t = if total_steps == 0 {
        1.0
    } else {
        step as f64 / total_steps as f64
    };
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
}

struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Adam with fixed hyperparameters; `weight_decay` is decoupled (applied
/// directly to the parameters, never through the moments), which makes the
/// zero-decay case plain Adam and the non-zero case AdamW.
pub struct AdamW<S: Scalar> {
    beta1: S,
    beta2: S,
    eps: S,
    weight_decay: S,
    t: i32,
    state: Vec<Moments<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1: S::fl(beta1),
            beta2: S::fl(beta2),
            eps: S::fl(1e-8),
            weight_decay: S::fl(weight_decay),
            t: 0,
            state: Vec::new(),
        }
    }

    /// One update over the given parameter set at learning rate `lr`.
    /// The parameter list must be identical (same tensors, same order)
    /// across calls.
    pub fn step(&mut self, params: &mut [ParamMut<'_, S>], lr: f64) {
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|p| Moments {
                    m: vec![S::zero(); p.value.len()],
                    v: vec![S::zero(); p.value.len()],
                })
                .collect();
        }
        assert_eq!(self.state.len(), params.len(), "parameter set changed");
        self.t += 1;
        let lr = S::fl(lr);
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = S::one() - b1.powi(self.t);
        let bc2 = S::one() - b2.powi(self.t);
        for (p, st) in params.iter_mut().zip(self.state.iter_mut()) {
            assert_eq!(p.value.len(), st.m.len(), "parameter shape changed");
            for i in 0..p.value.len() {
                let g = p.grad[i];
                st.m[i] = b1 * st.m[i] + (S::one() - b1) * g;
                st.v[i] = b2 * st.v[i] + (S::one() - b2) * g * g;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                let mut upd = lr * mhat / (vhat.sqrt() + self.eps);
                if self.weight_decay > S::zero() {
                    upd += lr * self.weight_decay * p.value[i];
                }
                p.value[i] = p.value[i] - upd;
            }
        }
    }
}

/// Plain Adam: AdamW with zero decay.
pub type Adam<S> = AdamW<S>;

/// SGD with classical momentum.
pub struct SgdMomentum<S: Scalar> {
    momentum: S,
    velocity: Vec<Vec<S>>,
}

impl<S: Scalar> SgdMomentum<S> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum: S::fl(momentum),
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_, S>], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
        }
        let lr = S::fl(lr);
        let mu = self.momentum;
        for (p, vel) in params.iter_mut().zip(self.velocity.iter_mut()) {
            for i in 0..p.value.len() {
                vel[i] = mu * vel[i] + p.grad[i];
                p.value[i] = p.value[i] - lr * vel[i];
            }
        }
    }
}
