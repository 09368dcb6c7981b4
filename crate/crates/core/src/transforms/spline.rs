//! Polyharmonic spline interpolation of scattered 2-D data.
//!
//! The interpolant is a sum of radial kernels centered at the data points
//! plus an affine polynomial, with the usual orthogonality side conditions.
//! Order 2 is the thin-plate kernel `r^2 log r`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView2};

/// Radial kernel of the given order; `phi(0) = 0` by continuity.
fn kernel<S: Scalar>(r2: S, order: usize) -> S {
    if r2 == S::zero() {
        return S::zero();
    }
    let r = r2.sqrt();
    if order % 2 == 0 {
        // r^k log r, computed as 0.5 * r^k * log(r^2) for stability near 0
        let half = S::fl(0.5);
        r.powi(order as i32) * r2.ln() * half
    } else {
        r.powi(order as i32)
    }
}

fn dist2<S: Scalar>(a: (S, S), b: (S, S)) -> S {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// Fitted spline; evaluate with [`PolyharmonicSpline::evaluate`].
///
/// The interpolation system is assembled and solved in f64 whatever the
/// pipeline scalar is; the kernel matrix conditioning makes an f32 solve
/// miss the interpolation condition.
#[derive(Debug, Clone)]
pub struct PolyharmonicSpline<S: Scalar> {
    centers: Array2<f64>,
    /// n x d radial weights followed by 3 x d affine coefficients (1, x, y).
    weights: Array2<f64>,
    order: usize,
    _scalar: std::marker::PhantomData<S>,
}

impl<S: Scalar> PolyharmonicSpline<S> {
    /// Fit the interpolant through `values` at `centers` (both n x d rows).
    pub fn fit(centers: ArrayView2<S>, values: ArrayView2<S>, order: usize) -> Result<Self> {
        let n = centers.nrows();
        if centers.ncols() != 2 {
            return Err(Error::Shape(format!(
                "centers must be n x 2, got n x {}",
                centers.ncols()
            )));
        }
        if values.nrows() != n {
            return Err(Error::Shape(format!(
                "{} centers but {} values",
                n,
                values.nrows()
            )));
        }
        if n < 3 {
            return Err(Error::InvalidParam(format!(
                "need at least 3 centers for the affine term, got {n}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidParam("spline order must be positive".into()));
        }
        let centers: Array2<f64> = centers.mapv(|v| v.to_f64_());
        let d = values.ncols();
        let size = n + 3;
        let mut a = Array2::<f64>::zeros((size, size));
        for i in 0..n {
            let ci = (centers[(i, 0)], centers[(i, 1)]);
            for j in 0..n {
                let cj = (centers[(j, 0)], centers[(j, 1)]);
                a[(i, j)] = kernel(dist2(ci, cj), order);
            }
            a[(i, n)] = 1.0;
            a[(i, n + 1)] = ci.0;
            a[(i, n + 2)] = ci.1;
            a[(n, i)] = 1.0;
            a[(n + 1, i)] = ci.0;
            a[(n + 2, i)] = ci.1;
        }
        let mut b = Array2::<f64>::zeros((size, d));
        for i in 0..n {
            for j in 0..d {
                b[(i, j)] = values[(i, j)].to_f64_();
            }
        }
        let weights = linalg::solve(&a, &b).map_err(|e| match e {
            Error::Singular { cond_estimate, .. } => Error::Singular {
                detail: format!("spline system with {n} centers (coincident or collinear centers?)"),
                cond_estimate,
            },
            other => other,
        })?;
        Ok(Self {
            centers,
            weights,
            order,
            _scalar: std::marker::PhantomData,
        })
    }

    /// Evaluate at `queries` (q x 2), returning q x d.
    pub fn evaluate(&self, queries: ArrayView2<S>) -> Array2<S> {
        let n = self.centers.nrows();
        let d = self.weights.ncols();
        let q = queries.nrows();
        let mut out = Array2::<S>::zeros((q, d));
        for qi in 0..q {
            let p = (queries[(qi, 0)].to_f64_(), queries[(qi, 1)].to_f64_());
            for j in 0..d {
                let mut acc = self.weights[(n, j)]
                    + self.weights[(n + 1, j)] * p.0
                    + self.weights[(n + 2, j)] * p.1;
                for i in 0..n {
                    let c = (self.centers[(i, 0)], self.centers[(i, 1)]);
                    acc += self.weights[(i, j)] * kernel(dist2(p, c), self.order);
                }
                out[(qi, j)] = S::fl(acc);
            }
        }
        out
    }
}

/// One-shot fit + evaluate.
pub fn polyharmonic_interpolate<S: Scalar>(
    centers: ArrayView2<S>,
    values: ArrayView2<S>,
    queries: ArrayView2<S>,
    order: usize,
) -> Result<Array2<S>> {
    Ok(PolyharmonicSpline::fit(centers, values, order)?.evaluate(queries))
}
