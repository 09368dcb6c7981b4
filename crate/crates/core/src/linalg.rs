//! Dense linear solve via Gaussian elimination with partial pivoting.
//!
//! The spline systems solved here are small (n + 3 square for n control
//! points), so a direct solver is sufficient. Singular systems are reported
//! with a pivot-ratio condition estimate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};

/// Solve `a x = b` for multiple right-hand sides (columns of `b`).
///
/// Returns the solution matrix with the same shape as `b`.
pub fn solve<S: Scalar>(a: &Array2<S>, b: &Array2<S>) -> Result<Array2<S>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Shape(format!(
            "solve: a is {}x{}, b has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let m = b.ncols();
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut max_pivot = S::zero();
    let mut min_pivot = S::infinity();

    for col in 0..n {
        // partial pivot
        let mut best = col;
        let mut best_abs = lu[(col, col)].abs();
        for row in col + 1..n {
            let v = lu[(row, col)].abs();
            if v > best_abs {
                best_abs = v;
                best = row;
            }
        }
        if best != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(best, j)];
                lu[(best, j)] = tmp;
            }
            for j in 0..m {
                let tmp = x[(col, j)];
                x[(col, j)] = x[(best, j)];
                x[(best, j)] = tmp;
            }
        }
        let pivot = lu[(col, col)];
        let pabs = pivot.abs();
        max_pivot = max_pivot.max(pabs);
        min_pivot = min_pivot.min(pabs);
        if pabs < S::fl(1e-12) * max_pivot.max(S::one()) {
            let cond = if min_pivot > S::zero() {
                (max_pivot / min_pivot).to_f64_()
            } else {
                f64::INFINITY
            };
            return Err(Error::Singular {
                detail: format!("zero pivot at column {col} of {n}"),
                cond_estimate: cond,
            });
        }
        for row in col + 1..n {
            let factor = lu[(row, col)] / pivot;
            if factor == S::zero() {
                continue;
            }
            for j in col..n {
                let v = lu[(col, j)];
                lu[(row, j)] = lu[(row, j)] - factor * v;
            }
            for j in 0..m {
                let v = x[(col, j)];
                x[(row, j)] = x[(row, j)] - factor * v;
            }
        }
    }

    // back substitution
    for col in (0..n).rev() {
        let pivot = lu[(col, col)];
        for j in 0..m {
            let mut acc = x[(col, j)];
            for k in col + 1..n {
                acc = acc - lu[(col, k)] * x[(k, j)];
            }
            x[(col, j)] = acc / pivot;
        }
    }
    Ok(x)
}

/// Convenience wrapper for a single right-hand side.
pub fn solve_vec<S: Scalar>(a: &Array2<S>, b: &Array1<S>) -> Result<Array1<S>> {
    let b2 = b
        .clone()
        .into_shape_with_order((b.len(), 1))
        .expect("reshape vector");
    let x = solve(a, &b2)?;
    Ok(x.column(0).to_owned())
}
