//! Quarter-turn rotations as pure index permutations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::ImageTensor;
use ndarray::Array3;

/// Rotate a square image by `k * 90` degrees counter-clockwise.
///
/// This is a pixel permutation; no interpolation happens, so repeated
/// rotations compose bit-exactly.
pub fn rotate<S: Scalar>(img: &ImageTensor<S>, k: usize) -> Result<ImageTensor<S>> {
    let (h, w, c) = img.dim();
    if h != w {
        return Err(Error::Shape(format!(
            "rotate requires a square image, got {h}x{w}"
        )));
    }
    let k = k % 4;
    if k == 0 {
        return Ok(img.clone());
    }
    let n = h;
    let out = match k {
        // 90 ccw: out(r, c) = in(c, n-1-r)
        1 => Array3::from_shape_fn((n, n, c), |(r, cc, ch)| img[(cc, n - 1 - r, ch)]),
        // 180: out(r, c) = in(n-1-r, n-1-c)
        2 => Array3::from_shape_fn((n, n, c), |(r, cc, ch)| img[(n - 1 - r, n - 1 - cc, ch)]),
        // 270 ccw: out(r, c) = in(n-1-c, r)
        _ => Array3::from_shape_fn((n, n, c), |(r, cc, ch)| img[(n - 1 - cc, r, ch)]),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(n: usize, seed: u64) -> ImageTensor<f32> {
        let mut rng = crate::rng::root(seed);
        Array3::from_shape_fn((n, n, 3), |_| rng.gen_range(-1.0..1.0f32))
    }

    #[test]
    fn k0_is_identity() {
        let x = random_image(8, 1);
        assert_eq!(rotate(&x, 0).unwrap(), x);
    }

    #[test]
    fn quarter_turn_hand_case() {
        // [[1,2],[3,4]] rotated 90 ccw -> [[2,4],[1,3]]
        let x = ndarray::arr3(&[[[1.0f32], [2.0]], [[3.0], [4.0]]]);
        let r = rotate(&x, 1).unwrap();
        assert_eq!(r, ndarray::arr3(&[[[2.0f32], [4.0]], [[1.0], [3.0]]]));
    }

    #[test]
    fn group_composition() {
        let x = random_image(9, 2);
        let twice = rotate(&rotate(&x, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, rotate(&x, 2).unwrap());
    }

    #[test]
    fn cyclic_order_four() {
        let x = random_image(12, 3);
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate(&y, 1).unwrap();
        }
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_non_square() {
        let x = Array3::<f32>::zeros((4, 5, 3));
        assert!(rotate(&x, 1).is_err());
    }
}
