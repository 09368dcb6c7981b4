//! Patch algebra: extract, mask, corrupt, paste.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::transforms::ImageTensor;
use ndarray::{s, Array2, Array3};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// A patch window: top-left anchor, side length, boundary width and the
/// center mask (1 inside, 0 on the `b`-wide border ring).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub delta: (usize, usize),
    pub p: usize,
    pub b: usize,
    pub mask: Array2<u8>,
}

impl PatchSpec {
    /// Build a spec after validating the window fits inside an `h x w` image.
    pub fn new(delta: (usize, usize), p: usize, b: usize, h: usize, w: usize) -> Result<Self> {
        if !(2..=4).contains(&b) {
            return Err(Error::InvalidParam(format!(
                "boundary width must be in 2..=4, got {b}"
            )));
        }
        if delta.0 + p > h || delta.1 + p > w {
            return Err(Error::InvalidParam(format!(
                "patch window {p}x{p} at {delta:?} exceeds image {h}x{w}"
            )));
        }
        Ok(Self {
            delta,
            p,
            b,
            mask: make_mask(p, b)?,
        })
    }

    /// Uniform anchor over all positions where the window fits.
    pub fn sample(p: usize, b: usize, h: usize, w: usize, rng: &mut Rng) -> Result<Self> {
        if p > h || p > w {
            return Err(Error::InvalidParam(format!(
                "patch side {p} exceeds image {h}x{w}"
            )));
        }
        let dy = rng.gen_range(0..=h - p);
        let dx = rng.gen_range(0..=w - p);
        Self::new((dy, dx), p, b, h, w)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.delta.0 && y < self.delta.0 + self.p && x >= self.delta.1 && x < self.delta.1 + self.p
    }
}

/// Binary `p x p` mask: 1 in the center, 0 on the `b`-wide border ring.
pub fn make_mask(p: usize, b: usize) -> Result<Array2<u8>> {
    if 2 * b >= p {
        return Err(Error::InvalidParam(format!(
            "border {b} too large for patch side {p}"
        )));
    }
    let mut mask = Array2::<u8>::zeros((p, p));
    mask.slice_mut(s![b..p - b, b..p - b]).fill(1);
    Ok(mask)
}

/// Exact pixel copy of the window.
pub fn extract_patch<S: Scalar>(img: &ImageTensor<S>, spec: &PatchSpec) -> Result<Array3<S>> {
    let (h, w, _) = img.dim();
    if spec.delta.0 + spec.p > h || spec.delta.1 + spec.p > w {
        return Err(Error::InvalidParam("patch window out of bounds".into()));
    }
    Ok(img
        .slice(s![
            spec.delta.0..spec.delta.0 + spec.p,
            spec.delta.1..spec.delta.1 + spec.p,
            ..
        ])
        .to_owned())
}

/// Replace the mask interior with i.i.d. standard normal noise; border
/// pixels are preserved bit-exactly. Noise is drawn row-major over interior
/// pixels, channel-innermost.
pub fn corrupt_patch<S: Scalar>(
    patch: &Array3<S>,
    mask: &Array2<u8>,
    rng: &mut Rng,
) -> Result<Array3<S>> {
    let (p, q, c) = patch.dim();
    if mask.dim() != (p, q) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match patch {p}x{q}",
            mask.dim()
        )));
    }
    let mut out = patch.clone();
    for y in 0..p {
        for x in 0..q {
            if mask[(y, x)] == 1 {
                for ch in 0..c {
                    let z: f64 = rng.sample(StandardNormal);
                    out[(y, x, ch)] = S::fl(z);
                }
            }
        }
    }
    Ok(out)
}

/// Write `patch` into the window; pixels outside are bit-identical to `img`.
pub fn paste_patch<S: Scalar>(
    img: &ImageTensor<S>,
    patch: &Array3<S>,
    spec: &PatchSpec,
) -> Result<ImageTensor<S>> {
    let (h, w, c) = img.dim();
    if spec.delta.0 + spec.p > h || spec.delta.1 + spec.p > w {
        return Err(Error::InvalidParam("patch window out of bounds".into()));
    }
    if patch.dim() != (spec.p, spec.p, c) {
        return Err(Error::Shape(format!(
            "patch {:?} does not match spec side {}",
            patch.dim(),
            spec.p
        )));
    }
    let mut out = img.clone();
    out.slice_mut(s![
        spec.delta.0..spec.delta.0 + spec.p,
        spec.delta.1..spec.delta.1 + spec.p,
        ..
    ])
    .assign(patch);
    Ok(out)
}

/// Gradient of `paste_patch` with respect to the pasted patch: the window
/// slice of the output gradient. (The gradient w.r.t. `img` is the output
/// gradient with the window zeroed.)
pub fn paste_patch_grad<S: Scalar>(grad_out: &ImageTensor<S>, spec: &PatchSpec) -> Result<Array3<S>> {
    extract_patch(grad_out, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor<f32> {
        let mut rng = crate::rng::root(seed);
        Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(-1.0..1.0f32))
    }

    #[test]
    fn mask_counts() {
        assert_eq!(make_mask(48, 2).unwrap().iter().map(|&v| v as usize).sum::<usize>(), 44 * 44);
        assert_eq!(make_mask(48, 4).unwrap().iter().map(|&v| v as usize).sum::<usize>(), 40 * 40);
    }

    #[test]
    fn mask_layout() {
        let m = make_mask(48, 2).unwrap();
        assert!(m.row(0).iter().all(|&v| v == 0));
        assert_eq!(m[(2, 2)], 1);
        assert!(m.iter().all(|&v| v == 0 || v == 1));
    }

    #[test]
    fn mask_rejects_large_border() {
        assert!(make_mask(8, 4).is_err());
    }

    #[test]
    fn extract_whole_image() {
        let img = random_image(16, 16, 1);
        let spec = PatchSpec::new((0, 0), 16, 2, 16, 16).unwrap();
        assert_eq!(extract_patch(&img, &spec).unwrap(), img);
    }

    #[test]
    fn extract_paste_identity() {
        let img = random_image(24, 20, 2);
        let mut rng = crate::rng::root(3);
        for _ in 0..10 {
            let spec = PatchSpec::sample(8, 2, 24, 20, &mut rng).unwrap();
            let patch = extract_patch(&img, &spec).unwrap();
            assert_eq!(paste_patch(&img, &patch, &spec).unwrap(), img);
        }
    }

    #[test]
    fn extract_constant() {
        let img = Array3::<f32>::from_elem((12, 12, 3), 0.25);
        let spec = PatchSpec::new((2, 3), 6, 2, 12, 12).unwrap();
        let patch = extract_patch(&img, &spec).unwrap();
        assert!(patch.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn oob_specs_rejected() {
        assert!(PatchSpec::new((10, 0), 8, 2, 16, 16).is_err());
        let img = random_image(16, 16, 4);
        let spec = PatchSpec::new((0, 0), 8, 2, 16, 16).unwrap();
        let small = random_image(8, 8, 5);
        // paste into a smaller image than the spec was built for
        assert!(paste_patch(&small, &extract_patch(&img, &spec).unwrap(), &spec).is_ok());
        let tiny = random_image(7, 7, 6);
        assert!(paste_patch(&tiny, &extract_patch(&img, &spec).unwrap(), &spec).is_err());
    }

    #[test]
    fn corrupt_preserves_border_bit_exact() {
        let img = random_image(20, 20, 7);
        let spec = PatchSpec::new((4, 4), 12, 3, 20, 20).unwrap();
        let patch = extract_patch(&img, &spec).unwrap();
        let mut rng = crate::rng::root(8);
        let corrupted = corrupt_patch(&patch, &spec.mask, &mut rng).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                if spec.mask[(y, x)] == 0 {
                    for ch in 0..3 {
                        assert_eq!(corrupted[(y, x, ch)], patch[(y, x, ch)]);
                    }
                }
            }
        }
    }

    #[test]
    fn corrupt_is_reproducible() {
        let patch = random_image(12, 12, 9);
        let mask = make_mask(12, 2).unwrap();
        let a = corrupt_patch(&patch, &mask, &mut crate::rng::root(10)).unwrap();
        let b = corrupt_patch(&patch, &mask, &mut crate::rng::root(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_noise_moments() {
        // Monte-Carlo oracle: interior noise is standard normal.
        let patch = Array3::<f64>::zeros((48, 48, 3));
        let mask = make_mask(48, 2).unwrap();
        let mut rng = crate::rng::root(11);
        let mut values = Vec::new();
        for _ in 0..100 {
            let c = corrupt_patch(&patch, &mask, &mut rng).unwrap();
            for y in 0..48 {
                for x in 0..48 {
                    if mask[(y, x)] == 1 {
                        for ch in 0..3 {
                            values.push(c[(y, x, ch)]);
                        }
                    }
                }
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn paste_zero_patch() {
        let img = random_image(16, 16, 12);
        let spec = PatchSpec::new((5, 6), 8, 2, 16, 16).unwrap();
        let out = paste_patch(&img, &Array3::zeros((8, 8, 3)), &spec).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                for ch in 0..3 {
                    if spec.contains(y, x) {
                        assert_eq!(out[(y, x, ch)], 0.0);
                    } else {
                        assert_eq!(out[(y, x, ch)], img[(y, x, ch)]);
                    }
                }
            }
        }
    }

    /// Pixelwise oracle for the paste case-split over random images/specs.
    #[test]
    fn paste_case_split_oracle() {
        let mut rng = crate::rng::root(13);
        for trial in 0..50 {
            let img = random_image(20, 24, 100 + trial);
            let spec = PatchSpec::sample(10, 2, 20, 24, &mut rng).unwrap();
            let patch = random_image(10, 10, 200 + trial);
            let out = paste_patch(&img, &patch, &spec).unwrap();
            for y in 0..20 {
                for x in 0..24 {
                    for ch in 0..3 {
                        let want = if spec.contains(y, x) {
                            patch[(y - spec.delta.0, x - spec.delta.1, ch)]
                        } else {
                            img[(y, x, ch)]
                        };
                        assert_eq!(out[(y, x, ch)], want);
                    }
                }
            }
        }
    }
}
