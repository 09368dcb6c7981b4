//! Conversions between (H, W, C) images and (N, C, H, W) network batches.

use crate::scalar::Scalar;
use crate::transforms::ImageTensor;
use ndarray::{Array3, Array4, ArrayView3, Axis};

pub fn image_to_chw<S: Scalar>(img: ArrayView3<S>) -> Array3<S> {
    img.permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
}

pub fn chw_to_image<S: Scalar>(chw: ArrayView3<S>) -> ImageTensor<S> {
    chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned()
}

/// Stack images into an (N, C, H, W) batch.
pub fn images_to_batch<S: Scalar>(images: &[ImageTensor<S>]) -> Array4<S> {
    assert!(!images.is_empty(), "empty batch");
    let (h, w, c) = images[0].dim();
    let mut out = Array4::<S>::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        debug_assert_eq!(img.dim(), (h, w, c));
        out.index_axis_mut(Axis(0), i)
            .assign(&image_to_chw(img.view()));
    }
    out
}

/// Split an (N, C, H, W) batch back into images.
pub fn batch_to_images<S: Scalar>(batch: &Array4<S>) -> Vec<ImageTensor<S>> {
    (0..batch.dim().0)
        .map(|i| chw_to_image(batch.index_axis(Axis(0), i)))
        .collect()
}
