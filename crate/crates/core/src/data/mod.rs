//! Dataset ingestion, normalization, augmentation and synthetic
//! desk-scale dataset generation.

pub mod synthetic;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::transforms::ImageTensor;
use ndarray::{s, Array3};
use rand::Rng as _;
use std::path::{Path, PathBuf};

pub use synthetic::{gen_synthetic_oriented, SyntheticOrientedSpec, SyntheticVariant};

/// A decoded, normalized dataset held in memory (desk scale).
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub images: Vec<ImageTensor<S>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Undecodable files encountered while loading.
    pub skipped: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Deterministic split into (train, eval) by taking every k-th image
    /// per class for evaluation.
    pub fn split_eval(&self, every_k: usize) -> (Dataset<S>, Dataset<S>) {
        let mut per_class_seen = vec![0usize; self.class_names.len().max(1)];
        let mut train = Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            class_names: self.class_names.clone(),
            skipped: 0,
        };
        let mut eval = train.clone();
        for (img, &label) in self.images.iter().zip(self.labels.iter()) {
            let slot = label.min(per_class_seen.len() - 1);
            let seen = &mut per_class_seen[slot];
            let dst = if *seen % every_k == every_k - 1 {
                &mut eval
            } else {
                &mut train
            };
            dst.images.push(img.clone());
            dst.labels.push(label);
            *seen += 1;
        }
        (train, eval)
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    /// Directory tree: one subdirectory per class, 8-bit RGB images inside.
    Directory(PathBuf),
    /// Packaged single-file archive (see `io::write_packaged_dataset`).
    Packaged(PathBuf),
    /// Named synthetic generator.
    Synthetic(SyntheticOrientedSpec),
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub image_size: usize,
    pub seed: u64,
}

/// Map one 8-bit channel value into the [-1, 1] pixel range.
pub fn normalize_u8<S: Scalar>(v: u8) -> S {
    S::fl(v as f64 / 127.5 - 1.0)
}

/// Inverse of [`normalize_u8`], saturating at the range ends.
pub fn denormalize_u8<S: Scalar>(v: S) -> u8 {
    let x = (v.to_f64_() + 1.0) * 127.5;
    x.round().clamp(0.0, 255.0) as u8
}

/// Decode one image file to a normalized tensor, resizing (nearest) to the
/// requested square size when needed.
fn decode_image<S: Scalar>(path: &Path, size: usize) -> Result<ImageTensor<S>> {
    let img = image::open(path)?.to_rgb8();
    let img = if (img.width() as usize, img.height() as usize) == (size, size) {
        img
    } else {
        image::imageops::resize(
            &img,
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        )
    };
    let mut out = Array3::<S>::zeros((size, size, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[(y as usize, x as usize, ch)] = normalize_u8(px.0[ch]);
        }
    }
    Ok(out)
}

/// Load a dataset. Undecodable files are skipped and counted, never fatal.
/// Deterministic order: class directories and file names sorted.
pub fn load_dataset<S: Scalar>(spec: &DatasetSpec) -> Result<Dataset<S>> {
    match &spec.source {
        DatasetSource::Synthetic(syn) => {
            let mut rng = crate::rng::root(spec.seed);
            Ok(gen_synthetic_oriented(syn, spec.image_size, &mut rng))
        }
        DatasetSource::Packaged(path) => crate::io::read_packaged_dataset(path, spec.image_size),
        DatasetSource::Directory(root) => {
            if !root.is_dir() {
                return Err(Error::InvalidParam(format!(
                    "dataset directory {} does not exist",
                    root.display()
                )));
            }
            let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            class_dirs.sort();
            let mut dataset = Dataset {
                images: Vec::new(),
                labels: Vec::new(),
                class_names: Vec::new(),
                skipped: 0,
            };
            // flat directories of images are treated as a single class
            let flat = class_dirs.is_empty();
            let groups: Vec<(String, PathBuf)> = if flat {
                vec![("all".to_string(), root.clone())]
            } else {
                class_dirs
                    .iter()
                    .map(|d| {
                        (
                            d.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                            d.clone(),
                        )
                    })
                    .collect()
            };
            for (label, (name, dir)) in groups.into_iter().enumerate() {
                dataset.class_names.push(name);
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                for file in files {
                    match decode_image::<S>(&file, spec.image_size) {
                        Ok(img) => {
                            dataset.images.push(img);
                            dataset.labels.push(label);
                        }
                        Err(e) => {
                            eprintln!("warning: skipping {}: {e}", file.display());
                            dataset.skipped += 1;
                        }
                    }
                }
            }
            Ok(dataset)
        }
    }
}

/// Optional random crop to `crop_size`, then optional 0.5-probability
/// horizontal flip.
pub fn augment<S: Scalar>(
    img: &ImageTensor<S>,
    random_crop: bool,
    horizontal_flip: bool,
    crop_size: usize,
    rng: &mut Rng,
) -> Result<ImageTensor<S>> {
    let (h, w, _) = img.dim();
    if crop_size > h || crop_size > w {
        return Err(Error::InvalidParam(format!(
            "crop {crop_size} exceeds image {h}x{w}"
        )));
    }
    let mut out = if random_crop && (h > crop_size || w > crop_size) {
        let y0 = rng.gen_range(0..=h - crop_size);
        let x0 = rng.gen_range(0..=w - crop_size);
        img.slice(s![y0..y0 + crop_size, x0..x0 + crop_size, ..]).to_owned()
    } else if random_crop {
        img.clone()
    } else {
        img.clone()
    };
    if horizontal_flip && rng.gen_bool(0.5) {
        out = flip_horizontal(&out);
    }
    Ok(out)
}

/// Mirror the image around its vertical axis.
pub fn flip_horizontal<S: Scalar>(img: &ImageTensor<S>) -> ImageTensor<S> {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| img[(y, w - 1 - x, ch)])
}
