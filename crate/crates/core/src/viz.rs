//! Rendering helpers: first-layer filter grids, inpainting before/after
//! pairs, retrieval strips and transformation previews.

use crate::classifier::ClassifierNet;
use crate::data::denormalize_u8;
use crate::error::{Error, Result};
use crate::lci::LciBatchRecord;
use crate::scalar::Scalar;
use crate::transforms::{ImageTensor, PatchSpec};
use image::{Rgb, RgbImage};
use std::path::Path;

pub fn image_to_rgb8<S: Scalar>(img: &ImageTensor<S>) -> RgbImage {
    let (h, w, _) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        Rgb([
            denormalize_u8(img[(y, x, 0)]),
            denormalize_u8(img[(y, x, 1)]),
            denormalize_u8(img[(y, x, 2)]),
        ])
    })
}

/// Draw the patch window outline in red.
pub fn outline_patch<S: Scalar>(img: &ImageTensor<S>, spec: &PatchSpec) -> RgbImage {
    let mut rgb = image_to_rgb8(img);
    let (y0, x0) = spec.delta;
    let p = spec.p;
    let red = Rgb([255u8, 32, 32]);
    for x in x0..x0 + p {
        rgb.put_pixel(x as u32, y0 as u32, red);
        rgb.put_pixel(x as u32, (y0 + p - 1) as u32, red);
    }
    for y in y0..y0 + p {
        rgb.put_pixel(x0 as u32, y as u32, red);
        rgb.put_pixel((x0 + p - 1) as u32, y as u32, red);
    }
    rgb
}

/// Compose tiles (all equal size) into a grid with separators.
pub fn tile_grid(tiles: &[RgbImage], cols: usize, gap: u32) -> Result<RgbImage> {
    if tiles.is_empty() {
        return Err(Error::InvalidParam("no tiles to compose".into()));
    }
    let tw = tiles[0].width();
    let th = tiles[0].height();
    let cols = cols.max(1);
    let rows = tiles.len().div_ceil(cols);
    let mut out = RgbImage::from_pixel(
        cols as u32 * (tw + gap) + gap,
        rows as u32 * (th + gap) + gap,
        Rgb([24, 24, 24]),
    );
    for (i, tile) in tiles.iter().enumerate() {
        if tile.width() != tw || tile.height() != th {
            return Err(Error::Shape("grid tiles must share one size".into()));
        }
        let r = (i / cols) as u32;
        let c = (i % cols) as u32;
        let oy = gap + r * (th + gap);
        let ox = gap + c * (tw + gap);
        for y in 0..th {
            for x in 0..tw {
                out.put_pixel(ox + x, oy + y, *tile.get_pixel(x, y));
            }
        }
    }
    Ok(out)
}

/// First-layer filters as a tile grid, each filter normalized to full
/// range independently.
pub fn render_filter_grid<S: Scalar, P: AsRef<Path>>(
    c: &ClassifierNet<S>,
    path: P,
    upscale: u32,
) -> Result<usize> {
    let state = c.net().state();
    let conv1 = state
        .iter()
        .find(|s| s.name == "conv1.conv.weight")
        .ok_or_else(|| Error::UnknownStage("conv1".into()))?;
    let [n_filters, c_in, kh, kw] = conv1.shape[..] else {
        return Err(Error::Shape("conv1 weight must be 4-d".into()));
    };
    if c_in != 3 {
        return Err(Error::Shape("filter grid expects RGB input filters".into()));
    }
    let mut tiles = Vec::with_capacity(n_filters);
    for f in 0..n_filters {
        let base = f * c_in * kh * kw;
        let vals = &conv1.data[base..base + c_in * kh * kw];
        let lo = vals.iter().copied().fold(S::infinity(), S::min);
        let hi = vals.iter().copied().fold(S::neg_infinity(), S::max);
        let span = (hi - lo).max(S::fl(1e-12));
        let mut tile = RgbImage::new((kw as u32) * upscale, (kh as u32) * upscale);
        for y in 0..kh {
            for x in 0..kw {
                let px = Rgb([
                    norm_u8(vals[y * kw + x], lo, span),
                    norm_u8(vals[kh * kw + y * kw + x], lo, span),
                    norm_u8(vals[2 * kh * kw + y * kw + x], lo, span),
                ]);
                for dy in 0..upscale {
                    for dx in 0..upscale {
                        tile.put_pixel(x as u32 * upscale + dx, y as u32 * upscale + dy, px);
                    }
                }
            }
        }
        tiles.push(tile);
    }
    let cols = (n_filters as f64).sqrt().ceil() as usize;
    tile_grid(&tiles, cols, 1)?
        .save(path)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(n_filters)
}

fn norm_u8<S: Scalar>(v: S, lo: S, span: S) -> u8 {
    ((v - lo) / span).to_f64_().clamp(0.0, 1.0).mul_add(255.0, 0.0) as u8
}

/// Before/after pairs with the inpainted window outlined on the source.
pub fn render_lci_examples<S: Scalar, P: AsRef<Path>>(
    sources: &[ImageTensor<S>],
    records: &[LciBatchRecord<S>],
    path: P,
) -> Result<()> {
    if sources.len() != records.len() || records.is_empty() {
        return Err(Error::InvalidParam("need one source per record".into()));
    }
    let mut tiles = Vec::new();
    for (src, rec) in sources.iter().zip(records.iter()) {
        tiles.push(outline_patch(src, &rec.spec));
        tiles.push(image_to_rgb8(&rec.composed));
    }
    tile_grid(&tiles, 2, 2)?
        .save(path)
        .map_err(|e| Error::Image(e.to_string()))
}

/// One row per query: the query followed by its retrieved neighbors.
pub fn render_retrieval_strips<S: Scalar, P: AsRef<Path>>(
    queries: &[ImageTensor<S>],
    neighbors: &[Vec<ImageTensor<S>>],
    path: P,
) -> Result<()> {
    if queries.len() != neighbors.len() || queries.is_empty() {
        return Err(Error::InvalidParam("need one neighbor row per query".into()));
    }
    let per_row = neighbors[0].len() + 1;
    let mut tiles = Vec::new();
    for (q, row) in queries.iter().zip(neighbors.iter()) {
        tiles.push(image_to_rgb8(q));
        for n in row {
            tiles.push(image_to_rgb8(n));
        }
    }
    tile_grid(&tiles, per_row, 2)?
        .save(path)
        .map_err(|e| Error::Image(e.to_string()))
}

/// One example image per enabled transformation, in label order.
pub fn render_transform_examples<S: Scalar, P: AsRef<Path>>(
    examples: &[(usize, ImageTensor<S>)],
    path: P,
) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidParam("no transform examples".into()));
    }
    let tiles: Vec<RgbImage> = examples.iter().map(|(_, img)| image_to_rgb8(img)).collect();
    tile_grid(&tiles, examples.len(), 2)?
        .save(path)
        .map_err(|e| Error::Image(e.to_string()))
}
