//! Synthetic oriented datasets.
//!
//! Classes are shape families (disc, square, triangle, annulus), each
//! carrying a class-specific marker that defines the canonical "up"
//! direction: a wedge in the disc, a notch in the square's top edge, the
//! triangle's apex, a gap in the annulus. Texture (ring spacing, phase)
//! and placement are randomized independently of the class, so class
//! identity is a shape property rather than a first-order statistic, and
//! recognizing the orientation of an image requires recognizing its
//! shape.
//!
//! Two variants differ in where orientation information lives:
//!
//! * `Generic` - only the shape marker orients the image, so local
//!   patches (texture fragments, edges at all angles) are near chance for
//!   orientation while the full image determines it.
//! * `FaceLike` - a canonical top-lit gradient plus a periodic wallpaper
//!   of fixed-orientation flag glyphs is added, the way tightly aligned
//!   portrait crops share local structure; almost every patch then
//!   betrays the orientation.
//!
//! The pair operationalizes the transformation-suitability criterion: a
//! classifier can solve rotation prediction on `FaceLike` from local
//! statistics alone, which is the degenerate shortcut the inpainting
//! transformation does not admit.

use super::Dataset;
use crate::rng::Rng;
use crate::scalar::Scalar;
use ndarray::Array3;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticVariant {
    Generic,
    FaceLike,
}

#[derive(Debug, Clone)]
pub struct SyntheticOrientedSpec {
    pub variant: SyntheticVariant,
    pub classes: usize,
    pub per_class: usize,
    /// Background noise amplitude in [-1, 1] pixel units.
    pub noise: f64,
    /// Inclusive range of markerless distractor shapes per image.
    pub distractors: (usize, usize),
}

impl Default for SyntheticOrientedSpec {
    fn default() -> Self {
        Self {
            variant: SyntheticVariant::Generic,
            classes: 4,
            per_class: 64,
            noise: 0.15,
            distractors: (2, 4),
        }
    }
}

const SHAPE_NAMES: [&str; 4] = ["disc", "square", "triangle", "annulus"];

fn angle_from_up(dy: f64, dx: f64) -> f64 {
    // 0 when the vector points straight up (decreasing y)
    (-dy).atan2(dx.abs().max(1e-12)).mul_add(-1.0, std::f64::consts::FRAC_PI_2)
}

struct Shape {
    class: usize,
    cy: f64,
    cx: f64,
    size: f64,
    /// Quarter turns applied to the silhouette; only used for distractor
    /// triangles (the other silhouettes are 90-degree symmetric).
    rot: usize,
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (mut dy, mut dx) = (y - self.cy, x - self.cx);
        for _ in 0..self.rot {
            let t = dy;
            dy = -dx;
            dx = t;
        }
        match self.class {
            0 => dy * dy + dx * dx <= self.size * self.size,
            1 => dy.abs() <= self.size && dx.abs() <= self.size,
            2 => {
                // apex up, flat base down
                let apex = -1.1 * self.size;
                let base = 0.9 * self.size;
                if dy < apex || dy > base {
                    return false;
                }
                let half = 1.05 * self.size * (dy - apex) / (base - apex);
                dx.abs() <= half
            }
            _ => {
                let d2 = dy * dy + dx * dx;
                d2 <= self.size * self.size && d2 >= (0.55 * self.size).powi(2)
            }
        }
    }

    /// Class-specific canonical marker, always pointing up.
    fn in_marker(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        match self.class {
            0 => {
                // wedge sector pointing up
                let d = (dy * dy + dx * dx).sqrt();
                d <= self.size && d >= 0.15 * self.size && angle_from_up(dy, dx).abs() < 0.40
            }
            1 => {
                // notch through the middle of the top edge
                dy <= -0.4 * self.size && dy >= -1.05 * self.size && dx.abs() <= 0.22 * self.size
            }
            2 => false, // the apex itself is the marker
            _ => {
                // gap in the ring around the up direction
                let d2 = dy * dy + dx * dx;
                d2 <= (1.05 * self.size).powi(2)
                    && d2 >= (0.5 * self.size).powi(2)
                    && angle_from_up(dy, dx).abs() < 0.45
            }
        }
    }
}

/// Ring-texture value at distance `d` from the shape center.
fn ring_value(d: f64, lambda: f64, phase: f64) -> f64 {
    0.15 + 0.62 * (std::f64::consts::TAU * d / lambda + phase).cos()
}

fn paint_shape(img: &mut Array3<f64>, shape: &Shape, rng: &mut Rng, with_marker: bool) {
    let n = img.dim().0;
    // texture is independent of the class
    let lambda = rng.gen_range(2.5..10.0) * n as f64 / 32.0;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for y in 0..n {
        for x in 0..n {
            let (yf, xf) = (y as f64, x as f64);
            if with_marker && shape.in_marker(yf, xf) {
                for ch in 0..3 {
                    img[(y, x, ch)] = 0.9;
                }
            } else if shape.contains(yf, xf) {
                let d = ((yf - shape.cy).powi(2) + (xf - shape.cx).powi(2)).sqrt();
                let v = ring_value(d, lambda, phase);
                for ch in 0..3 {
                    img[(y, x, ch)] = v;
                }
            }
        }
    }
}

fn render_generic(
    spec: &SyntheticOrientedSpec,
    class: usize,
    n: usize,
    rng: &mut Rng,
) -> Array3<f64> {
    let nf = n as f64;
    let mut img = Array3::<f64>::zeros((n, n, 3));
    if spec.noise > 0.0 {
        // spatially smooth background: coarse noise bilinearly upsampled,
        // so resampling transformations leave its local statistics alone
        let step = 4usize;
        let coarse_n = n / step + 2;
        let coarse: Vec<f64> = (0..coarse_n * coarse_n)
            .map(|_| rng.gen_range(-spec.noise..spec.noise))
            .collect();
        for y in 0..n {
            let fy = y as f64 / step as f64;
            let y0 = fy.floor() as usize;
            let wy = fy - y0 as f64;
            for x in 0..n {
                let fx = x as f64 / step as f64;
                let x0 = fx.floor() as usize;
                let wx = fx - x0 as f64;
                let at = |yy: usize, xx: usize| coarse[yy * coarse_n + xx];
                let v = at(y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + at(y0, x0 + 1) * (1.0 - wy) * wx
                    + at(y0 + 1, x0) * wy * (1.0 - wx)
                    + at(y0 + 1, x0 + 1) * wy * wx;
                for ch in 0..3 {
                    img[(y, x, ch)] = v;
                }
            }
        }
    }
    // markerless distractor clutter first: random small shapes of random
    // classes (triangles in all four orientations, so they carry no
    // orientation information) with bright rotation-symmetric decoy dots
    let distractors = rng.gen_range(spec.distractors.0..=spec.distractors.1);
    for _ in 0..distractors {
        let d = Shape {
            class: rng.gen_range(0..SHAPE_NAMES.len()),
            cy: nf * rng.gen_range(0.08..0.92),
            cx: nf * rng.gen_range(0.08..0.92),
            size: nf * rng.gen_range(0.07..0.14),
            rot: rng.gen_range(0..4),
        };
        paint_shape(&mut img, &d, rng, false);
        let (dy, dx) = (d.cy.round() as isize, d.cx.round() as isize);
        for py in dy - 1..=dy + 1 {
            for px in dx - 1..=dx + 1 {
                if py >= 0 && (py as usize) < n && px >= 0 && (px as usize) < n {
                    for ch in 0..3 {
                        img[(py as usize, px as usize, ch)] = 0.9;
                    }
                }
            }
        }
    }
    // the class-defining shape, marker up, painted over the clutter
    let shape = Shape {
        class,
        cy: nf * rng.gen_range(0.36..0.64),
        cx: nf * rng.gen_range(0.36..0.64),
        size: nf * rng.gen_range(0.26..0.38),
        rot: 0,
    };
    paint_shape(&mut img, &shape, rng, true);
    img
}

fn render<S: Scalar>(
    spec: &SyntheticOrientedSpec,
    class: usize,
    n: usize,
    rng: &mut Rng,
) -> Array3<S> {
    let mut img = render_generic(spec, class, n, rng);
    if spec.variant == SyntheticVariant::FaceLike {
        // Same content, plus the canonical structure of an aligned
        // dataset: a top-lit vertical gradient and a regular wallpaper of
        // fixed-orientation flag glyphs (dark pole, bright flag at its
        // top right; no rotation of the glyph equals a translation of
        // it), so nearly every local window reveals the orientation.
        let nf = n as f64;
        for y in 0..n {
            let g = 0.35 * (1.0 - 2.0 * y as f64 / (nf - 1.0));
            for x in 0..n {
                for ch in 0..3 {
                    img[(y, x, ch)] += g;
                }
            }
        }
        let cell = 7;
        for gy in (0..n - cell + 1).step_by(cell) {
            for gx in (0..n - cell + 1).step_by(cell) {
                for (dy, dx, v) in [
                    (1usize, 2usize, -0.95),
                    (2, 2, -0.95),
                    (3, 2, -0.95),
                    (4, 2, -0.95),
                    (5, 2, -0.95),
                    (1, 4, 0.95),
                    (2, 4, 0.95),
                ] {
                    for ch in 0..3 {
                        img[(gy + dy, gx + dx, ch)] = v;
                    }
                }
            }
        }
    }
    img.mapv(|v| S::fl(v.clamp(-1.0, 1.0)))
}

/// Generate the dataset: exactly `per_class` images per class, classes
/// interleaved, fully determined by the RNG stream.
pub fn gen_synthetic_oriented<S: Scalar>(
    spec: &SyntheticOrientedSpec,
    image_size: usize,
    rng: &mut Rng,
) -> Dataset<S> {
    assert!(image_size >= 24, "synthetic images need at least 24 pixels");
    assert!(
        spec.classes >= 2 && spec.classes <= SHAPE_NAMES.len(),
        "2..=4 classes supported"
    );
    let mut images = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for _ in 0..spec.per_class {
        for class in 0..spec.classes {
            images.push(render::<S>(spec, class, image_size, rng));
            labels.push(class);
        }
    }
    Dataset {
        images,
        labels,
        class_names: SHAPE_NAMES
            .iter()
            .take(spec.classes)
            .map(|s| s.to_string())
            .collect(),
        skipped: 0,
    }
}
