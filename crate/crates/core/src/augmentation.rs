//! Training-patch extraction: the four quarters of an image, five random
//! quarter-size crops, and the horizontal mirror of each, for eighteen
//! patches per image.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ground_truth::{Annotation, Point};
use crate::io::GrayImage;
use crate::rng;

/// Where a patch came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub source: String,
    pub x0: usize,
    pub y0: usize,
    pub mirrored: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: GrayImage,
    /// Points in patch coordinates.
    pub annotation: Annotation,
    pub origin: PatchOrigin,
}

pub const RANDOM_CROPS: usize = 5;
pub const MIN_SIDE: usize = 16;

/// Top-left corners `(x0, y0)` of the four quarters: top-left, top-right,
/// bottom-left, bottom-right.
pub fn quarter_origins(height: usize, width: usize) -> [(usize, usize); 4] {
    let (h, w) = (height / 2, width / 2);
    [(0, 0), (w, 0), (0, h), (w, h)]
}

/// Copies the `w × h` window at `(x0, y0)`. A point belongs to the window iff
/// it lies in `[x0, x0 + w) × [y0, y0 + h)`.
pub fn crop_patch(
    image: &GrayImage,
    annotation: &Annotation,
    source: &str,
    (x0, y0): (usize, usize),
    (w, h): (usize, usize),
) -> Result<Patch> {
    let pixels = image.crop(x0, y0, w, h)?;
    let (fx, fy) = (x0 as f64, y0 as f64);
    let points = annotation
        .points
        .iter()
        .filter(|p| p.x >= fx && p.x < fx + w as f64 && p.y >= fy && p.y < fy + h as f64)
        .map(|p| Point::new(p.x - fx, p.y - fy))
        .collect();
    Ok(Patch {
        image: pixels,
        annotation: Annotation::new(points, h, w)?,
        origin: PatchOrigin {
            source: source.to_owned(),
            x0,
            y0,
            mirrored: false,
        },
    })
}

/// Mirrors a patch left to right; point `x` maps to `w − 1 − x`, matching the
/// pixel column mapping. Points in the last half-pixel would land just left
/// of zero and are clamped to the border.
pub fn mirror_patch(patch: &Patch) -> Patch {
    let w = patch.image.width as f64;
    let points = patch
        .annotation
        .points
        .iter()
        .map(|p| Point::new((w - 1.0 - p.x).max(0.0), p.y))
        .collect();
    Patch {
        image: patch.image.mirror_horizontal(),
        annotation: Annotation {
            points,
            ..patch.annotation.clone()
        },
        origin: PatchOrigin {
            mirrored: !patch.origin.mirrored,
            ..patch.origin.clone()
        },
    }
}

/// The eighteen training patches of one image: quarters 1–4, seeded random
/// crops 5–9, then the mirrors of 1–9 in the same order.
pub fn make_patches(image: &GrayImage, annotation: &Annotation, source: &str, seed: u64) -> Result<Vec<Patch>> {
    let (h, w) = (image.height, image.width);
    for (what, value) in [("image height", h), ("image width", w)] {
        if value < MIN_SIDE {
            return Err(Error::invalid("image", format!("{what} {value} is below the minimum of {MIN_SIDE}")));
        }
        if value % 2 != 0 {
            return Err(Error::OddDimension { what, value });
        }
    }
    if (annotation.height, annotation.width) != (h, w) {
        return Err(Error::invalid("annotation", "image size does not match the image"));
    }
    let size = (w / 2, h / 2);
    let mut rng = rng::stream(seed, "crop", &[]);
    let mut origins = quarter_origins(h, w).to_vec();
    for _ in 0..RANDOM_CROPS {
        origins.push((rng.random_range(0..=w - size.0), rng.random_range(0..=h - size.1)));
    }
    let mut patches = origins
        .into_iter()
        .map(|o| crop_patch(image, annotation, source, o, size))
        .collect::<Result<Vec<_>>>()?;
    let mirrored: Vec<Patch> = patches.iter().map(mirror_patch).collect();
    patches.extend(mirrored);
    Ok(patches)
}
