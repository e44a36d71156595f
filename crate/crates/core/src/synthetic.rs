//! Synthetic crowd scenes: bright Gaussian blobs ("heads") on a noisy dark
//! background, with the blob centers as annotations. Enough structure to
//! exercise the whole pipeline without a real dataset.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::Point;
use crate::io::manifest::{ANNOTATIONS_DIR, IMAGES_DIR};
use crate::io::{write_annotation_csv, DatasetManifest, GrayImage, Split};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    /// Square image side; a multiple of 8, at least 32.
    pub size: usize,
    pub min_heads: usize,
    pub max_heads: usize,
    /// Blob standard deviation range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Background noise amplitude as a fraction of full scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            size: 64,
            min_heads: 5,
            max_heads: 20,
            min_radius: 1.5,
            max_radius: 3.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || self.size % 8 != 0 {
            return Err(Error::invalid("scene size", format!("{} must be a multiple of 8 and at least 32", self.size)));
        }
        if self.min_heads > self.max_heads {
            return Err(Error::invalid("head range", "min exceeds max"));
        }
        if !(self.min_radius > 0.0) || self.min_radius > self.max_radius {
            return Err(Error::invalid("radius range", "must be positive and ordered"));
        }
        if !(0.0..=0.2).contains(&self.noise) {
            return Err(Error::invalid("noise", "must lie in [0, 0.2]"));
        }
        Ok(())
    }
}

const MIN_AMPLITUDE: f64 = 150.0;
const MAX_AMPLITUDE: f64 = 200.0;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Scene `index` of the stream defined by `spec.seed`. Blob centers sit on
/// pixel centers and are kept apart so each blob is a distinct local maximum.
pub fn generate_scene(spec: &SyntheticSceneSpec, index: u64) -> Result<(GrayImage, Vec<Point>)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "scene", &[index]);
    let n = spec.size;
    let heads = rng.random_range(spec.min_heads..=spec.max_heads);
    let margin = spec.max_radius.ceil() as usize;
    let separation = 2.0 * spec.max_radius + 2.0;

    let mut centers: Vec<(usize, usize)> = Vec::with_capacity(heads);
    for _ in 0..heads {
        let mut candidate = (0, 0);
        for _ in 0..PLACEMENT_ATTEMPTS {
            candidate = (rng.random_range(margin..n - margin), rng.random_range(margin..n - margin));
            let clear = centers.iter().all(|&(x, y)| {
                let (dx, dy) = (x as f64 - candidate.0 as f64, y as f64 - candidate.1 as f64);
                (dx * dx + dy * dy).sqrt() >= separation
            });
            if clear {
                break;
            }
        }
        centers.push(candidate);
    }

    let mut canvas: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() * spec.noise * 255.0).collect();
    for &(cx, cy) in &centers {
        let sigma = rng.random_range(spec.min_radius..=spec.max_radius);
        let amplitude = rng.random_range(MIN_AMPLITUDE..=MAX_AMPLITUDE);
        let reach = (4.0 * sigma).ceil() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if x < 0 || y < 0 || x >= n as isize || y >= n as isize {
                    continue;
                }
                let d2 = (dx * dx + dy * dy) as f64;
                canvas[y as usize * n + x as usize] += amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let pixels = canvas.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let points = centers.into_iter().map(|(x, y)| Point::new(x as f64, y as f64)).collect();
    Ok((GrayImage::new(n, n, pixels)?, points))
}

/// Writes `n_images` scenes into `<out_dir>/<split>/{images,annotations}`,
/// using scene indices `first_index..first_index + n_images`.
pub fn generate_synthetic_dataset(
    spec: &SyntheticSceneSpec,
    n_images: usize,
    first_index: u64,
    out_dir: impl AsRef<Path>,
    split: Split,
) -> Result<DatasetManifest> {
    let root = out_dir.as_ref();
    let dir = DatasetManifest::split_dir(root, split);
    for sub in [IMAGES_DIR, ANNOTATIONS_DIR] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::from(e).at(&d))?;
    }
    for i in 0..n_images as u64 {
        let index = first_index + i;
        let (image, points) = generate_scene(spec, index)?;
        let stem = format!("scene_{index:05}");
        image.write(dir.join(IMAGES_DIR).join(format!("{stem}.pgm")))?;
        write_annotation_csv(dir.join(ANNOTATIONS_DIR).join(format!("{stem}.csv")), &points)?;
    }
    DatasetManifest::scan(root, split)
}
