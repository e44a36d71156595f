//! Ground-truth density maps from head annotations.
//!
//! Each head becomes a Gaussian stamp whose width adapts to the local crowd
//! density: `σ_n = β · d̄_n`, where `d̄_n` is the mean distance from head `n`
//! to its `k` nearest annotated neighbours. Stamps are normalized to unit
//! mass inside the image, so a map integrates to the head count. Maps are
//! then sum-pooled down to the network's output resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A head position in pixel coordinates; pixel `(row, col)` has its center at
/// `(x = col, y = row)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub points: Vec<Point>,
    pub height: usize,
    pub width: usize,
}

impl Annotation {
    pub fn new(points: Vec<Point>, height: usize, width: usize) -> Result<Self> {
        let a = Annotation {
            points,
            height,
            width,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("annotation", "image size must be positive"));
        }
        for (i, p) in self.points.iter().enumerate() {
            let inside = p.x >= 0.0 && p.x < self.width as f64 && p.y >= 0.0 && p.y < self.height as f64;
            if !inside {
                return Err(Error::invalid(
                    "annotation",
                    format!(
                        "point {i} at ({}, {}) lies outside the {}x{} image",
                        p.x, p.y, self.width, self.height
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// A non-negative density grid. `scale` is the downsample factor relative to
/// the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    scale: usize,
    grid: Vec<f32>,
}

impl DensityMap {
    pub fn new(height: usize, width: usize, scale: usize, grid: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || scale == 0 {
            return Err(Error::invalid("density map", "dimensions and scale must be positive"));
        }
        if grid.len() != height * width {
            return Err(Error::ShapeMismatch {
                dimension: "density map length",
                expected: height * width,
                actual: grid.len(),
            });
        }
        if let Some(v) = grid.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("density map", format!("value {v} is negative or non-finite")));
        }
        Ok(DensityMap {
            height,
            width,
            scale,
            grid,
        })
    }

    pub fn zeros(height: usize, width: usize, scale: usize) -> Self {
        DensityMap {
            height,
            width,
            scale,
            grid: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn grid(&self) -> &[f32] {
        &self.grid
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.grid[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().map(|&v| f64::from(v)).sum()
    }

    /// As a `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, 1, self.height, self.width), self.grid.clone())
            .expect("density map dimensions are positive")
    }
}

/// Ground-truth generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtConfig {
    pub beta: f64,
    pub k: usize,
    pub downsample: usize,
    /// σ used for an image with a single head, where no neighbour exists.
    pub fallback_sigma: f64,
    /// Stamp half-width in multiples of σ.
    pub truncation: f64,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig {
            beta: 0.3,
            k: 3,
            downsample: 8,
            fallback_sigma: 15.0,
            truncation: 4.0,
        }
    }
}

impl GtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta", "must be positive"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if self.downsample == 0 {
            return Err(Error::invalid("downsample", "must be at least 1"));
        }
        if !(self.fallback_sigma > 0.0) || !(self.truncation > 0.0) {
            return Err(Error::invalid("gt config", "fallback sigma and truncation must be positive"));
        }
        Ok(())
    }
}

/// Mean distance from each point to its `min(k, N − 1)` nearest other points.
/// `None` marks a lone point with no neighbours.
pub fn knn_mean_distance(points: &[Point], k: usize) -> Result<Vec<Option<f64>>> {
    if points.is_empty() {
        return Err(Error::Empty("point list"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let used = k.min(points.len() - 1);
    if used == 0 {
        return Ok(vec![None]);
    }
    let mut dists = Vec::with_capacity(points.len() - 1);
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            dists.clear();
            dists.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| p.distance(q)),
            );
            dists.select_nth_unstable_by(used - 1, f64::total_cmp);
            let nearest = &mut dists[..used];
            nearest.sort_unstable_by(f64::total_cmp);
            Some(nearest.iter().sum::<f64>() / used as f64)
        })
        .collect())
}

/// Per-head kernel widths `σ_n = β·d̄_n`, with the fallback for lone heads.
pub fn adaptive_sigmas(points: &[Point], config: &GtConfig) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    Ok(knn_mean_distance(points, config.k)?
        .into_iter()
        .map(|d| d.map_or(config.fallback_sigma, |d| config.beta * d))
        .collect())
}

/// Full-resolution density map (scale 1).
pub fn generate_density_map(annotation: &Annotation, config: &GtConfig) -> Result<DensityMap> {
    annotation.validate()?;
    config.validate()?;
    let (h, w) = (annotation.height, annotation.width);
    let sigmas = adaptive_sigmas(&annotation.points, config)?;

    // Stamping in a canonical order makes the map independent of how the
    // annotation happens to be ordered.
    let mut order: Vec<usize> = (0..annotation.points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (annotation.points[a], annotation.points[b]);
        p.y.total_cmp(&q.y).then(p.x.total_cmp(&q.x))
    });

    let mut acc = vec![0.0f64; h * w];
    let mut stamp = Vec::new();
    for i in order {
        let p = annotation.points[i];
        add_stamp(&mut acc, &mut stamp, h, w, p, sigmas[i], config.truncation);
    }
    DensityMap::new(h, w, 1, acc.into_iter().map(|v| v as f32).collect())
}

/// Adds one unit-mass truncated Gaussian centered on `p` into `acc`.
fn add_stamp(
    acc: &mut [f64],
    stamp: &mut Vec<(usize, f64)>,
    h: usize,
    w: usize,
    p: Point,
    sigma: f64,
    truncation: f64,
) {
    stamp.clear();
    if sigma > 0.0 && sigma.is_finite() {
        let radius = truncation * sigma;
        let y_lo = (p.y - radius).ceil().max(0.0) as usize;
        let y_hi = (p.y + radius).floor().min((h - 1) as f64);
        let x_lo = (p.x - radius).ceil().max(0.0) as usize;
        let x_hi = (p.x + radius).floor().min((w - 1) as f64);
        if y_hi >= 0.0 && x_hi >= 0.0 {
            let denom = 2.0 * sigma * sigma;
            for y in y_lo..=y_hi as usize {
                let dy = y as f64 - p.y;
                for x in x_lo..=x_hi as usize {
                    let dx = x as f64 - p.x;
                    stamp.push((y * w + x, (-(dx * dx + dy * dy) / denom).exp()));
                }
            }
        }
    }
    let total: f64 = stamp.iter().map(|&(_, v)| v).sum();
    if total > 0.0 {
        for &(idx, v) in stamp.iter() {
            acc[idx] += v / total;
        }
    } else {
        // Degenerate width (coincident heads, or a kernel narrower than the
        // pixel grid): all mass goes to the nearest pixel.
        let y = (p.y.round() as usize).min(h - 1);
        let x = (p.x.round() as usize).min(w - 1);
        acc[y * w + x] += 1.0;
    }
}

/// Sum-pools `factor × factor` blocks, preserving the total count.
pub fn downsample_density(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor", "must be at least 1"));
    }
    for (what, value) in [("density map height", map.height), ("density map width", map.width)] {
        if value % factor != 0 {
            return Err(Error::NotDivisible { what, value, factor });
        }
    }
    if factor == 1 {
        return Ok(map.clone());
    }
    let (oh, ow) = (map.height / factor, map.width / factor);
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..map.height {
        let row = &map.grid[y * map.width..(y + 1) * map.width];
        let out_row = &mut out[(y / factor) * ow..(y / factor + 1) * ow];
        for (x, &v) in row.iter().enumerate() {
            out_row[x / factor] += f64::from(v);
        }
    }
    DensityMap::new(oh, ow, map.scale * factor, out.into_iter().map(|v| v as f32).collect())
}

/// Density map at the network output resolution: generation followed by the
/// configured downsample.
pub fn ground_truth(annotation: &Annotation, config: &GtConfig) -> Result<DensityMap> {
    let full = generate_density_map(annotation, config)?;
    downsample_density(&full, config.downsample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Point], k: usize) -> Vec<Option<f64>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| p.distance(q))
                    .collect();
                d.sort_by(f64::total_cmp);
                let used = k.min(d.len());
                (used > 0).then(|| d[..used].iter().sum::<f64>() / used as f64)
            })
            .collect()
    }

    #[test]
    fn two_points_use_single_neighbour() {
        let pts = [Point::new(0.0, 0.0), Point::new(6.0, 8.0)];
        assert_eq!(knn_mean_distance(&pts, 3).unwrap(), vec![Some(10.0), Some(10.0)]);
    }

    #[test]
    fn collinear_example() {
        let pts = [Point::new(0.0, 0.0), Point::new(3.0, 0.0), Point::new(9.0, 0.0)];
        assert_eq!(
            knn_mean_distance(&pts, 2).unwrap(),
            vec![Some(6.0), Some(4.5), Some(7.5)]
        );
    }

    #[test]
    fn lone_point_has_no_neighbours_and_empty_is_error() {
        assert_eq!(knn_mean_distance(&[Point::new(1.0, 1.0)], 3).unwrap(), vec![None]);
        assert!(matches!(knn_mean_distance(&[], 3), Err(Error::Empty(_))));
    }

    #[test]
    fn zero_heads_give_zero_map() {
        let a = Annotation::new(vec![], 16, 24).unwrap();
        let m = generate_density_map(&a, &GtConfig::default()).unwrap();
        assert_eq!(m.sum(), 0.0);
        assert_eq!((m.height(), m.width(), m.scale()), (16, 24, 1));
    }

    #[test]
    fn single_head_has_unit_mass_even_near_border() {
        for p in [Point::new(32.0, 32.0), Point::new(0.0, 0.0), Point::new(63.9, 10.2)] {
            let a = Annotation::new(vec![p], 64, 64).unwrap();
            let m = generate_density_map(&a, &GtConfig::default()).unwrap();
            assert!((m.sum() - 1.0).abs() < 1e-6, "{p:?}: {}", m.sum());
        }
    }

    #[test]
    fn coincident_heads_keep_their_mass() {
        let p = Point::new(10.0, 12.0);
        let a = Annotation::new(vec![p, p, Point::new(30.0, 30.0)], 40, 40).unwrap();
        let m = generate_density_map(&a, &GtConfig::default()).unwrap();
        assert!((m.sum() - 3.0).abs() < 1e-5);
    }

    #[test]
    fn out_of_image_point_is_rejected() {
        assert!(Annotation::new(vec![Point::new(16.0, 0.0)], 16, 16).is_err());
        assert!(Annotation::new(vec![Point::new(-0.1, 0.0)], 16, 16).is_err());
    }

    #[test]
    fn downsample_identity_and_block_sum() {
        let m = DensityMap::new(8, 8, 1, vec![1.0; 64]).unwrap();
        assert_eq!(downsample_density(&m, 1).unwrap(), m);
        let d = downsample_density(&m, 8).unwrap();
        assert_eq!((d.height(), d.width(), d.scale()), (1, 1, 8));
        assert_eq!(d.grid(), &[64.0]);
    }

    #[test]
    fn downsample_rejects_indivisible() {
        let m = DensityMap::zeros(12, 16, 1);
        assert!(matches!(
            downsample_density(&m, 8),
            Err(Error::NotDivisible { value: 12, factor: 8, .. })
        ));
    }

    #[test]
    fn negative_density_is_rejected() {
        assert!(DensityMap::new(1, 2, 1, vec![0.5, -0.1]).is_err());
    }

    fn point_sets() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..40)
    }

    proptest! {
        #[test]
        fn knn_matches_all_pairs_sort(pts in point_sets(), k in 1usize..6) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            prop_assert_eq!(knn_mean_distance(&pts, k).unwrap(), brute_knn(&pts, k));
        }

        #[test]
        fn knn_scales_exactly_with_power_of_two(pts in point_sets(), e in -3i32..4) {
            let c = 2f64.powi(e);
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let scaled: Vec<Point> = pts.iter().map(|p| Point::new(p.x * c, p.y * c)).collect();
            let a = knn_mean_distance(&pts, 3).unwrap();
            let b = knn_mean_distance(&scaled, 3).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert_eq!(u.map(|d| d * c), *v);
            }
        }

        #[test]
        fn map_is_permutation_invariant(pts in prop::collection::vec((0.0f64..48.0, 0.0f64..48.0), 0..25), rot in 0usize..25) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let mut shuffled = pts.clone();
            if !shuffled.is_empty() {
                let r = rot % shuffled.len();
                shuffled.rotate_left(r);
                shuffled.reverse();
            }
            let cfg = GtConfig::default();
            let a = generate_density_map(&Annotation::new(pts, 48, 48).unwrap(), &cfg).unwrap();
            let b = generate_density_map(&Annotation::new(shuffled, 48, 48).unwrap(), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn downsample_preserves_sum(vals in prop::collection::vec(0.0f32..1.0, 256)) {
            let m = DensityMap::new(16, 16, 1, vals).unwrap();
            for f in [1, 2, 4, 8, 16] {
                let d = downsample_density(&m, f).unwrap();
                prop_assert!((d.sum() - m.sum()).abs() <= 1e-4 * m.sum().max(1.0));
            }
        }
    }
}
