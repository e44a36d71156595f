//! Plain SGD on the pixel-wise Euclidean loss
//! `L = 1/(2D) · Σ_i ‖pred_i − gt_i‖²` over batches of `D` images.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::DensityMap;
use crate::metrics::{count_from_map, evaluate, EvalReport};
use crate::network::{backward, forward, forward_trace, ModelConfig, ModelWeights, OUTPUT_STRIDE};
use crate::rng;
use crate::tensor::{bilinear_resize, Shape, Tensor};

/// An input image `(1, C, H, W)` with its ground truth at `1/8` resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub density: DensityMap,
}

impl Sample {
    pub fn new(image: Tensor, density: DensityMap) -> Result<Self> {
        let s = image.shape();
        if s.batch != 1 {
            return Err(Error::ShapeMismatch {
                dimension: "sample batch",
                expected: 1,
                actual: s.batch,
            });
        }
        if density.scale() != OUTPUT_STRIDE {
            return Err(Error::invalid(
                "sample",
                format!("ground truth must be at scale {OUTPUT_STRIDE}, got {}", density.scale()),
            ));
        }
        for (dimension, image_len, map_len) in [
            ("ground truth height", s.height, density.height()),
            ("ground truth width", s.width, density.width()),
        ] {
            if map_len * OUTPUT_STRIDE != image_len {
                return Err(Error::ShapeMismatch {
                    dimension,
                    expected: image_len / OUTPUT_STRIDE,
                    actual: map_len,
                });
            }
        }
        Ok(Sample { image, density })
    }

    pub fn count(&self) -> f64 {
        self.density.sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 400,
            batch_size: 1,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning schedule for the full-size network with pretrained weights.
    pub fn full_scale() -> Self {
        TrainConfig {
            learning_rate: 1e-7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate", "must be positive and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the batch losses.
    pub loss: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    /// Wall time; the only field that is not reproducible.
    pub seconds: f64,
}

impl EpochLog {
    /// Everything except wall time.
    pub fn reproducible(&self) -> (usize, u64, u64, u64) {
        (
            self.epoch,
            self.loss.to_bits(),
            self.val_mae.to_bits(),
            self.val_mse.to_bits(),
        )
    }
}

pub const EPOCH_LOG_HEADER: &str = "epoch,loss,val_mae,val_mse,seconds";

pub fn encode_epoch_log(logs: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_LOG_HEADER}\n");
    for l in logs {
        writeln!(out, "{},{:?},{:?},{:?},{:.3}", l.epoch, l.loss, l.val_mae, l.val_mse, l.seconds)
            .expect("writing to a String cannot fail");
    }
    out
}

/// Parses an epoch log. Wall time comes back rounded to milliseconds.
pub fn decode_epoch_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(EPOCH_LOG_HEADER) {
        return Err(Error::format("epoch log", "missing header"));
    }
    let mut logs = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format("epoch log", format!("row {}: {what}", i + 1));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let num = |j: usize| fields[j].parse::<f64>().map_err(|_| bad("non-numeric field"));
        logs.push(EpochLog {
            epoch: fields[0].parse().map_err(|_| bad("bad epoch"))?,
            loss: num(1)?,
            val_mae: num(2)?,
            val_mse: num(3)?,
            seconds: num(4)?,
        });
    }
    Ok(logs)
}

pub fn write_epoch_log(path: impl AsRef<Path>, logs: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_epoch_log(logs)).map_err(|e| Error::from(e).at(path))
}

/// Loss `(1/2D)·Σ‖pred − gt‖²` and its gradient `(pred − gt)/D`, where `D` is
/// the batch size.
pub fn euclidean_loss(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    gt.expect_shape(pred.shape())?;
    let d = pred.shape().batch as f32;
    let mut sq = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let r = p - g;
            sq += f64::from(r) * f64::from(r);
            r / d
        })
        .collect();
    Ok((sq / (2.0 * f64::from(d)), Tensor::new(pred.shape(), grad)?))
}

/// `w ← w − lr·g`.
pub fn sgd_step(weights: &mut [f32], grads: &[f32], learning_rate: f32) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            dimension: "gradient length",
            expected: weights.len(),
            actual: grads.len(),
        });
    }
    for (w, &g) in weights.iter_mut().zip(grads) {
        *w -= learning_rate * g;
    }
    Ok(())
}

/// Resizes a density map to `(h, w)` and rescales it so its sum is unchanged.
pub fn resize_density(map: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let s = map.shape();
    if (s.height, s.width) == (h, w) {
        return Ok(map.clone());
    }
    let original = map.sum();
    let resized = bilinear_resize(map, h, w)?;
    let now = resized.sum();
    if now > 0.0 {
        let k = (original / now) as f32;
        Ok(resized.map(|v| v * k))
    } else {
        // Nothing survived interpolation; spread the count evenly.
        Ok(Tensor::full(resized.shape(), (original / (h * w) as f64) as f32))
    }
}

/// Stacks samples into one batch. Items whose size differs from the first
/// are bilinearly resized to it, with their ground truth rescaled to keep
/// its count.
pub fn make_batch(samples: &[&Sample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or(Error::Empty("batch"))?;
    let (ih, iw) = (first.image.shape().height, first.image.shape().width);
    let (gh, gw) = (first.density.height(), first.density.width());
    let mut images = Vec::with_capacity(samples.len());
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        images.push(bilinear_resize(&s.image, ih, iw)?);
        maps.push(resize_density(&s.density.to_tensor(), gh, gw)?);
    }
    Ok((Tensor::stack(&images)?, Tensor::stack(&maps)?))
}

/// Per-image counts on `samples` (batch size 1, no resizing).
pub fn validate(config: &ModelConfig, weights: &ModelWeights, samples: &[Sample]) -> Result<EvalReport> {
    let mut pred = Vec::with_capacity(samples.len());
    let mut gt = Vec::with_capacity(samples.len());
    for s in samples {
        let out = forward(config, weights, &s.image)?;
        pred.push(count_from_map(out.data())?);
        gt.push(s.count());
    }
    evaluate(&pred, &gt)
}

pub fn train(
    config: &ModelConfig,
    weights: ModelWeights,
    train_set: &[Sample],
    val_set: &[Sample],
    train_config: &TrainConfig,
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    train_with(config, weights, train_set, val_set, train_config, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    config: &ModelConfig,
    mut weights: ModelWeights,
    train_set: &[Sample],
    val_set: &[Sample],
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelWeights, Vec<EpochLog>)> {
    train_config.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }

    let mut logs = Vec::with_capacity(train_config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=train_config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        if train_config.shuffle {
            order.shuffle(&mut rng::stream(train_config.seed, "shuffle", &[epoch as u64]));
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let items: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (input, target) = make_batch(&items)?;
            let trace = forward_trace(config, &weights, &input)?;
            let (loss, grad) = euclidean_loss(trace.output(), &target)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let grads = backward(config, &weights, &trace, &grad)?;
            sgd_step(weights.values_mut(), &grads, train_config.learning_rate)?;
            loss_sum += loss;
            batches += 1;
        }
        let report = validate(config, &weights, val_set)?;
        let log = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            val_mae: report.mae,
            val_mse: report.mse,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((weights, logs))
}

/// Shape of the prediction for an input shape.
pub fn output_shape(input: Shape) -> Shape {
    Shape::new(input.batch, 1, input.height / OUTPUT_STRIDE, input.width / OUTPUT_STRIDE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_zero_when_equal() {
        let t = Tensor::from_fn(Shape::new(2, 1, 3, 3), |b, _, y, x| (b + y + x) as f32);
        let (l, g) = euclidean_loss(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_single_pixel() {
        let p = Tensor::from_grid(1, 1, vec![3.0]).unwrap();
        let g = Tensor::from_grid(1, 1, vec![1.0]).unwrap();
        let (l, grad) = euclidean_loss(&p, &g).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(grad.data(), &[2.0]);
    }

    #[test]
    fn duplicating_batch_keeps_loss() {
        let p = Tensor::from_fn(Shape::new(1, 1, 2, 3), |_, _, y, x| (y * 3 + x) as f32 * 0.5);
        let g = Tensor::from_fn(Shape::new(1, 1, 2, 3), |_, _, y, x| (x + 1) as f32 - y as f32);
        let (l1, _) = euclidean_loss(&p, &g).unwrap();
        let p2 = Tensor::stack(&[p.clone(), p]).unwrap();
        let g2 = Tensor::stack(&[g.clone(), g]).unwrap();
        let (l2, _) = euclidean_loss(&p2, &g2).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn loss_shape_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::zeros(Shape::new(1, 1, 2, 3));
        assert!(euclidean_loss(&a, &b).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut w = vec![1.0, 2.0];
        sgd_step(&mut w, &[10.0, -10.0], 0.0).unwrap();
        assert_eq!(w, vec![1.0, 2.0]);
        sgd_step(&mut w, &[10.0, -10.0], 0.1).unwrap();
        assert_eq!(w, vec![0.0, 3.0]);
        assert!(sgd_step(&mut w, &[1.0], 0.1).is_err());
    }

    #[test]
    fn resized_density_keeps_count() {
        let m = Tensor::from_fn(Shape::new(1, 1, 6, 10), |_, _, y, x| ((y * 10 + x) % 7) as f32 * 0.1);
        for (h, w) in [(3, 5), (8, 8), (12, 20), (1, 1)] {
            let r = resize_density(&m, h, w).unwrap();
            assert!((r.sum() - m.sum()).abs() <= 1e-3 * m.sum());
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::full_scale().learning_rate, 1e-7);
    }

    #[test]
    fn sample_requires_eighth_scale_truth() {
        let img = Tensor::zeros(Shape::new(1, 1, 16, 16));
        assert!(Sample::new(img.clone(), DensityMap::zeros(2, 2, 8)).is_ok());
        assert!(Sample::new(img.clone(), DensityMap::zeros(2, 2, 1)).is_err());
        assert!(Sample::new(img, DensityMap::zeros(2, 3, 8)).is_err());
    }

    #[test]
    fn epoch_log_csv_header() {
        let logs = [EpochLog { epoch: 1, loss: 0.5, val_mae: 1.25, val_mse: 2.0, seconds: 0.1234 }];
        assert_eq!(encode_epoch_log(&logs), "epoch,loss,val_mae,val_mse,seconds\n1,0.5,1.25,2.0,0.123\n");
    }
}
