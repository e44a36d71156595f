//! Reference implementations written independently of the library kernels,
//! in f64 and with plain nested loops.

#![allow(dead_code)]

use dilacount_core::network::{LayerSpec, ModelConfig};
use dilacount_core::rng;
use dilacount_core::synthetic::{generate_scene, SyntheticSceneSpec};
use dilacount_core::ground_truth::{ground_truth, Annotation, GtConfig};
use dilacount_core::{Sample, Tensor};
use rand::Rng as _;

/// Channel-major `c × h × w` grid.
#[derive(Clone, Debug)]
pub struct Grid {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn from_tensor(t: &Tensor) -> Grid {
        let s = t.shape();
        assert_eq!(s.batch, 1);
        Grid {
            c: s.channels,
            h: s.height,
            w: s.width,
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// Direct evaluation of `z(m,n) = Σ_c Σ_i Σ_j x(c, m + r·i − p, n + r·j − p)·w(o,c,i,j) + b(o)`
/// with zero padding. `kernel` is `[o][c][i][j]`.
pub fn conv(x: &Grid, kernel: &[f64], bias: &[f64], out_c: usize, k: usize, r: usize, pad: usize) -> Grid {
    let oh = x.h + 2 * pad - (k - 1) * r;
    let ow = x.w + 2 * pad - (k - 1) * r;
    let mut data = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for m in 0..oh {
            for n in 0..ow {
                let mut z = 0.0;
                for c in 0..x.c {
                    for i in 0..k {
                        for j in 0..k {
                            let yy = (m + r * i) as isize - pad as isize;
                            let xx = (n + r * j) as isize - pad as isize;
                            if yy < 0 || xx < 0 || yy >= x.h as isize || xx >= x.w as isize {
                                continue;
                            }
                            z += x.at(c, yy as usize, xx as usize) * kernel[((o * x.c + c) * k + i) * k + j];
                        }
                    }
                }
                data[(o * oh + m) * ow + n] = z + bias.get(o).copied().unwrap_or(0.0);
            }
        }
    }
    Grid {
        c: out_c,
        h: oh,
        w: ow,
        data,
    }
}

pub fn relu(x: &Grid) -> Grid {
    Grid {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

pub fn maxpool(x: &Grid) -> Grid {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut data = Vec::with_capacity(x.c * h * w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.at(c, 2 * y + dy, 2 * xx + dx));
                    }
                }
                data.push(m);
            }
        }
    }
    Grid { c: x.c, h, w, data }
}

/// The network evaluated layer by layer on a flat parameter vector.
pub fn forward(config: &ModelConfig, params: &[f64], input: &Grid) -> Grid {
    forward_with_pattern(config, params, input).0
}

/// [`forward`], also returning the activation pattern: the sign of every
/// ReLU input and the winning slot of every pooling window. Two parameter
/// vectors with equal patterns lie in the same linear region.
pub fn forward_with_pattern(config: &ModelConfig, params: &[f64], input: &Grid) -> (Grid, Vec<u8>) {
    run_layers(config, params, input, 0)
}

/// Parameter offset at the start of each layer.
pub fn layer_offsets(config: &ModelConfig) -> Vec<usize> {
    let mut channels = config.in_channels;
    let mut offset = 0;
    config
        .layers()
        .map(|layer| {
            let start = offset;
            if let LayerSpec::Conv {
                out_channels, kernel, ..
            } = layer
            {
                offset += out_channels * channels * kernel * kernel + out_channels;
                channels = out_channels;
            }
            start
        })
        .collect()
}

/// Input to every layer, in order.
pub fn layer_inputs(config: &ModelConfig, params: &[f64], input: &Grid) -> Vec<Grid> {
    let layers: Vec<LayerSpec> = config.layers().collect();
    let offsets = layer_offsets(config);
    let mut inputs = vec![input.clone()];
    for (i, layer) in layers.iter().enumerate() {
        let (next, _) = apply(*layer, params, offsets[i], &inputs[i], None);
        inputs.push(next);
    }
    inputs.pop();
    inputs
}

/// Runs layers `start..` on `x`, the input of layer `start`, returning the
/// output and the pattern of those layers only. With `frozen`, every ReLU
/// and pool follows that pattern instead of its input, which evaluates the
/// linear piece the pattern belongs to.
pub fn run_layers(config: &ModelConfig, params: &[f64], x: &Grid, start: usize) -> (Grid, Vec<u8>) {
    run_layers_frozen(config, params, x, start, None)
}

pub fn run_layers_frozen(
    config: &ModelConfig,
    params: &[f64],
    x: &Grid,
    start: usize,
    frozen: Option<&[u8]>,
) -> (Grid, Vec<u8>) {
    let offsets = layer_offsets(config);
    let mut x = x.clone();
    let mut pattern = Vec::new();
    for (i, layer) in config.layers().enumerate().skip(start) {
        let fixed = frozen.map(|f| &f[pattern.len()..]);
        let (next, p) = apply(layer, params, offsets[i], &x, fixed);
        pattern.extend(p);
        x = next;
    }
    (x, pattern)
}

fn apply(layer: LayerSpec, params: &[f64], offset: usize, x: &Grid, frozen: Option<&[u8]>) -> (Grid, Vec<u8>) {
    match layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            dilation,
            padding,
        } => {
            let n = out_channels * x.c * kernel * kernel;
            let w = &params[offset..offset + n];
            let b = &params[offset + n..offset + n + out_channels];
            (conv(x, w, b, out_channels, kernel, dilation, padding), Vec::new())
        }
        LayerSpec::MaxPool2 => {
            let (h, w) = (x.h / 2, x.w / 2);
            let mut pattern = Vec::with_capacity(x.c * h * w);
            let mut data = Vec::with_capacity(x.c * h * w);
            for c in 0..x.c {
                for y in 0..h {
                    for xx in 0..w {
                        let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| x.at(c, 2 * y + dy, 2 * xx + dx));
                        let mut best = 0;
                        for k in 1..4 {
                            if window[k] > window[best] {
                                best = k;
                            }
                        }
                        let used = frozen.map_or(best, |f| f[pattern.len()] as usize);
                        pattern.push(best as u8);
                        data.push(window[used]);
                    }
                }
            }
            (Grid { c: x.c, h, w, data }, pattern)
        }
        LayerSpec::Relu => {
            let pattern: Vec<u8> = x.data.iter().map(|&v| u8::from(v > 0.0)).collect();
            let mask = frozen.unwrap_or(&pattern);
            let data = x.data.iter().zip(mask).map(|(&v, &m)| if m == 1 { v } else { 0.0 }).collect();
            (Grid { data, ..x.clone() }, pattern)
        }
    }
}

/// `(1/2)·Σ (pred − gt)²` for a single item.
pub fn half_sq(pred: &Grid, gt: &[f64]) -> f64 {
    pred.data.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / 2.0
}

/// Relative disagreement, with `floor` guarding near-zero pairs.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_tensor(rng: &mut rng::Rng, c: usize, h: usize, w: usize, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(dilacount_core::Shape::new(1, c, h, w), |_, _, _, _| rng.random_range(lo..hi))
}

/// Training samples for synthetic scenes `indices` at 1/8 scale.
pub fn synthetic_samples(spec: &SyntheticSceneSpec, indices: std::ops::Range<u64>) -> Vec<Sample> {
    indices
        .map(|i| {
            let (img, pts) = generate_scene(spec, i).unwrap();
            let ann = Annotation::new(pts, img.height, img.width).unwrap();
            Sample::new(img.to_tensor(), ground_truth(&ann, &GtConfig::default()).unwrap()).unwrap()
        })
        .collect()
}
