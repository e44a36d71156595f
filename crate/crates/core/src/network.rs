//! The counting network: a VGG-style front-end that reduces resolution by 8
//! through three 2×2 max-pools, a back-end of size-preserving dilated
//! convolutions whose rates are the searchable genes, and a 1×1 head that
//! emits the density map.
//!
//! Parameters live in one flat `f32` store so that SGD, checkpoints and
//! gradient checks all work on a single vector.

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::conv::{conv_backward, conv_forward};
use crate::tensor::{maxpool2, maxpool2_backward, relu, relu_backward, ConvView, PoolIndices, Shape, Tensor};

/// Total downsample factor of the front-end.
pub const OUTPUT_STRIDE: usize = 8;

/// Number of back-end layers (and so genes) in the desk-scale network.
pub const DESK_BACK_END_DEPTH: usize = 4;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        padding: usize,
    },
    MaxPool2,
    Relu,
}

impl LayerSpec {
    /// A `k × k` convolution padded so it preserves spatial size.
    pub fn same_conv(out_channels: usize, kernel: usize, dilation: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            dilation,
            ..
        } = *self
        {
            if out_channels == 0 {
                return Err(Error::invalid("layer", "conv needs at least one output channel"));
            }
            if kernel % 2 == 0 {
                return Err(Error::invalid("layer", format!("conv kernel size {kernel} must be odd")));
            }
            if dilation == 0 {
                return Err(Error::invalid("layer", "dilation rate must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub front_end: Vec<LayerSpec>,
    /// Convolutions only; each is followed by a ReLU.
    pub back_end: Vec<LayerSpec>,
    /// 1×1 convolution to a single channel, with no activation.
    pub head: LayerSpec,
}

/// One executable step of the flattened layer sequence.
#[derive(Clone, Debug, PartialEq)]
enum Op {
    Conv(ConvOp),
    Relu,
    Pool,
}

#[derive(Clone, Debug, PartialEq)]
struct ConvOp {
    kernel_shape: Shape,
    dilation: usize,
    padding: usize,
    weights: Range<usize>,
    bias: Range<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::invalid("model config", "input needs at least one channel"));
        }
        let pools = self.front_end.iter().filter(|l| **l == LayerSpec::MaxPool2).count();
        if pools != 3 {
            return Err(Error::invalid(
                "model config",
                format!("front-end must contain exactly 3 max-pool layers, found {pools}"),
            ));
        }
        for layer in self.front_end.iter().chain(&self.back_end) {
            layer.validate()?;
        }
        for layer in &self.back_end {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    dilation,
                    padding,
                    ..
                } if padding == dilation * (kernel - 1) / 2 => {}
                LayerSpec::Conv { .. } => {
                    return Err(Error::invalid("model config", "back-end convs must preserve spatial size"))
                }
                _ => return Err(Error::invalid("model config", "back-end may only contain convolutions")),
            }
        }
        match self.head {
            LayerSpec::Conv {
                out_channels: 1,
                kernel: 1,
                padding: 0,
                ..
            } => Ok(()),
            _ => Err(Error::invalid("model config", "head must be a 1x1 convolution to one channel")),
        }
    }

    /// Back-end dilation rates, in layer order.
    pub fn genes(&self) -> Vec<usize> {
        self.back_end
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { dilation, .. } => Some(*dilation),
                _ => None,
            })
            .collect()
    }

    pub fn conv_count(&self) -> usize {
        self.layers().filter(|l| matches!(l, LayerSpec::Conv { .. })).count()
    }

    /// Every layer in execution order, with the implicit back-end ReLUs.
    pub fn layers(&self) -> impl Iterator<Item = LayerSpec> + '_ {
        self.front_end
            .iter()
            .copied()
            .chain(self.back_end.iter().flat_map(|l| [*l, LayerSpec::Relu]))
            .chain(std::iter::once(self.head))
    }

    fn program(&self) -> Vec<Op> {
        let mut channels = self.in_channels;
        let mut offset = 0;
        self.layers()
            .map(|layer| match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    dilation,
                    padding,
                } => {
                    let kernel_shape = Shape::new(out_channels, channels, kernel, kernel);
                    let weights = offset..offset + kernel_shape.len();
                    let bias = weights.end..weights.end + out_channels;
                    offset = bias.end;
                    channels = out_channels;
                    Op::Conv(ConvOp {
                        kernel_shape,
                        dilation,
                        padding,
                        weights,
                        bias,
                    })
                }
                LayerSpec::MaxPool2 => Op::Pool,
                LayerSpec::Relu => Op::Relu,
            })
            .collect()
    }

    /// Per-conv-layer `(weights, bias)` ranges in the flat parameter store.
    pub fn parameter_layout(&self) -> Vec<(Range<usize>, Range<usize>)> {
        self.program()
            .into_iter()
            .filter_map(|op| match op {
                Op::Conv(c) => Some((c.weights, c.bias)),
                _ => None,
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout().last().map_or(0, |(_, b)| b.end)
    }

    /// Same network with the back-end dilation rates replaced by `genes`.
    pub fn with_genes(&self, genes: &[usize]) -> Result<ModelConfig> {
        if genes.len() != self.back_end.len() {
            return Err(Error::ShapeMismatch {
                dimension: "gene count",
                expected: self.back_end.len(),
                actual: genes.len(),
            });
        }
        let back_end = self
            .back_end
            .iter()
            .zip(genes)
            .map(|(l, &r)| match *l {
                LayerSpec::Conv {
                    out_channels, kernel, ..
                } => Ok(LayerSpec::same_conv(out_channels, kernel, r)),
                _ => Err(Error::invalid("model config", "back-end may only contain convolutions")),
            })
            .collect::<Result<_>>()?;
        let config = ModelConfig {
            back_end,
            ..self.clone()
        };
        config.validate()?;
        Ok(config)
    }
}

fn vgg_block(channels: &[usize]) -> Vec<LayerSpec> {
    channels
        .iter()
        .flat_map(|&c| [LayerSpec::same_conv(c, 3, 1), LayerSpec::Relu])
        .collect()
}

fn assemble(in_channels: usize, stages: &[&[usize]], back_end: &[usize], genes: &[usize]) -> Result<ModelConfig> {
    if genes.len() != back_end.len() {
        return Err(Error::ShapeMismatch {
            dimension: "gene count",
            expected: back_end.len(),
            actual: genes.len(),
        });
    }
    let mut front_end = Vec::new();
    for (i, stage) in stages.iter().enumerate() {
        front_end.extend(vgg_block(stage));
        if i < 3 {
            front_end.push(LayerSpec::MaxPool2);
        }
    }
    let config = ModelConfig {
        in_channels,
        front_end,
        back_end: back_end
            .iter()
            .zip(genes)
            .map(|(&c, &r)| LayerSpec::same_conv(c, 3, r))
            .collect(),
        head: LayerSpec::same_conv(1, 1, 1),
    };
    config.validate()?;
    Ok(config)
}

/// Desk-scale network on grayscale input: front-end 16,16,P,32,32,P,64,64,P;
/// back-end 64,64,32,16 with dilation rates `genes`; 1×1 head.
pub fn make_desk_config(genes: &[usize]) -> Result<ModelConfig> {
    assemble(1, &[&[16, 16], &[32, 32], &[64, 64]], &[64, 64, 32, 16], genes)
}

/// Back-end channel plan of the full-size network.
pub const FULL_SCALE_BACK_END: [usize; 8] = [1024, 1024, 512, 512, 512, 256, 128, 64];

/// Full-size network on RGB input: the first twelve VGG-19 convolutions
/// (pools after the 2nd, 4th and 8th) followed by the widened back-end.
/// Every back-end rate is 2; use [`ModelConfig::with_genes`] to change them.
pub fn make_paper_scale_config() -> ModelConfig {
    assemble(
        3,
        &[&[64, 64], &[128, 128], &[256, 256, 256, 256], &[512, 512, 512, 512]],
        &FULL_SCALE_BACK_END,
        &[2; 8],
    )
    .expect("built-in configuration is valid")
}

/// Flat parameter store for a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    values: Vec<f32>,
}

impl ModelWeights {
    pub fn from_values(config: &ModelConfig, values: Vec<f32>) -> Result<Self> {
        let expected = config.parameter_count();
        if values.len() != expected {
            return Err(Error::ShapeMismatch {
                dimension: "parameter count",
                expected,
                actual: values.len(),
            });
        }
        Ok(ModelWeights { values })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelWeights {
            values: vec![0.0; config.parameter_count()],
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How conv weights are drawn. Biases always start at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Every conv weight i.i.d. `N(0, std²)`.
    Gaussian { std: f32 },
    /// `N(0, 2 / fan_in)` for every hidden conv and `N(0, 0.01²)` for the
    /// output conv. Keeps activations alive through a deep randomly
    /// initialized stack, where a fixed small std decays to zero.
    #[default]
    FanIn,
}

impl InitScheme {
    pub const GAUSSIAN: InitScheme = InitScheme::Gaussian { std: INIT_STD };
}

/// Conv weights i.i.d. `N(0, 0.01²)` from a stream seeded by `seed`; biases zero.
pub fn init_weights(config: &ModelConfig, seed: u64) -> ModelWeights {
    init_weights_with(config, seed, InitScheme::GAUSSIAN)
}

pub fn init_weights_with_std(config: &ModelConfig, seed: u64, std: f32) -> ModelWeights {
    init_weights_with(config, seed, InitScheme::Gaussian { std })
}

pub fn init_weights_with(config: &ModelConfig, seed: u64, scheme: InitScheme) -> ModelWeights {
    let mut rng = rng::stream(seed, "init", &[]);
    let mut weights = ModelWeights::zeros(config);
    let layout = config.parameter_layout();
    let last = layout.len().saturating_sub(1);
    for (i, (w, b)) in layout.into_iter().enumerate() {
        let std = match scheme {
            InitScheme::Gaussian { std } => std,
            InitScheme::FanIn if i == last => INIT_STD,
            InitScheme::FanIn => (2.0 / (w.len() / b.len()) as f32).sqrt(),
        };
        let normal = Normal::new(0.0f32, std).expect("standard deviation is finite and non-negative");
        for v in &mut weights.values[w] {
            *v = normal.sample(&mut rng);
        }
    }
    weights
}

/// Intermediate values kept from a forward pass for the backward pass.
pub struct Trace {
    /// Input to each op, in execution order.
    inputs: Vec<Tensor>,
    pools: Vec<Option<PoolIndices>>,
    output: Tensor,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn check_input(config: &ModelConfig, weights: &ModelWeights, input: &Tensor) -> Result<()> {
    let s = input.shape();
    if s.channels != config.in_channels {
        return Err(Error::ShapeMismatch {
            dimension: "input channels",
            expected: config.in_channels,
            actual: s.channels,
        });
    }
    for (what, value) in [("input height", s.height), ("input width", s.width)] {
        if value % OUTPUT_STRIDE != 0 {
            return Err(Error::NotDivisible {
                what,
                value,
                factor: OUTPUT_STRIDE,
            });
        }
    }
    if weights.len() != config.parameter_count() {
        return Err(Error::ShapeMismatch {
            dimension: "parameter count",
            expected: config.parameter_count(),
            actual: weights.len(),
        });
    }
    Ok(())
}

fn view<'a>(op: &ConvOp, params: &'a [f32]) -> ConvView<'a> {
    ConvView {
        kernel: &params[op.weights.clone()],
        kernel_shape: op.kernel_shape,
        bias: &params[op.bias.clone()],
        dilation: op.dilation,
        padding: op.padding,
    }
}

/// Density map prediction, shape `(batch, 1, H/8, W/8)`.
pub fn forward(config: &ModelConfig, weights: &ModelWeights, input: &Tensor) -> Result<Tensor> {
    check_input(config, weights, input)?;
    let mut x = input.clone();
    for op in config.program() {
        x = match op {
            Op::Conv(c) => conv_forward(&x, view(&c, &weights.values))?,
            Op::Relu => relu(&x),
            Op::Pool => maxpool2(&x)?.0,
        };
    }
    Ok(x)
}

/// Forward pass that records what [`backward`] needs.
pub fn forward_trace(config: &ModelConfig, weights: &ModelWeights, input: &Tensor) -> Result<Trace> {
    check_input(config, weights, input)?;
    let program = config.program();
    let mut inputs = Vec::with_capacity(program.len());
    let mut pools = Vec::with_capacity(program.len());
    let mut x = input.clone();
    for op in &program {
        let (next, pool) = match op {
            Op::Conv(c) => (conv_forward(&x, view(c, &weights.values))?, None),
            Op::Relu => (relu(&x), None),
            Op::Pool => {
                let (y, idx) = maxpool2(&x)?;
                (y, Some(idx))
            }
        };
        inputs.push(std::mem::replace(&mut x, next));
        pools.push(pool);
    }
    Ok(Trace {
        inputs,
        pools,
        output: x,
    })
}

/// Gradient of `Σ upstream ⊙ output` with respect to every parameter, laid
/// out like [`ModelWeights`].
pub fn backward(config: &ModelConfig, weights: &ModelWeights, trace: &Trace, upstream: &Tensor) -> Result<Vec<f32>> {
    upstream.expect_shape(trace.output.shape())?;
    let program = config.program();
    let mut grads = vec![0.0f32; weights.len()];
    let mut g = upstream.clone();
    for (i, op) in program.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        g = match op {
            Op::Conv(c) => {
                let (gw, gb) = {
                    // Weights precede bias in the store.
                    let (head, tail) = grads.split_at_mut(c.bias.start);
                    (&mut head[c.weights.clone()], &mut tail[..c.bias.len()])
                };
                match conv_backward(input, view(c, &weights.values), &g, gw, gb, i > 0)? {
                    Some(gi) => gi,
                    None => break,
                }
            }
            Op::Relu => relu_backward(input, &g)?,
            Op::Pool => maxpool2_backward(trace.pools[i].as_ref().expect("pool op records indices"), &g)?,
        };
    }
    Ok(grads)
}

/// A configuration paired with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
}

impl Model {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.parameter_count() {
            return Err(Error::ShapeMismatch {
                dimension: "parameter count",
                expected: config.parameter_count(),
                actual: weights.len(),
            });
        }
        Ok(Model { config, weights })
    }

    pub fn initialized(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(&config, seed);
        Ok(Model { config, weights })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        forward(&self.config, &self.weights, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_shape() {
        let c = make_desk_config(&[2, 2, 2, 2]).unwrap();
        assert_eq!(c.back_end.len(), 4);
        assert_eq!(c.genes(), vec![2, 2, 2, 2]);
        assert_eq!(c.conv_count(), 6 + 4 + 1);
    }

    #[test]
    fn gene_paddings_preserve_size() {
        let c = make_desk_config(&[2, 3, 4, 5]).unwrap();
        let pads: Vec<usize> = c
            .back_end
            .iter()
            .map(|l| match l {
                LayerSpec::Conv { padding, .. } => *padding,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(pads, vec![2, 3, 4, 5]);
    }

    #[test]
    fn gene_count_mismatch_is_error() {
        assert!(make_desk_config(&[2, 2, 2]).is_err());
        let c = make_desk_config(&[2, 2, 2, 2]).unwrap();
        assert!(c.with_genes(&[1; 5]).is_err());
        assert_eq!(c.with_genes(&[1, 2, 3, 4]).unwrap().genes(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn full_scale_layer_counts() {
        let c = make_paper_scale_config();
        let convs = c.front_end.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
        let pools = c.front_end.iter().filter(|l| **l == LayerSpec::MaxPool2).count();
        assert_eq!((convs, pools), (12, 3));
        let front_channels: Vec<usize> = c
            .front_end
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(*out_channels),
                _ => None,
            })
            .collect();
        assert_eq!(front_channels, [64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512]);
        assert_eq!(c.genes(), vec![2; 8]);
        assert_eq!(c.in_channels, 3);
    }

    #[test]
    fn validation_catches_bad_configs() {
        let good = make_desk_config(&[1, 1, 1, 1]).unwrap();
        let mut c = good.clone();
        c.front_end.retain(|l| *l != LayerSpec::MaxPool2);
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.back_end[0] = LayerSpec::Conv {
            out_channels: 64,
            kernel: 3,
            dilation: 2,
            padding: 1,
        };
        assert!(c.validate().is_err());
        let mut c = good.clone();
        c.back_end[1] = LayerSpec::same_conv(64, 4, 1);
        assert!(c.validate().is_err());
        let mut c = good;
        c.head = LayerSpec::same_conv(2, 1, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let c = make_desk_config(&[2, 2, 2, 2]).unwrap();
        let a = init_weights(&c, 3);
        assert_eq!(a, init_weights(&c, 3));
        assert_ne!(a, init_weights(&c, 4));
        for (_, b) in c.parameter_layout() {
            assert!(a.values()[b].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn output_is_one_eighth() {
        let c = make_desk_config(&[2, 3, 4, 5]).unwrap();
        let w = init_weights(&c, 1);
        let x = Tensor::full(Shape::new(2, 1, 64, 64), 0.5);
        assert_eq!(forward(&c, &w, &x).unwrap().shape(), Shape::new(2, 1, 8, 8));
        let x = Tensor::full(Shape::new(1, 1, 24, 40), 0.5);
        assert_eq!(forward(&c, &w, &x).unwrap().shape(), Shape::new(1, 1, 3, 5));
    }

    #[test]
    fn zero_weights_predict_zero() {
        let c = make_desk_config(&[2, 2, 2, 2]).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, y, x| (y * x) as f32 / 1024.0);
        let out = forward(&c, &ModelWeights::zeros(&c), &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_input_and_wrong_weights() {
        let c = make_desk_config(&[2, 2, 2, 2]).unwrap();
        let w = ModelWeights::zeros(&c);
        assert!(matches!(
            forward(&c, &w, &Tensor::zeros(Shape::new(1, 1, 20, 32))),
            Err(Error::NotDivisible { value: 20, .. })
        ));
        let short = ModelWeights { values: vec![0.0; 10] };
        assert!(forward(&c, &short, &Tensor::zeros(Shape::new(1, 1, 32, 32))).is_err());
        assert!(ModelWeights::from_values(&c, vec![0.0; 10]).is_err());
    }

    #[test]
    fn trace_output_matches_forward() {
        let c = make_desk_config(&[1, 2, 3, 1]).unwrap();
        let w = init_weights_with_std(&c, 9, 0.2);
        let x = Tensor::from_fn(Shape::new(1, 1, 32, 32), |_, _, y, x| ((y * 7 + x * 3) % 11) as f32 / 11.0);
        let t = forward_trace(&c, &w, &x).unwrap();
        assert_eq!(t.output(), &forward(&c, &w, &x).unwrap());
    }
}
