use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// An owned dilated-convolution layer: kernel `(out, in, kh, kw)`, one bias per
/// output channel, tap spacing `dilation` and symmetric zero `padding`. Stride
/// is always 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel: Tensor,
    pub bias: Vec<f32>,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(kernel: Tensor, bias: Vec<f32>, dilation: usize, padding: usize) -> Result<Self> {
        let spec = ConvSpec {
            kernel,
            bias,
            dilation,
            padding,
        };
        spec.view().validate()?;
        Ok(spec)
    }

    /// A zero-bias layer.
    pub fn without_bias(kernel: Tensor, dilation: usize, padding: usize) -> Result<Self> {
        let out = kernel.shape().batch;
        Self::new(kernel, vec![0.0; out], dilation, padding)
    }

    pub fn view(&self) -> ConvView<'_> {
        ConvView {
            kernel: self.kernel.data(),
            kernel_shape: self.kernel.shape(),
            bias: &self.bias,
            dilation: self.dilation,
            padding: self.padding,
        }
    }
}

/// Borrowed convolution parameters, used by the network to run layers
/// straight out of its flat weight store.
#[derive(Clone, Copy, Debug)]
pub struct ConvView<'a> {
    pub kernel: &'a [f32],
    /// `(out_channels, in_channels, kh, kw)`.
    pub kernel_shape: Shape,
    pub bias: &'a [f32],
    pub dilation: usize,
    pub padding: usize,
}

impl ConvView<'_> {
    fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(Error::invalid("dilation rate", "must be at least 1"));
        }
        if self.kernel.len() != self.kernel_shape.len() {
            return Err(Error::ShapeMismatch {
                dimension: "kernel length",
                expected: self.kernel_shape.len(),
                actual: self.kernel.len(),
            });
        }
        if self.bias.len() != self.kernel_shape.batch {
            return Err(Error::ShapeMismatch {
                dimension: "bias length",
                expected: self.kernel_shape.batch,
                actual: self.bias.len(),
            });
        }
        Ok(())
    }

    /// Effective extent `(k − 1)·r + 1` of a `k`-tap axis.
    pub fn footprint(&self, taps: usize) -> usize {
        (taps - 1) * self.dilation + 1
    }

    /// Output shape for `input`, after checking channel counts and that the
    /// dilated footprint fits inside the padded input.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        let k = self.kernel_shape;
        if input.channels != k.channels {
            return Err(Error::ShapeMismatch {
                dimension: "input channels",
                expected: k.channels,
                actual: input.channels,
            });
        }
        let mut out = [0usize; 2];
        for (i, (axis, extent, taps)) in [
            ("height", input.height, k.height),
            ("width", input.width, k.width),
        ]
        .into_iter()
        .enumerate()
        {
            let padded = extent + 2 * self.padding;
            let footprint = self.footprint(taps);
            if footprint > padded {
                return Err(Error::FootprintExceedsInput {
                    axis,
                    footprint,
                    extent: padded,
                });
            }
            out[i] = padded - footprint + 1;
        }
        Ok(Shape::new(input.batch, k.batch, out[0], out[1]))
    }

    #[inline]
    fn weight(&self, oc: usize, ic: usize, ki: usize, kj: usize) -> f32 {
        let k = &self.kernel_shape;
        self.kernel[((oc * k.channels + ic) * k.height + ki) * k.width + kj]
    }

    /// Input offset of tap `k` relative to the output coordinate.
    #[inline]
    fn tap_offset(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.padding as isize
    }
}

/// Range of output coordinates `o` for which `o + offset` lands in `[0, input_len)`.
#[inline]
fn valid_range(output_len: usize, input_len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (input_len as isize - offset).clamp(0, output_len as isize) as usize;
    (lo.min(hi), hi)
}

/// Dilated 2-D convolution (cross-correlation):
///
/// `z[oc](m, n) = bias[oc] + Σ_ic Σ_i Σ_j x[ic](m + r·i − p, n + r·j − p) · w[oc, ic](i, j)`
///
/// with zero padding `p`. Each output value accumulates its taps in
/// `(ic, i, j)` order and adds the bias last, the same order as
/// [`conv2d_plain`], so that the two agree bit-for-bit at `r = 1`.
pub fn conv2d_dilated(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv_forward(input, spec.view())
}

pub(crate) fn conv_forward(input: &Tensor, conv: ConvView<'_>) -> Result<Tensor> {
    let out_shape = conv.output_shape(input.shape())?;
    let in_shape = input.shape();
    let k = conv.kernel_shape;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (ih, iw) = (in_shape.height, in_shape.width);
    let mut out = Tensor::zeros(out_shape);

    for b in 0..in_shape.batch {
        for oc in 0..k.batch {
            let start = out.index(b, oc, 0, 0);
            let out_plane = &mut out.data_mut()[start..start + oh * ow];
            for ic in 0..k.channels {
                let in_plane = input.plane(b, ic);
                for ki in 0..k.height {
                    let dy = conv.tap_offset(ki);
                    let (m_lo, m_hi) = valid_range(oh, ih, dy);
                    for kj in 0..k.width {
                        let dx = conv.tap_offset(kj);
                        let (n_lo, n_hi) = valid_range(ow, iw, dx);
                        if n_lo == n_hi {
                            continue;
                        }
                        let w = conv.weight(oc, ic, ki, kj);
                        let x_lo = (n_lo as isize + dx) as usize;
                        for m in m_lo..m_hi {
                            let y = (m as isize + dy) as usize;
                            let dst = &mut out_plane[m * ow + n_lo..m * ow + n_hi];
                            let src = &in_plane[y * iw + x_lo..y * iw + x_lo + (n_hi - n_lo)];
                            for (o, &x) in dst.iter_mut().zip(src) {
                                *o += w * x;
                            }
                        }
                    }
                }
            }
            let bias = conv.bias[oc];
            for o in out_plane.iter_mut() {
                *o += bias;
            }
        }
    }
    Ok(out)
}

/// Ordinary (undilated) convolution evaluated pixel by pixel.
///
/// Kept as an independent implementation so the dilated kernel can be
/// checked against it at `r = 1`.
pub fn conv2d_plain(input: &Tensor, kernel: &Tensor, bias: &[f32], padding: usize) -> Result<Tensor> {
    let view = ConvView {
        kernel: kernel.data(),
        kernel_shape: kernel.shape(),
        bias,
        dilation: 1,
        padding,
    };
    let out_shape = view.output_shape(input.shape())?;
    let k = kernel.shape();
    let (ih, iw) = (input.shape().height as isize, input.shape().width as isize);
    let p = padding as isize;
    Ok(Tensor::from_fn(out_shape, |b, oc, m, n| {
        let mut acc = 0.0f32;
        for ic in 0..k.channels {
            for ki in 0..k.height {
                let y = m as isize + ki as isize - p;
                if y < 0 || y >= ih {
                    continue;
                }
                for kj in 0..k.width {
                    let x = n as isize + kj as isize - p;
                    if x < 0 || x >= iw {
                        continue;
                    }
                    acc += kernel.at(oc, ic, ki, kj) * input.at(b, ic, y as usize, x as usize);
                }
            }
        }
        acc + bias[oc]
    }))
}

/// Gradients of a convolution with respect to its input, kernel, and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f32>,
}

pub fn conv2d_backward(input: &Tensor, spec: &ConvSpec, upstream: &Tensor) -> Result<ConvGrads> {
    let mut grad_kernel = vec![0.0; spec.kernel.shape().len()];
    let mut grad_bias = vec![0.0; spec.bias.len()];
    let grad_input = conv_backward(input, spec.view(), upstream, &mut grad_kernel, &mut grad_bias, true)?
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: grad_input,
        kernel: Tensor::new(spec.kernel.shape(), grad_kernel)?,
        bias: grad_bias,
    })
}

/// Adds the kernel and bias gradients into `grad_kernel` / `grad_bias` and
/// returns the input gradient when `want_input` is set.
pub(crate) fn conv_backward(
    input: &Tensor,
    conv: ConvView<'_>,
    upstream: &Tensor,
    grad_kernel: &mut [f32],
    grad_bias: &mut [f32],
    want_input: bool,
) -> Result<Option<Tensor>> {
    let out_shape = conv.output_shape(input.shape())?;
    upstream.expect_shape(out_shape)?;
    debug_assert_eq!(grad_kernel.len(), conv.kernel.len());
    debug_assert_eq!(grad_bias.len(), conv.bias.len());

    let in_shape = input.shape();
    let k = conv.kernel_shape;
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (ih, iw) = (in_shape.height, in_shape.width);

    for (oc, gb) in grad_bias.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for b in 0..in_shape.batch {
            acc += upstream.plane(b, oc).iter().map(|&g| f64::from(g)).sum::<f64>();
        }
        *gb += acc as f32;
    }

    for oc in 0..k.batch {
        for ic in 0..k.channels {
            for ki in 0..k.height {
                let dy = conv.tap_offset(ki);
                let (m_lo, m_hi) = valid_range(oh, ih, dy);
                for kj in 0..k.width {
                    let dx = conv.tap_offset(kj);
                    let (n_lo, n_hi) = valid_range(ow, iw, dx);
                    if n_lo == n_hi {
                        continue;
                    }
                    let x_lo = (n_lo as isize + dx) as usize;
                    let len = n_hi - n_lo;
                    let mut acc = 0.0f64;
                    for b in 0..in_shape.batch {
                        let g_plane = upstream.plane(b, oc);
                        let in_plane = input.plane(b, ic);
                        for m in m_lo..m_hi {
                            let y = (m as isize + dy) as usize;
                            acc += f64::from(dot(
                                &g_plane[m * ow + n_lo..m * ow + n_hi],
                                &in_plane[y * iw + x_lo..y * iw + x_lo + len],
                            ));
                        }
                    }
                    grad_kernel[((oc * k.channels + ic) * k.height + ki) * k.width + kj] += acc as f32;
                }
            }
        }
    }

    if !want_input {
        return Ok(None);
    }
    let mut grad_input = Tensor::zeros(in_shape);
    for b in 0..in_shape.batch {
        for ic in 0..k.channels {
            let start = grad_input.index(b, ic, 0, 0);
            let gin = &mut grad_input.data_mut()[start..start + ih * iw];
            for oc in 0..k.batch {
                let g_plane = upstream.plane(b, oc);
                for ki in 0..k.height {
                    let dy = conv.tap_offset(ki);
                    let (m_lo, m_hi) = valid_range(oh, ih, dy);
                    for kj in 0..k.width {
                        let dx = conv.tap_offset(kj);
                        let (n_lo, n_hi) = valid_range(ow, iw, dx);
                        if n_lo == n_hi {
                            continue;
                        }
                        let w = conv.weight(oc, ic, ki, kj);
                        let x_lo = (n_lo as isize + dx) as usize;
                        for m in m_lo..m_hi {
                            let y = (m as isize + dy) as usize;
                            let dst = &mut gin[y * iw + x_lo..y * iw + x_lo + (n_hi - n_lo)];
                            let src = &g_plane[m * ow + n_lo..m * ow + n_hi];
                            for (d, &g) in dst.iter_mut().zip(src) {
                                *d += w * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Some(grad_input))
}

/// Fixed-order dot product with eight independent lanes so it vectorizes
/// while staying deterministic.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lanes.iter().sum::<f32>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(size: usize, at: (usize, usize)) -> Tensor {
        Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| {
            if (y, x) == at {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn unit_kernel_is_identity_for_any_rate() {
        let input = Tensor::from_fn(Shape::new(2, 1, 5, 4), |b, _, y, x| (b * 20 + y * 4 + x) as f32 * 0.37);
        for r in 1..=4 {
            let spec = ConvSpec::without_bias(Tensor::full(Shape::new(1, 1, 1, 1), 1.0), r, 0).unwrap();
            assert_eq!(conv2d_dilated(&input, &spec).unwrap(), input);
        }
    }

    #[test]
    fn dilated_impulse_hits_nine_positions() {
        let input = impulse(7, (3, 3));
        let spec = ConvSpec::without_bias(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), 2, 0).unwrap();
        let out = conv2d_dilated(&input, &spec).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 3, 3));
        // m + 2i = 3 with i ∈ {0,1,2} has solutions m ∈ {1, 3}; m = 3 is off the
        // 3-wide grid, so within the output only m = 1 qualifies on each axis.
        let mut hits = 0;
        for m in 0..3 {
            for n in 0..3 {
                let covers = (0..3).any(|i| m + 2 * i == 3) && (0..3).any(|j| n + 2 * j == 3);
                assert_eq!(out.at(0, 0, m, n), if covers { 1.0 } else { 0.0 });
                hits += covers as usize;
            }
        }
        assert_eq!(hits, 1);
    }

    #[test]
    fn dilated_impulse_footprint_with_same_padding() {
        // With size-preserving padding the impulse spreads to a 3×3 lattice of
        // spacing r, spanning the 5×5 effective footprint at r = 2.
        let input = impulse(7, (3, 3));
        let spec = ConvSpec::without_bias(Tensor::full(Shape::new(1, 1, 3, 3), 1.0), 2, 2).unwrap();
        let out = conv2d_dilated(&input, &spec).unwrap();
        let nz: Vec<_> = (0..7)
            .flat_map(|m| (0..7).map(move |n| (m, n)))
            .filter(|&(m, n)| out.at(0, 0, m, n) != 0.0)
            .collect();
        assert_eq!(nz.len(), 9);
        for (m, n) in nz {
            assert!([1, 3, 5].contains(&m) && [1, 3, 5].contains(&n));
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let input = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let spec = ConvSpec::without_bias(Tensor::zeros(Shape::new(1, 3, 3, 3)), 1, 1).unwrap();
        let err = conv2d_dilated(&input, &spec).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { dimension: "input channels", expected: 3, actual: 2 }));
    }

    #[test]
    fn footprint_larger_than_input_is_rejected() {
        let input = Tensor::zeros(Shape::new(1, 1, 4, 8));
        let spec = ConvSpec::without_bias(Tensor::zeros(Shape::new(1, 1, 3, 3)), 3, 0).unwrap();
        let err = conv2d_dilated(&input, &spec).unwrap_err();
        assert!(matches!(
            err,
            Error::FootprintExceedsInput { axis: "height", footprint: 7, extent: 4 }
        ));
    }

    #[test]
    fn zero_dilation_is_rejected() {
        assert!(ConvSpec::without_bias(Tensor::zeros(Shape::new(1, 1, 3, 3)), 0, 0).is_err());
    }

    #[test]
    fn bias_is_added_per_output_channel() {
        let input = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let spec = ConvSpec::new(Tensor::zeros(Shape::new(2, 1, 3, 3)), vec![0.5, -1.0], 1, 1).unwrap();
        let out = conv2d_dilated(&input, &spec).unwrap();
        assert!(out.plane(0, 0).iter().all(|&v| v == 0.5));
        assert!(out.plane(0, 1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let input = Tensor::from_fn(Shape::new(1, 2, 6, 6), |_, c, y, x| (c + y * x) as f32);
        let spec = ConvSpec::without_bias(Tensor::full(Shape::new(3, 2, 3, 3), 0.3), 2, 2).unwrap();
        let g = conv2d_backward(&input, &spec, &Tensor::zeros(Shape::new(1, 3, 6, 6))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_backward_passes_upstream_through() {
        let input = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y + x) as f32);
        let upstream = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f32 - 3.0);
        let spec = ConvSpec::without_bias(Tensor::full(Shape::new(1, 1, 1, 1), 1.0), 3, 0).unwrap();
        let g = conv2d_backward(&input, &spec, &upstream).unwrap();
        assert_eq!(g.input, upstream);
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let input = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let spec = ConvSpec::without_bias(Tensor::zeros(Shape::new(1, 1, 3, 3)), 1, 0).unwrap();
        assert!(conv2d_backward(&input, &spec, &Tensor::zeros(Shape::new(1, 1, 5, 5))).is_err());
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.25).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        assert!((f64::from(dot(&a, &b)) - naive).abs() < 1e-4);
    }
}
