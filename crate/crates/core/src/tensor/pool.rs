use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Flat input indices of the winning element of every 2×2 window, in output
/// order. Needed to route gradients back through [`maxpool2`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let s = input.shape();
    for (what, value) in [("pool input height", s.height), ("pool input width", s.width)] {
        if value % 2 != 0 {
            return Err(Error::OddDimension { what, value });
        }
    }
    let out_shape = Shape::new(s.batch, s.channels, s.height / 2, s.width / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = input.index(b, c, 0, 0);
            for y in 0..out_shape.height {
                for x in 0..out_shape.width {
                    let top = base + 2 * y * s.width + 2 * x;
                    let mut best = top;
                    for idx in [top + 1, top + s.width, top + s.width + 1] {
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        Tensor::new(out_shape, out)?,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2_backward(indices: &PoolIndices, upstream: &Tensor) -> Result<Tensor> {
    let s = indices.input_shape;
    upstream.expect_shape(Shape::new(s.batch, s.channels, s.height / 2, s.width / 2))?;
    let mut grad = Tensor::zeros(s);
    let g = grad.data_mut();
    for (&idx, &u) in indices.argmax.iter().zip(upstream.data()) {
        g[idx] += u;
    }
    Ok(grad)
}
