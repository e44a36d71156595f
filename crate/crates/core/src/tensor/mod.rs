//! Dense rank-4 tensors and the handful of layer kernels the network needs.
//!
//! Every tensor is laid out as `(batch, channels, height, width)` in row-major
//! order. Kernels are plain functions over immutable inputs; gradients are
//! provided per operation rather than through a general autodiff graph.

pub(crate) mod conv;
mod pool;
mod resize;

pub use conv::{conv2d_backward, conv2d_dilated, conv2d_plain, ConvGrads, ConvSpec, ConvView};
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
pub use resize::bilinear_resize;

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch", self.batch),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return Err(Error::invalid("shape", format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                dimension: "data length",
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Panics if any dimension is zero.
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        shape.validate().expect("tensor dimensions must be positive");
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        shape.validate().expect("tensor dimensions must be positive");
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A single-image, single-channel tensor from a row-major grid.
    pub fn from_grid(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Shape::new(1, 1, height, width), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((b * s.channels + c) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// The `(height × width)` plane of one channel of one batch item.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let start = self.index(b, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    /// Copies out batch item `b` as a batch-of-one tensor.
    pub fn batch_item(&self, b: usize) -> Tensor {
        let n = self.shape.channels * self.shape.plane();
        Tensor {
            shape: Shape {
                batch: 1,
                ..self.shape
            },
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(Error::Empty("tensor list"))?.shape;
        let mut data = Vec::new();
        let mut batch = 0;
        for t in items {
            let s = t.shape;
            for (dimension, expected, actual) in [
                ("channels", first.channels, s.channels),
                ("height", first.height, s.height),
                ("width", first.width, s.width),
            ] {
                if expected != actual {
                    return Err(Error::ShapeMismatch {
                        dimension,
                        expected,
                        actual,
                    });
                }
            }
            batch += s.batch;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape { batch, ..first }, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, expected: Shape) -> Result<()> {
        let s = self.shape;
        for (dimension, e, a) in [
            ("batch", expected.batch, s.batch),
            ("channels", expected.channels, s.channels),
            ("height", expected.height, s.height),
            ("width", expected.width, s.width),
        ] {
            if e != a {
                return Err(Error::ShapeMismatch {
                    dimension,
                    expected: e,
                    actual: a,
                });
            }
        }
        Ok(())
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of [`relu`]: passes `upstream` where the input was strictly
/// positive. The subgradient at zero is zero.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.expect_shape(input.shape)?;
    let data = input
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: input.shape,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dimension_and_wrong_length() {
        assert!(Tensor::new(Shape::new(1, 0, 2, 2), vec![]).is_err());
        let err = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn relu_clamps_negatives() {
        let t = Tensor::from_grid(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_is_zero_at_kink() {
        let x = Tensor::from_grid(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::from_grid(1, 3, vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::full(Shape::new(1, 2, 2, 2), 1.0);
        let b = Tensor::full(Shape::new(1, 2, 2, 2), 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.batch_item(0), a);
        assert_eq!(s.batch_item(1), b);
        let c = Tensor::full(Shape::new(1, 2, 3, 2), 0.0);
        assert!(matches!(
            Tensor::stack(&[a, c]),
            Err(Error::ShapeMismatch { dimension: "height", .. })
        ));
    }
}
