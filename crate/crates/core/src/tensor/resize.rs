use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Source sample positions for one axis: `(lower index, upper index, weight of upper)`.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with the half-pixel (align-corners = false) convention:
/// output sample `i` reads the source at `(i + 0.5)·in/out − 0.5`, clamped
/// to the edge.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target", "height and width must be at least 1"));
    }
    let s = input.shape();
    if (out_h, out_w) == (s.height, s.width) {
        return Ok(input.clone());
    }
    let rows = axis_taps(s.height, out_h);
    let cols = axis_taps(s.width, out_w);
    let out_shape = Shape::new(s.batch, s.channels, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let plane = input.plane(b, c);
            for &(y0, y1, wy) in &rows {
                for &(x0, x1, wx) in &cols {
                    let top = plane[y0 * s.width + x0] * (1.0 - wx) + plane[y0 * s.width + x1] * wx;
                    let bottom = plane[y1 * s.width + x0] * (1.0 - wx) + plane[y1 * s.width + x1] * wx;
                    out.push(top * (1.0 - wy) + bottom * wy);
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}
