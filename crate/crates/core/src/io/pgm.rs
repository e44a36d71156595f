//! Binary (P5) portable graymap images with 8-bit samples.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "width and height must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                dimension: "pixel count",
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Copies the `w × h` rectangle whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("crop", "rectangle exceeds image bounds"));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::new(w, h, pixels)
    }

    pub fn mirror_horizontal(&self) -> GrayImage {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_exact_mut(self.width) {
            row.reverse();
        }
        GrayImage { pixels, ..*self }
    }

    /// `(1, 1, h, w)` tensor with samples mapped to `v / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&v| f32::from(v) / 255.0).collect();
        Tensor::new(Shape::new(1, 1, self.height, self.width), data).expect("image dimensions are positive")
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
        let mut cursor = Header { bytes, pos: 0 };
        if bytes.get(..2) != Some(b"P5") {
            return Err(Error::format("PGM", "missing P5 magic"));
        }
        cursor.pos = 2;
        let width = cursor.token("width")?;
        let height = cursor.token("height")?;
        let maxval = cursor.token("maxval")?;
        if maxval != 255 {
            return Err(Error::format("PGM", format!("maxval must be 255, got {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::format("PGM", "missing whitespace after maxval")),
        }
        let raster = &bytes[cursor.pos..];
        let expected = width * height;
        if raster.len() < expected {
            return Err(Error::format(
                "PGM",
                format!("truncated raster: expected {expected} bytes, found {}", raster.len()),
            ));
        }
        GrayImage::new(width, height, raster[..expected].to_vec())
            .map_err(|e| Error::format("PGM", e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
        Self::decode(&bytes).map_err(|e| e.at(path))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
        f.write_all(&self.encode()).map_err(|e| Error::from(e).at(path))
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Next decimal header token, skipping whitespace and `#` comments.
    fn token(&mut self, name: &str) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), None | Some(b'\n') | Some(b'\r')) {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("PGM", format!("header ended before {name}"))),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("PGM", format!("expected a number for {name}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PGM", format!("{name} out of range")))
    }
}

/// Reads a PGM straight to a `(1, 1, h, w)` tensor in `[0, 1]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(GrayImage::read(path)?.to_tensor())
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    image.write(path)
}
