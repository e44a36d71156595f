//! Head annotations as CSV: an `x,y` header followed by one point per row.
//!
//! The CSV carries no image size, so readers take it from the paired image.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ground_truth::Point;

pub fn encode_points(points: &[Point]) -> String {
    let mut out = String::from("x,y\n");
    for p in points {
        // Shortest round-trip representation, so reading back is exact.
        writeln!(out, "{:?},{:?}", p.x, p.y).expect("writing to a String cannot fail");
    }
    out
}

pub fn decode_points(text: &str) -> Result<Vec<Point>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim().trim_start_matches('\u{feff}') == "x,y" => {}
        _ => return Err(Error::format("annotation CSV", "missing `x,y` header")),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            let field = fields
                .next()
                .ok_or_else(|| Error::format("annotation CSV", format!("row {row}: missing {name}")))?
                .trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format("annotation CSV", format!("row {row}: non-numeric {name} `{field}`")))
        };
        let x = next("x")?;
        let y = next("y")?;
        if fields.next().is_some() {
            return Err(Error::format("annotation CSV", format!("row {row}: too many fields")));
        }
        points.push(Point::new(x, y));
    }
    Ok(points)
}

pub fn read_annotation_csv(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    decode_points(&text).map_err(|e| e.at(path))
}

pub fn write_annotation_csv(path: impl AsRef<Path>, points: &[Point]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_points(points)).map_err(|e| Error::from(e).at(path))
}
