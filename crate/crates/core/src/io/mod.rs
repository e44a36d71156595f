//! File formats and dataset directories.

pub mod annotation;
pub mod checkpoint;
pub mod dmap;
pub mod manifest;
pub mod pgm;

pub use annotation::{decode_points, encode_points, read_annotation_csv, write_annotation_csv};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use dmap::{decode_dmap, encode_dmap, read_dmap, write_dmap};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use pgm::{read_pgm, write_pgm, GrayImage};
