//! Dataset directory layout.
//!
//! ```text
//! <root>/<split>/images/<stem>.pgm
//! <root>/<split>/annotations/<stem>.csv
//! <root>/<split>/density/<stem>.dmap      (optional, written by gen-gt)
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_truth::{ground_truth, Annotation, GtConfig};
use crate::io::{read_annotation_csv, read_dmap, GrayImage};
use crate::training::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("split", format!("unknown split `{other}`"))),
        }
    }
}

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_DIR: &str = "annotations";
pub const DENSITY_DIR: &str = "density";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stem: String,
    pub image: PathBuf,
    pub annotation: PathBuf,
    pub density: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    /// Sorted by stem.
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split_dir(root: &Path, split: Split) -> PathBuf {
        root.join(split.as_str())
    }

    /// Pairs every `images/*.pgm` with its `annotations/*.csv` by stem. A
    /// missing annotation is an error; a missing density map is not.
    pub fn scan(root: impl AsRef<Path>, split: Split) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let dir = Self::split_dir(&root, split);
        let images = dir.join(IMAGES_DIR);
        let mut stems = Vec::new();
        for entry in std::fs::read_dir(&images).map_err(|e| Error::from(e).at(&images))? {
            let path = entry.map_err(|e| Error::from(e).at(&images))?.path();
            if path.extension().is_some_and(|e| e == "pgm") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    stems.push(stem.to_owned());
                }
            }
        }
        stems.sort();
        let entries = stems
            .into_iter()
            .map(|stem| {
                let annotation = dir.join(ANNOTATIONS_DIR).join(format!("{stem}.csv"));
                if !annotation.is_file() {
                    return Err(Error::invalid("dataset", format!("no annotation for image `{stem}`")).at(&annotation));
                }
                let density = dir.join(DENSITY_DIR).join(format!("{stem}.dmap"));
                Ok(ManifestEntry {
                    image: images.join(format!("{stem}.pgm")),
                    annotation,
                    density: density.is_file().then_some(density),
                    stem,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DatasetManifest { root, split, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ManifestEntry {
    pub fn load_image(&self) -> Result<GrayImage> {
        GrayImage::read(&self.image)
    }

    pub fn load_annotation(&self, image: &GrayImage) -> Result<Annotation> {
        let points = read_annotation_csv(&self.annotation)?;
        Annotation::new(points, image.height, image.width).map_err(|e| e.at(&self.annotation))
    }

    /// Image tensor plus ground truth at `config.downsample`, preferring a
    /// stored density map at that scale.
    pub fn load_sample(&self, config: &GtConfig) -> Result<Sample> {
        let image = self.load_image()?;
        let density = match &self.density {
            Some(path) => {
                let map = read_dmap(path)?;
                if map.scale() != config.downsample {
                    return Err(Error::invalid(
                        "density map",
                        format!("stored scale {} differs from requested {}", map.scale(), config.downsample),
                    )
                    .at(path));
                }
                map
            }
            None => ground_truth(&self.load_annotation(&image)?, config)?,
        };
        Sample::new(image.to_tensor(), density)
    }
}

pub fn load_samples(manifest: &DatasetManifest, config: &GtConfig) -> Result<Vec<Sample>> {
    manifest.entries.iter().map(|e| e.load_sample(config)).collect()
}
