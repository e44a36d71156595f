//! Crowd counting by density-map regression.
//!
//! The pipeline turns head annotations into geometry-adaptive Gaussian
//! density maps, trains a front-end / back-end convolutional network whose
//! back-end layers use dilated convolutions, scores it by count MAE/MSE, and
//! searches the back-end dilation rates with a genetic algorithm.
//!
//! Everything runs on the CPU in `f32` with hand-written kernels and
//! per-layer gradients, so the full pipeline is reproducible from a seed.

pub mod augmentation;
pub mod error;
pub mod ga;
pub mod ground_truth;
pub mod io;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use augmentation::{make_patches, Patch, PatchOrigin};
pub use error::{Error, Result};
pub use ga::{Chromosome, GaConfig, GenerationLog};
pub use ground_truth::{Annotation, DensityMap, GtConfig, Point};
pub use io::pgm::GrayImage;
pub use metrics::EvalReport;
pub use network::{InitScheme, LayerSpec, ModelConfig, ModelWeights};
pub use tensor::{Shape, Tensor};
pub use training::{EpochLog, Sample, TrainConfig};
