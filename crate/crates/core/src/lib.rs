//! Knowledge-guided power plant classification: a CNN branch over
//! GIS-derived binary spatial masks fused with a vision transformer over
//! satellite imagery, plus the data, training and evaluation pipeline
//! around it.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod label;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::{ClassLabel, NUM_CLASSES};
pub use manifest::{
    class_distribution, load_manifest, stratified_split, Manifest, SampleRecord, Split,
};
pub use mask::{mask_coverage, SpatialMask};
pub use model::{FusionModel, Mode, ModelConfig};
pub use tensor::ImageTensor;
