pub mod config;
pub mod decode;
pub mod error;
pub mod geometry;
pub mod image;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod seeds;
pub mod stats;
pub mod synthdata;
pub mod trackeval;
pub mod train;

pub use config::{ExperimentConfig, Profile};
pub use decode::{Proposal, SelectConfig};
pub use error::{Error, Result};
pub use geometry::{iou, BBox, CropGeometry, CropSpec};
pub use image::Image;
pub use perturb::{Curve, SweepConfig, SweepGrid};
pub use synthdata::{Annotation, Sequence, Split};
pub use trackeval::{EvalConfig, EvalResult, TargetMode};
pub use train::{RunSetup, TrainConfig, Variant};
