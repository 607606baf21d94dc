//! Cube and label rasters, normalization, patch extraction, augmentation,
//! few-shot splits and synthetic scenes.

mod patch;
mod raster;
mod split;
mod synth;

pub use patch::{
    augment, extract_patch, flip, normalize, reflect, Augmentation, NormStats, Sample, SampleSet,
};
pub use raster::{HyperCube, LabelRaster};
pub use split::{sample_split, SplitSpec};
pub use synth::{synth_cube, Prototype, SynthSpec};
