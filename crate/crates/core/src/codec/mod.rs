//! Mask packing, dataset layout and synthetic data.

pub mod dataset;
pub mod masks;
pub mod synth;

pub use dataset::{load_dataset, split_ids, Split};
pub use masks::{
    image_from_model_space, image_to_model_space, masks_to_model_space, pack, to_model_space,
    unpack, Attribute, Bitmap, MaskSet, ModelSample, SamplePair,
};
pub use synth::{synth_dataset, synth_sample, synth_samples};
