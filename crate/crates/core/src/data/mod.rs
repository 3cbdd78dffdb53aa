//! Image ingestion, preprocessing, augmentation, splitting and synthetic data.

pub mod augment;
pub mod image;
pub mod loader;
pub mod preprocess;
pub mod split;
pub mod synth;

pub use augment::{augment, augment_random, AugmentConfig, AugmentationOp, Axis};
pub use image::{decode_pgm, encode_pgm, load_pgm, save_pgm, ImageSample, MIN_TRAIN_SIDE};
pub use loader::{load_labelled_dir, load_unlabelled_dir, prepare, to_batch};
pub use preprocess::histogram_equalize;
pub use split::{split_dataset, stratum_sizes, DatasetSplit, Subset};
pub use synth::{synth_dataset, synth_from_templates, synth_mode, synth_templates, SynthSpec};
