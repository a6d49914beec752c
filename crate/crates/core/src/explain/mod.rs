//! Gradient-based explanations on a small convolutional classifier.
//!
//! The classifier works on synthetic single-channel "radiographs" where each
//! anomaly class is painted with a known pixel mask, so attributions can be
//! scored against ground truth.

mod attribution;
mod image;
mod network;
mod train;

pub use attribution::{
    class_activation_map, counterfactual, mask_overlap, saliency, CounterfactualOptions, CounterfactualTrace,
    SaliencyMap, SaliencyMethod,
};
pub use image::{generate_dataset, generate_image, DefectClass, SyntheticRadiograph, IMAGE_SIZE};
pub use network::{Forward, NetworkShape, Params, ToyClassifier};
pub use train::{accuracy, train, EpochStats, TrainOptions, TrainingRun};
