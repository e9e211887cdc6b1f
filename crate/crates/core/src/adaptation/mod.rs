//! Segmentation network F, output-space adversaries and the Adapt step.

pub mod seg;
pub mod train;

pub use seg::{SegNetwork, SegOutput, SEG_LAYERS};
pub use train::{disc_step, train_adapt, AdaptConfig, AdaptData, AdaptMode, AdaptModels, AdaptStep, Scheme};
