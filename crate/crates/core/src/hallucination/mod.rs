//! Exemplar-guided translation of source images into each latent domain.

pub mod generator;
pub mod train;
pub mod translate;

pub use generator::{CodeNorm, Generator, EMBED_DIM};
pub use train::{train_hallucination, HallucinationConfig, HallucinationModels, HallucinationStep, TargetDomain};
pub use translate::{
    nearest_centroid, style_reflection, translate_all, translate_dataset, TranslatedEntry, TranslatedManifest, Translation,
};
