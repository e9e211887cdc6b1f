//! Synthetic compound-domain segmentation benchmark: scene rendering,
//! photometric styles, PNG/manifest I/O.

pub mod benchmark;
pub mod image;
pub mod manifest;
pub mod scene;
pub mod style;

pub use benchmark::{build_benchmark, BenchmarkConfig, MANIFEST_FILE};
pub use image::{batch_labels, batch_tensor, Image, SegMask};
pub use manifest::{read_manifest, write_manifest, Dataset, Manifest, ManifestEntry, Split};
pub use scene::{generate_scene, SceneConfig, CLASS_NAMES, NUM_CLASSES};
pub use style::{apply_style, StyleParams, StylePreset};
