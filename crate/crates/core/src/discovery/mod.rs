//! Latent-domain discovery: style codes, k-means and silhouette K selection.

pub mod assignment;
pub mod encoder;
pub mod kmeans;
pub mod silhouette;

pub use assignment::{partition_manifest, read_assignment, read_centroids, DomainAssignment};
pub use encoder::{
    extract_style_code, resize_to_native, style_code_from_features, FeatureExtractor, IdentityExtractor, StyleCode,
    StyleEncoder, STYLE_CHANNELS, STYLE_CODE_LEN,
};
pub use kmeans::{kmeans, KMeansConfig, KMeansFit};
pub use silhouette::{select_k, silhouette_score, KSelection};

use dha_nn::Scalar;

use crate::data::{Dataset, Manifest};
use crate::error::Result;

pub const DEFAULT_K_RANGE: [usize; 4] = [2, 3, 4, 5];

/// Fixed K or silhouette selection over a range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KChoice {
    Fixed(usize),
    Auto(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct Discovery<S> {
    pub assignment: DomainAssignment<S>,
    /// Silhouette per candidate K; empty when K was fixed.
    pub scores: Vec<(usize, S)>,
}

/// Style codes of every entry, resized to `native_side` first.
pub fn style_codes<S: Scalar, E: FeatureExtractor<S> + ?Sized>(
    dataset: &Dataset,
    entries: &Manifest,
    encoder: &E,
    native_side: usize,
) -> Result<Vec<StyleCode<S>>> {
    entries
        .entries
        .iter()
        .map(|e| {
            let img = resize_to_native(&dataset.load_image(e)?, native_side)?;
            extract_style_code(&img, encoder)
        })
        .collect()
}

/// Cluster precomputed codes of `ids`.
pub fn discover_from_codes<S: Scalar>(
    ids: &[String],
    codes: &[StyleCode<S>],
    k: &KChoice,
    seed: u64,
    config: &KMeansConfig,
) -> Result<Discovery<S>> {
    let points: Vec<Vec<S>> = codes.iter().map(|c| c.0.clone()).collect();
    let (fit, scores) = match k {
        KChoice::Fixed(k) => (kmeans(&points, *k, seed, config)?, Vec::new()),
        KChoice::Auto(range) => {
            let sel = select_k(&points, range, seed, config)?;
            let idx = sel.scores.iter().position(|&(k, _)| k == sel.best_k).expect("best K is scored");
            (sel.fits[idx].clone(), sel.scores)
        }
    };
    Ok(Discovery {
        assignment: DomainAssignment::from_fit(ids, &fit)?,
        scores,
    })
}
