//! Translating the whole source set into every latent domain.
//!
//! Translated manifests are tab-separated: `source_image_id`, `domain_j`
//! (1-based), `exemplar_image_id`, `output_path` (relative to the manifest
//! directory unless absolute). Labels are the source masks, so none are written.

use std::fs;
use std::path::Path;

use dha_nn::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generator::Generator;
use super::train::TargetDomain;
use crate::data::Image;
use crate::discovery::encoder::{euclidean, extract_style_code, FeatureExtractor};
use crate::discovery::StyleCode;
use crate::error::{invalid, DhaError, IoContext, Result};
use crate::seed::derive;

pub const TRANSLATE_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslatedEntry {
    pub source_id: String,
    pub domain: usize,
    pub exemplar_id: String,
    pub output_path: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TranslatedManifest {
    pub entries: Vec<TranslatedEntry>,
}

impl TranslatedManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries translated into domain `j` (1-based).
    pub fn domain(&self, j: usize) -> Vec<&TranslatedEntry> {
        self.entries.iter().filter(|e| e.domain == j).collect()
    }

    pub fn num_domains(&self) -> usize {
        self.entries.iter().map(|e| e.domain).max().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\t{}\n", e.source_id, e.domain, e.exemplar_id, e.output_path))
            .collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| DhaError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let domain = f[1]
                .parse::<usize>()
                .ok()
                .filter(|&d| d >= 1)
                .ok_or_else(|| err(i + 1, format!("bad domain `{}`", f[1])))?;
            entries.push(TranslatedEntry {
                source_id: f[0].into(),
                domain,
                exemplar_id: f[2].into(),
                output_path: f[3].into(),
            });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DhaError::Missing(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path).at(path)?, path)
    }
}

/// One translated image: indices into the source list and domain j's exemplars.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub source: usize,
    pub exemplar: usize,
    pub image: Image,
}

/// Translate every source image into every domain, each with its own
/// exemplar drawn uniformly from that domain. Result is indexed `[j][i]`.
pub fn translate_all<S: Scalar>(
    generator: &Generator<S>,
    sources: &[&Image],
    domains: &[TargetDomain<S>],
    seed: u64,
) -> Result<Vec<Vec<Translation>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "translate-exemplars"));
    let mut out = Vec::with_capacity(domains.len());
    for (j, dom) in domains.iter().enumerate() {
        if dom.is_empty() {
            return invalid(format!("domain {} has no exemplars", j + 1));
        }
        let exemplars: Vec<usize> = (0..sources.len()).map(|_| rng.random_range(0..dom.len())).collect();
        let mut translated = Vec::with_capacity(sources.len());
        for (chunk, ex) in sources.chunks(TRANSLATE_BATCH).zip(exemplars.chunks(TRANSLATE_BATCH)) {
            let codes: Vec<&StyleCode<S>> = ex.iter().map(|&e| &dom.codes[e]).collect();
            translated.extend(generator.translate(chunk, &codes)?);
        }
        out.push(
            translated
                .into_iter()
                .zip(exemplars)
                .enumerate()
                .map(|(i, (image, exemplar))| Translation { source: i, exemplar, image })
                .collect(),
        );
    }
    Ok(out)
}

/// Write `K·N_S` translated PNGs under `out_dir/images` and their manifest.
pub fn translate_dataset<S: Scalar>(
    generator: &Generator<S>,
    source_ids: &[String],
    sources: &[&Image],
    domains: &[TargetDomain<S>],
    seed: u64,
    out_dir: &Path,
) -> Result<TranslatedManifest> {
    if source_ids.len() != sources.len() {
        return invalid("one id per source image required");
    }
    let all = translate_all(generator, sources, domains, seed)?;
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).at(&img_dir)?;
    let mut entries = Vec::with_capacity(all.len() * sources.len());
    for (j, set) in all.iter().enumerate() {
        for t in set {
            let rel = format!("images/{}_d{}.png", source_ids[t.source], j + 1);
            t.image.save_png(&out_dir.join(&rel))?;
            entries.push(TranslatedEntry {
                source_id: source_ids[t.source].clone(),
                domain: j + 1,
                exemplar_id: domains[j].ids[t.exemplar].clone(),
                output_path: rel,
            });
        }
    }
    Ok(TranslatedManifest { entries })
}

/// Index of the centroid nearest to `code`, ties to the lower index.
pub fn nearest_centroid<S: Scalar>(code: &StyleCode<S>, centroids: &[StyleCode<S>]) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (j, c) in centroids.iter().enumerate() {
        let d = euclidean(&code.0, &c.0);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Fraction of images in `translated[j]` whose style code is nearest to
/// centroid j.
pub fn style_reflection<S: Scalar, E: FeatureExtractor<S> + ?Sized>(
    translated: &[Vec<&Image>],
    centroids: &[StyleCode<S>],
    encoder: &E,
) -> Result<f64> {
    if translated.len() != centroids.len() {
        return invalid(format!("{} translated sets for {} centroids", translated.len(), centroids.len()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (j, set) in translated.iter().enumerate() {
        for img in set {
            let code = extract_style_code(img, encoder)?;
            hits += (nearest_centroid(&code, centroids) == Some(j)) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return invalid("no translated images");
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let m = TranslatedManifest {
            entries: vec![
                TranslatedEntry {
                    source_id: "s0".into(),
                    domain: 1,
                    exemplar_id: "c3".into(),
                    output_path: "images/s0_d1.png".into(),
                },
                TranslatedEntry {
                    source_id: "s0".into(),
                    domain: 2,
                    exemplar_id: "c9".into(),
                    output_path: "images/s0_d2.png".into(),
                },
            ],
        };
        let p = Path::new("t.tsv");
        assert_eq!(TranslatedManifest::parse(&m.to_text(), p).unwrap(), m);
        assert_eq!(m.num_domains(), 2);
        assert_eq!(m.domain(2).len(), 1);
        assert!(TranslatedManifest::parse("a\t0\tb\tc\n", p).is_err());
        assert!(TranslatedManifest::parse("a\t1\tb\n", p).is_err());
    }

    #[test]
    fn nearest_centroid_picks_closest() {
        let cs = vec![StyleCode(vec![0.0f64, 0.0]), StyleCode(vec![1.0, 1.0])];
        assert_eq!(nearest_centroid(&StyleCode(vec![0.9, 0.8]), &cs), Some(1));
        assert_eq!(nearest_centroid(&StyleCode(vec![0.5, 0.5]), &cs), Some(0));
        assert_eq!(nearest_centroid::<f64>(&StyleCode(vec![0.5, 0.5]), &[]), None);
    }
}
