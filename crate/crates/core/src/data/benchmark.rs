use std::fs;
use std::path::Path;

use super::image::Image;
use super::manifest::{write_manifest, Manifest, ManifestEntry, Split};
use super::scene::{generate_scene, SceneConfig};
use super::style::{apply_style, StylePreset};
use crate::error::{invalid, IoContext, Result};
use crate::seed::{splitmix64, SeedStream};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub n_source: usize,
    pub compound_styles: Vec<StylePreset>,
    pub n_per_style: usize,
    pub open_style: StylePreset,
    pub n_open: usize,
    pub master_seed: u64,
    pub scene: SceneConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_source: 300,
            compound_styles: StylePreset::COMPOUND.to_vec(),
            n_per_style: 150,
            open_style: StylePreset::Sunset,
            n_open: 100,
            master_seed: 0,
            scene: SceneConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn num_true_styles(&self) -> usize {
        self.compound_styles.len()
    }

    pub fn n_compound(&self) -> usize {
        self.n_per_style * self.compound_styles.len()
    }

    /// Ground-truth id of the open style (compound styles are `1..=K*`).
    pub fn open_style_id(&self) -> u32 {
        self.compound_styles.len() as u32 + 1
    }

    pub fn style_name(&self, id: u32) -> Option<&'static str> {
        let k = self.compound_styles.len() as u32;
        match id {
            0 => None,
            i if i <= k => Some(self.compound_styles[(i - 1) as usize].name()),
            i if i == k + 1 => Some(self.open_style.name()),
            _ => None,
        }
    }

    /// Scene seeds: source scenes take even offsets from a per-benchmark base,
    /// target scenes odd ones, so no scene content is shared across domains.
    fn scene_seed(&self, split: Split, index: usize) -> u64 {
        let base = splitmix64(self.master_seed);
        let offset = match split {
            Split::Source => 2 * index as u64,
            Split::Compound => 2 * index as u64 + 1,
            Split::Open => 2 * (self.n_compound() + index) as u64 + 1,
        };
        base.wrapping_add(offset)
    }
}

/// Render the benchmark into `out_dir` (`images/`, `masks/`, `manifest.tsv`).
pub fn build_benchmark(config: &BenchmarkConfig, out_dir: &Path) -> Result<Manifest> {
    if config.compound_styles.len() < 2 {
        return invalid("compound target needs at least 2 true styles");
    }
    let img_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    fs::create_dir_all(&img_dir).at(&img_dir)?;
    fs::create_dir_all(&mask_dir).at(&mask_dir)?;
    let mut style_seeds = SeedStream::new(config.master_seed, "style-jitter");

    let mut entries = Vec::with_capacity(config.n_source + config.n_compound() + config.n_open);
    let mut emit = |id: String, split: Split, style: Option<u32>, img: &Image, mask: &super::image::SegMask| -> Result<()> {
        let image_path = format!("images/{id}.png");
        let mask_path = format!("masks/{id}.png");
        img.save_png(&out_dir.join(&image_path))?;
        mask.save_png(&out_dir.join(&mask_path))?;
        entries.push(ManifestEntry {
            image_id: id,
            image_path,
            mask_path,
            split,
            true_style_id: style,
        });
        Ok(())
    };

    for i in 0..config.n_source {
        let (img, mask) = generate_scene(config.scene_seed(Split::Source, i), &config.scene)?;
        emit(format!("src_{i:04}"), Split::Source, None, &img, &mask)?;
    }
    let k = config.compound_styles.len();
    for i in 0..config.n_compound() {
        let style_idx = i % k;
        let (img, mask) = generate_scene(config.scene_seed(Split::Compound, i), &config.scene)?;
        let params = config.compound_styles[style_idx].params().jittered(style_seeds.next_seed());
        let styled = apply_style(&img, &params)?;
        emit(format!("cmp_{i:04}"), Split::Compound, Some(style_idx as u32 + 1), &styled, &mask)?;
    }
    for i in 0..config.n_open {
        let (img, mask) = generate_scene(config.scene_seed(Split::Open, i), &config.scene)?;
        let params = config.open_style.params().jittered(style_seeds.next_seed());
        let styled = apply_style(&img, &params)?;
        emit(format!("opn_{i:04}"), Split::Open, Some(config.open_style_id()), &styled, &mask)?;
    }

    let manifest = Manifest::new(entries)?;
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
