//! Flat `key = value` run configuration with per-stage content hashes.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::adaptation::{AdaptMode, Scheme};
use crate::data::{BenchmarkConfig, SceneConfig, StylePreset, NUM_CLASSES};
use crate::discovery::{KChoice, DEFAULT_K_RANGE};
use crate::error::{DhaError, IoContext, Result};
use crate::losses::LossWeights;

/// Floating-point type used for every network of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, found `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n_source: usize,
    pub n_per_style: usize,
    pub n_open: usize,
    pub compound_styles: Vec<StylePreset>,
    pub open_style: StylePreset,
    pub image_size: usize,
    /// `None` selects K by silhouette over `k_range`.
    pub k: Option<usize>,
    pub k_range: Vec<usize>,
    pub weights: LossWeights,
    pub scheme: Scheme,
    pub mode: AdaptMode,
    /// Source-only iterations of the frozen segmentation model used by the
    /// semantic loss.
    pub fseg_iterations: usize,
    pub hallucination_iterations: usize,
    /// `None` uses the scheme's iteration count.
    pub adapt_iterations: Option<usize>,
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        Self {
            master_seed: b.master_seed,
            n_source: b.n_source,
            n_per_style: b.n_per_style,
            n_open: b.n_open,
            compound_styles: b.compound_styles,
            open_style: b.open_style,
            image_size: b.scene.height,
            k: Some(3),
            k_range: DEFAULT_K_RANGE.to_vec(),
            weights: LossWeights::default(),
            scheme: Scheme::Short,
            mode: AdaptMode::DomainWise,
            fseg_iterations: 2000,
            hallucination_iterations: 2000,
            adapt_iterations: None,
            checkpoint_every: 500,
            precision: Precision::F32,
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Discover,
    Hallucinate,
    Adapt,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Data, Stage::Discover, Stage::Hallucinate, Stage::Adapt, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Discover => "discover",
            Stage::Hallucinate => "hallucinate",
            Stage::Adapt => "adapt",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn predecessor(self) -> Option<Stage> {
        match self {
            Stage::Data => None,
            Stage::Discover => Some(Stage::Data),
            Stage::Hallucinate => Some(Stage::Discover),
            Stage::Adapt => Some(Stage::Hallucinate),
            Stage::Evaluate => Some(Stage::Adapt),
        }
    }

    /// Keys whose values this stage depends on beyond its predecessor's.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Stage::Data => &[
                "master_seed",
                "n_source",
                "n_per_style",
                "n_open",
                "compound_styles",
                "open_style",
                "image_size",
            ],
            Stage::Discover => &["k", "k_range"],
            Stage::Hallucinate => &[
                "lambda_gan",
                "lambda_sem",
                "lambda_style",
                "fseg_iterations",
                "hallucination_iterations",
                "scalar",
            ],
            Stage::Adapt => &[
                "lambda_out",
                "lambda_task",
                "scheme",
                "mode",
                "adapt_iterations",
                "checkpoint_every",
            ],
            Stage::Evaluate => &[],
        }
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn config_err(key: &str, msg: impl Into<String>) -> DhaError {
    DhaError::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| config_err(key, format!("`{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

fn auto_str(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |n| n.to_string())
}

impl RunConfig {
    pub const KEYS: [&'static str; 22] = [
        "master_seed",
        "n_source",
        "n_per_style",
        "n_open",
        "compound_styles",
        "open_style",
        "image_size",
        "k",
        "k_range",
        "lambda_gan",
        "lambda_sem",
        "lambda_style",
        "lambda_out",
        "lambda_task",
        "scheme",
        "mode",
        "fseg_iterations",
        "hallucination_iterations",
        "adapt_iterations",
        "checkpoint_every",
        "scalar",
        "output_dir",
    ];

    /// Canonical textual value of `key`. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn value(&self, key: &str) -> Option<String> {
        let w = &self.weights;
        Some(match key {
            "master_seed" => self.master_seed.to_string(),
            "n_source" => self.n_source.to_string(),
            "n_per_style" => self.n_per_style.to_string(),
            "n_open" => self.n_open.to_string(),
            "compound_styles" => self.compound_styles.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
            "open_style" => self.open_style.name().into(),
            "image_size" => self.image_size.to_string(),
            "k" => auto_str(self.k),
            "k_range" => join(&self.k_range),
            "lambda_gan" => w.gan.to_string(),
            "lambda_sem" => w.sem.to_string(),
            "lambda_style" => w.style.to_string(),
            "lambda_out" => w.out.to_string(),
            "lambda_task" => w.task.to_string(),
            "scheme" => self.scheme.as_str().into(),
            "mode" => self.mode.as_str().into(),
            "fseg_iterations" => self.fseg_iterations.to_string(),
            "hallucination_iterations" => self.hallucination_iterations.to_string(),
            "adapt_iterations" => auto_str(self.adapt_iterations),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "scalar" => self.precision.as_str().into(),
            "output_dir" => self.output_dir.to_str()?.into(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "master_seed" => self.master_seed = parse_value(key, v)?,
            "n_source" => self.n_source = parse_value(key, v)?,
            "n_per_style" => self.n_per_style = parse_value(key, v)?,
            "n_open" => self.n_open = parse_value(key, v)?,
            "compound_styles" => self.compound_styles = parse_list(key, v)?,
            "open_style" => self.open_style = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "k" => self.k = parse_auto(key, v)?,
            "k_range" => self.k_range = parse_list(key, v)?,
            "lambda_gan" => w.gan = parse_value(key, v)?,
            "lambda_sem" => w.sem = parse_value(key, v)?,
            "lambda_style" => w.style = parse_value(key, v)?,
            "lambda_out" => w.out = parse_value(key, v)?,
            "lambda_task" => w.task = parse_value(key, v)?,
            "scheme" => self.scheme = parse_value(key, v)?,
            "mode" => self.mode = parse_value(key, v)?,
            "fseg_iterations" => self.fseg_iterations = parse_value(key, v)?,
            "hallucination_iterations" => self.hallucination_iterations = parse_value(key, v)?,
            "adapt_iterations" => self.adapt_iterations = parse_auto(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "scalar" => self.precision = parse_value(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.value(k).unwrap_or_default()))
            .collect()
    }

    /// Parse over the defaults: absent keys keep their default value,
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(config_err(key, "given more than once"));
            }
            seen.push(key);
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DhaError::Missing(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path).at(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).at(path)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_source", self.n_source),
            ("n_per_style", self.n_per_style),
            ("image_size", self.image_size),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(key, "must be positive"));
        }
        if self.image_size % 8 != 0 {
            return Err(config_err("image_size", "must be a multiple of 8"));
        }
        if self.compound_styles.is_empty() {
            return Err(config_err("compound_styles", "at least one style required"));
        }
        if self.k.is_some_and(|k| k < 2) {
            return Err(config_err("k", "at least 2 latent domains required"));
        }
        if self.k_range.is_empty() || self.k_range.iter().any(|&k| k < 2) {
            return Err(config_err("k_range", "candidates must all be at least 2"));
        }
        for (name, v) in self.weights.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(config_err(&format!("lambda_{name}"), "must be finite and non-negative"));
            }
        }
        if self.adapt_iterations == Some(0) {
            return Err(config_err("adapt_iterations", "must be positive or auto"));
        }
        if self.output_dir.to_str().is_none_or(|s| s.is_empty() || s.contains('\n')) {
            return Err(config_err("output_dir", "must be a non-empty UTF-8 path"));
        }
        Ok(())
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            n_source: self.n_source,
            compound_styles: self.compound_styles.clone(),
            n_per_style: self.n_per_style,
            open_style: self.open_style,
            n_open: self.n_open,
            master_seed: self.master_seed,
            scene: SceneConfig {
                height: self.image_size,
                width: self.image_size,
                num_classes: NUM_CLASSES,
            },
        }
    }

    pub fn k_choice(&self) -> KChoice {
        match self.k {
            Some(k) => KChoice::Fixed(k),
            None => KChoice::Auto(self.k_range.clone()),
        }
    }

    pub fn adapt_iterations(&self) -> usize {
        self.adapt_iterations.unwrap_or_else(|| self.scheme.iterations())
    }

    /// Content hash of everything `stage` and its predecessors depend on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        for s in Stage::ALL.into_iter().take_while(|&s| s <= stage) {
            h.update(format!("[{}]\n", s.as_str()));
            for key in s.keys() {
                let v = match *key {
                    "adapt_iterations" => self.adapt_iterations().to_string(),
                    k => self.value(k).expect("stage keys are config keys"),
                };
                h.update(format!("{key}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    /// `output_dir/<stage>-<hash prefix>`: configs that agree on a stage's
    /// inputs share its outputs.
    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.output_dir.join(format!("{}-{}", stage.as_str(), &self.stage_hash(stage)[..12]))
    }
}
