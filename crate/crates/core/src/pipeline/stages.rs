//! The five pipeline stages. Each one reads its predecessor's directory,
//! writes its own, and finishes with a completion record.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dha_nn::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Precision, RunConfig, Stage};
use super::record::{digest_dir, StageRecord};
use crate::adaptation::{train_adapt, AdaptConfig, AdaptData, SegNetwork, SEG_LAYERS};
use crate::checkpoint::Checkpoint;
use crate::data::{build_benchmark, read_manifest, Dataset, Image, Manifest, SegMask, Split, MANIFEST_FILE, NUM_CLASSES};
use crate::discovery::{discover_from_codes, style_codes, DomainAssignment, KMeansConfig, StyleCode, StyleEncoder};
use crate::error::{DhaError, IoContext, Result};
use crate::evaluation::{
    adjusted_rand_index, aggregate_domains, biased_alignment_curves, evaluate, export_features, metrics_csv_rows,
    DomainMetrics, FeatureInput, StyleScore, StyleSet, METRICS_HEADER,
};
use crate::hallucination::{
    train_hallucination, translate_dataset, CodeNorm, Generator, HallucinationConfig, TargetDomain, TranslatedManifest,
};
use crate::nets::Network;
use crate::seed::derive;

pub const ASSIGNMENT_FILE: &str = "assignment.tsv";
pub const CENTROIDS_FILE: &str = "centroids.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const FSEG_CKPT: &str = "fseg.ckpt";
pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const HALLUCINATION_LOG: &str = "hallucination_log.csv";
pub const TRANSLATED_DIR: &str = "translated";
pub const ADAPT_LOG: &str = "adapt_log.csv";
pub const SNAPSHOT_DIR: &str = "checkpoints";
pub const FINAL_CKPT: &str = "seg.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SCORES_FILE: &str = "scores.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
/// Layer exported for feature visualisation.
pub const FEATURE_LAYER: &str = SEG_LAYERS[4];

/// Progress lines are best effort: a closed stdout must not fail a stage.
macro_rules! say {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub dir: PathBuf,
    /// True when a matching completion record made the stage a no-op.
    pub reused: bool,
}

/// Run `body` in the stage directory unless a matching record already
/// exists. A record whose hash or outputs disagree is an error; a directory
/// without a record is a crashed run and is rebuilt.
fn run_stage(
    cfg: &RunConfig,
    stage: Stage,
    out: &mut dyn Write,
    body: impl FnOnce(&Path, &mut dyn Write) -> Result<()>,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if let Some(prev) = stage.predecessor() {
        let prev_dir = cfg.stage_dir(prev);
        let rec = StageRecord::read(&prev_dir)?;
        rec.verify_hash(&prev_dir, &cfg.stage_hash(prev))?;
    }
    let dir = cfg.stage_dir(stage);
    let hash = cfg.stage_hash(stage);
    if StageRecord::path(&dir).exists() {
        StageRecord::read(&dir)?.verify(&dir, &hash)?;
        say!(out, "{}: up to date in {}", stage.as_str(), dir.display());
        return Ok(StageOutcome { dir, reused: true });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).at(&dir)?;
    }
    fs::create_dir_all(&dir).at(&dir)?;
    let start = Instant::now();
    body(&dir, out)?;
    let rec = StageRecord {
        stage,
        config_hash: hash,
        seed: cfg.master_seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        output_sha: digest_dir(&dir)?,
    };
    rec.write(&dir)?;
    say!(out, "{}: done in {:.1}s ({})", stage.as_str(), rec.wall_time_s, dir.display());
    Ok(StageOutcome { dir, reused: false })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).at(path)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(DhaError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).at(path)
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::open(&cfg.stage_dir(Stage::Data).join(MANIFEST_FILE))
}

fn load_labeled(ds: &Dataset, manifest: &Manifest) -> Result<Vec<(Image, SegMask)>> {
    manifest
        .entries
        .iter()
        .map(|e| Ok((ds.load_image(e)?, ds.load_mask(e, NUM_CLASSES)?)))
        .collect()
}

fn load_checkpoint<S: Scalar>(path: &Path, hash: &str) -> Result<Checkpoint<S>> {
    if !path.exists() {
        return Err(DhaError::Missing(path.to_path_buf()));
    }
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_hash(hash, path)?;
    Ok(ckpt)
}

fn load_seg<S: Scalar>(path: &Path, hash: &str) -> Result<SegNetwork<S>> {
    let ckpt = load_checkpoint::<S>(path, hash)?;
    let mut net = SegNetwork::new(&mut ChaCha8Rng::seed_from_u64(0), NUM_CLASSES);
    ckpt.load_params("seg", net.params_mut())?;
    Ok(net)
}

fn save_seg<S: Scalar>(net: &SegNetwork<S>, hash: &str, meta: &[(&str, String)], path: &Path) -> Result<()> {
    let mut ckpt = Checkpoint::new(hash);
    for (k, v) in meta {
        ckpt.meta.insert((*k).into(), v.clone());
    }
    ckpt.push_params("seg", net.params());
    ckpt.save(path)
}

// ---------------------------------------------------------------- data

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSummary {
    pub source: usize,
    pub compound: usize,
    pub open: usize,
}

impl DataSummary {
    pub fn total(&self) -> usize {
        self.source + self.compound + self.open
    }
}

pub fn cmd_generate_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<DataSummary> {
    let outcome = run_stage(cfg, Stage::Data, out, |dir, _| build_benchmark(&cfg.benchmark(), dir).map(|_| ()))?;
    let m = read_manifest(&outcome.dir.join(MANIFEST_FILE))?;
    let s = DataSummary {
        source: m.split(Split::Source).len(),
        compound: m.split(Split::Compound).len(),
        open: m.split(Split::Open).len(),
    };
    say!(out, "entries: source {}, compound {}, open {}, total {}", s.source, s.compound, s.open, s.total());
    Ok(s)
}

// ---------------------------------------------------------------- discover

#[derive(Clone, Debug, PartialEq)]
pub struct DiscoverSummary {
    pub k: usize,
    /// Silhouette per candidate K; empty for a fixed K.
    pub silhouette: Vec<(usize, f64)>,
    /// Agreement with ground-truth styles, when the manifest carries them.
    pub ari: Option<f64>,
    pub sizes: Vec<usize>,
}

impl DiscoverSummary {
    fn to_text(&self) -> String {
        let mut s = format!("k = {}\n", self.k);
        if let Some(ari) = self.ari {
            let _ = writeln!(s, "ari = {ari}");
        }
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "sizes = {}", sizes.join(","));
        for (k, v) in &self.silhouette {
            let _ = writeln!(s, "silhouette_{k} = {v}");
        }
        s
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize| DhaError::Parse {
            path: path.to_path_buf(),
            line,
            msg: "malformed discovery summary".into(),
        };
        let mut k = None;
        let mut ari = None;
        let mut sizes = Vec::new();
        let mut silhouette = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (key, v) = line.split_once(" = ").ok_or_else(|| bad(i + 1))?;
            match key {
                "k" => k = Some(v.parse().map_err(|_| bad(i + 1))?),
                "ari" => ari = Some(v.parse().map_err(|_| bad(i + 1))?),
                "sizes" => {
                    sizes = v.split(',').map(|n| n.parse().map_err(|_| bad(i + 1))).collect::<Result<_>>()?;
                }
                _ => {
                    let kk = key.strip_prefix("silhouette_").and_then(|n| n.parse().ok()).ok_or_else(|| bad(i + 1))?;
                    silhouette.push((kk, v.parse().map_err(|_| bad(i + 1))?));
                }
            }
        }
        Ok(Self {
            k: k.ok_or_else(|| bad(0))?,
            silhouette,
            ari,
            sizes,
        })
    }
}

/// The fixed random style encoder of a run.
pub fn style_encoder<S: Scalar>(cfg: &RunConfig) -> StyleEncoder<S> {
    StyleEncoder::new(derive(cfg.master_seed, "style-encoder"))
}

/// Compound entries with their style ids removed, as every training stage sees them.
fn compound_view(ds: &Dataset) -> Manifest {
    ds.manifest.split(Split::Compound).without_styles()
}

fn discover_impl<S: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let ds = dataset(cfg)?;
    let compound = compound_view(&ds);
    let codes: Vec<StyleCode<S>> = style_codes(&ds, &compound, &style_encoder::<S>(cfg), cfg.image_size)?;
    let ids: Vec<String> = compound.entries.iter().map(|e| e.image_id.clone()).collect();
    let found = discover_from_codes(&ids, &codes, &cfg.k_choice(), derive(cfg.master_seed, "kmeans"), &KMeansConfig::default())?;
    found.assignment.save(&dir.join(ASSIGNMENT_FILE), &dir.join(CENTROIDS_FILE))?;

    // ground truth is read only here, for reporting
    let truth: Option<Vec<u32>> = ds.manifest.split(Split::Compound).entries.iter().map(|e| e.true_style_id).collect();
    let ari = match truth {
        Some(t) => {
            let pred: Vec<usize> = ids.iter().map(|id| found.assignment.domain_of(id).expect("every id assigned")).collect();
            Some(adjusted_rand_index(&t, &pred)?)
        }
        None => None,
    };
    let summary = DiscoverSummary {
        k: found.assignment.centroids.len(),
        silhouette: found.scores.iter().map(|(k, v)| (*k, v.to_f64().unwrap())).collect(),
        ari,
        sizes: found.assignment.sizes(),
    };
    write_text(&dir.join(SUMMARY_FILE), &summary.to_text())
}

pub fn cmd_discover(cfg: &RunConfig, out: &mut dyn Write) -> Result<DiscoverSummary> {
    let outcome = run_stage(cfg, Stage::Discover, out, |dir, _| match cfg.precision {
        Precision::F32 => discover_impl::<f32>(cfg, dir),
        Precision::F64 => discover_impl::<f64>(cfg, dir),
    })?;
    let path = outcome.dir.join(SUMMARY_FILE);
    let s = DiscoverSummary::parse(&read_text(&path)?, &path)?;
    for (k, v) in &s.silhouette {
        say!(out, "silhouette K={k}: {v:.4}");
    }
    let ari = s.ari.map(|a| format!(", ARI {a:.4}")).unwrap_or_default();
    say!(out, "K = {}, domain sizes {:?}{ari}", s.k, s.sizes);
    Ok(s)
}

// ---------------------------------------------------------------- hallucinate

/// Latent domains as hallucination and adaptation see them.
struct Domains<S> {
    targets: Vec<TargetDomain<S>>,
}

fn load_domains<S: Scalar>(cfg: &RunConfig, ds: &Dataset) -> Result<Domains<S>> {
    let dir = cfg.stage_dir(Stage::Discover);
    let assignment = DomainAssignment::<S>::load(&dir.join(ASSIGNMENT_FILE), &dir.join(CENTROIDS_FILE))?;
    let compound = compound_view(ds);
    let enc = style_encoder::<S>(cfg);
    let mut targets = Vec::with_capacity(assignment.centroids.len());
    for j in 0..assignment.centroids.len() {
        let ids: Vec<String> = assignment.members(j + 1).into_iter().map(String::from).collect();
        let entries: Vec<_> = ids
            .iter()
            .map(|id| compound.get(id).cloned().ok_or_else(|| DhaError::Invalid(format!("assigned image `{id}` not in manifest"))))
            .collect::<Result<_>>()?;
        let sub = Manifest { entries };
        let images: Vec<Image> = sub.entries.iter().map(|e| ds.load_image(e)).collect::<Result<_>>()?;
        let codes = style_codes(ds, &sub, &enc, cfg.image_size)?;
        targets.push(TargetDomain { ids, images, codes });
    }
    Ok(Domains { targets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HallucinateSummary {
    /// Frozen f_seg mIoU on the raw source images.
    pub fseg_source_miou: f64,
    pub translated: usize,
}

fn source_only_net<S: Scalar>(cfg: &RunConfig, source: &[(Image, SegMask)], iterations: usize) -> Result<SegNetwork<S>> {
    let mut ac = AdaptConfig::new(crate::adaptation::AdaptMode::SourceOnly, cfg.scheme, derive(cfg.master_seed, "fseg"));
    ac.iterations = iterations;
    ac.checkpoint_every = iterations.max(1);
    let data = AdaptData {
        source,
        translated: &[],
        targets: &[],
    };
    if iterations == 0 {
        return Ok(crate::adaptation::AdaptModels::<S>::init(ac.seed, NUM_CLASSES, 0, ac.disc_width).seg);
    }
    Ok(train_adapt(&data, NUM_CLASSES, &ac, |_| {}, |_, _| Ok(()))?.seg)
}

fn source_set(ds: &Dataset) -> Result<(Vec<String>, Vec<(Image, SegMask)>)> {
    let m = ds.manifest.split(Split::Source);
    let ids = m.entries.iter().map(|e| e.image_id.clone()).collect();
    Ok((ids, load_labeled(ds, &m)?))
}

fn miou_on<S: Scalar>(net: &SegNetwork<S>, set: &[(Image, SegMask)]) -> Result<f64> {
    let style = StyleSet {
        style: "source".into(),
        split: Split::Source,
        ids: Vec::new(),
        images: set.iter().map(|p| p.0.clone()).collect(),
        masks: set.iter().map(|p| p.1.clone()).collect(),
    };
    crate::evaluation::confusion(net, &style)?.miou()
}

fn hallucinate_impl<S: Scalar>(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let hash = cfg.stage_hash(Stage::Hallucinate);
    let ds = dataset(cfg)?;
    let (source_ids, source) = source_set(&ds)?;
    let domains = load_domains::<S>(cfg, &ds)?;

    let f_seg = source_only_net::<S>(cfg, &source, cfg.fseg_iterations)?;
    let fseg_miou = miou_on(&f_seg, &source)?;
    say!(out, "f_seg: source mIoU {:.4} after {} iterations", fseg_miou, cfg.fseg_iterations);
    save_seg(&f_seg, &hash, &[("role", "f_seg".into())], &dir.join(FSEG_CKPT))?;

    let hc = HallucinationConfig {
        iterations: cfg.hallucination_iterations,
        weights: cfg.weights,
        seed: derive(cfg.master_seed, "hallucination"),
        ..HallucinationConfig::default()
    };
    let mut log = String::from("iteration,d_image,d_style,g_gan,g_sem,g_style,wall_time_s\n");
    let every = (cfg.hallucination_iterations / 10).max(1);
    let models = train_hallucination(&source, &domains.targets, &f_seg, &hc, |s| {
        let _ = writeln!(
            log,
            "{},{},{},{},{},{},{}",
            s.iteration, s.d_image, s.d_style, s.g_gan, s.g_sem, s.g_style, s.wall_time_s
        );
        if s.iteration % every == 0 {
            say!(out, "hallucinate {}/{}: D_I {:.4} D_Sty {:.4} G {:.4}/{:.4}/{:.4}", s.iteration, hc.iterations, s.d_image, s.d_style, s.g_gan, s.g_sem, s.g_style);
        }
    })?;
    write_text(&dir.join(HALLUCINATION_LOG), &log)?;
    save_generator(&models.generator, &hash, &dir.join(GENERATOR_CKPT))?;

    let refs: Vec<&Image> = source.iter().map(|p| &p.0).collect();
    let tdir = dir.join(TRANSLATED_DIR);
    let manifest = translate_dataset(&models.generator, &source_ids, &refs, &domains.targets, derive(cfg.master_seed, "translate"), &tdir)?;
    manifest.write(&tdir.join(MANIFEST_FILE))?;
    let summary = format!("fseg_source_miou = {fseg_miou}\ntranslated = {}\n", manifest.len());
    write_text(&dir.join(SUMMARY_FILE), &summary)
}

fn save_generator<S: Scalar>(g: &Generator<S>, hash: &str, path: &Path) -> Result<()> {
    let mut ckpt = Checkpoint::new(hash);
    ckpt.push_params("generator", g.params());
    let vec = |v: &[S]| dha_nn::Tensor::new(vec![v.len()], v.to_vec());
    ckpt.push("code_norm.mean", vec(&g.code_norm.mean)?);
    ckpt.push("code_norm.std", vec(&g.code_norm.std)?);
    ckpt.save(path)
}

/// Load a generator written by the hallucinate stage of `cfg`.
pub fn load_generator<S: Scalar>(cfg: &RunConfig) -> Result<Generator<S>> {
    let path = cfg.stage_dir(Stage::Hallucinate).join(GENERATOR_CKPT);
    let ckpt = load_checkpoint::<S>(&path, &cfg.stage_hash(Stage::Hallucinate))?;
    let get = |name: &str| {
        ckpt.get(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| DhaError::Invalid(format!("{}: no tensor `{name}`", path.display())))
    };
    let mean = get("code_norm.mean")?;
    let mut g = Generator::new(&mut ChaCha8Rng::seed_from_u64(0), mean.len());
    ckpt.load_params("generator", g.params_mut())?;
    g.code_norm = CodeNorm { mean, std: get("code_norm.std")? };
    Ok(g)
}

/// Load the frozen segmentation model written by the hallucinate stage.
pub fn load_fseg<S: Scalar>(cfg: &RunConfig) -> Result<SegNetwork<S>> {
    load_seg(&cfg.stage_dir(Stage::Hallucinate).join(FSEG_CKPT), &cfg.stage_hash(Stage::Hallucinate))
}

pub fn cmd_hallucinate(cfg: &RunConfig, out: &mut dyn Write) -> Result<HallucinateSummary> {
    let outcome = run_stage(cfg, Stage::Hallucinate, out, |dir, out| match cfg.precision {
        Precision::F32 => hallucinate_impl::<f32>(cfg, dir, out),
        Precision::F64 => hallucinate_impl::<f64>(cfg, dir, out),
    })?;
    let path = outcome.dir.join(SUMMARY_FILE);
    let text = read_text(&path)?;
    let field = |key: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
            .ok_or_else(|| DhaError::Parse {
                path: path.clone(),
                line: 0,
                msg: format!("missing `{key}`"),
            })
    };
    let bad = |_| DhaError::Parse {
        path: path.clone(),
        line: 0,
        msg: "malformed number".into(),
    };
    let s = HallucinateSummary {
        fseg_source_miou: field("fseg_source_miou")?.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        translated: field("translated")?.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
    };
    say!(out, "translated images: {}", s.translated);
    Ok(s)
}

// ---------------------------------------------------------------- adapt

fn adapt_impl<S: Scalar>(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let hash = cfg.stage_hash(Stage::Adapt);
    let ds = dataset(cfg)?;
    let (source_ids, source) = source_set(&ds)?;
    let domains = load_domains::<S>(cfg, &ds)?;
    let k = domains.targets.len();

    let translated = if cfg.mode.uses_translated() {
        let tdir = cfg.stage_dir(Stage::Hallucinate).join(TRANSLATED_DIR);
        let manifest = TranslatedManifest::read(&tdir.join(MANIFEST_FILE))?;
        let index: BTreeMap<&str, usize> = source_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut sets = Vec::with_capacity(k);
        for j in 1..=k {
            let set = manifest
                .domain(j)
                .into_iter()
                .map(|e| {
                    let i = *index
                        .get(e.source_id.as_str())
                        .ok_or_else(|| DhaError::Invalid(format!("translated image of unknown source `{}`", e.source_id)))?;
                    let p = Path::new(&e.output_path);
                    let img = Image::load_png(&if p.is_absolute() { p.to_path_buf() } else { tdir.join(p) })?;
                    Ok((img, source[i].1.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(set);
        }
        sets
    } else {
        Vec::new()
    };
    let targets: Vec<Vec<Image>> = domains.targets.into_iter().map(|d| d.images).collect();

    let mut ac = AdaptConfig::new(cfg.mode, cfg.scheme, derive(cfg.master_seed, "adapt"));
    ac.iterations = cfg.adapt_iterations();
    ac.checkpoint_every = cfg.checkpoint_every;
    ac.lambda_out = cfg.weights.out;
    ac.lambda_task = cfg.weights.task;
    let data = AdaptData {
        source: &source,
        translated: &translated,
        targets: &targets,
    };

    let snap_dir = dir.join(SNAPSHOT_DIR);
    fs::create_dir_all(&snap_dir).at(&snap_dir)?;
    let n_disc = cfg.mode.num_discriminators(k);
    let mut log = String::from("iteration,loss_task");
    for j in 1..=n_disc {
        let _ = write!(log, ",loss_out_{j}");
    }
    for j in 1..=n_disc {
        let _ = write!(log, ",loss_d_{j}");
    }
    log.push_str(",wall_time_s\n");
    let every = (ac.iterations / 10).max(1);
    let mode = cfg.mode.as_str().to_string();
    let mut out_lines = Vec::new();
    let models = train_adapt(
        &data,
        NUM_CLASSES,
        &ac,
        |s| {
            let _ = write!(log, "{},{}", s.iteration, s.loss_task);
            for v in s.loss_out.iter().chain(&s.loss_d) {
                let _ = write!(log, ",{v}");
            }
            let _ = writeln!(log, ",{}", s.wall_time_s);
            if s.iteration % every == 0 {
                out_lines.push(format!("adapt {}/{}: task {:.4} out {:?}", s.iteration, ac.iterations, s.loss_task, s.loss_out));
            }
        },
        |it, net: &SegNetwork<S>| {
            let meta = [("iteration", it.to_string()), ("mode", mode.clone())];
            save_seg(net, &hash, &meta, &snap_dir.join(format!("seg_{it:06}.ckpt")))
        },
    )?;
    for l in out_lines {
        say!(out, "{l}");
    }
    write_text(&dir.join(ADAPT_LOG), &log)?;
    let meta = [("iteration", ac.iterations.to_string()), ("mode", mode)];
    save_seg(&models.seg, &hash, &meta, &dir.join(FINAL_CKPT))
}

pub fn cmd_adapt(cfg: &RunConfig, out: &mut dyn Write) -> Result<StageOutcome> {
    run_stage(cfg, Stage::Adapt, out, |dir, out| match cfg.precision {
        Precision::F32 => adapt_impl::<f32>(cfg, dir, out),
        Precision::F64 => adapt_impl::<f64>(cfg, dir, out),
    })
}

/// The adapted network of `cfg`, refusing checkpoints of another config.
pub fn load_adapted<S: Scalar>(cfg: &RunConfig) -> Result<SegNetwork<S>> {
    load_seg(&cfg.stage_dir(Stage::Adapt).join(FINAL_CKPT), &cfg.stage_hash(Stage::Adapt))
}

/// Every periodic snapshot of the adapt stage, in iteration order.
pub fn load_snapshots<S: Scalar>(cfg: &RunConfig) -> Result<Vec<(usize, SegNetwork<S>)>> {
    let dir = cfg.stage_dir(Stage::Adapt).join(SNAPSHOT_DIR);
    let hash = cfg.stage_hash(Stage::Adapt);
    let mut found = Vec::new();
    for entry in fs::read_dir(&dir).at(&dir)? {
        let p = entry.at(&dir)?.path();
        let it = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seg_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(it) = it {
            found.push((it, p));
        }
    }
    found.sort();
    found.into_iter().map(|(it, p)| Ok((it, load_seg(&p, &hash)?))).collect()
}

// ---------------------------------------------------------------- evaluate

/// Labeled compound and open images grouped by ground-truth style.
pub fn style_sets(cfg: &RunConfig) -> Result<Vec<StyleSet>> {
    let ds = dataset(cfg)?;
    let bench = cfg.benchmark();
    let mut sets: BTreeMap<(Split, u32), StyleSet> = BTreeMap::new();
    for split in [Split::Compound, Split::Open] {
        for e in ds.manifest.split(split).entries {
            let id = e
                .true_style_id
                .ok_or_else(|| DhaError::Invalid(format!("evaluation image `{}` has no style id", e.image_id)))?;
            let name = bench
                .style_name(id)
                .ok_or_else(|| DhaError::Invalid(format!("unknown style id {id}")))?;
            let set = sets.entry((split, id)).or_insert_with(|| StyleSet {
                style: name.into(),
                split,
                ids: Vec::new(),
                images: Vec::new(),
                masks: Vec::new(),
            });
            set.images.push(ds.load_image(&e)?);
            set.masks.push(ds.load_mask(&e, NUM_CLASSES)?);
            set.ids.push(e.image_id);
        }
    }
    Ok(sets.into_values().collect())
}

fn scores_text(m: &DomainMetrics) -> String {
    let mut s = String::new();
    for (split, scores) in [(Split::Compound, &m.compound), (Split::Open, &m.open)] {
        for sc in scores {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", split, sc.style, sc.miou, sc.images);
        }
    }
    s
}

fn parse_scores(text: &str, path: &Path) -> Result<DomainMetrics> {
    let mut compound = Vec::new();
    let mut open = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = || DhaError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected split, style, miou, images".into(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let score = StyleScore {
            style: f[1].into(),
            miou: f[2].parse().map_err(|_| bad())?,
            images: f[3].parse().map_err(|_| bad())?,
        };
        match f[0].parse::<Split>().map_err(|_| bad())? {
            Split::Compound => compound.push(score),
            Split::Open => open.push(score),
            Split::Source => return Err(bad()),
        }
    }
    aggregate_domains(compound, open)
}

fn evaluate_impl<S: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let net = load_adapted::<S>(cfg)?;
    let sets = style_sets(cfg)?;
    let eval = evaluate(&net, &sets)?;
    let run_id = &cfg.stage_hash(Stage::Adapt)[..12];
    let mut csv = format!("{METRICS_HEADER}\n");
    csv.push_str(&metrics_csv_rows(run_id, cfg.adapt_iterations(), &eval));
    write_text(&dir.join(METRICS_FILE), &csv)?;
    write_text(&dir.join(SCORES_FILE), &scores_text(&eval.metrics))?;

    let snapshots = load_snapshots::<S>(cfg)?;
    if snapshots.len() >= 2 {
        biased_alignment_curves(&snapshots, &sets)?.write(dir)?;
    }

    let inputs: Vec<FeatureInput> = sets
        .iter()
        .flat_map(|s| {
            s.ids.iter().zip(&s.images).map(move |(id, img)| FeatureInput {
                image_id: id,
                split: s.split,
                style: None,
                image: img,
            })
        })
        .collect();
    let mut features = export_features(&net, &inputs, FEATURE_LAYER)?;
    // style ids come from the manifest, not from the network
    let ds = dataset(cfg)?;
    for row in &mut features.rows {
        row.style = ds.manifest.get(&row.image_id).and_then(|e| e.true_style_id);
    }
    write_text(&dir.join(FEATURES_FILE), &features.to_text())
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<DomainMetrics> {
    let outcome = run_stage(cfg, Stage::Evaluate, out, |dir, _| match cfg.precision {
        Precision::F32 => evaluate_impl::<f32>(cfg, dir),
        Precision::F64 => evaluate_impl::<f64>(cfg, dir),
    })?;
    let path = outcome.dir.join(SCORES_FILE);
    let m = parse_scores(&read_text(&path)?, &path)?;
    for s in m.compound.iter().chain(&m.open) {
        say!(out, "mIoU {:<8} {:.2}", s.style, 100.0 * s.miou);
    }
    say!(out, "mIoU C {:.2}  C+O {:.2}", 100.0 * m.c, 100.0 * m.c_plus_o);
    Ok(m)
}

/// generate → discover → hallucinate → adapt → evaluate.
pub fn cmd_run_all(cfg: &RunConfig, out: &mut dyn Write) -> Result<DomainMetrics> {
    cmd_generate_data(cfg, out)?;
    cmd_discover(cfg, out)?;
    cmd_hallucinate(cfg, out)?;
    cmd_adapt(cfg, out)?;
    cmd_evaluate(cfg, out)
}
