use std::fs;
use std::path::Path;

use dha::adaptation::AdaptMode;
use dha::data::MANIFEST_FILE;
use dha::pipeline::{
    cmd_ablate, cmd_adapt, cmd_discover, cmd_evaluate, cmd_generate_data, cmd_hallucinate, cmd_run_all, Preset, RunConfig,
    Stage, StageRecord, RECORD_FILE,
};
use dha::DhaError;

fn tiny(dir: &Path) -> RunConfig {
    RunConfig::parse(&format!(
        "n_source = 8\nn_per_style = 6\nn_open = 4\nimage_size = 16\nk = 3\n\
         fseg_iterations = 3\nhallucination_iterations = 2\nadapt_iterations = 4\ncheckpoint_every = 2\n\
         output_dir = {}\n",
        dir.display()
    ))
    .unwrap()
}

fn sink() -> Vec<u8> {
    Vec::new()
}

#[test]
fn default_benchmark_reports_850_entries_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.path().into();
    let mut out = sink();
    let s = cmd_generate_data(&cfg, &mut out).unwrap();
    assert_eq!((s.source, s.compound, s.open, s.total()), (300, 450, 100, 850));
    assert!(String::from_utf8(out).unwrap().contains("total 850"));

    let mut out = sink();
    assert_eq!(cmd_generate_data(&cfg, &mut out).unwrap(), s);
    assert!(String::from_utf8(out).unwrap().contains("up to date"));

    // outputs that no longer match their record are an error, not a silent redo
    let manifest = cfg.stage_dir(Stage::Data).join(MANIFEST_FILE);
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push('\n');
    fs::write(&manifest, text).unwrap();
    assert!(matches!(cmd_generate_data(&cfg, &mut sink()), Err(DhaError::HashMismatch { .. })));
}

#[test]
fn stages_require_their_predecessor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    match cmd_discover(&cfg, &mut sink()) {
        Err(DhaError::Missing(p)) => assert_eq!(p, cfg.stage_dir(Stage::Data).join(RECORD_FILE)),
        other => panic!("{other:?}"),
    }
    cmd_generate_data(&cfg, &mut sink()).unwrap();
    cmd_discover(&cfg, &mut sink()).unwrap();
    match cmd_adapt(&cfg, &mut sink()) {
        Err(DhaError::Missing(p)) => assert_eq!(p, cfg.stage_dir(Stage::Hallucinate).join(RECORD_FILE)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn run_all_then_rerun_downstream_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let mut out = sink();
    let m = cmd_run_all(&cfg, &mut out).unwrap();
    assert_eq!(m.compound.len(), 3);
    assert_eq!(m.open.len(), 1);
    for stage in Stage::ALL {
        let rec = StageRecord::read(&cfg.stage_dir(stage)).unwrap();
        assert_eq!(rec.config_hash, cfg.stage_hash(stage));
        assert_eq!(rec.seed, cfg.master_seed);
    }
    let eval_dir = cfg.stage_dir(Stage::Evaluate);
    for f in ["metrics.csv", "curves.csv", "features.tsv"] {
        assert!(eval_dir.join(f).is_file(), "{f}");
    }
    let adapt_dir = cfg.stage_dir(Stage::Adapt);
    let log = fs::read_to_string(adapt_dir.join("adapt_log.csv")).unwrap();
    assert!(log.starts_with("iteration,loss_task,loss_out_1,loss_out_2,loss_out_3,loss_d_1"));
    assert_eq!(log.lines().count(), 5);

    // upstream outputs are sufficient state
    fs::remove_dir_all(&eval_dir).unwrap();
    assert_eq!(cmd_evaluate(&cfg, &mut sink()).unwrap(), m);
    fs::remove_dir_all(&eval_dir).unwrap();
    fs::remove_dir_all(&adapt_dir).unwrap();
    cmd_adapt(&cfg, &mut sink()).unwrap();
    assert_eq!(cmd_evaluate(&cfg, &mut sink()).unwrap(), m);

    // a second identical run reuses every stage
    let mut out = sink();
    assert_eq!(cmd_run_all(&cfg, &mut out).unwrap(), m);
    assert_eq!(String::from_utf8(out).unwrap().matches("up to date").count(), 5);
}

#[test]
fn evaluate_refuses_checkpoints_of_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_run_all(&cfg, &mut sink()).unwrap();
    let mut other = cfg.clone();
    other.mode = AdaptMode::None;
    cmd_adapt(&other, &mut sink()).unwrap();
    let ckpt = "seg.ckpt";
    fs::copy(other.stage_dir(Stage::Adapt).join(ckpt), cfg.stage_dir(Stage::Adapt).join(ckpt)).unwrap();
    fs::remove_dir_all(cfg.stage_dir(Stage::Evaluate)).unwrap();
    assert!(matches!(cmd_evaluate(&cfg, &mut sink()), Err(DhaError::HashMismatch { .. })));
}

#[test]
fn same_seed_same_artifacts_in_separate_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, cb) = (tiny(a.path()), tiny(b.path()));
    let ma = cmd_run_all(&ca, &mut sink()).unwrap();
    let mb = cmd_run_all(&cb, &mut sink()).unwrap();
    assert_eq!(ma, mb);
    let read = |c: &RunConfig, stage, f: &str| fs::read(c.stage_dir(stage).join(f)).unwrap();
    assert_eq!(read(&ca, Stage::Data, MANIFEST_FILE), read(&cb, Stage::Data, MANIFEST_FILE));
    assert_eq!(read(&ca, Stage::Discover, "assignment.tsv"), read(&cb, Stage::Discover, "assignment.tsv"));
    assert_eq!(read(&ca, Stage::Adapt, "seg.ckpt"), read(&cb, Stage::Adapt, "seg.ckpt"));
}

#[test]
fn framework_ablation_writes_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let rows = cmd_ablate(&cfg, Preset::FrameworkDesign, &mut sink()).unwrap();
    assert_eq!(rows.len(), 6);
    let csv = fs::read_to_string(dir.path().join("ablation_framework_design.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("row,night,rain,cloudy,sunset,C,C+O\n"));
    // one shared hallucinate stage, six adapt stages
    let count = |prefix: &str| fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix)).count();
    assert_eq!(count("hallucinate-"), 1);
    assert_eq!(count("adapt-"), 6);
}

#[test]
fn hallucinate_writes_translations_for_every_domain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_generate_data(&cfg, &mut sink()).unwrap();
    let d = cmd_discover(&cfg, &mut sink()).unwrap();
    assert_eq!(d.k, 3);
    assert!(d.ari.is_some());
    let h = cmd_hallucinate(&cfg, &mut sink()).unwrap();
    assert_eq!(h.translated, 3 * 8);
    let g = dha::pipeline::load_generator::<f32>(&cfg).unwrap();
    assert_eq!(g.code_len(), dha::discovery::STYLE_CODE_LEN);
    // checkpoints widen on load
    assert!(dha::pipeline::load_fseg::<f64>(&cfg).is_ok());
}
