use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dha(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dha")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> (String, String) {
    (String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    let body = format!(
        "# tiny run\nn_source = 8\nn_per_style = 6\nn_open = 4\nimage_size = 16\nk = 3\n\
         fseg_iterations = 2\nhallucination_iterations = 2\nadapt_iterations = 2\ncheckpoint_every = 1\n\
         output_dir = {}\n{extra}",
        dir.join("out").display()
    );
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into()
}

#[test]
fn unknown_config_key_fails_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lambda_bogus = 3\n");
    let o = dha(&["generate-data", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(text(&o).1.contains("lambda_bogus"));
}

#[test]
fn run_all_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = dha(&["run-all", "--config", &cfg, "--mode", "traditional_translated"]);
    let (out, err) = text(&o);
    assert!(o.status.success(), "{err}");
    assert!(out.contains("total 30"));
    assert!(out.contains("mIoU C "));

    let o = dha(&["show-config", "--config", &cfg, "--seed", "9", "--k", "auto", "--mode", "none"]);
    let (out, _) = text(&o);
    assert!(out.contains("master_seed = 9\n"));
    assert!(out.contains("k = auto\n"));
    assert!(out.contains("mode = none\n"));
}

#[test]
fn adapt_before_hallucinate_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert!(dha(&["generate-data", "--config", &cfg]).status.success());
    let o = dha(&["adapt", "--config", &cfg]);
    assert!(!o.status.success());
    let err = text(&o).1;
    assert!(err.contains("hallucinate-") && err.contains("stage.done"), "{err}");
}

#[test]
fn unknown_preset_and_mode_are_rejected() {
    assert!(!dha(&["ablate", "table_9"]).status.success());
    assert!(!dha(&["run-all", "--mode", "sideways"]).status.success());
    assert!(!dha(&["discover", "--k", "1", "--out", "/nonexistent/x"]).status.success());
}
