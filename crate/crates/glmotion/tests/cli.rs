//! End-to-end tests of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glmotion"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_into(dir: &Path) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "2",
        "--per-class",
        "4",
        "--frames-min",
        "10",
        "--frames-max",
        "14",
        "--seed",
        "3",
    ]);
    assert_ok(&out);
}

fn tiny_pretrain(data: &Path, out_dir: &Path, intervals: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--intervals",
        intervals,
        "--set",
        "embed_dim=2",
        "--set",
        "blocks=1",
        "--set",
        "spatial_heads=1",
        "--set",
        "temporal_heads=2",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synth_then_pretrain_writes_run_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    synth_into(&data);
    assert!(data.join("manifest.txt").exists());

    let out = tiny_pretrain(&data, &run_dir, "1,2", &[]);
    assert_ok(&out);
    assert!(run_dir.join("model.ckpt").exists());
    assert!(run_dir.join("config.txt").exists());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,loss,dir_acc@1,dir_acc@2,mag_acc@1,mag_acc@2,lr,wall_ms"
    );
    assert_eq!(lines.count(), 1);

    let config = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(config.contains("intervals=1,2"));
    assert!(config.contains("seed=0"));
    // model geometry derived from the dataset
    assert!(config.contains("joints=9"));
    assert!(config.contains("persons=1"));
}

#[test]
fn interval_choice_is_visible_in_checkpoint_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    assert_ok(&tiny_pretrain(&data, &run_a, "1", &[]));
    assert_ok(&tiny_pretrain(&data, &run_b, "1,2", &[]));

    let a = glmotion::model::load_checkpoint(&run_a.join("model.ckpt")).unwrap();
    let b = glmotion::model::load_checkpoint(&run_b.join("model.ckpt")).unwrap();
    assert_eq!(a.meta["intervals"], serde_json::json!([1]));
    assert_eq!(b.meta["intervals"], serde_json::json!([1, 2]));
    // one prediction head pair per interval
    assert!(b.params.len() > a.params.len());
}

#[test]
fn config_file_is_overridden_by_cli_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let cfg = tmp.path().join("exp.cfg");
    std::fs::write(&cfg, "epochs=5\nlr=0.001\n# comment\nbatch_size=4\n").unwrap();

    let run_dir = tmp.path().join("run");
    let out = tiny_pretrain(
        &data,
        &run_dir,
        "1",
        &["--config", cfg.to_str().unwrap()],
    );
    assert_ok(&out);
    let config = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    // --epochs 1 beats the file's epochs=5; the file's lr survives
    assert!(config.contains("epochs=1\n"));
    assert!(config.contains("lr=0.001\n"));
}

#[test]
fn probe_and_analyze_run_from_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let run_dir = tmp.path().join("run");
    assert_ok(&tiny_pretrain(&data, &run_dir, "1", &[]));
    let ckpt = run_dir.join("model.ckpt");

    let out = run(&[
        "probe",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--test-fraction",
        "0.25",
        "--epochs",
        "2",
        "--batch-size",
        "4",
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("test_accuracy="), "stdout: {stdout}");

    let ana = tmp.path().join("ana");
    let out = run(&[
        "analyze",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        ana.to_str().unwrap(),
        "--samples",
        "2",
        "--window",
        "6",
    ]);
    assert_ok(&out);
    assert!(ana.join("spatial_b0_h0.csv").exists());
    assert!(ana.join("temporal_b0_h1.svg").exists());
    assert!(ana.join("attended_distance.csv").exists());
    assert!(ana.join("posemb_similarity.svg").exists());
}

#[test]
fn gradcheck_subcommand_passes() {
    let out = run(&["gradcheck"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "stdout: {stdout}");
    assert!(stdout.contains("max relative error"));
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    // unknown subcommand and unknown config key are usage errors
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let out = tiny_pretrain(&data, &tmp.path().join("r"), "1", &["--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));

    // missing dataset is a data error
    let out = run(&[
        "pretrain",
        "--data",
        tmp.path().join("missing").to_str().unwrap(),
        "--out",
        tmp.path().join("r2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // help exits cleanly
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
