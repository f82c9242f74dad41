//! End-to-end command-line tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn gmseg(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmseg"))
        .current_dir(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_flag_exits_2_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(dir.path(), &["train", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown key"));
    assert_eq!(
        std::fs::read_dir(dir.path()).unwrap().count(),
        0,
        "no files may be created"
    );
}

#[test]
fn empty_config_file_keeps_full_model_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.cfg"), "").unwrap();
    let out = gmseg(dir.path(), &["gradcheck", "--config", "empty.cfg"]);
    let text = stdout(&out);
    assert!(text.contains("config: memory.N = 3"), "{text}");
    assert!(text.contains("config: reason.K = 3"), "{text}");
}

#[test]
fn override_flags_reach_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(
        dir.path(),
        &["gen-data", "--gen.videos", "1", "--reason.K", "0", "--data.canvas", "32"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("config: reason.K = 0"));
}

#[test]
fn duplicate_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("dup.cfg"), "memory.N = 3\nmemory.N = 4\n").unwrap();
    let out = gmseg(dir.path(), &["train", "--config", "dup.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("duplicate key"));
}

#[test]
fn config_parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "memory.N = 3\nnot a key value\n").unwrap();
    let out = gmseg(dir.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(":2:"), "line number in: {}", stderr(&out));
}

#[test]
fn gen_data_writes_layout_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = gmseg(
            dir.path(),
            &[
                "gen-data",
                "--gen.out",
                sub,
                "--gen.videos",
                "2",
                "--data.canvas",
                "32",
                "--seed",
                "9",
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for vid in ["00000", "00001"] {
        let f = dir.path().join("a").join(vid).join("frames").join("00000.png");
        let m = dir.path().join("a").join(vid).join("masks").join("00000.png");
        assert!(f.is_file() && m.is_file(), "layout for {vid}");
        let fa = std::fs::read(&f).unwrap();
        let fb = std::fs::read(dir.path().join("b").join(vid).join("frames").join("00000.png")).unwrap();
        assert_eq!(fa, fb, "same seed, same bytes");
    }
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(
        dir.path(),
        &["gen-data", "--gen.out", "ds", "--gen.videos", "2", "--data.canvas", "32", "--seed", "4"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = gmseg(
        dir.path(),
        &["eval", "--eval.pred", "ds", "--eval.gt", "ds", "--eval.out", "rep"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("eval: mean J = 1.0000"), "{}", stdout(&out));
    let kv = std::fs::read_to_string(dir.path().join("rep/report.kv")).unwrap();
    assert!(kv.contains("J.mean = 1.000000"));
    assert!(dir.path().join("rep/report.txt").is_file());
}

#[test]
fn train_zero_steps_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(
        dir.path(),
        &[
            "train",
            "--train.pretrain_steps",
            "0",
            "--train.out",
            "run",
            "--model.widths",
            "4,4,8,8",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("run/init.ckpt").is_file());
    assert!(!dir.path().join("run/final.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("run/train_log.txt")).unwrap();
    assert!(log.is_empty(), "empty loss series");
}

#[test]
fn checkpoint_header_has_version_tag() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(
        dir.path(),
        &["train", "--train.pretrain_steps", "0", "--train.out", "run", "--model.widths", "4,4,8,8"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("run/init.ckpt")).unwrap();
    assert!(bytes.starts_with(b"gmseg-ckpt-v1\n"));
}

#[test]
fn pipeline_train_infer_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = gmseg(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{:?}: {}", args, stderr(&out));
        out
    };
    run(&[
        "gen-data", "--gen.out", "ds", "--gen.videos", "2", "--data.canvas", "32",
        "--data.video_frames", "4", "--seed", "3",
    ]);
    run(&[
        "train", "--model.widths", "4,4,8,8", "--data.canvas", "32", "--memory.N", "2",
        "--reason.K", "1", "--train.pretrain_steps", "3", "--train.batch", "1",
        "--train.val_clips", "2", "--train.out", "run", "--seed", "3",
    ]);
    run(&[
        "infer", "--model.widths", "4,4,8,8", "--memory.N", "2", "--reason.K", "1",
        "--ckpt", "run/final.ckpt", "--infer.data", "ds", "--infer.out", "preds",
        "--infer.dump_probs", "true",
    ]);
    assert!(dir.path().join("preds/00000/masks/00001.png").is_file());
    assert!(dir.path().join("preds/00000/probs/1/00001.png").is_file());
    // predictions cover every frame; frame 0 echoes the annotation
    let gt0 = std::fs::read(dir.path().join("ds/00000/masks/00000.png")).unwrap();
    let pr0 = std::fs::read(dir.path().join("preds/00000/masks/00000.png")).unwrap();
    assert_eq!(gt0, pr0);
    run(&[
        "eval", "--eval.pred", "preds", "--eval.gt", "ds", "--eval.out", "rep",
        "--eval.skip_first", "true",
    ]);
    run(&[
        "plot", "--plot.log", "run/train_log.txt", "--plot.kv", "rep/report.kv",
        "--plot.out", "plots",
    ]);
    assert!(dir.path().join("plots/loss.svg").is_file());
    assert!(dir.path().join("plots/j_series.svg").is_file());
}

#[test]
fn infer_without_checkpoint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gmseg(dir.path(), &["infer", "--infer.data", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zvos_pipeline_produces_binary_masks() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = gmseg(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{:?}: {}", args, stderr(&out));
    };
    run(&[
        "gen-data", "--gen.out", "ds", "--gen.videos", "1", "--data.canvas", "32",
        "--data.video_frames", "4", "--data.min_instances", "1", "--data.max_instances", "1",
        "--seed", "8",
    ]);
    run(&[
        "train", "--model.mode", "zvos", "--model.widths", "4,4,8,8", "--data.canvas", "32",
        "--data.min_instances", "1", "--data.max_instances", "1", "--memory.N", "2",
        "--reason.K", "1", "--train.pretrain_steps", "2", "--train.batch", "1",
        "--train.val_clips", "1", "--train.out", "zrun", "--seed", "8",
    ]);
    run(&[
        "infer", "--model.mode", "zvos", "--model.widths", "4,4,8,8", "--memory.N", "2",
        "--reason.K", "1", "--ckpt", "zrun/final.ckpt", "--infer.data", "ds",
        "--infer.out", "zpreds",
    ]);
    let mask = image::open(dir.path().join("zpreds/00000/masks/00002.png"))
        .unwrap()
        .to_luma8();
    assert!(mask.pixels().all(|p| p.0[0] <= 1), "zero-shot masks are binary");
}
