//! Exit-code and artifact contracts of the command-line tool.

mod common;

use std::path::{Path, PathBuf};

use common::{run_cli, write_micro_config};
use dam_inpaint::synthetic::write_dataset;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_string()
    }

    fn cli(&self, args: &[&str]) -> std::process::Output {
        run_cli(&self.root, args)
    }

    fn checkpoint(&self) -> String {
        self.path("run/checkpoints/latest.ckpt")
    }
}

/// Synthetic data, a manifest, and optionally a finished 10-step run.
fn setup(train: bool) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_dataset(&root.join("data"), 12, 16, 7).unwrap();
    let config = write_micro_config(&root, 10);
    let run = Run { _dir: dir, root, config };
    let out = run.cli(&["prepare", "--data-root", &run.path("data"), "--val-fraction", "0.25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    if train {
        let out = run.cli(&["train", "--config", run.config.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    run
}

fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn prepare_reports_counts_and_is_deterministic() {
    let run = setup(false);
    let first = std::fs::read(run.root.join("data/manifest.tsv")).unwrap();
    let out = run.cli(&["prepare", "--data-root", &run.path("data"), "--val-fraction", "0.25"]);
    assert_eq!(stdout(&out).trim(), "train=9 val=3");
    // the manifest itself is not an image, so the rescan sees the same files
    assert_eq!(std::fs::read(run.root.join("data/manifest.tsv")).unwrap(), first);
}

#[test]
fn prepare_on_empty_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["prepare", "--data-root", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no images found"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let run = setup(false);
    let cfg = run.config.to_str().unwrap();
    let out = run.cli(&["train", "--config", cfg, "--set", "model.resolution=120"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model.resolution"), "{}", stderr(&out));

    let out = run.cli(&["train", "--config", cfg, "--set", "train.bogus_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_key"), "{}", stderr(&out));
}

#[test]
fn print_config_round_trips() {
    let run = setup(false);
    let out = run.cli(&["train", "--config", run.config.to_str().unwrap(), "--set", "train.steps=3", "--print-config"]);
    assert!(out.status.success());
    let cfg = dam_inpaint::config::RunConfig::parse(&stdout(&out), &[]).unwrap();
    assert_eq!(cfg.train.steps, 3);
    assert_eq!(cfg.to_toml(), stdout(&out));
}

#[test]
fn missing_manifest_exits_2() {
    let run = setup(false);
    std::fs::remove_file(run.root.join("data/manifest.tsv")).unwrap();
    let out = run.cli(&["train", "--config", run.config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest"), "{}", stderr(&out));
}

#[test]
fn non_finite_parameters_exit_3() {
    let run = setup(true);
    let mut state = dam_inpaint::checkpoint::load(Path::new(&run.checkpoint())).unwrap();
    for (_, t) in state.generator.iter_mut() {
        t.data_mut().fill(f64::NAN);
    }
    let poisoned = run.root.join("poisoned.ckpt");
    dam_inpaint::checkpoint::save(&state, &poisoned).unwrap();
    let out = run.cli(&[
        "train",
        "--config",
        run.config.to_str().unwrap(),
        "--set",
        "train.steps=11",
        "--resume",
        poisoned.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn resuming_a_finished_run_adds_no_steps() {
    let run = setup(true);
    let log_before = std::fs::read_to_string(run.root.join("run/train_log.csv")).unwrap();
    assert_eq!(log_before.lines().count(), 11);
    let out = run.cli(&["train", "--config", run.config.to_str().unwrap(), "--resume"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log_after = std::fs::read_to_string(run.root.join("run/train_log.csv")).unwrap();
    assert_eq!(log_after, log_before);
}

#[test]
fn resume_continues_the_log_exactly() {
    let run = setup(true);
    let full = std::fs::read_to_string(run.root.join("run/train_log.csv")).unwrap();
    let mid = run.path("run/checkpoints/step_000005.ckpt");
    let out = run.cli(&["train", "--config", run.config.to_str().unwrap(), "--resume", &mid]);
    assert!(out.status.success(), "{}", stderr(&out));
    let resumed = std::fs::read_to_string(run.root.join("run/train_log.csv")).unwrap();
    assert_eq!(resumed, full);
}

#[test]
fn eval_is_repeatable_and_rejects_corrupt_checkpoints() {
    let run = setup(true);
    let ckpt = run.checkpoint();
    let mut reports = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = run.cli(&["eval", "--checkpoint", &ckpt, "--mask", "center", "--out", &run.path(name)]);
        assert!(out.status.success(), "{}", stderr(&out));
        reports.push(std::fs::read(run.root.join(name)).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert!(run.root.join("a_raw.csv").exists());

    let out = run.cli(&["eval", "--checkpoint", &ckpt, "--mask", "free", "--out", &run.path("free.csv")]);
    assert!(out.status.success(), "{}", stderr(&out));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0xff;
    let bad = run.root.join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let out = run.cli(&["eval", "--checkpoint", bad.to_str().unwrap(), "--out", &run.path("c.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checkpoint integrity failure"), "{}", stderr(&out));
}

fn write_mask(path: &Path, side: u32) {
    image::GrayImage::from_fn(side, side, |x, _| image::Luma([if x < side / 2 { 255 } else { 0 }]))
        .save(path)
        .unwrap();
}

#[test]
fn inpaint_writes_three_images_and_checks_mask_size() {
    let run = setup(true);
    let ckpt = run.checkpoint();
    let image = run.path("data/img_0003.png");
    write_mask(&run.root.join("good_mask.png"), 16);
    let out = run.cli(&["inpaint", "--checkpoint", &ckpt, "--image", &image, "--mask-file", &run.path("good_mask.png"), "--out", &run.path("out")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let original = image::open(&image).unwrap().to_rgb8();
    let masked = image::open(run.root.join("out/masked.png")).unwrap().to_rgb8();
    let composited = image::open(run.root.join("out/composited.png")).unwrap().to_rgb8();
    assert!(run.root.join("out/raw.png").exists());
    for (x, y, p) in original.enumerate_pixels() {
        if x >= 8 {
            assert_eq!(masked.get_pixel(x, y), p);
            assert_eq!(composited.get_pixel(x, y), p);
        } else {
            assert_eq!(masked.get_pixel(x, y).0, [0, 0, 0]);
        }
    }

    write_mask(&run.root.join("bad_mask.png"), 20);
    let out = run.cli(&["inpaint", "--checkpoint", &ckpt, "--image", &image, "--mask-file", &run.path("bad_mask.png"), "--out", &run.path("out2")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("20x20"), "{}", stderr(&out));
}

#[test]
fn grid_layout_and_unknown_ids() {
    let run = setup(true);
    let ckpt = run.checkpoint();
    let out = run.cli(&["grid", "--checkpoint", &ckpt, "--ids", "img_0001.png", "--out", &run.path("one.png")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let img = image::open(run.root.join("one.png")).unwrap();
    assert_eq!((img.width(), img.height()), (48, 16));

    let out = run.cli(&["grid", "--checkpoint", &ckpt, "--ids", "img_0001.png,nope.png,also_missing.png", "--out", &run.path("x.png")]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("nope.png") && err.contains("also_missing.png"), "{err}");
}
