use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paintbot::rollout::read_stroke_log;
use paintbot::trainer::Dataset;
use paintbot::Canvas;

const DESK: &str = "\
network = desk
obs_height = 21
obs_width = 21
max_width = 20
loss = lhalf
t_max = 4
iterations = 2
episodes_per_iteration = 2
";

fn paintbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paintbot")).args(args).output().expect("spawn paintbot")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Source images plus a desk config and a small prepared archive.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        std::fs::create_dir(&images).unwrap();
        Canvas::new(64, 64, [0.9, 0.1, 0.1]).unwrap().save_png(images.join("red.png")).unwrap();
        Canvas::from_fn(64, 48, |r, c| [r as f64 / 63.0, c as f64 / 47.0, 0.5])
            .unwrap()
            .save_png(images.join("ramp.png"))
            .unwrap();
        std::fs::write(dir.path().join("desk.cfg"), DESK).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn prep(&self) -> PathBuf {
        let archive = self.path("patches.pbds");
        let out = paintbot(&[
            "prep-data",
            "--input",
            s(&self.path("images")),
            "--out",
            s(&archive),
            "--n",
            "6",
            "--patch-size",
            "32",
            "--scales",
            "1,0.5",
            "--seed",
            "3",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        archive
    }

    fn train(&self, out_dir: &str, extra: &[&str]) -> Output {
        let archive = self.path("patches.pbds");
        if !archive.exists() {
            self.prep();
        }
        let (cfg, out) = (self.path("desk.cfg"), self.path(out_dir));
        let mut args = vec!["train", "--config", s(&cfg), "--dataset", s(&archive), "--out", s(&out)];
        args.extend_from_slice(extra);
        paintbot(&args)
    }
}

#[test]
fn gradcheck_exit_status_follows_the_report() {
    let ok = paintbot(&["gradcheck", "--sizes", "17", "--per-tensor", "4"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("PASS"));
    let bad = paintbot(&["gradcheck", "--sizes", "17", "--per-tensor", "4", "--corrupt-gradient"]);
    assert_eq!(code(&bad), 1);
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&paintbot(&["train", "--out", "x"])), 2);
    assert_eq!(code(&paintbot(&["frobnicate"])), 2);
    assert_eq!(code(&paintbot(&["--workers", "0", "gradcheck"])), 2);
    let help = paintbot(&["--help"]);
    assert_eq!(code(&help), 0);
    for sub in ["prep-data", "train", "paint", "eval", "gradcheck"] {
        assert!(stdout(&help).contains(sub), "help lists {sub}");
    }
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let ws = Workspace::new();
    ws.prep();
    std::fs::write(ws.path("desk.cfg"), format!("{DESK}learning_speed = 3\n")).unwrap();
    let out = ws.train("run", &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_speed"), "{}", stderr(&out));
}

#[test]
fn corrupt_inputs_are_format_errors() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.ckpt"), b"PBOT\x07garbage").unwrap();
    let out = paintbot(&[
        "paint",
        "--checkpoint",
        s(&ws.path("bad.ckpt")),
        "--ref",
        s(&ws.path("images/red.png")),
        "--out",
        s(&ws.path("o.png")),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    std::fs::write(ws.path("bad.pbds"), b"not an archive").unwrap();
    let out = paintbot(&["train", "--dataset", s(&ws.path("bad.pbds")), "--out", s(&ws.path("run"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let out = paintbot(&["prep-data", "--input", s(&ws.path("missing")), "--out", s(&ws.path("x.pbds"))]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn prep_data_writes_requested_patches() {
    let ws = Workspace::new();
    let archive = ws.prep();
    let data = Dataset::load(&archive).unwrap();
    assert_eq!(data.len(), 6);
    assert_eq!(data.patch_dims(), (32, 32));
    let clustered = ws.path("clustered.pbds");
    let out = paintbot(&[
        "prep-data",
        "--input",
        s(&ws.path("images")),
        "--out",
        s(&clustered),
        "--n",
        "6",
        "--patch-size",
        "16",
        "--cluster-k",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(Dataset::load(&clustered).unwrap().len(), 2);
}

#[test]
fn train_resume_continues_numbering() {
    let ws = Workspace::new();
    let first = ws.train("run", &["--seed", "2"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(ws.path("run/config.txt").is_file());
    let ckpt = ws.path("run/final.ckpt");
    let resumed = ws.train("run", &["--seed", "2", "--resume", s(&ckpt)]);
    assert_eq!(code(&resumed), 0, "{}", stderr(&resumed));
    let metrics = std::fs::read_to_string(ws.path("run/metrics.csv")).unwrap();
    let episodes: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(episodes, ["1", "2", "3", "4"]);
    assert_eq!(metrics.lines().filter(|l| l.starts_with("episode")).count(), 1);
}

#[test]
fn paint_and_eval_use_the_training_config() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("run", &[])), 0);
    let ckpt = ws.path("run/final.ckpt");
    let painted = ws.path("painted.png");
    let log = ws.path("strokes.csv");
    let out = paintbot(&[
        "paint",
        "--checkpoint",
        s(&ckpt),
        "--ref",
        s(&ws.path("images/ramp.png")),
        "--out",
        s(&painted),
        "--scales",
        "0.5,1",
        "--max-strokes",
        "5",
        "--value-stop=-1e9",
        "--stroke-log",
        s(&log),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("lhalf"), "loss comes from config.txt: {}", stdout(&out));
    assert_eq!(Canvas::load_png(&painted).unwrap().dims(), (64, 48));
    let records = read_stroke_log(&log).unwrap();
    assert!(records.iter().any(|r| r.scale == 0) && records.iter().any(|r| r.scale == 1));
    assert!(records.iter().all(|r| r.width <= 20.0));

    for dataset in [ws.path("patches.pbds"), ws.path("images")] {
        let out = paintbot(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&dataset), "--policy", "random"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("mean_loss_ratio"));
    }
}

#[test]
fn observation_size_mismatch_is_rejected() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.train("run", &[])), 0);
    std::fs::write(ws.path("full.cfg"), "loss = l2\n").unwrap();
    let out = paintbot(&[
        "eval",
        "--checkpoint",
        s(&ws.path("run/final.ckpt")),
        "--dataset",
        s(&ws.path("images")),
        "--config",
        s(&ws.path("full.cfg")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("observations"), "{}", stderr(&out));
}
