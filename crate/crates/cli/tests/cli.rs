use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
profile = "compact"

[backbone]
stage_widths = [4, 4, 8, 8]
feature_channels = 8
projection_channels = 8
init_seed = 0

[data]
scene = { num_frames = 12 }
splits = [{ split = "easy", count = 2 }, { split = "drift", count = 1 }]

[train]
steps = 4
batch_size = 2
eval_every = 2
probe_examples = 2

[sweep]
extent = 1.0
step = 0.5
dt_max = 3
max_pairs = 3
"#;

fn siamtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamtrack"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SIAMTRACK_OUT_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = siamtrack(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    ok(&["gen-data", "--config", s(&config), "--out", s(&data), "--seed", "3"]);
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn train(f: &Fixture, out: &Path, seed: &str, variant: &str, extra: &[&str]) {
    let mut args = vec![
        "train", "--config", s(&f.config), "--data", s(&f.data), "--variant", variant, "--seed", seed, "--out", s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = siamtrack(&["gen-data", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    let out = siamtrack(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let f = fixture();
    let again = f.root.join("again");
    let other = f.root.join("other");
    ok(&["gen-data", "--config", s(&f.config), "--out", s(&again), "--seed", "3"]);
    ok(&["gen-data", "--config", s(&f.config), "--out", s(&other), "--seed", "4"]);
    for name in ["manifest.json", "easy-0000/annotations.jsonl", "easy-0000/frames/000005.png"] {
        assert_eq!(fs::read(f.data.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read(f.data.join("manifest.json")).unwrap(), fs::read(other.join("manifest.json")).unwrap());
    assert_ne!(
        fs::read(f.data.join("easy-0000/frames/000000.png")).unwrap(),
        fs::read(other.join("easy-0000/frames/000000.png")).unwrap()
    );
}

#[test]
fn train_writes_a_reproducible_run() {
    let f = fixture();
    let a = f.root.join("runs/a");
    let b = f.root.join("runs/b");
    train(&f, &a, "1", "with_detector", &[]);
    train(&f, &b, "1", "with_detector", &[]);
    let metrics = fs::read_to_string(a.join("1/metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,variant,seed,loss_total,loss_heat,loss_offset,loss_det,R,A\n"));
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(metrics, fs::read_to_string(b.join("1/metrics.csv")).unwrap());
    assert!(a.join("1/experiment.toml").is_file());
    assert!(a.join("1/config.json").is_file());
    assert!(a.join("1/checkpoints/step_0000000.ckpt").is_file());
    assert!(a.join("1/checkpoints/step_0000004.ckpt").is_file());
}

#[test]
fn interrupted_and_resumed_training_matches() {
    let f = fixture();
    let full = f.root.join("full");
    let part = f.root.join("part");
    train(&f, &full, "2", "no_detector", &[]);
    train(&f, &part, "2", "no_detector", &["--stop-after", "2"]);
    let ckpt = part.join("2/checkpoints/step_0000002.ckpt");
    train(&f, &part, "2", "no_detector", &["--resume", s(&ckpt)]);
    for name in ["metrics.csv", "checkpoints/step_0000004.ckpt"] {
        assert_eq!(fs::read(full.join("2").join(name)).unwrap(), fs::read(part.join("2").join(name)).unwrap(), "{name}");
    }
    let echoed = fs::read_to_string(full.join("2/experiment.toml")).unwrap();
    assert!(echoed.contains("detector = 0.0"), "{echoed}");
}

#[test]
fn non_finite_loss_exits_nonzero() {
    let f = fixture();
    let cfg = f.root.join("explode.toml");
    fs::write(&cfg, TINY.replace("steps = 4", "steps = 4\nlearning_rate = 1e30")).unwrap();
    let out_dir = f.root.join("explode");
    let out = siamtrack(&["train", "--config", s(&cfg), "--data", s(&f.data), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    assert!(out_dir.join("0/nonfinite.ckpt").is_file());
}

#[test]
fn eval_modes_write_deterministic_csvs() {
    let f = fixture();
    let run = f.root.join("run");
    train(&f, &run, "0", "no_detector", &[]);
    let ckpt = run.join("0/checkpoints/step_0000004.ckpt");
    for (mode, model) in [("gt", "no_detector"), ("random_patch", "no_detector_random_target")] {
        let a = f.root.join(format!("eval-{mode}-a"));
        let b = f.root.join(format!("eval-{mode}-b"));
        for out in [&a, &b] {
            ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--target-mode", mode, "--out", s(out)]);
        }
        let seqs = fs::read_to_string(a.join("sequences.csv")).unwrap();
        assert!(seqs.starts_with("model,seed,split,sequence,length,failures,mean_iou\n"));
        assert_eq!(seqs.lines().count(), 4);
        let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
        assert!(summary.starts_with("model,seed,split,sequences,robustness,accuracy\n"));
        assert!(summary.lines().nth(1).unwrap().starts_with(&format!("{model},0,")));
        for name in ["sequences.csv", "summary.csv"] {
            assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        }
    }
}

#[test]
fn sweeps_are_finite_and_deterministic() {
    let f = fixture();
    let cfg = f.root.join("sweep.toml");
    fs::write(&cfg, TINY.replace("steps = 4", "steps = 12").replace("max_pairs = 3", "")).unwrap();
    let run = f.root.join("run");
    ok(&["train", "--config", s(&cfg), "--data", s(&f.data), "--out", s(&run)]);
    let ckpt = run.join("0/checkpoints/step_0000012.ckpt");
    for kind in ["search", "target", "staleness"] {
        let a = f.root.join(format!("sweep-{kind}-a"));
        let b = f.root.join(format!("sweep-{kind}-b"));
        for out in [&a, &b] {
            ok(&["sweep", "--checkpoint", s(&ckpt), "--data", s(&f.data), "--kind", kind, "--config", s(&cfg), "--out", s(out)]);
        }
        let csv_name = format!("{kind}.csv");
        let text = fs::read_to_string(a.join(&csv_name)).unwrap();
        let header = if kind == "staleness" {
            "axis_x,mean_norm_iou,n_samples\n"
        } else {
            "axis_x,axis_y,mean_norm_iou,n_samples\n"
        };
        assert!(text.starts_with(header), "{text}");
        assert!(!text.contains("NaN") && !text.contains("inf"));
        assert_eq!(text, fs::read_to_string(b.join(&csv_name)).unwrap());
        assert!(a.join(format!("{kind}.png")).is_file());
        assert!(a.join(format!("{kind}_summary.json")).is_file());
    }
}

#[test]
fn report_handles_single_and_multiple_seeds() {
    let f = fixture();
    let runs = f.root.join("runs");
    train(&f, &runs.join("with"), "0", "with_detector", &[]);
    let single = f.root.join("report-single");
    ok(&["report", "--runs", s(&runs.join("with")), "--out", s(&single)]);
    let table = fs::read_to_string(single.join("table.csv")).unwrap();
    assert!(table.starts_with("group,split,n,robustness_mean,robustness_se,accuracy_mean,accuracy_se\n"));
    assert!(table.lines().nth(1).unwrap().starts_with("with_detector,eval,1,"));
    assert!(table.lines().nth(1).unwrap().contains(",,"));

    train(&f, &runs.join("with"), "1", "with_detector", &[]);
    train(&f, &runs.join("without"), "0", "no_detector", &[]);
    train(&f, &runs.join("without"), "1", "no_detector", &[]);
    let multi = f.root.join("report-multi");
    let again = f.root.join("report-again");
    for out in [&multi, &again] {
        ok(&["report", "--runs", s(&runs.join("with")), s(&runs.join("without")), "--out", s(out)]);
    }
    let table = fs::read_to_string(multi.join("table.csv")).unwrap();
    assert!(table.contains("with_detector - no_detector,eval,2,"), "{table}");
    for name in ["table.csv", "curves_with_detector.csv", "curves_no_detector.csv", "crossover.csv"] {
        assert_eq!(fs::read(multi.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    assert!(multi.join("training_curves.png").is_file());
}

#[test]
fn out_root_prefixes_relative_paths() {
    let f = fixture();
    let out = Command::new(env!("CARGO_BIN_EXE_siamtrack"))
        .args(["gen-data", "--config", s(&f.config), "--out", "rel/data"])
        .env("SIAMTRACK_OUT_ROOT", &f.root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(f.root.join("rel/data/manifest.json").is_file());
}
