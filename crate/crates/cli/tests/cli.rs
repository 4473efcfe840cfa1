use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scope_core::data::{load_image, save_image};
use scope_core::tensor::{Shape, Tensor};

const MICRO: &str = "variant = d
stage_channels = 8,16,16,16
c_prime = 8
k_l = 3,3,3
num_classes = 2
samples_per_class = 8
val_per_class = 4
image_size = 32
base_frequency = 3
frequency_step = 6
contrast = 0.3
noise_sigma = 0.02
augment = off
epochs = 3
warmup_epochs = 1
base_lr = 0.05
batch_size = 16
";

fn scope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scope")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_image_exits_2() {
    let o = scope(&["demo-sde", "--image", "/nonexistent/x.ppm", "--out-prefix", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(scope(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(scope(&["bench", "--unknown-flag"]).status.code(), Some(2));
}

#[test]
fn malformed_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 5\nlearnig_rate = 0.1\n").unwrap();
    let o = scope(&["train", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnig_rate"));
}

#[test]
fn gradcheck_module_filter_and_negative_control() {
    let o = scope(&["gradcheck", "--module", "sde"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("sde ")));
    assert!(!out.contains("ssr") && !out.contains("conv2d"));

    let o = scope(&["gradcheck", "--module", "sde", "--corrupt", "softmax_per_position"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(scope(&["gradcheck", "--module", "everything"]).status.code(), Some(2));
}

#[test]
fn bench_smoke_path() {
    let o = scope(&["bench", "--shape", "1,4,8,8", "--k", "3", "--iters", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let speedup: f64 = field(&stdout(&o), "speedup").parse().unwrap();
    assert!(speedup > 0.0);
    assert_eq!(scope(&["bench", "--shape", "1,4,8", "--iters", "1"]).status.code(), Some(2));
}

#[test]
fn demo_sde_flat_gray_gives_mid_gray_detail() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("gray.ppm");
    save_image(&img, &Tensor::full(Shape::new(1, 3, 12, 12), 0.5)).unwrap();
    let prefix = dir.path().join("out");
    let o = scope(&["demo-sde", "--image", path(&img), "--out-prefix", path(&prefix), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let detail = load_image(dir.path().join("out_detail.ppm")).unwrap();
    for y in 1..11 {
        for x in 1..11 {
            assert!((detail.get(0, 0, y, x) - 0.5).abs() <= 1.0 / 255.0, "({y}, {x})");
        }
    }
    for suffix in ["smooth", "enhanced"] {
        assert!(dir.path().join(format!("out_{suffix}.ppm")).exists());
    }
}

#[test]
fn demo_sde_detail_concentrates_at_an_edge() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("step.ppm");
    save_image(&img, &Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, _, _, x| if x < 8 { 0.2 } else { 0.8 })).unwrap();
    let prefix = dir.path().join("edge");
    assert!(scope(&["demo-sde", "--image", path(&img), "--out-prefix", path(&prefix)]).status.success());
    let detail = load_image(dir.path().join("edge_detail.ppm")).unwrap();
    let variance = |cols: &[usize]| {
        let vals: Vec<f64> = (1..15)
            .flat_map(|y| cols.iter().map(move |&x| (y, x)))
            .map(|(y, x)| detail.get(0, 0, y, x) as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    };
    assert!(variance(&[6, 7, 8, 9]) > variance(&[2, 3, 12, 13]));
}

#[test]
fn train_then_eval_reprints_best_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("micro.cfg");
    fs::write(&cfg, MICRO).unwrap();
    let run = dir.path().join("run");
    let o = scope(&["train", "--config", path(&cfg), "--out", path(&run), "--seed", "1", "--deterministic"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let best = field(&stdout(&o), "best_val_acc");

    let data = dir.path().join("data");
    assert!(scope(&["gen-data", "--out", path(&data), "--config", path(&cfg)]).status.success());
    let ckpt = run.join("best.scpt");
    let o = scope(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data.join("val.tsv"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "val_acc"), best);
    assert_eq!(field(&stdout(&o), "samples"), "8");
}

#[test]
fn commands_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("micro.cfg");
    fs::write(&cfg, MICRO).unwrap();
    let run = dir.path().join("run");
    let files = ["metrics.tsv", "best.scpt", "best.cfg", "data/train.tsv", "data/val/00003_c1.ppm"];
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let o = scope(&["train", "--config", path(&cfg), "--out", path(&run), "--seed", "7", "--deterministic"]);
        assert!(o.status.success());
        assert!(scope(&["gen-data", "--out", path(&run.join("data")), "--config", path(&cfg), "--seed", "3"]).status.success());
        outputs.push(files.map(|f| fs::read(run.join(f)).unwrap()));
        fs::remove_dir_all(&run).unwrap();
    }
    assert!(outputs[0] == outputs[1]);
}
