use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
profile = "desk"
stage1_iters = 6
stage2_iters = 3
rays_per_batch = 32
samples = 6
patches = 2
patch_size = 3
stride = 2
checkpoint_every = 4

[field]
trunk_width = 8
trunk_depth = 2
color_hidden = 8
seg_hidden = 8
"#;

fn nfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfseg"))
        .args(args)
        .env("NFSEG_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = nfseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_scene(dir: &Path) {
    ok(&[
        "make-synthetic", "--out", p(dir), "--views", "6", "--test-every", "3", "--width", "12", "--height", "12",
    ]);
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn make_synthetic_defaults_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["make-synthetic", "--out", p(&a), "--seed", "7"]);
    ok(&["make-synthetic", "--out", p(&b), "--seed", "7"]);
    let scene = nfseg::scene_io::load_scene(&a).unwrap();
    assert_eq!(scene.views.len(), 20);
    let (la, lb) = (listing(&a), listing(&b));
    let names = |l: &[(String, Vec<u8>)]| l.iter().map(|e| e.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(&la), names(&lb));
    for (x, y) in la.iter().zip(&lb) {
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}

#[test]
fn one_view_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = nfseg(&["make-synthetic", "--out", p(&t.path().join("s")), "--views", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(nfseg(&["train", "--bogus"]).status.code(), Some(1));
}

#[test]
fn stage2_without_checkpoint_names_the_file() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("scene");
    tiny_scene(&scene);
    let run = t.path().join("run");
    let out = nfseg(&["train", "--scene", p(&scene), "--out", p(&run), "--stage", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage1.ckpt"), "{err}");
}

#[test]
fn train_render_eval_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("scene");
    tiny_scene(&scene);
    let cfg = t.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = t.path().join("run");
    ok(&["train", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&run), "--stage", "1", "--quiet"]);
    assert!(run.join("stage1.ckpt").exists());
    ok(&[
        "train", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&run), "--stage", "2", "--quiet",
    ]);
    let ck = run.join("stage2.ckpt");
    let log = fs::read_to_string(run.join("stage2_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4, "{log}");

    // the split run matches a single `all` run
    let run2 = t.path().join("run2");
    ok(&["train", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&run2), "--quiet"]);
    assert_eq!(fs::read(&ck).unwrap(), fs::read(run2.join("stage2.ckpt")).unwrap());

    let r1 = t.path().join("r1");
    let r2 = t.path().join("r2");
    for r in [&r1, &r2] {
        ok(&["render", "--checkpoint", p(&ck), "--scene", p(&scene), "--out", p(r), "--views", "view_001,view_003"]);
    }
    for name in ["view_001_color.png", "view_001_depth.png", "view_003_labels.png", "view_003_overlay.png"] {
        assert_eq!(fs::read(r1.join(name)).unwrap(), fs::read(r2.join(name)).unwrap(), "{name}");
    }
    let out = nfseg(&["render", "--checkpoint", p(&ck), "--scene", p(&scene), "--out", p(&r1), "--views", "nope"]);
    assert_eq!(out.status.code(), Some(1));

    let e = t.path().join("eval");
    let out = ok(&["eval", "--checkpoint", p(&ck), "--scene", p(&scene), "--out", p(&e), "--clusters", "3"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("NV-ARI") && table.contains("mIoU"), "{table}");
    let csv = fs::read_to_string(e.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("view,psnr,ssim,nv_ari,iou_bg,iou_fg,miou,pooled_ari"));
    let mask = nfseg::image_io::read_png(&e.join("masks/view_000.png")).unwrap();
    assert!(mask.data.iter().all(|&l| l < 3));

    let out = nfseg(&["eval", "--checkpoint", p(&run.join("stage1.ckpt")), "--scene", p(&scene), "--out", p(&e)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn empty_test_split_is_an_explicit_error() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("scene");
    tiny_scene(&scene);
    let cfg = t.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let run = t.path().join("run");
    ok(&["train", "--scene", p(&scene), "--config", p(&cfg), "--out", p(&run), "--quiet"]);
    let m = scene.join("scene.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&m).unwrap()).unwrap();
    let mut train: Vec<serde_json::Value> = v["split"]["train"].as_array().unwrap().clone();
    train.extend(v["split"]["test"].as_array().unwrap().iter().cloned());
    v["split"]["train"] = serde_json::Value::Array(train);
    v["split"]["test"] = serde_json::json!([]);
    fs::write(&m, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = nfseg(&["eval", "--checkpoint", p(&run.join("stage2.ckpt")), "--scene", p(&scene), "--out", p(&t.path().join("e"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test split"));
}
