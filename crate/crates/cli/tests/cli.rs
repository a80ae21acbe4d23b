use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowfields::evaluation::{read_flo, write_flo};
use flowfields::imageio::{lab_to_rgb, save_mask, save_rgb};
use flowfields::synth::{fractal_texture, sintel_like_scene, translation_pair};
use flowfields::{FlowField, LabImage};
use tempfile::TempDir;

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowfields"));
    cmd.env("FLOWFIELDS_THREADS", "1");
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("spawn flowfields")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn save(dir: &TempDir, name: &str, img: &LabImage) -> PathBuf {
    let p = dir.path().join(name);
    save_rgb(&p, &lab_to_rgb(img)).unwrap();
    p
}

/// A translated pair written as PNGs plus its true flow as .flo.
fn pair(dir: &TempDir) -> (PathBuf, PathBuf, PathBuf) {
    let p = translation_pair(80, 64, [6.0, -3.0], 2);
    let a = save(dir, "a.png", &p.img1);
    let b = save(dir, "b.png", &p.img2);
    let gt = dir.path().join("gt.flo");
    write_flo(&gt, &p.gt.flow).unwrap();
    (a, b, gt)
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn exists(p: &Path) -> bool {
    std::fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false)
}

#[test]
fn identical_images_give_near_zero_flow() {
    let dir = TempDir::new().unwrap();
    let a = save(&dir, "a.png", &fractal_texture(64, 48, 1));
    let out = path(&dir, "out.flo");
    let viz = path(&dir, "viz.png");
    let o = run(&[&"match", &a, &a, &"-o", &out, &"--viz", &viz, &"--variant", &"plus", &"--k", &"2", &"--R", &"1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage"));
    let f = read_flo(&out).unwrap();
    assert_eq!(f.dims(), (64, 48));
    let near = f.flows().iter().filter(|v| v[0].hypot(v[1]) < 0.5).count();
    assert!(near as f64 >= 0.99 * (64 * 48) as f64);
    assert!(exists(&viz));
}

#[test]
fn fastx2_writes_a_stride_two_field() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = pair(&dir);
    let out = path(&dir, "out.flo");
    let o = run(&[&"match", &a, &b, &"-o", &out, &"--variant", &"fastx2", &"--k", &"2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = read_flo(&out).unwrap();
    for y in 0..64 {
        for x in 0..80 {
            assert_eq!(f.is_valid(x, y), x % 2 == 0 && y % 2 == 0);
        }
    }
}

#[test]
fn kitti_output_by_flag_or_extension() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = pair(&dir);
    let out = path(&dir, "out.png");
    let o = run(&[&"match", &a, &b, &"-o", &out, &"--variant", &"fast", &"--k", &"1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let k = flowfields::evaluation::read_kitti_png(&out).unwrap();
    assert_eq!(k.dims(), (80, 64));
    let forced = path(&dir, "forced.bin");
    let o = run(&[&"match", &a, &b, &"-o", &forced, &"--format", &"kitti", &"--variant", &"fast", &"--k", &"1"]);
    assert!(o.status.success());
    assert_eq!(&std::fs::read(&forced).unwrap()[1..4], b"PNG");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = TempDir::new().unwrap();
    let (a, _, _) = pair(&dir);
    let small = save(&dir, "small.png", &fractal_texture(40, 40, 3));
    let out = path(&dir, "x.flo");

    let o = run(&[&"match", &a, &small, &"-o", &out]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sizes differ"));

    // Parameters are checked before any file is touched.
    let o = run(&[&"match", &"missing1.png", &"missing2.png", &"-o", &out, &"--R", &"0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("random search distance"), "{}", stderr(&o));

    let o = run(&[&"match", &"missing1.png", &"missing2.png", &"-o", &out, &"--variant", &"fastx2", &"--k", &"0"]);
    assert!(stderr(&o).contains("fastx2 needs k >= 1"));

    let o = run(&[&"match", &a, &"missing.png", &"-o", &out]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.png"));
    assert!(!out.exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = pair(&dir);
    let cfg = path(&dir, "cfg.toml");
    std::fs::write(&cfg, "[match]\nvariant = \"fastx2\"\nk = 2\n").unwrap();
    let out = path(&dir, "c.flo");
    let o = run(&[&"match", &a, &b, &"-o", &out, &"--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!read_flo(&out).unwrap().is_valid(1, 1));

    let o = run(&[&"match", &a, &b, &"-o", &out, &"--config", &cfg, &"--variant", &"fast"]);
    assert!(o.status.success());
    assert!(read_flo(&out).unwrap().is_valid(1, 1));

    std::fs::write(&cfg, "[match]\nradius = 2\n").unwrap();
    let o = run(&[&"match", &a, &b, &"-o", &out, &"--config", &cfg]);
    assert!(!o.status.success());
}

#[test]
fn filter_then_eval() {
    let dir = TempDir::new().unwrap();
    let (a, b, gt) = pair(&dir);
    let (matches, mask, dense) = (path(&dir, "m.txt"), path(&dir, "mask.png"), path(&dir, "dense.flo"));
    let o = run(&[
        &"filter", &a, &b, &"-o", &matches, &"--mask", &mask, &"--dense", &dense, &"--variant", &"plus", &"--k", &"2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&matches).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 27 * 22);
    for l in &lines {
        let v: Vec<f32> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!(v.len(), 4);
        assert!((v[2] - v[0] - 6.0).abs() < 1.0 && (v[3] - v[1] + 3.0).abs() < 1.0);
    }
    assert!(exists(&mask));

    let json = path(&dir, "r.json");
    let o = run(&[&"eval", &dense, &gt, &"--json", &json]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report["epe"].as_f64().unwrap() < 1.0);

    // Sparse matches are densified on the fly.
    let o = run(&[&"eval", &matches, &gt]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("EPE"));

    let one_way = path(&dir, "m1.txt");
    let o = run(&[&"filter", &a, &b, &"-o", &one_way, &"--one-way", &"--q", &"4", &"--variant", &"fast", &"--k", &"1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&one_way).unwrap().lines().count() <= 20 * 16);
}

#[test]
fn filter_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b, _) = pair(&dir);
    let (m1, m2) = (path(&dir, "1.txt"), path(&dir, "2.txt"));
    for m in [&m1, &m2] {
        let o = run(&[&"filter", &a, &b, &"-o", m, &"--seed", &"5", &"--variant", &"fast", &"--k", &"1"]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
}

#[test]
fn eval_gate_and_mask() {
    let dir = TempDir::new().unwrap();
    let gt = path(&dir, "gt.flo");
    let truth = FlowField::from_fn(10, 10, |_, _| [1.0, 0.0]);
    write_flo(&gt, &truth).unwrap();

    let o = run(&[&"eval", &gt, &gt, &"--fail-if-epe-above", &"0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.0000"));

    // Wrong by 4 px on the left half only.
    let pred = path(&dir, "pred.flo");
    write_flo(&pred, &FlowField::from_fn(10, 10, |x, _| if x < 5 { [5.0, 0.0] } else { [1.0, 0.0] })).unwrap();
    let o = run(&[&"eval", &pred, &gt, &"--fail-if-epe-above", &"3.0"]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[&"eval", &pred, &gt, &"--fail-if-epe-above", &"1.0"]);
    assert_eq!(o.status.code(), Some(3));

    let mask = path(&dir, "nocc.png");
    let right: Vec<bool> = (0..100).map(|i| i % 10 >= 5).collect();
    save_mask(&mask, 10, 10, &right).unwrap();
    let o = run(&[&"eval", &pred, &gt, &"--nocc", &mask, &"--fail-if-epe-above", &"0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = run(&[&"eval", &pred, &gt, &"--nocc", &mask, &"--invert-mask", &"--fail-if-epe-above", &"3.9"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sieve_writes_named_curves() {
    let dir = TempDir::new().unwrap();
    let s = sintel_like_scene(96, 80, 2).render_pair();
    let (a, b) = (save(&dir, "a.png", &s.img1), save(&dir, "b.png", &s.img2));
    let gt = path(&dir, "gt.flo");
    write_flo(&gt, &s.gt.flow).unwrap();
    let csv = path(&dir, "s.csv");
    let o = run(&[&"sieve", &a, &b, &gt, &"--samples", &"200", &"--configs", &"1,2,1&2,1+2", &"-o", &csv]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "d_f,config,P,P_rel,samples");
    assert_eq!(rows.len(), 1 + 4 * 8);
    for name in ["1", "2", "1&2", "1+2"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(name)).count(), 8);
    }

    let o = run(&[&"sieve", &a, &b, &gt, &"--scales", &"1,2", &"--configs", &"4"]);
    assert!(!o.status.success());
    let o = run(&[&"sieve", &a, &b, &gt, &"--samples", &"0"]);
    assert!(!o.status.success());
}

#[test]
fn bench_nnf_table_and_guard() {
    let dir = TempDir::new().unwrap();
    let (a, b, gt) = pair(&dir);
    let o = run(&[&"bench-nnf", &a, &b, &"--gt", &gt, &"--crop", &"16x16+20+10", &"--variant", &"multiscale", &"--k", &"1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("nnf") && table.contains("multiscale"));

    let o = run(&[&"bench-nnf", &a, &b, &"--crop", &"80x64"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--allow-large"));
}
