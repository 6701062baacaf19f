//! End-to-end runs of the `bdgnet` binary on small synthetic datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bdgnet::bdm::{ideal_bdm_with, BdmOptions, BinaryMask, BoundaryDistributionMap, BoundaryMode};
use bdgnet::checkpoint;
use bdgnet::metrics::CSV_HEADER;
use bdgnet::network::count_flops;
use bdgnet::train::LOG_HEADER;
use image::{GrayImage, Luma, Rgb, RgbImage};
use tempfile::TempDir;

fn bdgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdgnet")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = bdgnet(args);
    assert!(
        out.status.success(),
        "bdgnet {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Ellipse mask number `k` of a `h x w` image.
fn ellipse(k: usize, h: usize, w: usize) -> BinaryMask {
    let (cy, cx) = (h as f64 * (0.4 + 0.05 * k as f64), w as f64 * (0.5 - 0.04 * k as f64));
    let (ry, rx) = (h as f64 * 0.22, w as f64 * (0.18 + 0.02 * k as f64));
    BinaryMask::from_fn(h, w, |r, c| {
        let (dy, dx) = ((r as f64 - cy) / ry, (c as f64 - cx) / rx);
        dy * dy + dx * dx <= 1.0
    })
}

/// Reddish polyp on a darker textured background.
fn image_for(mask: &BinaryMask, k: usize) -> RgbImage {
    RgbImage::from_fn(mask.width() as u32, mask.height() as u32, |c, r| {
        let t = ((r as usize * 7 + c as usize * 3 + k * 11) % 17) as u8;
        if mask.get(r as usize, c as usize) {
            Rgb([200 + t, 90 + t, 80])
        } else {
            Rgb([60 + t, 40, 50 + t])
        }
    })
}

/// Writes `n` image/mask pairs of size `h x w` and a layout manifest;
/// returns the manifest path.
fn synthetic_dataset(dir: &Path, n: usize, h: usize, w: usize, train_count: Option<usize>) -> PathBuf {
    fs::create_dir_all(dir.join("images")).unwrap();
    fs::create_dir_all(dir.join("masks")).unwrap();
    for k in 0..n {
        let mask = ellipse(k, h, w);
        image_for(&mask, k).save(dir.join(format!("images/case{k}.png"))).unwrap();
        mask.save(&dir.join(format!("masks/case{k}.png"))).unwrap();
    }
    let count = train_count.map(|c| format!("train_count = {c}\n")).unwrap_or_default();
    let manifest = dir.join("layout.toml");
    fs::write(&manifest, format!("[datasets.toy]\nimages = \"images\"\nmasks = \"masks\"\n{count}")).unwrap();
    manifest
}

fn tiny_train_args<'a>(manifest: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--manifest",
        manifest,
        "--output-dir",
        out,
        "--input-size",
        "64",
        "--decoder-channels",
        "8",
        "--batch-size",
        "2",
        "--iterations",
        "4",
        "--checkpoint-every",
        "2",
        "--seed",
        "3",
    ]
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    files_in(dir).into_iter().map(|n| (n.clone(), fs::read(dir.join(&n)).unwrap())).collect()
}

#[test]
fn gen_bdm_writes_preview_and_raw_grid_per_mask() {
    let tmp = TempDir::new().unwrap();
    let masks = tmp.path().join("masks");
    fs::create_dir_all(&masks).unwrap();
    for k in 0..4 {
        ellipse(k, 40, 48).save(&masks.join(format!("m{k}.png"))).unwrap();
    }
    let out = tmp.path().join("bdm");
    run_ok(&["gen-bdm", "--mask-dir", s(&masks), "--out-dir", s(&out), "--sigma", "5"]);
    let names = files_in(&out);
    assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".bdm")).count(), 4);

    let raw = BoundaryDistributionMap::load_raw(&out.join("m2.bdm")).unwrap();
    let opts = BdmOptions { sigma: 5.0, normalized: true, boundary: BoundaryMode::Inner };
    let expected = ideal_bdm_with(&ellipse(2, 40, 48), &opts).unwrap();
    assert_eq!((raw.height, raw.width), (40, 48));
    for (a, b) in raw.values.iter().zip(&expected.values) {
        assert_eq!(*a as f32, *b as f32);
    }

    let first = snapshot(&out);
    run_ok(&["gen-bdm", "--mask-dir", s(&masks), "--out-dir", s(&out), "--sigma", "5"]);
    assert_eq!(snapshot(&out), first, "rerun must be byte-identical");
}

#[test]
fn gen_bdm_sigma_sweep_makes_one_subdir_per_value() {
    let tmp = TempDir::new().unwrap();
    let masks = tmp.path().join("masks");
    fs::create_dir_all(&masks).unwrap();
    ellipse(0, 32, 32).save(&masks.join("a.png")).unwrap();
    let out = tmp.path().join("sweep");
    run_ok(&["gen-bdm", "--mask-dir", s(&masks), "--out-dir", s(&out), "--sigma", "1,3,5,7", "--normalized", "false"]);
    assert_eq!(files_in(&out), ["sigma_1", "sigma_3", "sigma_5", "sigma_7"]);
    let raw = BoundaryDistributionMap::load_raw(&out.join("sigma_3/a.bdm")).unwrap();
    assert!(!raw.normalized);
    assert_eq!(raw.sigma, 3.0);
}

#[test]
fn train_writes_consistent_reproducible_logs_and_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let manifest = synthetic_dataset(&tmp.path().join("data"), 5, 48, 56, Some(4));
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    run_ok(&tiny_train_args(s(&manifest), s(&a)));
    run_ok(&tiny_train_args(s(&manifest), s(&b)));

    let log = fs::read_to_string(a.join("log.csv")).unwrap();
    assert_eq!(log, fs::read_to_string(b.join("log.csv")).unwrap(), "seeded runs must log identically");
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1) as f64);
        assert_eq!(row[1], row[2] + row[3] + row[4], "total must equal the component sum");
    }

    let names = files_in(&a);
    for expected in ["checkpoint-2.toml", "checkpoint-2.bin", "checkpoint.toml", "checkpoint.bin", "config.toml", "split.txt"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
    let (_, manifest) = checkpoint::load(&a.join("checkpoint.toml")).unwrap();
    assert_eq!(manifest.iterations, 4);
    assert_eq!(manifest.network.input_size, 64);
}

#[test]
fn train_flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let manifest = synthetic_dataset(&tmp.path().join("data"), 2, 32, 32, None);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n\n[network]\ninput_size = 64\ndecoder_channels = 8\nsigma = 3.0\n\n[optimizer]\niterations = 1\nbatch_size = 2\n").unwrap();
    let out = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        s(&cfg),
        "--manifest",
        s(&manifest),
        "--output-dir",
        s(&out),
        "--no-bdgm",
        "--no-bdgd",
        "--skip-levels",
        "2,3,4",
        "--set",
        "loss.lambda=0.05",
    ]);
    let written = bdgnet::config::RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(written.network.sigma, 3.0);
    assert_eq!(written.network.skip_levels, vec![2, 3, 4]);
    assert!(!written.network.use_bdgm && !written.network.use_bdgd);
    assert_eq!(written.loss.lambda, 0.05);
    assert_eq!(written.seed, 1);
}

#[test]
fn eval_reports_metrics_and_flops_line() {
    let tmp = TempDir::new().unwrap();
    let manifest = synthetic_dataset(&tmp.path().join("data"), 4, 48, 56, Some(2));
    let run = tmp.path().join("run");
    run_ok(&tiny_train_args(s(&manifest), s(&run)));
    let ckpt = run.join("checkpoint.toml");
    let out = tmp.path().join("eval");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--split",
        s(&run.join("split.txt")),
        "--out-dir",
        s(&out),
    ]);

    let network = checkpoint::load_manifest(&ckpt).unwrap().network;
    let flops = count_flops(&network).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("FLOPs:")).expect("FLOPs line");
    assert_eq!(line, format!("FLOPs: {flops} (64x64 input)"));

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 2 + 1, "two test images plus the mean row");
    assert!(lines[3].starts_with("mean,"));
    assert!(out.join("metrics.txt").exists());
}

#[test]
fn eval_of_perfect_predictions_is_all_ones() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    let manifest = synthetic_dataset(&data, 3, 40, 40, None);
    let out = tmp.path().join("eval");
    run_ok(&["eval", "--pred-dir", s(&data.join("masks")), "--manifest", s(&manifest), "--out-dir", s(&out)]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mean = csv.lines().last().unwrap();
    assert_eq!(mean, "mean,1.000000,1.000000,1.000000,1.000000,1.000000,0.000000");
}

#[test]
fn infer_writes_two_outputs_per_image_at_original_size() {
    let tmp = TempDir::new().unwrap();
    let manifest = synthetic_dataset(&tmp.path().join("data"), 2, 48, 56, None);
    let run = tmp.path().join("run");
    run_ok(&tiny_train_args(s(&manifest), s(&run)));

    let images = tmp.path().join("in");
    fs::create_dir_all(&images).unwrap();
    for (k, (h, w)) in [(50, 70), (33, 41), (64, 64)].into_iter().enumerate() {
        image_for(&ellipse(k, h, w), k).save(images.join(format!("img{k}.png"))).unwrap();
    }
    let ckpt = run.join("checkpoint.toml");
    let (a, b) = (tmp.path().join("out_a"), tmp.path().join("out_b"));
    run_ok(&["infer", "--checkpoint", s(&ckpt), "--image-dir", s(&images), "--out-dir", s(&a)]);
    run_ok(&["infer", "--checkpoint", s(&ckpt), "--image-dir", s(&images), "--out-dir", s(&b)]);

    assert_eq!(files_in(&a).len(), 6);
    let mask: GrayImage = image::open(a.join("img0_mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (70, 50));
    assert!(mask.pixels().all(|&Luma([v])| v == 0 || v == 255), "masks are binarized");
    assert_eq!(image::open(a.join("img1_bdm.png")).unwrap().to_luma8().dimensions(), (41, 33));
    assert_eq!(snapshot(&a), snapshot(&b), "inference must be deterministic");
}

#[test]
fn exit_codes_distinguish_usage_data_and_numerical_failures() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(bdgnet(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(bdgnet(&["train", "--input-size", "100"]).status.code(), Some(1));

    let data = tmp.path().join("data");
    let manifest = synthetic_dataset(&data, 2, 32, 32, None);
    fs::remove_file(data.join("masks/case1.png")).unwrap();
    let out = tmp.path().join("run");
    let res = bdgnet(&tiny_train_args(s(&manifest), s(&out)));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("case1"));

    let manifest = synthetic_dataset(&tmp.path().join("ok"), 2, 32, 32, None);
    let mut args = tiny_train_args(s(&manifest), s(&out));
    let iters = args.iter().position(|a| *a == "--iterations").unwrap();
    args[iters + 1] = "20";
    args.extend(["--lr", "1e30"]);
    let res = bdgnet(&args);
    assert_eq!(res.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let dump = fs::read_to_string(out.join("nonfinite.txt")).unwrap();
    assert!(dump.contains("case"), "{dump}");
}
