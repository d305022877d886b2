mod support;

use std::collections::BTreeMap;
use std::path::Path;

use livmap_core::imagery::{
    save_activations, save_building_classes, save_images, save_outdoor_mask, GeoImage, ImageSource,
    SceneActivations, SCENE_CLASSES,
};
use livmap_core::model::{init_params_with_hidden, save_checkpoint};
use livmap_core::splits::save_squares;
use livmap_core::{CellId, ScoreGrid, SquareSpec};
use livmap_cli::{EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};
use support::{json, livmap, ok, s, step, synth};

fn write_grid(dir: &Path, w: u32, h: u32, squares: &[SquareSpec]) {
    let cells: BTreeMap<CellId, f64> = (0..w)
        .flat_map(|x| (0..h).map(move |y| (CellId::new(x, y), (x * 10 + y) as f64)))
        .collect();
    ScoreGrid::new(cells).unwrap().save(&dir.join("scores.csv")).unwrap();
    save_squares(&dir.join("squares.csv"), squares).unwrap();
}

fn split_args(dir: &Path, out: &Path) -> Vec<String> {
    vec![
        "split".into(),
        "--scores".into(),
        s(&dir.join("scores.csv")).into(),
        "--squares".into(),
        s(&dir.join("squares.csv")).into(),
        "--buffer".into(),
        "2".into(),
        "--out".into(),
        s(out).into(),
    ]
}

#[test]
fn split_stats_on_ten_by_ten_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_grid(dir.path(), 10, 10, &[SquareSpec::new(CellId::new(4, 4), 4)]);
    let out = dir.path().join("out");
    ok(split_args(dir.path(), &out));
    let stats = std::fs::read_to_string(out.join("split_stats.csv")).unwrap();
    let rows: Vec<&str> = stats.lines().collect();
    assert_eq!(rows[0], "subset,cells,cells_with_images,coverage_pct");
    assert!(rows[1].starts_with("train,36,"), "{stats}");
    assert!(rows[2].starts_with("val,48,"), "{stats}");
    assert!(rows[3].starts_with("test,16,"), "{stats}");
    assert!(rows[4].starts_with("total,100,"), "{stats}");
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["buffer"], 2);
    assert!(manifest["seed"].is_u64());
}

#[test]
fn split_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_grid(dir.path(), 14, 9, &[SquareSpec::new(CellId::new(1, 1), 3), SquareSpec::new(CellId::new(9, 4), 4)]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(split_args(dir.path(), &a));
    ok(split_args(dir.path(), &b));
    for f in ["splits.csv", "split_stats.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overlapping_squares_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    write_grid(dir.path(), 10, 10, &[SquareSpec::new(CellId::new(1, 1), 4), SquareSpec::new(CellId::new(3, 3), 4)]);
    let out = livmap(split_args(dir.path(), &dir.path().join("out")));
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("overlap"), "{err}");
    assert!(!dir.path().join("out/splits.csv").exists());
}

/// Six images over outdoor classes 100 and up, building classes 300..324.
/// Images 1, 2, 4 and 6 have at least 9 outdoor classes in their top ten.
fn write_corpus(dir: &Path, count: usize) {
    let top = |indoor: usize, building: f64| {
        let mut v = vec![0.0; SCENE_CLASSES];
        v[..indoor].fill(0.1);
        v[100..110 - indoor].fill(0.1);
        v[300] = building;
        v
    };
    let acts = [
        top(0, 0.0),
        top(1, 0.05),
        top(2, 0.0),
        top(1, 0.049),
        top(10, 0.2),
        top(0, 0.06),
    ];
    let images: Vec<GeoImage> = (0..count)
        .map(|i| GeoImage {
            image_id: i as u64 + 1,
            x: 10.0 * i as f64,
            y: 5.0,
            source: ImageSource::Flickr,
        })
        .collect();
    let acts: Vec<SceneActivations> = (0..count)
        .map(|i| SceneActivations::new(i as u64 + 1, acts[i].clone()).unwrap())
        .collect();
    save_images(&dir.join("images.csv"), &images).unwrap();
    save_activations(&dir.join("activations.csv"), &acts).unwrap();
    save_outdoor_mask(&dir.join("outdoor_mask.csv"), &(0..SCENE_CLASSES).map(|c| c >= 100).collect::<Vec<_>>()).unwrap();
    save_building_classes(&dir.join("building_classes.csv"), &(300..324).collect()).unwrap();
}

fn run_filter(dir: &Path, mode: &str, extra: &[&str]) -> (Vec<u64>, serde_json::Value) {
    let out = dir.join(format!("out_{mode}"));
    let mut args = vec![
        "filter",
        "--filter",
        mode,
        "--images",
        s(&dir.join("images.csv")),
        "--activations",
        s(&dir.join("activations.csv")),
        "--outdoor-mask",
        s(&dir.join("outdoor_mask.csv")),
        "--building-classes",
        s(&dir.join("building_classes.csv")),
        "--out",
        s(&out),
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(extra.iter().map(|a| a.to_string()));
    ok(args);
    let text = std::fs::read_to_string(out.join("retained.csv")).unwrap();
    let ids = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    (ids, json(&out.join("filter_report.json")))
}

#[test]
fn outdoors_filter_keeps_hand_derived_ids() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6);
    let (ids, report) = run_filter(dir.path(), "outdoors", &[]);
    assert_eq!(ids, vec![1, 2, 4, 6]);
    assert_eq!(report["input_count"], 6);
    assert_eq!(report["retained_count"], 4);
}

#[test]
fn buildings_filter_threshold_is_inclusive() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6);
    let (ids, report) = run_filter(dir.path(), "buildings", &["--threshold", "0.05"]);
    assert_eq!(ids, vec![2, 5, 6]);
    assert_eq!(report["building_threshold"], 0.05);
    let (ids, _) = run_filter(dir.path(), "buildings", &["--threshold", "0.1"]);
    assert_eq!(ids, vec![5]);
}

#[test]
fn empty_corpus_reports_zero_of_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 0);
    let (ids, report) = run_filter(dir.path(), "outdoors", &[]);
    assert!(ids.is_empty());
    assert_eq!(report["input_count"], 0);
    assert_eq!(report["retained_count"], 0);
    assert_eq!(report["retention_pct"], 0.0);
}

#[test]
fn no_ground_images_means_empty_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, &["--width", "12", "--height", "12", "--dim", "4", "--lambda", "0"]);
    let manifest = data.join("manifest.json");
    let out = livmap(["train", "--manifest", s(&manifest), "--ablate", "none", "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("empty") && err.contains("train"), "{err}");
    // the aerial-only model still has every cell
    step("train", &data, &dir.path().join("t2"), &["--ablate", "ground", "--epochs", "3"]);
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--width", "10", "--height", "8", "--dim", "5"];
    synth(&dir.path().join("a"), 9, &flags);
    synth(&dir.path().join("b"), 9, &flags);
    synth(&dir.path().join("c"), 10, &flags);
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    for f in ["scores.csv", "images.csv", "activations.csv", "aerial_features.csv", "ground_features.csv", "squares.csv"] {
        assert_eq!(read("a", f), read("b", f), "{f}");
    }
    assert_ne!(read("a", "scores.csv"), read("c", "scores.csv"));
}

/// Checkpoint that computes `scale * u·(a + ḡ)` exactly up to rounding:
/// batch norm is the identity and the two hidden units carry the positive
/// and negative parts.
fn oracle_checkpoint(data: &Path, path: &Path) {
    let summary = json(&data.join("synth.json"));
    let u: Vec<f64> = summary["direction"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let scale = summary["config"]["scale"].as_f64().unwrap();
    let d = u.len();
    let mut p = init_params_with_hidden(d, 2, 0);
    p.bn_gamma.fill(1.0);
    p.bn_beta.fill(0.0);
    p.bn_running_mean.fill(0.0);
    p.bn_running_var.fill(1.0 - 1e-5);
    for j in 0..d {
        p.w1[[0, j]] = scale * u[j];
        p.w1[[1, j]] = -scale * u[j];
    }
    p.b1.fill(0.0);
    p.w2[0] = 1.0;
    p.w2[1] = -1.0;
    p.b2 = 0.0;
    save_checkpoint(&p, path).unwrap();
}

#[test]
fn oracle_checkpoint_scores_tau_one_and_maps_match() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 5, &["--width", "20", "--height", "20", "--dim", "8", "--noise", "0"]);
    let ckpt = dir.path().join("oracle.ckpt");
    oracle_checkpoint(&data, &ckpt);
    let eval = dir.path().join("eval");
    step("eval", &data, &eval, &["--checkpoint", s(&ckpt)]);
    let metrics = json(&eval.join("metrics.json"));
    for split in ["train", "val", "test"] {
        assert_eq!(metrics["splits"][split]["tau"], 1.0, "{split}");
        assert!(metrics["splits"][split]["rmse"].as_f64().unwrap() < 1e-9);
    }
    let map = dir.path().join("map");
    step("map", &data, &map, &["--checkpoint", s(&ckpt), "--tile", "tile0"]);
    let truth = image::open(map.join("tile0_truth.png")).unwrap().to_rgb8();
    let pred = image::open(map.join("tile0_prediction.png")).unwrap().to_rgb8();
    assert_eq!(truth.dimensions(), pred.dimensions());
    assert!(truth.pixels().eq(pred.pixels()));
    assert!(!map.join("tile1_truth.png").exists());
}

#[test]
fn eval_and_map_reject_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, &["--width", "12", "--height", "12", "--dim", "4"]);
    let manifest = data.join("manifest.json");
    let wrong = dir.path().join("wrong.ckpt");
    save_checkpoint(&init_params_with_hidden(6, 3, 0), &wrong).unwrap();
    let out = livmap(["eval", "--manifest", s(&manifest), "--checkpoint", s(&wrong), "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));

    let good = dir.path().join("good.ckpt");
    save_checkpoint(&init_params_with_hidden(4, 3, 0), &good).unwrap();
    let out = livmap([
        "map",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&good),
        "--tile",
        "tile9",
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tile9"));
}

#[test]
fn exit_codes() {
    assert_eq!(livmap(["--help"]).status.code(), Some(EXIT_OK));
    assert_eq!(livmap(["train", "--no-such-flag"]).status.code(), Some(EXIT_VALIDATION));
    assert_eq!(livmap(["train", "--filter", "indoors"]).status.code(), Some(EXIT_VALIDATION));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(livmap(["train", "--manifest", s(&missing)]).status.code(), Some(EXIT_RUNTIME));

    let data = dir.path().join("data");
    synth(&data, 2, &["--width", "12", "--height", "12", "--dim", "4"]);
    let manifest = data.join("manifest.json");
    let out = livmap(["train", "--manifest", s(&manifest), "--lr", "1e300", "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(EXIT_RUNTIME));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn flags_override_the_manifest_and_outputs_record_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, &["--width", "12", "--height", "12", "--dim", "4"]);
    let out = dir.path().join("t");
    step("train", &data, &out, &["--epochs", "3", "--seed", "77"]);
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch,train_loss,val_rmse,val_tau\n"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["epochs"], 3);
    assert_eq!(m["seed"], 77);
    assert_eq!(m["lr"], 0.001);
    assert_eq!(json(&out.join("train_report.json"))["seed"], 77);
}

#[test]
fn synthetic_linear_data_reaches_validation_tau_after_25_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 42, &[]);
    let out = dir.path().join("t");
    step("train", &data, &out, &["--epochs", "25"]);
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let last = history.lines().last().unwrap();
    let tau: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(history.lines().count(), 26);
    assert!(tau >= 0.9, "{last}");
}
