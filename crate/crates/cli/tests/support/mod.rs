//! Helpers for driving the `livmap` binary from integration tests.

#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_livmap");

/// Runs the binary single-threaded.
pub fn livmap<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(BIN)
        .args(args)
        .env("LIVMAP_THREADS", "1")
        .output()
        .expect("spawn livmap")
}

/// Runs the binary and panics with its stderr unless it succeeds.
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let args: Vec<_> = args.into_iter().map(|a| a.as_ref().to_os_string()).collect();
    let out = livmap(&args);
    assert!(
        out.status.success(),
        "livmap {:?} failed ({:?}):\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// `livmap synth` into `out` with extra flags.
pub fn synth(out: &Path, seed: u64, extra: &[&str]) {
    let seed = seed.to_string();
    let mut args = vec!["synth", "--seed", &seed, "--out", s(out)];
    args.extend_from_slice(extra);
    ok(args);
}

/// `livmap <cmd>` on a synthetic dataset directory.
pub fn step(cmd: &str, data: &Path, out: &Path, extra: &[&str]) -> Output {
    let manifest = data.join("manifest.json");
    let mut args = vec![cmd, "--manifest", s(&manifest), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(args)
}

pub fn json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("valid json")
}

/// Test-split `(tau, rmse)` from an eval directory.
pub fn test_metrics(eval_dir: &Path) -> (f64, f64) {
    let m = json(&eval_dir.join("metrics.json"));
    let t = &m["splits"]["test"];
    (t["tau"].as_f64().expect("tau"), t["rmse"].as_f64().expect("rmse"))
}

/// Trains and evaluates one configuration; returns the eval directory.
pub fn train_eval(data: &Path, out: &Path, extra: &[&str]) -> std::path::PathBuf {
    let train = out.join("train");
    let eval = out.join("eval");
    step("train", data, &train, extra);
    let ckpt = train.join("model.ckpt");
    let mut eval_args = extra.to_vec();
    eval_args.extend_from_slice(&["--checkpoint", s(&ckpt)]);
    step("eval", data, &eval, &eval_args);
    eval
}
