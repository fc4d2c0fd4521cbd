#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const CHAIN: [&str; 7] = [
    "gen-data",
    "train",
    "trace",
    "allocate",
    "quantize",
    "export-ir",
    "run-ir",
];

/// Small but complete pipeline config writing into `out`.
pub fn small_config(dir: &Path, out: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "data": {"source": "synthetic", "rows": 2000},
        "train": {"epochs": 3, "batch_size": 64, "learning_rate": 0.003},
        "hessian": {"k": 10},
        "qat": {"epochs": 1, "batch_size": 64, "learning_rate": 0.001},
        "sweep": {"sample": {"count": 5}, "qat": {"epochs": 1, "batch_size": 64}},
        "seed": 11,
        "out": out,
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn mpq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpq"))
        .args(args)
        .output()
        .expect("spawn mpq")
}

pub fn mpq_ok(args: &[&str]) -> String {
    let o = mpq(args);
    assert!(
        o.status.success(),
        "mpq {args:?} exited with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Runs `commands` in order; stops at the first failure and returns it.
pub fn run_chain(commands: &[&str], config: &Path) -> Result<(), String> {
    for c in commands {
        let o = mpq(&[c, "--config", config.to_str().unwrap()]);
        if !o.status.success() {
            return Err(format!(
                "{c} exited with {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stderr)
            ));
        }
    }
    Ok(())
}

/// Reruns each command from its manifest in `a` into `b` and lists the
/// non-manifest files whose bytes differ.
pub fn rerun_from_manifests(commands: &[&str], a: &Path, b: &Path) -> Result<Vec<String>, String> {
    for c in commands {
        let manifest = a.join(format!("manifest-{c}.json"));
        let o = mpq(&[c, "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
        if !o.status.success() {
            return Err(format!("rerun of {c} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    let mut diffs = Vec::new();
    for entry in std::fs::read_dir(a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.starts_with("manifest-") {
            continue;
        }
        if std::fs::read(a.join(&name)).ok() != std::fs::read(b.join(&name)).ok() {
            diffs.push(name);
        }
    }
    Ok(diffs)
}
