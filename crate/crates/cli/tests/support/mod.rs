//! Runs the `wlembed` binary and snapshots its output directories.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Output;

pub fn wlembed(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_wlembed")).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = wlembed(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// File name to contents for every file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        files.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap());
    }
    files
}
/// Artifacts of a step that reran identically, or the files that differed.
pub type Outcome = Result<BTreeMap<String, Vec<u8>>, Vec<String>>;


/// Runs `args` (whose `--out` is `out`) twice from a clean directory and
/// returns the first snapshot when both runs agree byte for byte, or the
/// names of the files that differ.
pub fn rerun(args: &[&str], out: &Path) -> Outcome {
    let _ = fs::remove_dir_all(out);
    ok(args);
    let first = snapshot(out);
    fs::remove_dir_all(out).unwrap();
    ok(args);
    let second = snapshot(out);
    let names: Vec<String> = first.keys().chain(second.keys()).cloned().collect();
    let differ: Vec<String> = names.into_iter().filter(|n| first.get(n) != second.get(n)).collect();
    if differ.is_empty() {
        Ok(first)
    } else {
        Err(differ)
    }
}

pub const SMALL_SPEC: &str = r#"{"n_templates": 3, "workloads_per_template": 4, "p": 8, "s": 3, "configs_per_workload": 12, "shared_config_count": 6}"#;

pub const QUICK: [&str; 12] = [
    "--set", "epochs=15", "--set", "reg_epochs=15", "--set", "hidden=[16]", "--set", "reg_hidden=[16]", "--set", "embed_dim=3", "--set",
    "incremental_epochs=40",
];

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    pub fn write(&self, name: &str, body: &str) -> String {
        fs::write(self.path(name), body).unwrap();
        self.arg(name)
    }
}

/// One step of the reproducibility pipeline.
pub struct Step {
    pub name: &'static str,
    pub args: Vec<String>,
    pub out: PathBuf,
}

/// Every subcommand on a small synthetic trace set, each step reading the
/// previous steps' outputs.
pub fn pipeline(ws: &Workspace) -> Vec<Step> {
    let spec = ws.write("spec.json", SMALL_SPEC);
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let quick: Vec<String> = QUICK.iter().map(|x| x.to_string()).collect();
    let mut train = s(&["train", "--traces", &format!("{}/train.csv", ws.arg("split")), "--method", "siamese", "--seed", "1", "--out", &ws.arg("model")]);
    train.extend(quick.clone());
    let mut compare = s(&[
        "compare", "--traces", &format!("{}/traces.csv", ws.arg("gen")), "--methods", "identity,pca,siamese", "--runs", "2", "--seed", "5", "--out",
        &ws.arg("compare"),
    ]);
    compare.extend(quick);
    vec![
        Step { name: "generate", args: s(&["generate", "--spec", &spec, "--seed", "7", "--out", &ws.arg("gen")]), out: ws.path("gen") },
        Step {
            name: "split",
            args: s(&["split", "--traces", &format!("{}/traces.csv", ws.arg("gen")), "--test-fraction", "0.25", "--seed", "2", "--out", &ws.arg("split")]),
            out: ws.path("split"),
        },
        Step { name: "train", args: train, out: ws.path("model") },
        Step {
            name: "evaluate",
            args: s(&["evaluate", "--model", &ws.arg("model"), "--traces", &format!("{}/test.csv", ws.arg("split")), "--runs", "2", "--out", &ws.arg("eval")]),
            out: ws.path("eval"),
        },
        Step {
            name: "recommend",
            args: s(&[
                "recommend", "--model", &ws.arg("model"), "--knobspace", &format!("{}/knobspace.json", ws.arg("gen")), "--traces",
                &format!("{}/test.csv", ws.arg("split")), "--workload", "FIRST_TEST", "--obs", "2", "--out", &ws.arg("rec"),
            ]),
            out: ws.path("rec"),
        },
        Step { name: "compare", args: compare, out: ws.path("compare") },
    ]
}

/// First workload id of a trace file.
pub fn first_workload(csv: &Path) -> String {
    let t = wlembed_core::parse_trace_csv(&fs::read(csv).unwrap()).unwrap();
    t.workload_ids()[0].clone()
}

/// Runs the pipeline with every step executed twice; returns each step's
/// name with its outcome.
pub fn reproducibility(ws: &Workspace) -> Vec<(&'static str, Outcome)> {
    let mut results = Vec::new();
    for mut step in pipeline(ws) {
        if let Some(p) = step.args.iter().position(|a| a == "FIRST_TEST") {
            step.args[p] = first_workload(&ws.path("split").join("test.csv"));
        }
        let args: Vec<&str> = step.args.iter().map(String::as_str).collect();
        results.push((step.name, rerun(&args, &step.out)));
    }
    results
}
