mod support;

use support::{ok, wlembed, Workspace, QUICK, SMALL_SPEC};

fn code(args: &[&str]) -> i32 {
    wlembed(args).status.code().expect("exit code")
}

fn generated(ws: &Workspace) -> String {
    let spec = ws.write("spec.json", SMALL_SPEC);
    ok(&["generate", "--spec", &spec, "--out", &ws.arg("gen")]);
    format!("{}/traces.csv", ws.arg("gen"))
}

fn train_args<'a>(traces: &'a str, method: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut a = vec!["train", "--traces", traces, "--method", method, "--out", out];
    a.extend(QUICK);
    a
}

#[test]
fn every_step_reruns_byte_identically() {
    let ws = Workspace::new();
    for (name, r) in support::reproducibility(&ws) {
        let files = r.unwrap_or_else(|d| panic!("{name}: {d:?} differ"));
        assert!(files.contains_key("run_config.json"), "{name}");
    }
}

#[test]
fn generate_writes_the_default_trace_shape() {
    let ws = Workspace::new();
    ok(&["generate", "--out", &ws.arg("gen")]);
    let csv = std::fs::read_to_string(ws.path("gen").join("traces.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1201);
    for f in ["ground_truth.json", "knobspace.json", "run_config.json"] {
        assert!(ws.path("gen").join(f).exists(), "{f}");
    }
}

#[test]
fn usage_and_input_errors_exit_2() {
    let ws = Workspace::new();
    let traces = generated(&ws);
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["train", "--traces", &traces]), 2);
    assert_eq!(code(&train_args(&traces, "bogus", &ws.arg("m"))), 2);
    let bad = ws.write("bad.json", "{\"n_templates\": ");
    assert_eq!(code(&["generate", "--spec", &bad, "--out", &ws.arg("g2")]), 2);
    let unknown = ws.write("unknown.json", "{\"n_templatez\": 2}");
    assert_eq!(code(&["generate", "--spec", &unknown, "--out", &ws.arg("g3")]), 2);
    assert_eq!(code(&["split", "--traces", &ws.arg("missing.csv"), "--out", &ws.arg("s")]), 2);
    let garbage = ws.write("garbage.csv", "workload_id,latency\nw,abc\n");
    assert_eq!(code(&["split", "--traces", &garbage, "--out", &ws.arg("s")]), 2);
    let m = ws.arg("m");
    let mut set = train_args(&traces, "pca", &m);
    set.extend(["--set", "nope=1"]);
    assert_eq!(code(&set), 2);
}

#[test]
fn divergent_training_exits_3() {
    let ws = Workspace::new();
    let traces = generated(&ws);
    let m = ws.arg("m");
    let mut a = train_args(&traces, "custom_ae", &m);
    a.extend(["--set", "lr=1e200"]);
    let out = wlembed(&a);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn evaluation_report_has_four_scheme_columns() {
    let ws = Workspace::new();
    let traces = generated(&ws);
    ok(&["split", "--traces", &traces, "--test-fraction", "0.25", "--out", &ws.arg("split")]);
    let train = format!("{}/train.csv", ws.arg("split"));
    let test = format!("{}/test.csv", ws.arg("split"));
    ok(&train_args(&train, "identity", &ws.arg("m")));
    let out = ok(&["evaluate", "--model", &ws.arg("m"), "--traces", &test, "--runs", "2", "--out", &ws.arg("e")]);
    let table = String::from_utf8(out.stdout).unwrap();
    let header = table.lines().next().unwrap();
    for col in ["Shared 5", "Shared 1", "Arbitrary 5", "Arbitrary 1"] {
        assert!(header.contains(col), "{header}");
    }
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("identity"));
    assert_eq!(row.split_whitespace().count(), 5, "{row}");
    assert_eq!(std::fs::read_to_string(ws.path("e").join("report.txt")).unwrap(), table);
    let enc = std::fs::read_to_string(ws.path("e").join("encodings.csv")).unwrap();
    let test_rows = std::fs::read_to_string(&test).unwrap().lines().count();
    assert_eq!(enc.lines().count(), test_rows);
}

#[test]
fn evaluating_training_workloads_is_refused() {
    let ws = Workspace::new();
    let traces = generated(&ws);
    ok(&["split", "--traces", &traces, "--test-fraction", "0.25", "--out", &ws.arg("split")]);
    let train = format!("{}/train.csv", ws.arg("split"));
    ok(&train_args(&train, "identity", &ws.arg("m")));
    let out = wlembed(&["evaluate", "--model", &ws.arg("m"), "--traces", &train, "--runs", "1", "--out", &ws.arg("e")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seen in training"));
}

#[test]
fn single_point_grid_recommends_that_point() {
    let ws = Workspace::new();
    let traces = generated(&ws);
    ok(&["split", "--traces", &traces, "--test-fraction", "0.25", "--out", &ws.arg("split")]);
    let train = format!("{}/train.csv", ws.arg("split"));
    let test = format!("{}/test.csv", ws.arg("split"));
    ok(&train_args(&train, "pca", &ws.arg("m")));
    let space: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("gen").join("knobspace.json")).unwrap()).unwrap();
    let mut one = space.clone();
    let mut expected = Vec::new();
    for knob in one["knobs"].as_array_mut().unwrap() {
        let c = knob["candidates"][1].clone();
        expected.push(c.as_f64().unwrap());
        knob["candidates"] = serde_json::json!([c]);
    }
    let ks = ws.write("one.json", &one.to_string());
    let workload = support::first_workload(&ws.path("split").join("test.csv"));
    ok(&["recommend", "--model", &ws.arg("m"), "--knobspace", &ks, "--traces", &test, "--workload", &workload, "--out", &ws.arg("r")]);
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("r").join("recommendation.json")).unwrap()).unwrap();
    assert_eq!(rec["grid_size"], 1);
    let chosen: Vec<f64> = rec["chosen_config"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(chosen, expected);

    let several = wlembed(&["recommend", "--model", &ws.arg("m"), "--knobspace", &ks, "--traces", &test, "--out", &ws.arg("r2")]);
    assert_eq!(several.status.code(), Some(2));
    let capped = wlembed(&[
        "recommend", "--model", &ws.arg("m"), "--knobspace", &format!("{}/knobspace.json", ws.arg("gen")), "--traces", &test, "--workload",
        &workload, "--grid-cap", "10", "--out", &ws.arg("r3"),
    ]);
    assert_eq!(capped.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&capped.stderr).contains("coarser"));
}
