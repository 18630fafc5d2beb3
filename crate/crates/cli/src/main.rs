//! `wlembed`: trace generation, training, evaluation and configuration
//! recommendation from the command line.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wlembed_core::eval::Variant;
use wlembed_core::predictor::Pool;
use wlembed_core::tuner::{RankedConfig, DEFAULT_GRID_CAP, DEFAULT_TOP_M};
use wlembed_core::{
    evaluate_model, generate, parse_trace_csv, recommend_with, run_comparison, split_workloads, train_model, AdmissionScheme,
    CoreError, Hyper, KnobSpace, LatencyModel, Method, SynthSpec, TraceSet, TrainedModel, TunerOptions,
};

const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Parser, Debug)]
#[command(name = "wlembed", version, about = "Workload encodings for latency prediction and knob tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trace set with its ground truth.
    Generate(GenerateArgs),
    /// Split a trace set by workload into train and test files.
    Split(SplitArgs),
    /// Train one encoding method and its latency regressor.
    Train(TrainArgs),
    /// Score a trained model on unseen workloads under admission schemes.
    Evaluate(EvaluateArgs),
    /// Recommend the grid configuration with the lowest predicted latency.
    Recommend(RecommendArgs),
    /// Train and evaluate every method over seeded workload splits.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// SynthSpec JSON; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct HyperArgs {
    /// JSON object of hyperparameters layered over the method defaults.
    #[arg(long)]
    hyper: Option<PathBuf>,
    /// `key=value` override, applied after `--hyper`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    method: String,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Raw traces of workloads unseen in training.
    #[arg(long)]
    traces: PathBuf,
    /// `shared` or `arbitrary`; every pool when omitted.
    #[arg(long)]
    scheme: Option<String>,
    /// Admitted observations per workload, 1 or 5; both when omitted.
    #[arg(long)]
    obs: Option<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Knob space JSON in raw units.
    #[arg(long)]
    knobspace: PathBuf,
    /// Raw traces holding the new workload's observations; the first row
    /// is the initial configuration.
    #[arg(long)]
    traces: PathBuf,
    /// Workload to tune; required when the file holds several.
    #[arg(long)]
    workload: Option<String>,
    /// Observations admitted to build the encoding, taken in file order.
    #[arg(long)]
    obs: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID_CAP)]
    grid_cap: u128,
    #[arg(long, default_value_t = DEFAULT_TOP_M)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    traces: PathBuf,
    /// Comma-separated variant labels; the full sweep when omitted.
    #[arg(long)]
    methods: Option<String>,
    /// `key=value` override applied to every variant; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Everything that determines a run besides the input file contents.
#[derive(Serialize, Debug, Default)]
struct RunConfig {
    command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    traces: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    knobspace: Option<PathBuf>,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hyper: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    schemes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    workload: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    obs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_cap: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top: Option<usize>,
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_traces(path: &Path) -> anyhow::Result<TraceSet> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_trace_csv(&bytes).with_context(|| format!("bad trace file {}", path.display()))
}

fn write_file(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn pretty<T: Serialize>(v: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn echo_config(dir: &Path, rc: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_file(dir, RUN_CONFIG_FILE, &pretty(rc)?)
}

fn resolve_hyper(method: Method, args: &HyperArgs, seed: Option<u64>) -> anyhow::Result<Hyper> {
    let mut h = Hyper::for_method(method);
    if let Some(path) = &args.hyper {
        let value: serde_json::Value =
            serde_json::from_str(&read_text(path)?).with_context(|| format!("bad hyperparameter file {}", path.display()))?;
        let obj = value.as_object().ok_or_else(|| anyhow!("hyperparameter file must hold a JSON object"))?;
        for (k, v) in obj {
            h.set(&format!("{k}={v}"))?;
        }
    }
    for s in &args.set {
        h.set(s)?;
    }
    if let Some(seed) = seed {
        h.seed = seed;
    }
    h.validate()?;
    Ok(h)
}

fn parse_schemes(scheme: Option<&str>, obs: Option<usize>) -> anyhow::Result<Vec<AdmissionScheme>> {
    let pools = match scheme {
        Some(s) => vec![s.parse::<Pool>()?],
        None => vec![Pool::Shared, Pool::Arbitrary],
    };
    let counts = match obs {
        Some(n) => vec![n],
        None => vec![5, 1],
    };
    let mut out = Vec::new();
    for &pool in &pools {
        for &n in &counts {
            out.push(AdmissionScheme::new(pool, n)?);
        }
    }
    Ok(out)
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(path) => serde_json::from_str::<SynthSpec>(&read_text(path)?).with_context(|| format!("bad spec file {}", path.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let (traces, truth) = generate(&spec)?;
    echo_config(
        &a.out,
        &RunConfig { command: "generate".into(), spec: Some(serde_json::to_value(&spec)?), out: a.out.clone(), seed: Some(spec.seed), ..Default::default() },
    )?;
    write_file(&a.out, "traces.csv", &traces.to_csv())?;
    write_file(&a.out, "ground_truth.json", &format!("{}\n", truth.to_json()))?;
    write_file(&a.out, "knobspace.json", &pretty(&truth.knob_space())?)?;
    println!("wrote {} observations of {} workloads to {}", traces.len(), spec.n_workloads(), a.out.display());
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> anyhow::Result<()> {
    let traces = read_traces(&a.traces)?;
    let (train, test) = split_workloads(&traces, a.test_fraction, a.seed)?;
    echo_config(
        &a.out,
        &RunConfig {
            command: "split".into(),
            traces: Some(a.traces.clone()),
            out: a.out.clone(),
            seed: Some(a.seed),
            test_fraction: Some(a.test_fraction),
            ..Default::default()
        },
    )?;
    write_file(&a.out, "train.csv", &train.to_csv())?;
    write_file(&a.out, "test.csv", &test.to_csv())?;
    println!("{} train / {} test workloads", train.workload_ids().len(), test.workload_ids().len());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let method: Method = a.method.parse()?;
    let hyper = resolve_hyper(method, &a.hyper, a.seed)?;
    let traces = read_traces(&a.traces)?;
    echo_config(
        &a.out,
        &RunConfig {
            command: "train".into(),
            traces: Some(a.traces.clone()),
            out: a.out.clone(),
            method: Some(method.name().into()),
            hyper: Some(serde_json::to_value(&hyper)?),
            seed: Some(hyper.seed),
            ..Default::default()
        },
    )?;
    let model = train_model(method, &traces, &hyper)?;
    model.save(&a.out)?;
    for log in &model.logs {
        if let Some(last) = log.epoch_loss.last() {
            println!("{}: {} epochs, final loss {last:.6}", log.stage, log.epoch_loss.len());
        }
    }
    Ok(())
}

/// Encodings of the test observations: one row per observation for
/// encoder methods, one row per workload for the embedding architecture.
fn encodings_csv(model: &TrainedModel, test_raw: &TraceSet) -> anyhow::Result<String> {
    let test = model.scale(test_raw)?;
    let k = model.model.k();
    let mut out = String::from("workload_id,template_id");
    for i in 0..k {
        out.push_str(&format!(",z{i}"));
    }
    out.push('\n');
    let mut push = |w: &str, t: &Option<String>, z: &[f64]| {
        out.push_str(w);
        out.push(',');
        out.push_str(t.as_deref().unwrap_or(""));
        for v in z {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    };
    let obs = test.observations();
    match &model.model {
        LatencyModel::Encoded { embedder, .. } => {
            for o in obs {
                push(&o.workload_id, &o.template_id, &embedder.encode(&o.metrics)?);
            }
        }
        LatencyModel::Embedding { .. } => {
            for (id, rows) in test.by_workload() {
                let n = model.model.min_admission();
                if rows.len() < n {
                    continue;
                }
                let adm: Vec<_> = rows[..n].iter().map(|&r| &obs[r]).collect();
                let z = model.model.admit(&id, &adm)?;
                push(&id, &obs[rows[0]].template_id, &z);
            }
        }
    }
    Ok(out)
}

fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let schemes = parse_schemes(a.scheme.as_deref(), a.obs)?;
    let model = TrainedModel::load(&a.model)?;
    let test = read_traces(&a.traces)?;
    echo_config(
        &a.out,
        &RunConfig {
            command: "evaluate".into(),
            traces: Some(a.traces.clone()),
            model: Some(a.model.clone()),
            out: a.out.clone(),
            method: Some(model.info.method.name().into()),
            schemes: schemes.iter().map(ToString::to_string).collect(),
            obs: a.obs,
            runs: Some(a.runs),
            seed: Some(a.seed),
            ..Default::default()
        },
    )?;
    let report = evaluate_model(model.info.method.name(), &model, &test, &schemes, a.runs, a.seed)?;
    write_file(&a.out, "report.json", &format!("{}\n", report.to_json()))?;
    let table = report.to_table();
    write_file(&a.out, "report.txt", &table)?;
    write_file(&a.out, "encodings.csv", &encodings_csv(&model, &test)?)?;
    print!("{table}");
    Ok(())
}

/// Recommendation in raw knob units.
#[derive(Serialize, Debug)]
struct RawRecommendation {
    workload_id: String,
    knobs: Vec<String>,
    chosen_config: Vec<f64>,
    predicted_latency: f64,
    initial_config: Vec<f64>,
    initial_latency: f64,
    predicted_improvement: f64,
    grid_size: u128,
    skipped: usize,
    top: Vec<RankedConfig>,
}

fn cmd_recommend(a: &RecommendArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let raw_space = KnobSpace::from_json(&read_text(&a.knobspace)?)?;
    let traces = read_traces(&a.traces)?;
    let groups = traces.by_workload();
    let (workload, rows) = match &a.workload {
        Some(w) => groups.into_iter().find(|(id, _)| id == w).ok_or_else(|| anyhow!("workload '{w}' not found in {}", a.traces.display()))?,
        None if groups.len() == 1 => groups.into_iter().next().expect("one workload"),
        None => bail!("the trace file holds several workloads; pass --workload"),
    };
    if model.info.train_workloads.contains(&workload) {
        bail!("workload '{workload}' was seen in training");
    }
    let n = a.obs.unwrap_or(model.model.min_admission());
    if n == 0 || n > rows.len() {
        bail!("cannot admit {n} observations from {} available", rows.len());
    }
    echo_config(
        &a.out,
        &RunConfig {
            command: "recommend".into(),
            traces: Some(a.traces.clone()),
            model: Some(a.model.clone()),
            knobspace: Some(a.knobspace.clone()),
            out: a.out.clone(),
            method: Some(model.info.method.name().into()),
            workload: Some(workload.clone()),
            obs: Some(n),
            grid_cap: Some(a.grid_cap),
            top: Some(a.top),
            ..Default::default()
        },
    )?;
    let raw_obs = traces.observations();
    let admitted = rows[..n].iter().map(|&r| model.scale_observation(&raw_obs[r])).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = admitted.iter().collect();
    let z = model.model.admit(&workload, &refs)?;
    let space = raw_space.to_scaled(&model.scaler)?;
    let initial = &raw_obs[rows[0]];
    let opts = TunerOptions { grid_cap: a.grid_cap, top_m: a.top, ..TunerOptions::default() };
    let rec = recommend_with(|c| model.model.predict(&z, c), &space, &admitted[0].config, initial.latency, opts)?;
    let out = RawRecommendation {
        workload_id: workload,
        knobs: raw_space.knobs.iter().map(|k| k.name.clone()).collect(),
        chosen_config: raw_space.raw_point(&space, &rec.chosen_config)?,
        predicted_latency: rec.predicted_latency,
        initial_config: initial.config.clone(),
        initial_latency: initial.latency,
        predicted_improvement: 1.0 - rec.predicted_latency / initial.latency,
        grid_size: rec.grid_size,
        skipped: rec.skipped,
        top: rec
            .top
            .iter()
            .map(|t| Ok(RankedConfig { config: raw_space.raw_point(&space, &t.config)?, predicted_latency: t.predicted_latency }))
            .collect::<Result<_, CoreError>>()?,
    };
    write_file(&a.out, "recommendation.json", &pretty(&out)?)?;
    println!("{}", serde_json::to_string(&out.chosen_config)?);
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> anyhow::Result<()> {
    let mut variants = Variant::standard_sweep();
    if let Some(list) = &a.methods {
        let wanted: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let known: HashSet<&str> = variants.iter().map(|v| v.label.as_str()).collect();
        if let Some(bad) = wanted.iter().find(|w| !known.contains(**w)) {
            bail!("unknown variant '{bad}'");
        }
        variants.retain(|v| wanted.contains(&v.label.as_str()));
    }
    for v in &mut variants {
        for s in &a.set {
            v.hyper.set(s)?;
        }
        v.hyper.validate()?;
    }
    let traces = read_traces(&a.traces)?;
    let schemes = AdmissionScheme::ALL;
    echo_config(
        &a.out,
        &RunConfig {
            command: "compare".into(),
            traces: Some(a.traces.clone()),
            out: a.out.clone(),
            hyper: Some(serde_json::to_value(&variants)?),
            schemes: schemes.iter().map(ToString::to_string).collect(),
            runs: Some(a.runs),
            seed: Some(a.seed),
            test_fraction: Some(a.test_fraction),
            ..Default::default()
        },
    )?;
    let report = run_comparison(&traces, &variants, &schemes, a.runs, a.test_fraction, a.seed)?;
    write_file(&a.out, "report.json", &format!("{}\n", report.to_json()))?;
    let table = report.to_table();
    write_file(&a.out, "report.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<CoreError>().is_some_and(CoreError::is_numerical));
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
