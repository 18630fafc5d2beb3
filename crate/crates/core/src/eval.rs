//! MAPE scoring, admission-scheme evaluation and k-fold selection.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hyper::{Hyper, Method};
use crate::pipeline::{train_model, TrainedModel};
use crate::predictor::{pool_keys, AdmissionScheme, LatencyPredictor, Pool};
use crate::traces::{config_key, split_workloads, ConfigKey, TraceSet};
use crate::training::seeded;

/// Mean absolute percentage error, in percent.
pub fn mape(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() {
        return Err(CoreError::Dimension { expected: actuals.len(), got: predictions.len() });
    }
    if actuals.is_empty() {
        return Err(CoreError::invalid("mape needs at least one value"));
    }
    if let Some(a) = actuals.iter().find(|a| a.is_nan() || **a <= 0.0) {
        return Err(CoreError::invalid(format!("mape needs positive actuals, got {a}")));
    }
    let sum: f64 = predictions.iter().zip(actuals).map(|(p, a)| (p - a).abs() / a).sum();
    Ok(100.0 * sum / actuals.len() as f64)
}

/// Which test rows of one workload were admitted and which were scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadAudit {
    pub workload_id: String,
    pub admitted: Vec<usize>,
    pub scored: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: AdmissionScheme,
    /// MAPE over every scored (workload, configuration) pair.
    pub pooled_mape: f64,
    /// Mean of per-workload MAPEs.
    pub macro_mape: f64,
    pub n_scored: usize,
    pub audits: Vec<WorkloadAudit>,
}

/// Scores `model` on a scaled test set. For each workload the scheme
/// picks admitted rows, the encoding is built from them alone, and every
/// other row of the workload is predicted.
pub fn evaluate_scheme<P: LatencyPredictor + ?Sized>(
    model: &P,
    test_scaled: &TraceSet,
    shared: &HashSet<ConfigKey>,
    scheme: AdmissionScheme,
    seed: u64,
) -> Result<SchemeResult> {
    if scheme.n_obs < model.min_admission() {
        return Err(CoreError::NotApplicable(format!(
            "{scheme} admits fewer observations than the model's minimum of {}",
            model.min_admission()
        )));
    }
    let obs = test_scaled.observations();
    let keys: Vec<ConfigKey> = obs.iter().map(|o| config_key(&o.config)).collect();
    let mut preds = Vec::new();
    let mut actuals = Vec::new();
    let mut per_workload = Vec::new();
    let mut audits = Vec::new();
    for (w, (id, rows)) in test_scaled.by_workload().into_iter().enumerate() {
        let mut rng = seeded(seed, 10_000 + w as u64);
        let admitted = scheme.select(&id, &rows, &keys, shared, &mut rng)?;
        let scored: Vec<usize> = rows.iter().copied().filter(|r| !admitted.contains(r)).collect();
        if scored.is_empty() {
            return Err(CoreError::Scheme { workload: id, reason: "no observations left to score".into() });
        }
        let adm: Vec<_> = admitted.iter().map(|&r| &obs[r]).collect();
        let z = model.admit(&id, &adm)?;
        let configs: Vec<Vec<f64>> = scored.iter().map(|&r| obs[r].config.clone()).collect();
        let p = model.predict(&z, &configs)?;
        let a: Vec<f64> = scored.iter().map(|&r| obs[r].latency).collect();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!("non-finite prediction for workload '{id}'")));
        }
        per_workload.push(mape(&p, &a)?);
        preds.extend(p);
        actuals.extend(a);
        audits.push(WorkloadAudit { workload_id: id, admitted, scored });
    }
    Ok(SchemeResult {
        scheme,
        pooled_mape: mape(&preds, &actuals)?,
        macro_mape: per_workload.iter().sum::<f64>() / per_workload.len() as f64,
        n_scored: preds.len(),
        audits,
    })
}

/// Scales raw test traces with the model's scaler and evaluates.
pub fn evaluate_trained(model: &TrainedModel, test_raw: &TraceSet, scheme: AdmissionScheme, seed: u64) -> Result<SchemeResult> {
    let test = model.scale(test_raw)?;
    let train_ids: HashSet<&String> = model.info.train_workloads.iter().collect();
    if let Some(id) = test.workload_ids().iter().find(|id| train_ids.contains(id)) {
        return Err(CoreError::invalid(format!("test workload '{id}' was seen in training")));
    }
    evaluate_scheme(&model.model, &test, &pool_keys(&model.info.shared_pool), scheme, seed)
}

/// One (row, column) entry of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub scheme: String,
    /// Mean pooled MAPE across runs; `None` when the scheme does not
    /// apply to the method.
    pub mape: Option<f64>,
    pub macro_mape: Option<f64>,
    pub per_run: Vec<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub method: Method,
    pub cells: Vec<ReportCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn cell(&self, label: &str, scheme: AdmissionScheme) -> Option<&ReportCell> {
        let name = scheme.to_string();
        self.rows.iter().find(|r| r.label == label)?.cells.iter().find(|c| c.scheme == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per method and one column per
    /// scheme.
    pub fn to_table(&self) -> String {
        let headers: Vec<String> = self
            .rows
            .first()
            .map(|r| r.cells.iter().map(|c| header(&c.scheme)).collect())
            .unwrap_or_default();
        let label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("method".len());
        let col_w = headers.iter().map(|h| h.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "method");
        for h in &headers {
            let _ = write!(out, "  {h:>col_w$}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<label_w$}", r.label);
            for c in &r.cells {
                let v = c.mape.map_or("-".to_string(), |m| format!("{m:.2}"));
                let _ = write!(out, "  {v:>col_w$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "MAPE (%) averaged over {} run(s)", self.runs);
        out
    }
}

fn header(scheme: &str) -> String {
    match scheme.split_once('/') {
        Some((pool, n)) => {
            let mut p = pool.to_string();
            if let Some(f) = p.get_mut(0..1) {
                f.make_ascii_uppercase();
            }
            format!("{p} {n}")
        }
        None => scheme.to_string(),
    }
}

fn cell_from(scheme: AdmissionScheme, results: Vec<Result<SchemeResult>>) -> Result<ReportCell> {
    let mut per_run = Vec::new();
    let mut macros = Vec::new();
    for r in results {
        match r {
            Ok(res) => {
                per_run.push(res.pooled_mape);
                macros.push(res.macro_mape);
            }
            Err(CoreError::NotApplicable(msg)) => {
                return Ok(ReportCell { scheme: scheme.to_string(), mape: None, macro_mape: None, per_run: Vec::new(), note: Some(msg) })
            }
            Err(e) => return Err(e),
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ReportCell {
        scheme: scheme.to_string(),
        mape: Some(mean(&per_run)),
        macro_mape: Some(mean(&macros)),
        per_run,
        note: None,
    })
}

/// Evaluates one trained model under each scheme over `runs` admission
/// draws seeded `seed + run`.
pub fn evaluate_model(
    label: &str,
    model: &TrainedModel,
    test_raw: &TraceSet,
    schemes: &[AdmissionScheme],
    runs: usize,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(CoreError::invalid("runs must be at least 1"));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|r| seed + r).collect();
    let cells = schemes
        .iter()
        .map(|&s| cell_from(s, seeds.iter().map(|&sd| evaluate_trained(model, test_raw, s, sd)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        runs,
        seeds,
        rows: vec![ReportRow { label: label.to_string(), method: model.info.method, cells }],
    })
}

/// A method plus hyperparameters, labeled for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub method: Method,
    pub hyper: Hyper,
}

impl Variant {
    pub fn new(method: Method) -> Self {
        Self { label: method.name().to_string(), method, hyper: Hyper::for_method(method) }
    }

    /// Every method with its documented defaults, plus hybrid1 with the
    /// configuration head disabled.
    pub fn standard_sweep() -> Vec<Variant> {
        let mut v: Vec<Variant> = Method::ALL.iter().map(|&m| Variant::new(m)).collect();
        let pos = v.iter().position(|x| x.method == Method::Hybrid1).expect("hybrid1 present") + 1;
        let mut h = Hyper::for_method(Method::Hybrid1);
        h.lambda = 0.0;
        v.insert(pos, Variant { label: "hybrid1_lambda0".into(), method: Method::Hybrid1, hyper: h });
        v
    }
}

/// Trains and evaluates every variant on `runs` seeded workload splits.
/// Run `r` uses seed `seed + r` for the split, training and admission.
/// Variants train in parallel.
pub fn run_comparison(
    traces_raw: &TraceSet,
    variants: &[Variant],
    schemes: &[AdmissionScheme],
    runs: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(CoreError::invalid("runs must be at least 1"));
    }
    let seeds: Vec<u64> = (0..runs as u64).map(|r| seed + r).collect();
    let splits = seeds.iter().map(|&s| split_workloads(traces_raw, test_fraction, s)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..runs).map(move |r| (v, r))).collect();
    let results: Vec<Vec<Result<SchemeResult>>> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let mut hyper = variants[v].hyper.clone();
            hyper.seed = seeds[r];
            let (train, test) = &splits[r];
            match train_model(variants[v].method, train, &hyper) {
                Ok(model) => schemes.iter().map(|&s| evaluate_trained(&model, test, s, seeds[r])).collect(),
                Err(e) => {
                    let msg = e.to_string();
                    let numerical = e.is_numerical();
                    schemes
                        .iter()
                        .map(|_| Err(if numerical { CoreError::Numerical(msg.clone()) } else { CoreError::invalid(msg.clone()) }))
                        .collect()
                }
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(variants.len());
    let mut it = results.into_iter();
    for var in variants {
        let per_run: Vec<Vec<Result<SchemeResult>>> = (0..runs).map(|_| it.next().expect("job result")).collect();
        let mut cells = Vec::with_capacity(schemes.len());
        for (si, &s) in schemes.iter().enumerate() {
            let col: Vec<Result<SchemeResult>> = per_run.iter().map(|r| clone_result(&r[si])).collect();
            cells.push(cell_from(s, col)?);
        }
        rows.push(ReportRow { label: var.label.clone(), method: var.method, cells });
    }
    Ok(EvalReport { runs, seeds, rows })
}

fn clone_result(r: &Result<SchemeResult>) -> Result<SchemeResult> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(CoreError::NotApplicable(m)) => Err(CoreError::NotApplicable(m.clone())),
        Err(CoreError::Numerical(m)) => Err(CoreError::Numerical(m.clone())),
        Err(e) => Err(CoreError::invalid(e.to_string())),
    }
}

/// Picks the candidate with the lowest mean held-out MAPE across
/// workload folds. Held-out workloads are admitted with one arbitrary
/// observation (or the model's minimum, if larger). Candidates whose
/// training diverges score infinity; ties go to the earlier candidate.
/// Returns the winning index and every candidate's mean score.
pub fn kfold_tune(method: Method, candidates: &[Hyper], train_raw: &TraceSet, folds: usize, seed: u64) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(CoreError::invalid("kfold_tune needs at least one candidate"));
    }
    let mut ids = train_raw.workload_ids();
    if folds < 2 || folds > ids.len() {
        return Err(CoreError::invalid(format!("folds must lie in 2..={}", ids.len())));
    }
    ids.shuffle(&mut seeded(seed, 5));
    let fold_sets: Vec<(HashSet<String>, HashSet<String>)> = (0..folds)
        .map(|f| {
            let held: HashSet<String> = ids.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, id)| id.clone()).collect();
            let rest: HashSet<String> = ids.iter().filter(|id| !held.contains(*id)).cloned().collect();
            (rest, held)
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for hyper in candidates {
        let mut total = 0.0;
        for (rest, held) in &fold_sets {
            let train = train_raw.subset(rest)?;
            let test = train_raw.subset(held)?;
            let score = match train_model(method, &train, hyper) {
                Ok(model) => {
                    let n = model.model.min_admission().max(1);
                    let scheme = AdmissionScheme { pool: Pool::Arbitrary, n_obs: if n > 1 { 5 } else { 1 } };
                    match evaluate_trained(&model, &test, scheme, seed) {
                        Ok(r) => r.pooled_mape,
                        Err(e) if e.is_numerical() => f64::INFINITY,
                        Err(e) => return Err(e),
                    }
                }
                Err(e) if e.is_numerical() => f64::INFINITY,
                Err(e) => return Err(e),
            };
            total += score;
        }
        scores.push(total / folds as f64);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.total_cmp(&scores[best]).is_lt() {
            best = i;
        }
    }
    Ok((best, scores))
}
