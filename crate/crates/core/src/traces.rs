//! Observations, trace-file ingestion and min-max preprocessing.
//!
//! Trace CSV layout: `workload_id,template_id,latency,k_<knob>...,m_<metric>...`
//! with one already-averaged job run per row.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const KNOB_PREFIX: &str = "k_";
pub const METRIC_PREFIX: &str = "m_";
pub const SCALER_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub workload_id: String,
    pub template_id: Option<String>,
    /// Knob vector of length `s`.
    pub config: Vec<f64>,
    /// Runtime metric vector of length `p`.
    pub metrics: Vec<f64>,
    /// Latency in seconds.
    pub latency: f64,
}

/// Bitwise identity of a configuration vector.
pub type ConfigKey = Vec<u64>;

pub fn config_key(config: &[f64]) -> ConfigKey {
    config.iter().map(|v| v.to_bits()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    observations: Vec<Observation>,
    knob_names: Vec<String>,
    metric_names: Vec<String>,
}

impl TraceSet {
    pub fn new(
        observations: Vec<Observation>,
        knob_names: Vec<String>,
        metric_names: Vec<String>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(CoreError::invalid("a trace set needs at least one observation"));
        }
        let (s, p) = (knob_names.len(), metric_names.len());
        for (i, o) in observations.iter().enumerate() {
            if o.workload_id.is_empty() {
                return Err(CoreError::invalid(format!("observation {i} has an empty workload id")));
            }
            if o.config.len() != s || o.metrics.len() != p {
                return Err(CoreError::invalid(format!(
                    "observation {i} has {} knobs / {} metrics, expected {s} / {p}",
                    o.config.len(),
                    o.metrics.len()
                )));
            }
            if !(o.latency > 0.0 && o.latency.is_finite()) {
                return Err(CoreError::invalid(format!("observation {i} has latency {}", o.latency)));
            }
            if o.config.iter().chain(&o.metrics).any(|v| !v.is_finite()) {
                return Err(CoreError::invalid(format!("observation {i} has a non-finite value")));
            }
        }
        Ok(Self { observations, knob_names, metric_names })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn knob_names(&self) -> &[String] {
        &self.knob_names
    }

    pub fn metric_names(&self) -> &[String] {
        &self.metric_names
    }

    pub fn num_knobs(&self) -> usize {
        self.knob_names.len()
    }

    pub fn num_metrics(&self) -> usize {
        self.metric_names.len()
    }

    /// Distinct workload ids in order of first appearance.
    pub fn workload_ids(&self) -> Vec<String> {
        self.by_workload().into_iter().map(|(id, _)| id).collect()
    }

    /// Observation indices grouped per workload, workloads in order of first
    /// appearance.
    pub fn by_workload(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, o) in self.observations.iter().enumerate() {
            match pos.get(o.workload_id.as_str()) {
                Some(&k) => order[k].1.push(i),
                None => {
                    pos.insert(&o.workload_id, order.len());
                    order.push((o.workload_id.clone(), vec![i]));
                }
            }
        }
        order
    }

    /// Keeps the observations of the given workloads, in original order.
    pub fn subset(&self, workloads: &HashSet<String>) -> Result<TraceSet> {
        let obs = self
            .observations
            .iter()
            .filter(|o| workloads.contains(&o.workload_id))
            .cloned()
            .collect();
        TraceSet::new(obs, self.knob_names.clone(), self.metric_names.clone())
    }

    /// Configurations observed for every workload in the set, ordered by
    /// first appearance in the first workload.
    pub fn shared_configs(&self) -> Vec<Vec<f64>> {
        let groups = self.by_workload();
        let mut per_workload: Vec<HashSet<ConfigKey>> = groups
            .iter()
            .map(|(_, idx)| idx.iter().map(|&i| config_key(&self.observations[i].config)).collect())
            .collect();
        let Some(first) = groups.first() else { return Vec::new() };
        let common: HashSet<ConfigKey> = per_workload
            .drain(..)
            .reduce(|a, b| a.intersection(&b).cloned().collect())
            .unwrap_or_default();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &i in &first.1 {
            let key = config_key(&self.observations[i].config);
            if common.contains(&key) && seen.insert(key) {
                out.push(self.observations[i].config.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = vec!["workload_id".to_string(), "template_id".into(), "latency".into()];
        header.extend(self.knob_names.iter().map(|n| format!("{KNOB_PREFIX}{n}")));
        header.extend(self.metric_names.iter().map(|n| format!("{METRIC_PREFIX}{n}")));
        w.write_record(&header).expect("in-memory csv");
        for o in &self.observations {
            let mut rec = vec![
                o.workload_id.clone(),
                o.template_id.clone().unwrap_or_default(),
                o.latency.to_string(),
            ];
            rec.extend(o.config.iter().map(f64::to_string));
            rec.extend(o.metrics.iter().map(f64::to_string));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8 csv")
    }
}

/// Parses the trace CSV format. Rows are numbered from 1 for the first data
/// row in error messages.
pub fn parse_trace_csv(bytes: &[u8]) -> Result<TraceSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(parse_err(0, "header", e.to_string())),
        None => return Err(parse_err(0, "header", "missing header row")),
    };
    let cols: Vec<String> = header.iter().map(|c| c.trim().to_string()).collect();
    for (i, expected) in ["workload_id", "template_id", "latency"].iter().enumerate() {
        if cols.get(i).map(String::as_str) != Some(*expected) {
            return Err(parse_err(0, expected, format!("header column {} must be '{expected}'", i + 1)));
        }
    }
    let mut knob_names = Vec::new();
    let mut metric_names = Vec::new();
    for c in &cols[3..] {
        if let Some(n) = c.strip_prefix(KNOB_PREFIX) {
            if !metric_names.is_empty() {
                return Err(parse_err(0, c, "knob columns must precede metric columns"));
            }
            knob_names.push(n.to_string());
        } else if let Some(n) = c.strip_prefix(METRIC_PREFIX) {
            metric_names.push(n.to_string());
        } else {
            return Err(parse_err(0, c, "column must start with 'k_' or 'm_'"));
        }
    }
    let s = knob_names.len();
    let mut observations = Vec::new();
    for (r, rec) in records.enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| parse_err(row, "-", e.to_string()))?;
        if rec.len() == 1 && rec.get(0).map(str::trim) == Some("") {
            continue;
        }
        if rec.len() != cols.len() {
            return Err(parse_err(row, "-", format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let cell = rec[i].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(row, &cols[i], format!("'{cell}' is not a finite number"))),
            }
        };
        let workload_id = rec[0].trim().to_string();
        if workload_id.is_empty() {
            return Err(parse_err(row, "workload_id", "empty workload id"));
        }
        let template = rec[1].trim();
        let latency = num(2)?;
        if latency <= 0.0 {
            return Err(parse_err(row, "latency", format!("latency must be positive, got {latency}")));
        }
        let config = (3..3 + s).map(num).collect::<Result<Vec<_>>>()?;
        let metrics = (3 + s..cols.len()).map(num).collect::<Result<Vec<_>>>()?;
        observations.push(Observation {
            workload_id,
            template_id: (!template.is_empty()).then(|| template.to_string()),
            config,
            metrics,
            latency,
        });
    }
    if observations.is_empty() {
        return Err(parse_err(1, "-", "no data rows"));
    }
    TraceSet::new(observations, knob_names, metric_names)
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> CoreError {
    CoreError::Parse { row, column: column.to_string(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRange {
    pub min: f64,
    pub max: f64,
}

impl LatencyRange {
    /// Falls back to 1 when every training latency was equal.
    fn span(&self) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }

    pub fn scale(&self, seconds: f64) -> f64 {
        (seconds - self.min) / self.span()
    }

    pub fn unscale(&self, scaled: f64) -> f64 {
        self.min + scaled * self.span()
    }
}

/// Per-column min/max fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub schema_version: u32,
    pub knobs: Vec<ColumnRange>,
    pub metrics: Vec<MetricRange>,
    pub latency: LatencyRange,
}

/// Fits min/max per column on the training split only.
pub fn fit_scaler(train: &TraceSet) -> Result<ScalerStats> {
    if train.len() < 2 {
        return Err(CoreError::invalid("fitting a scaler needs at least two observations"));
    }
    let obs = train.observations();
    let range = |f: &dyn Fn(&Observation) -> f64| {
        obs.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let mut knobs = Vec::with_capacity(train.num_knobs());
    for (q, name) in train.knob_names().iter().enumerate() {
        let (min, max) = range(&|o| o.config[q]);
        if min == max {
            return Err(CoreError::invalid(format!("knob '{name}' is constant ({min}) and cannot be tuned")));
        }
        knobs.push(ColumnRange { name: name.clone(), min, max });
    }
    let metrics = train
        .metric_names()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (min, max) = range(&|o| o.metrics[c]);
            MetricRange { name: name.clone(), min, max, constant: min == max }
        })
        .collect();
    let (min, max) = range(&|o| o.latency);
    Ok(ScalerStats { schema_version: SCALER_SCHEMA_VERSION, knobs, metrics, latency: LatencyRange { min, max } })
}

/// Applies fitted stats: drops constant metrics and maps every remaining
/// column through `(v - min) / (max - min)` without clamping. Latencies stay
/// in seconds; use [`ScalerStats::scale_latency`] for training targets.
pub fn apply_scaler(stats: &ScalerStats, t: &TraceSet) -> Result<TraceSet> {
    let knob_ok = stats.knobs.len() == t.num_knobs()
        && stats.knobs.iter().zip(t.knob_names()).all(|(k, n)| &k.name == n);
    let metric_ok = stats.metrics.len() == t.num_metrics()
        && stats.metrics.iter().zip(t.metric_names()).all(|(m, n)| &m.name == n);
    if !knob_ok || !metric_ok {
        return Err(CoreError::invalid("trace columns do not match the columns the scaler was fitted on"));
    }
    let observations = t
        .observations()
        .iter()
        .map(|o| Observation {
            workload_id: o.workload_id.clone(),
            template_id: o.template_id.clone(),
            config: stats.scale_config(&o.config),
            metrics: stats.scale_metrics_unchecked(&o.metrics),
            latency: o.latency,
        })
        .collect();
    let metric_names = stats.metrics.iter().filter(|m| !m.constant).map(|m| m.name.clone()).collect();
    TraceSet::new(observations, t.knob_names().to_vec(), metric_names)
}

impl ScalerStats {
    /// Number of metric columns kept after dropping constants.
    pub fn retained_metrics(&self) -> usize {
        self.metrics.iter().filter(|m| !m.constant).count()
    }

    pub fn scale_config(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.knobs).map(|(v, k)| (v - k.min) / (k.max - k.min)).collect()
    }

    pub fn unscale_config(&self, scaled: &[f64]) -> Vec<f64> {
        scaled.iter().zip(&self.knobs).map(|(v, k)| k.min + v * (k.max - k.min)).collect()
    }

    pub fn scale_knob(&self, q: usize, raw: f64) -> f64 {
        let k = &self.knobs[q];
        (raw - k.min) / (k.max - k.min)
    }

    /// Scales a raw metric row and drops constant columns.
    pub fn scale_metrics(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.metrics.len() {
            return Err(CoreError::Dimension { expected: self.metrics.len(), got: raw.len() });
        }
        Ok(self.scale_metrics_unchecked(raw))
    }

    fn scale_metrics_unchecked(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.metrics)
            .filter(|(_, m)| !m.constant)
            .map(|(v, m)| (v - m.min) / (m.max - m.min))
            .collect()
    }

    pub fn scale_latency(&self, seconds: f64) -> f64 {
        self.latency.scale(seconds)
    }

    pub fn unscale_latency(&self, scaled: f64) -> f64 {
        self.latency.unscale(scaled)
    }

    /// Scales one raw observation (config and metrics); latency is kept.
    pub fn scale_observation(&self, o: &Observation) -> Result<Observation> {
        if o.config.len() != self.knobs.len() {
            return Err(CoreError::Dimension { expected: self.knobs.len(), got: o.config.len() });
        }
        Ok(Observation {
            workload_id: o.workload_id.clone(),
            template_id: o.template_id.clone(),
            config: self.scale_config(&o.config),
            metrics: self.scale_metrics(&o.metrics)?,
            latency: o.latency,
        })
    }

    /// Content hash used to bind models to the preprocessing they were
    /// trained with.
    pub fn id(&self) -> String {
        content_id(&serde_json::to_string(self).expect("scaler serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: ScalerStats = serde_json::from_str(s)?;
        if stats.schema_version != SCALER_SCHEMA_VERSION {
            return Err(CoreError::invalid(format!("unsupported scaler schema_version {}", stats.schema_version)));
        }
        Ok(stats)
    }
}

/// Short hex digest of a canonical serialization.
pub fn content_id(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Splits by workload: every workload lands wholly on one side.
pub fn split_workloads(t: &TraceSet, test_fraction: f64, seed: u64) -> Result<(TraceSet, TraceSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CoreError::invalid(format!("test fraction {test_fraction} must lie in (0, 1)")));
    }
    let mut ids = t.workload_ids();
    if ids.len() < 2 {
        return Err(CoreError::invalid("splitting needs at least two workloads"));
    }
    let n_test = ((test_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: HashSet<String> = ids[..n_test].iter().cloned().collect();
    let train_ids: HashSet<String> = ids[n_test..].iter().cloned().collect();
    Ok((t.subset(&train_ids)?, t.subset(&test_ids)?))
}
