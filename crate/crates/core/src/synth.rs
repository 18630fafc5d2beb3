//! Synthetic trace generator with known workload latents and latency surface.
//!
//! Each workload has a latent vector drawn around its template's centroid.
//! Runtime metrics are a fixed two-layer tanh map of `(latent ‖ knobs)`, so
//! workload and configuration effects are entangled in every metric. Latency
//! follows `base(w) · (1 + Σ_q coef_q(w) · shape_q(u_q))`, where resource knobs
//! have decreasing shapes and the remaining knobs have workload-dependent
//! quadratic bowls.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::traces::{Observation, TraceSet};
use crate::tuner::{KnobCategory, KnobDef, KnobSpace};

pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_templates: usize,
    pub workloads_per_template: usize,
    /// True latent dimension per workload.
    pub k_true: usize,
    /// Knob count.
    pub s: usize,
    /// Metric count.
    pub p: usize,
    pub configs_per_workload: usize,
    /// Size of the pool of configurations shared by every workload.
    pub shared_config_count: usize,
    pub noise_std: f64,
    /// Candidate levels per knob on the sampling grid.
    pub knob_levels: usize,
    /// Std of a workload's offset from its template centroid.
    pub workload_spread: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_templates: 8,
            workloads_per_template: 5,
            k_true: 4,
            s: 6,
            p: 20,
            configs_per_workload: 30,
            shared_config_count: 10,
            noise_std: 0.01,
            knob_levels: 5,
            workload_spread: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_templates", self.n_templates),
            ("workloads_per_template", self.workloads_per_template),
            ("k_true", self.k_true),
            ("s", self.s),
            ("p", self.p),
            ("configs_per_workload", self.configs_per_workload),
            ("shared_config_count", self.shared_config_count),
            ("knob_levels", self.knob_levels),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(CoreError::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.shared_config_count > self.configs_per_workload {
            return Err(CoreError::invalid("shared_config_count cannot exceed configs_per_workload"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CoreError::invalid("noise_std must be a finite value >= 0"));
        }
        if !(self.workload_spread >= 0.0 && self.workload_spread.is_finite()) {
            return Err(CoreError::invalid("workload_spread must be a finite value >= 0"));
        }
        Ok(())
    }

    pub fn n_workloads(&self) -> usize {
        self.n_templates * self.workloads_per_template
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthKnob {
    pub name: String,
    pub category: KnobCategory,
    pub low: f64,
    pub high: f64,
    /// Raw candidate values of the sampling grid, ascending.
    pub levels: Vec<f64>,
}

impl SynthKnob {
    fn unit(&self, raw: f64) -> f64 {
        (raw - self.low) / (self.high - self.low)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthWorkload {
    pub id: String,
    pub template_id: String,
    pub latent: Vec<f64>,
}

/// Fixed random maps shared by all workloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMix {
    /// `p x (k_true + s)` first-layer weights.
    pub first: Vec<Vec<f64>>,
    pub first_bias: Vec<f64>,
    /// `p x p` second-layer weights.
    pub second: Vec<Vec<f64>>,
    pub second_bias: Vec<f64>,
    /// Per-metric unit scale and offset applied after mixing.
    pub unit_scale: Vec<f64>,
    pub unit_offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySurface {
    pub base_seconds: f64,
    pub base_weights: Vec<f64>,
    /// Per knob, weights of the latent in the knob's coefficient.
    pub coef_weights: Vec<Vec<f64>>,
    pub coef_bias: Vec<f64>,
    /// Per knob, weights of the latent in the bowl optimum (unused for
    /// resource knobs).
    pub optimum_weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub spec: SynthSpec,
    pub knobs: Vec<SynthKnob>,
    pub workloads: Vec<SynthWorkload>,
    pub metric_mix: MetricMix,
    pub surface: LatencySurface,
    /// Raw configurations of the shared pool, in generation order.
    pub shared_configs: Vec<Vec<f64>>,
}

const KNOB_ROSTER: [(&str, KnobCategory, f64, f64); 12] = [
    ("executors", KnobCategory::Resource, 2.0, 16.0),
    ("executor_cores", KnobCategory::Resource, 1.0, 8.0),
    ("executor_memory_gb", KnobCategory::Resource, 2.0, 32.0),
    ("default_parallelism", KnobCategory::Parallelism, 8.0, 256.0),
    ("max_size_in_flight_mb", KnobCategory::Shuffle, 8.0, 128.0),
    ("sql_shuffle_partitions", KnobCategory::Sql, 16.0, 512.0),
    ("batch_interval_s", KnobCategory::Parallelism, 1.0, 10.0),
    ("bypass_merge_threshold", KnobCategory::Shuffle, 50.0, 500.0),
    ("auto_broadcast_join_mb", KnobCategory::Sql, 1.0, 100.0),
    ("block_interval_ms", KnobCategory::Parallelism, 50.0, 500.0),
    ("shuffle_file_buffer_kb", KnobCategory::Shuffle, 16.0, 256.0),
    ("driver_memory_gb", KnobCategory::Resource, 1.0, 16.0),
];

fn knob_roster(s: usize, levels: usize) -> Vec<SynthKnob> {
    (0..s)
        .map(|q| {
            let (name, category, low, high) = KNOB_ROSTER[q % KNOB_ROSTER.len()];
            let name = if q < KNOB_ROSTER.len() { name.to_string() } else { format!("{name}_{}", q / KNOB_ROSTER.len()) };
            let levels = (0..levels)
                .map(|l| {
                    let u = if levels == 1 { 0.5 } else { l as f64 / (levels - 1) as f64 };
                    low + u * (high - low)
                })
                .collect();
            SynthKnob { name, category, low, high, levels }
        })
        .collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| gaussian_vec(rng, cols, std)).collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_config(knobs: &[SynthKnob], rng: &mut ChaCha8Rng) -> Vec<f64> {
    knobs.iter().map(|kn| kn.levels[rng.random_range(0..kn.levels.len())]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn resource_shape(u: f64) -> f64 {
    1.0 / (0.25 + u) - 0.8
}

fn bowl_shape(u: f64, optimum: f64) -> f64 {
    3.0 * (u - optimum).powi(2)
}

/// Generates a trace set and the ground truth behind it. Observations are
/// grouped per workload; each workload's first `shared_config_count`
/// observations use the shared pool.
pub fn generate(spec: &SynthSpec) -> Result<(TraceSet, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (k, s, p) = (spec.k_true, spec.s, spec.p);
    let knobs = knob_roster(s, spec.knob_levels);

    let centroids = gaussian_matrix(&mut rng, spec.n_templates, k, 1.0);
    let mut workloads = Vec::with_capacity(spec.n_workloads());
    for (t, c) in centroids.iter().enumerate() {
        for w in 0..spec.workloads_per_template {
            let offset = gaussian_vec(&mut rng, k, spec.workload_spread);
            workloads.push(SynthWorkload {
                id: format!("t{t:02}-w{w:02}"),
                template_id: format!("t{t:02}"),
                latent: c.iter().zip(&offset).map(|(a, b)| a + b).collect(),
            });
        }
    }

    let inputs = k + s;
    let metric_mix = MetricMix {
        first: gaussian_matrix(&mut rng, p, inputs, 1.5 / (inputs as f64).sqrt()),
        first_bias: gaussian_vec(&mut rng, p, 0.1),
        second: gaussian_matrix(&mut rng, p, p, 1.5 / (p as f64).sqrt()),
        second_bias: gaussian_vec(&mut rng, p, 0.1),
        unit_scale: (0..p).map(|_| 10f64.powf(rng.random_range(0.0..2.0))).collect(),
        unit_offset: (0..p).map(|_| rng.random_range(0.0..5.0)).collect(),
    };
    let surface = LatencySurface {
        base_seconds: 20.0,
        base_weights: gaussian_vec(&mut rng, k, 0.4 / (k as f64).sqrt()),
        coef_weights: gaussian_matrix(&mut rng, s, k, 1.0 / (k as f64).sqrt()),
        coef_bias: gaussian_vec(&mut rng, s, 0.2),
        optimum_weights: gaussian_matrix(&mut rng, s, k, 1.5 / (k as f64).sqrt()),
    };

    let shared_configs: Vec<Vec<f64>> = (0..spec.shared_config_count).map(|_| random_config(&knobs, &mut rng)).collect();

    let mut gt = GroundTruth {
        schema_version: GROUND_TRUTH_SCHEMA_VERSION,
        spec: spec.clone(),
        knobs,
        workloads,
        metric_mix,
        surface,
        shared_configs,
    };

    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut observations = Vec::with_capacity(spec.n_workloads() * spec.configs_per_workload);
    for w in &gt.workloads {
        let mut configs = gt.shared_configs.clone();
        for _ in spec.shared_config_count..spec.configs_per_workload {
            configs.push(random_config(&gt.knobs, &mut rng));
        }
        for config in configs {
            let mut metrics = gt.noiseless_metrics(&w.latent, &config);
            let mut latency = gt.surface_value(&w.latent, &config);
            if spec.noise_std > 0.0 {
                for (m, scale) in metrics.iter_mut().zip(&gt.metric_mix.unit_scale) {
                    *m += scale * noise.sample(&mut rng);
                }
                latency = (latency * (1.0 + noise.sample(&mut rng))).max(1e-3 * latency);
            }
            observations.push(Observation {
                workload_id: w.id.clone(),
                template_id: Some(w.template_id.clone()),
                config,
                metrics,
                latency,
            });
        }
    }
    let knob_names = gt.knobs.iter().map(|k| k.name.clone()).collect();
    let metric_names = (0..p).map(|i| format!("metric_{i:02}")).collect();
    let traces = TraceSet::new(observations, knob_names, metric_names)?;
    gt.spec = spec.clone();
    Ok((traces, gt))
}

impl GroundTruth {
    fn unit_config(&self, config: &[f64]) -> Vec<f64> {
        config.iter().zip(&self.knobs).map(|(v, k)| k.unit(*v)).collect()
    }

    fn noiseless_metrics(&self, latent: &[f64], config: &[f64]) -> Vec<f64> {
        let mix = &self.metric_mix;
        let mut input = latent.to_vec();
        input.extend(self.unit_config(config).iter().map(|u| 2.0 * u - 1.0));
        let hidden: Vec<f64> =
            mix.first.iter().zip(&mix.first_bias).map(|(row, b)| (dot(row, &input) + b).tanh()).collect();
        mix.second
            .iter()
            .zip(&mix.second_bias)
            .zip(mix.unit_scale.iter().zip(&mix.unit_offset))
            .map(|((row, b), (scale, offset))| scale * ((dot(row, &hidden) + b).tanh() + offset))
            .collect()
    }

    fn surface_value(&self, latent: &[f64], config: &[f64]) -> f64 {
        let sf = &self.surface;
        let base = sf.base_seconds * (dot(&sf.base_weights, latent)).exp();
        let unit = self.unit_config(config);
        let mut factor = 1.0;
        for (q, knob) in self.knobs.iter().enumerate() {
            let coef = softplus(dot(&sf.coef_weights[q], latent) + sf.coef_bias[q]);
            let shape = match knob.category {
                KnobCategory::Resource => resource_shape(unit[q]),
                _ => {
                    let optimum = wlembed_nn::sigmoid(dot(&sf.optimum_weights[q], latent));
                    bowl_shape(unit[q], optimum)
                }
            };
            factor += coef * shape;
        }
        base * factor
    }

    pub fn workload(&self, workload_id: &str) -> Result<&SynthWorkload> {
        self.workloads
            .iter()
            .find(|w| w.id == workload_id)
            .ok_or_else(|| CoreError::UnknownWorkload(workload_id.to_string()))
    }

    /// Noiseless latency of a workload under a raw configuration.
    pub fn true_latency(&self, workload_id: &str, config: &[f64]) -> Result<f64> {
        let w = self.workload(workload_id)?;
        if config.len() != self.knobs.len() {
            return Err(CoreError::Dimension { expected: self.knobs.len(), got: config.len() });
        }
        for (v, k) in config.iter().zip(&self.knobs) {
            let tol = 1e-9 * (k.high - k.low);
            if !(*v >= k.low - tol && *v <= k.high + tol) {
                return Err(CoreError::invalid(format!("knob '{}' value {v} outside [{}, {}]", k.name, k.low, k.high)));
            }
        }
        Ok(self.surface_value(&w.latent, config))
    }

    /// The sampling grid as a knob space in raw units.
    pub fn knob_space(&self) -> KnobSpace {
        KnobSpace {
            knobs: self
                .knobs
                .iter()
                .map(|k| KnobDef { name: k.name.clone(), category: k.category, candidates: k.levels.clone() })
                .collect(),
        }
    }

    /// Template membership, keyed by workload id.
    pub fn templates(&self) -> BTreeMap<String, String> {
        self.workloads.iter().map(|w| (w.id.clone(), w.template_id.clone())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let gt: GroundTruth = serde_json::from_str(s)?;
        if gt.schema_version != GROUND_TRUTH_SCHEMA_VERSION {
            return Err(CoreError::invalid(format!("unsupported ground truth schema_version {}", gt.schema_version)));
        }
        Ok(gt)
    }
}
