//! Grid enumeration and latency-minimizing configuration recommendation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::predictor::Regressor;
use crate::traces::{Observation, ScalerStats};

pub const DEFAULT_GRID_CAP: u128 = 1_000_000;
pub const DEFAULT_TOP_M: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobCategory {
    Resource,
    Parallelism,
    Shuffle,
    Sql,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobDef {
    pub name: String,
    pub category: KnobCategory,
    pub candidates: Vec<f64>,
}

/// Ordered candidate values per knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnobSpace {
    pub knobs: Vec<KnobDef>,
}

impl KnobSpace {
    pub fn validate(&self) -> Result<()> {
        if self.knobs.is_empty() {
            return Err(CoreError::invalid("knob space has no knobs"));
        }
        for k in &self.knobs {
            if k.candidates.is_empty() {
                return Err(CoreError::invalid(format!("knob '{}' has no candidates", k.name)));
            }
            if k.candidates.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::invalid(format!("knob '{}' has a non-finite candidate", k.name)));
            }
        }
        Ok(())
    }

    pub fn grid_size(&self) -> u128 {
        self.knobs.iter().map(|k| k.candidates.len() as u128).product()
    }

    /// Maps raw candidate values into the scaler's knob domain. Knob names
    /// must match the scaler's knob columns in order.
    pub fn to_scaled(&self, stats: &ScalerStats) -> Result<KnobSpace> {
        if self.knobs.len() != stats.knobs.len()
            || self.knobs.iter().zip(&stats.knobs).any(|(a, b)| a.name != b.name)
        {
            return Err(CoreError::invalid("knob space names do not match the trained knob columns"));
        }
        Ok(KnobSpace {
            knobs: self
                .knobs
                .iter()
                .enumerate()
                .map(|(q, k)| KnobDef {
                    name: k.name.clone(),
                    category: k.category,
                    candidates: k.candidates.iter().map(|&v| stats.scale_knob(q, v)).collect(),
                })
                .collect(),
        })
    }

    /// Raw candidates behind a point of `scaled`, the output of
    /// [`KnobSpace::to_scaled`] on `self`.
    pub fn raw_point(&self, scaled: &KnobSpace, config: &[f64]) -> Result<Vec<f64>> {
        if config.len() != self.knobs.len() || scaled.knobs.len() != self.knobs.len() {
            return Err(CoreError::Dimension { expected: self.knobs.len(), got: config.len() });
        }
        config
            .iter()
            .zip(self.knobs.iter().zip(&scaled.knobs))
            .map(|(v, (raw, sc))| {
                sc.candidates
                    .iter()
                    .position(|c| c.to_bits() == v.to_bits())
                    .map(|i| raw.candidates[i])
                    .ok_or_else(|| CoreError::invalid(format!("value {v} is not a candidate of knob '{}'", raw.name)))
            })
            .collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ks: KnobSpace = serde_json::from_str(s)?;
        ks.validate()?;
        Ok(ks)
    }
}

/// Lexicographic walk over candidate indices; the last knob varies fastest.
#[derive(Clone, Debug)]
pub struct GridIter<'a> {
    space: &'a KnobSpace,
    index: Vec<usize>,
    done: bool,
}

impl Iterator for GridIter<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.done {
            return None;
        }
        let config = self.index.iter().zip(&self.space.knobs).map(|(&i, k)| k.candidates[i]).collect();
        let mut q = self.index.len();
        loop {
            if q == 0 {
                self.done = true;
                break;
            }
            q -= 1;
            self.index[q] += 1;
            if self.index[q] < self.space.knobs[q].candidates.len() {
                break;
            }
            self.index[q] = 0;
        }
        Some(config)
    }
}

pub fn enumerate_grid(space: &KnobSpace, cap: u128) -> Result<GridIter<'_>> {
    space.validate()?;
    let size = space.grid_size();
    if size > cap {
        return Err(CoreError::GridTooLarge { size, cap });
    }
    Ok(GridIter { space, index: vec![0; space.knobs.len()], done: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub config: Vec<f64>,
    pub predicted_latency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub chosen_config: Vec<f64>,
    pub predicted_latency: f64,
    pub initial_config: Vec<f64>,
    pub initial_latency: f64,
    pub grid_size: u128,
    /// Candidates whose prediction was not finite.
    pub skipped: usize,
    /// Best configurations in rank order, for fallback when a launch fails.
    pub top: Vec<RankedConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TunerOptions {
    pub grid_cap: u128,
    pub top_m: usize,
    pub chunk: usize,
}

impl Default for TunerOptions {
    fn default() -> Self {
        Self { grid_cap: DEFAULT_GRID_CAP, top_m: DEFAULT_TOP_M, chunk: 4096 }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Rank order: lower predicted latency first, then lexicographically smaller
/// configuration.
fn rank_cmp(a: &RankedConfig, b: &RankedConfig) -> Ordering {
    a.predicted_latency.total_cmp(&b.predicted_latency).then_with(|| lex_cmp(&a.config, &b.config))
}

/// Exhaustive search with a batch prediction hook. `predict` receives a
/// chunk of configurations and returns one predicted latency each.
pub fn recommend_with<F>(
    mut predict: F,
    space: &KnobSpace,
    initial_config: &[f64],
    initial_latency: f64,
    opts: TunerOptions,
) -> Result<Recommendation>
where
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    if initial_config.len() != space.knobs.len() {
        return Err(CoreError::Dimension { expected: space.knobs.len(), got: initial_config.len() });
    }
    let grid = enumerate_grid(space, opts.grid_cap)?;
    let keep = opts.top_m.max(1);
    let mut top: Vec<RankedConfig> = Vec::with_capacity(keep + 1);
    let mut skipped = 0;
    let mut chunk = Vec::with_capacity(opts.chunk);
    let mut flush = |chunk: &mut Vec<Vec<f64>>, top: &mut Vec<RankedConfig>, skipped: &mut usize| -> Result<()> {
        let preds = predict(chunk)?;
        if preds.len() != chunk.len() {
            return Err(CoreError::Dimension { expected: chunk.len(), got: preds.len() });
        }
        for (config, y) in chunk.drain(..).zip(preds) {
            if !y.is_finite() {
                *skipped += 1;
                continue;
            }
            let cand = RankedConfig { config, predicted_latency: y };
            if top.len() < keep || rank_cmp(&cand, top.last().unwrap()) == Ordering::Less {
                let pos = top.partition_point(|t| rank_cmp(t, &cand) != Ordering::Greater);
                top.insert(pos, cand);
                top.truncate(keep);
            }
        }
        Ok(())
    };
    for config in grid {
        chunk.push(config);
        if chunk.len() == opts.chunk.max(1) {
            flush(&mut chunk, &mut top, &mut skipped)?;
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, &mut top, &mut skipped)?;
    }
    let best = top.first().cloned().ok_or_else(|| CoreError::Numerical("every grid candidate had a non-finite prediction".into()))?;
    Ok(Recommendation {
        chosen_config: best.config,
        predicted_latency: best.predicted_latency,
        initial_config: initial_config.to_vec(),
        initial_latency,
        grid_size: space.grid_size(),
        skipped,
        top,
    })
}

/// Recommends the grid configuration with the lowest predicted latency
/// for a workload encoded as `z`. `space` and `initial.config` are in the
/// scaled knob domain.
pub fn recommend(r: &Regressor, z: &[f64], space: &KnobSpace, initial: &Observation, opts: TunerOptions) -> Result<Recommendation> {
    recommend_with(|c| r.predict_batch(z, c), space, &initial.config, initial.latency, opts)
}

/// Latency improvement `1 - new / initial`; negative when the new
/// configuration is slower.
pub fn improvement(initial_latency: f64, new_latency: f64) -> Result<f64> {
    if !(initial_latency > 0.0 && new_latency > 0.0) {
        return Err(CoreError::invalid("latencies must be positive"));
    }
    Ok(1.0 - new_latency / initial_latency)
}
