//! Triplet mining over the shared configuration pool.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::traces::{config_key, ConfigKey};
use crate::training::seeded;

/// Row indices of one triplet. Anchor and positive share a workload and
/// differ in configuration; the negative comes from another workload at
/// the anchor's configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Per-workload lookup from shared configuration to row.
#[derive(Clone, Debug)]
pub struct TripletMiner {
    /// `anchors[w][c]`: row of workload `w` at shared config `c`.
    anchors: Vec<Vec<usize>>,
    /// Rows of each workload whose config differs from each shared config.
    positives: Vec<Vec<Vec<usize>>>,
    seed: u64,
}

impl TripletMiner {
    pub fn new(data: &Dataset, shared_pool: &[Vec<f64>], seed: u64) -> Result<Self> {
        if data.n_workloads() < 2 {
            return Err(CoreError::invalid("triplet mining needs at least two workloads"));
        }
        if shared_pool.is_empty() {
            return Err(CoreError::invalid("triplet mining needs a non-empty shared pool"));
        }
        let keys: Vec<ConfigKey> = shared_pool.iter().map(|c| config_key(c)).collect();
        let mut anchors = Vec::with_capacity(data.n_workloads());
        let mut positives = Vec::with_capacity(data.n_workloads());
        for (w, rows) in data.groups.iter().enumerate() {
            let mut first: HashMap<&ConfigKey, usize> = HashMap::new();
            for &r in rows {
                first.entry(&data.config_keys[r]).or_insert(r);
            }
            let mut row_anchors = Vec::with_capacity(keys.len());
            let mut row_pos = Vec::with_capacity(keys.len());
            for key in &keys {
                let Some(&a) = first.get(key) else {
                    return Err(CoreError::Scheme {
                        workload: data.workload_ids[w].clone(),
                        reason: "missing an observation at a shared-pool configuration".into(),
                    });
                };
                let pos: Vec<usize> = rows.iter().copied().filter(|&r| &data.config_keys[r] != key).collect();
                if pos.is_empty() {
                    return Err(CoreError::Scheme {
                        workload: data.workload_ids[w].clone(),
                        reason: "needs observations at two or more configurations".into(),
                    });
                }
                row_anchors.push(a);
                row_pos.push(pos);
            }
            anchors.push(row_anchors);
            positives.push(row_pos);
        }
        Ok(Self { anchors, positives, seed })
    }

    pub fn anchors_per_epoch(&self) -> usize {
        self.anchors.len() * self.anchors[0].len()
    }

    /// Triplets of one epoch: every (workload, shared config) anchor once,
    /// in a fixed order. Draws depend only on the seed and the epoch.
    pub fn epoch(&self, epoch: usize) -> Vec<Triplet> {
        let mut rng = seeded(self.seed, 1_000 + epoch as u64);
        let n_w = self.anchors.len();
        let mut out = Vec::with_capacity(self.anchors_per_epoch());
        for a in 0..n_w {
            for c in 0..self.anchors[a].len() {
                let pos = &self.positives[a][c];
                let positive = pos[rng.random_range(0..pos.len())];
                let mut j = rng.random_range(0..n_w - 1);
                if j >= a {
                    j += 1;
                }
                out.push(Triplet { anchor: self.anchors[a][c], positive, negative: self.anchors[j][c] });
            }
        }
        out
    }
}
