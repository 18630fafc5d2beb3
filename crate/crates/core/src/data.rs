//! Dense views of a scaled trace set used by the trainers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use wlembed_nn::{ParamSet, ParamsFile, Tensor};

use crate::error::{CoreError, Result};
use crate::traces::{config_key, ConfigKey, TraceSet};

/// Matrix form of a (scaled) trace set.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `N x p` metric rows.
    pub x: Tensor,
    /// `N x s` configuration rows.
    pub v: Tensor,
    /// Latency in seconds per row.
    pub latency: Vec<f64>,
    /// Workload index per row into `workload_ids`.
    pub workload: Vec<usize>,
    pub workload_ids: Vec<String>,
    pub config_keys: Vec<ConfigKey>,
    /// Rows per workload, aligned with `workload_ids`.
    pub groups: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(t: &TraceSet) -> Result<Self> {
        let obs = t.observations();
        let x = Tensor::from_rows(&obs.iter().map(|o| o.metrics.as_slice()).collect::<Vec<_>>())?;
        let v = Tensor::from_rows(&obs.iter().map(|o| o.config.as_slice()).collect::<Vec<_>>())?;
        let by = t.by_workload();
        let mut workload = vec![0; obs.len()];
        for (w, (_, rows)) in by.iter().enumerate() {
            for &r in rows {
                workload[r] = w;
            }
        }
        Ok(Self {
            x,
            v,
            latency: obs.iter().map(|o| o.latency).collect(),
            workload,
            workload_ids: by.iter().map(|(id, _)| id.clone()).collect(),
            config_keys: obs.iter().map(|o| config_key(&o.config)).collect(),
            groups: by.into_iter().map(|(_, rows)| rows).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.latency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latency.is_empty()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn s(&self) -> usize {
        self.v.cols()
    }

    pub fn n_workloads(&self) -> usize {
        self.workload_ids.len()
    }

    pub fn x_rows(&self, idx: &[usize]) -> Tensor {
        self.x.gather_rows(idx)
    }

    pub fn v_rows(&self, idx: &[usize]) -> Tensor {
        self.v.gather_rows(idx)
    }

    pub fn workload_index(&self, id: &str) -> Result<usize> {
        self.workload_ids
            .iter()
            .position(|w| w == id)
            .ok_or_else(|| CoreError::UnknownWorkload(id.to_string()))
    }
}

/// Column vector built from a slice.
pub(crate) fn column(values: &[f64]) -> Tensor {
    Tensor::matrix(values.len(), 1, values.to_vec()).expect("finite column")
}

/// Serde adapter storing a [`ParamSet`] in the nn JSON layout.
pub(crate) mod params_serde {
    use super::*;

    pub fn serialize<S: Serializer>(p: &ParamSet, s: S) -> std::result::Result<S::Ok, S::Error> {
        p.to_file().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ParamSet, D::Error> {
        let file = ParamsFile::deserialize(d)?;
        ParamSet::from_file(&file).map_err(serde::de::Error::custom)
    }
}
