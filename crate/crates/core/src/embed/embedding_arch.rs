//! Embedding architecture: a learned row per workload, looked up by id and
//! fed with the configuration into a latency network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use wlembed_nn::{Activation, Graph, Mlp, ParamSet, Tensor, Var};

use crate::data::{column, params_serde, Dataset};
use crate::error::{CoreError, Result};
use crate::hyper::Hyper;
use crate::traces::{LatencyRange, Observation, ScalerStats};
use crate::training::{run_epochs, seeded, TrainLog};

pub const Z_PARAM: &str = "embedding.z";
const ROW_INIT_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    /// Workload id of each row of `Z`.
    pub workloads: Vec<String>,
    pub k: usize,
    pub s: usize,
    pub scaler_id: String,
    /// Training latency range used to unscale predictions.
    pub latency: LatencyRange,
    /// Network from `(z, v)` to scaled latency.
    pub net: Mlp,
    /// Parameter 0 is `Z`; the network follows.
    #[serde(with = "params_serde")]
    pub params: ParamSet,
}

fn random_rows(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * k).map(|_| ROW_INIT_STD * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, k, data).expect("finite rows")
}

impl EmbeddingModel {
    pub fn init(workloads: Vec<String>, s: usize, hyper: &Hyper, scaler: &ScalerStats) -> Result<Self> {
        if workloads.is_empty() {
            return Err(CoreError::invalid("the embedding architecture needs at least one workload"));
        }
        let k = hyper.embed_dim;
        let mut rng = seeded(hyper.seed, 1);
        let mut params = ParamSet::new();
        params.add(Z_PARAM, random_rows(workloads.len(), k, &mut rng));
        let mut dims = vec![k + s];
        dims.extend(&hyper.reg_hidden);
        dims.push(1);
        let net = Mlp::new(&mut params, "regressor", &dims, hyper.activation, Activation::Identity, &mut rng);
        Ok(Self { workloads, k, s, scaler_id: scaler.id(), latency: scaler.latency, net, params })
    }

    pub fn row_of(&self, workload_id: &str) -> Result<usize> {
        self.workloads
            .iter()
            .position(|w| w == workload_id)
            .ok_or_else(|| CoreError::UnknownWorkload(workload_id.to_string()))
    }

    /// Learned encoding of a known workload.
    pub fn z(&self, workload_id: &str) -> Result<Vec<f64>> {
        Ok(self.params.get(0).row(self.row_of(workload_id)?).to_vec())
    }

    /// Mean squared error between network output and scaled targets for
    /// rows `z_rows` of `Z` paired with configurations `v`.
    pub fn loss(&self, g: &mut Graph, vars: &[Var], z_rows: &[usize], v: &Tensor, y: &Tensor) -> Var {
        let z = g.gather_rows(vars[0], z_rows);
        let vv = g.constant(v.clone());
        let input = g.concat_cols(&[z, vv]);
        let pred = self.net.forward(g, vars, input);
        let yv = g.constant(y.clone());
        let d = g.sub(pred, yv);
        let sq = g.square(d);
        g.mean(sq)
    }

    /// Scaled latency predictions for a known workload.
    pub fn predict_scaled(&self, workload_id: &str, configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let z = self.z(workload_id)?;
        self.predict_scaled_with(&z, configs)
    }

    pub fn predict_scaled_with(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if z.len() != self.k {
            return Err(CoreError::Dimension { expected: self.k, got: z.len() });
        }
        let mut rows = Vec::with_capacity(configs.len());
        for c in configs {
            if c.len() != self.s {
                return Err(CoreError::Dimension { expected: self.s, got: c.len() });
            }
            let mut r = z.to_vec();
            r.extend_from_slice(c);
            rows.push(r);
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.net.infer(&self.params, &Tensor::from_rows(&rows)?).into_data())
    }

    /// Latency predictions in seconds for an encoding row.
    pub fn predict_with(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.predict_scaled_with(z, configs)?.into_iter().map(|y| self.latency.unscale(y)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("embedding model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Jointly learns the workload rows and the latency network on a scaled
/// dataset.
pub fn train_embedding_arch(data: &Dataset, scaler: &ScalerStats, hyper: &Hyper) -> Result<(EmbeddingModel, TrainLog)> {
    hyper.validate()?;
    let mut model = EmbeddingModel::init(data.workload_ids.clone(), data.s(), hyper, scaler)?;
    let targets: Vec<f64> = data.latency.iter().map(|&y| scaler.scale_latency(y)).collect();
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut params = std::mem::take(&mut model.params);
    let mut rng = seeded(hyper.seed, 2);
    let log = run_epochs(
        "embedding",
        &mut params,
        hyper.lr,
        hyper.epochs,
        hyper.batch_size,
        &mut rng,
        |_, _| Ok(rows.clone()),
        |g, vars, items: &[usize], _| {
            let z_rows: Vec<usize> = items.iter().map(|&r| data.workload[r]).collect();
            let y: Vec<f64> = items.iter().map(|&r| targets[r]).collect();
            Ok(model.loss(g, vars, &z_rows, &data.v_rows(items), &column(&y)))
        },
    )?;
    params.freeze_all();
    model.params = params;
    Ok((model, log))
}

/// Adds a row for a new workload, fitted to its scaled observations while
/// every existing parameter stays frozen.
pub fn incremental_embed(model: &EmbeddingModel, workload_id: &str, obs: &[Observation], hyper: &Hyper) -> Result<(EmbeddingModel, TrainLog)> {
    if obs.len() < model.k {
        return Err(CoreError::Scheme {
            workload: workload_id.to_string(),
            reason: format!("{} observations cannot determine a {}-dimensional row", obs.len(), model.k),
        });
    }
    if obs.iter().any(|o| o.workload_id != workload_id) {
        return Err(CoreError::invalid("incremental observations must all belong to the new workload"));
    }
    let mut rng = seeded(hyper.seed, 3);
    let mut params = model.params.clone();
    params.freeze_all();
    *params.get_mut(0) = random_rows(1, model.k, &mut rng);
    params.set_trainable(0, true);
    let v = Tensor::from_rows(&obs.iter().map(|o| o.config.as_slice()).collect::<Vec<_>>())?;
    let y = column(&obs.iter().map(|o| model.latency.scale(o.latency)).collect::<Vec<_>>());
    let zeros = vec![0usize; obs.len()];
    let log = run_epochs(
        "embedding_incremental",
        &mut params,
        hyper.incremental_lr,
        hyper.incremental_epochs,
        obs.len(),
        &mut rng,
        |_, _| Ok(vec![()]),
        |g, vars, _: &[()], _| Ok(model.loss(g, vars, &zeros, &v, &y)),
    )?;
    let row = params.get(0).clone();
    let mut out = model.clone();
    let z = out.params.get(0);
    let mut data = z.data().to_vec();
    data.extend_from_slice(row.data());
    let rows = out.workloads.len() + 1;
    *out.params.get_mut(0) = Tensor::matrix(rows, model.k, data)?;
    out.workloads.push(workload_id.to_string());
    Ok((out, log))
}
