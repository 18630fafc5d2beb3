//! Admission schemes, workload encodings and the latency regressor.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wlembed_nn::{Activation, Graph, Mlp, ParamSet, Tensor, Var};

use crate::data::{column, params_serde, Dataset};
use crate::embed::{incremental_embed, Embedder, EmbeddingModel, Encoder};
use crate::error::{CoreError, Result};
use crate::hyper::Hyper;
use crate::traces::{config_key, ConfigKey, LatencyRange, Observation, ScalerStats};
use crate::training::{run_epochs, seeded, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Shared,
    Arbitrary,
}

/// Which observations of a new workload are revealed to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdmissionScheme {
    pub pool: Pool,
    pub n_obs: usize,
}

impl AdmissionScheme {
    pub const ALL: [AdmissionScheme; 4] = [
        AdmissionScheme { pool: Pool::Shared, n_obs: 5 },
        AdmissionScheme { pool: Pool::Shared, n_obs: 1 },
        AdmissionScheme { pool: Pool::Arbitrary, n_obs: 5 },
        AdmissionScheme { pool: Pool::Arbitrary, n_obs: 1 },
    ];

    pub fn new(pool: Pool, n_obs: usize) -> Result<Self> {
        if n_obs != 1 && n_obs != 5 {
            return Err(CoreError::invalid(format!("n_obs must be 1 or 5, got {n_obs}")));
        }
        Ok(Self { pool, n_obs })
    }

    /// Picks the admitted rows among `rows` of one workload. The shared
    /// scheme draws from rows whose configuration is in `shared`, the
    /// arbitrary scheme from the remaining rows. Draws are seeded.
    pub fn select(
        &self,
        workload_id: &str,
        rows: &[usize],
        keys: &[ConfigKey],
        shared: &HashSet<ConfigKey>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        let mut seen = HashSet::new();
        let pool: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| (self.pool == Pool::Shared) == shared.contains(&keys[r]))
            .filter(|&r| seen.insert(&keys[r]))
            .collect();
        if pool.len() < self.n_obs {
            return Err(CoreError::Scheme {
                workload: workload_id.to_string(),
                reason: format!("{self} needs {} candidate observations, found {}", self.n_obs, pool.len()),
            });
        }
        let mut picked: Vec<usize> = sample(rng, pool.len(), self.n_obs).into_iter().map(|i| pool[i]).collect();
        picked.sort_unstable();
        Ok(picked)
    }
}

impl fmt::Display for AdmissionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pool = match self.pool {
            Pool::Shared => "shared",
            Pool::Arbitrary => "arbitrary",
        };
        write!(f, "{pool}/{}", self.n_obs)
    }
}

impl FromStr for Pool {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Pool::Shared),
            "arbitrary" => Ok(Pool::Arbitrary),
            _ => Err(CoreError::invalid(format!("unknown pool '{s}' (expected shared or arbitrary)"))),
        }
    }
}

/// Bitwise keys of a configuration pool.
pub fn pool_keys(pool: &[Vec<f64>]) -> HashSet<ConfigKey> {
    pool.iter().map(|c| config_key(c)).collect()
}

/// Centroid of the encodings of one workload's admitted observations.
pub fn extract_workload_encoding(e: &Embedder, obs: &[&Observation]) -> Result<Vec<f64>> {
    let first = obs.first().ok_or_else(|| CoreError::invalid("no observations to encode"))?;
    if obs.iter().any(|o| o.workload_id != first.workload_id) {
        return Err(CoreError::invalid("observations of several workloads cannot share one encoding"));
    }
    let mut acc = vec![0.0; e.k];
    for o in obs {
        for (a, z) in acc.iter_mut().zip(e.encode(&o.metrics)?) {
            *a += z;
        }
    }
    let n = obs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Network from `(z, v)` to scaled latency, bound to one embedder and
/// scaler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub net: Mlp,
    #[serde(with = "params_serde")]
    pub params: ParamSet,
    pub k: usize,
    pub s: usize,
    pub embedder_id: String,
    pub scaler_id: String,
    pub finetune: bool,
    pub latency: LatencyRange,
}

impl Regressor {
    pub fn init(k: usize, s: usize, hyper: &Hyper, rng: &mut ChaCha8Rng) -> (Mlp, ParamSet) {
        let mut params = ParamSet::new();
        let mut dims = vec![k + s];
        dims.extend(&hyper.reg_hidden);
        dims.push(1);
        let net = Mlp::new(&mut params, "regressor", &dims, hyper.activation, Activation::Identity, rng);
        (net, params)
    }

    /// Mean squared error of the network on `(z, v)` rows against scaled
    /// latency targets.
    pub fn loss(net: &Mlp, g: &mut Graph, vars: &[Var], z: Var, v: &Tensor, y: &Tensor) -> Var {
        let vv = g.constant(v.clone());
        let input = g.concat_cols(&[z, vv]);
        let pred = net.forward(g, vars, input);
        let yv = g.constant(y.clone());
        let d = g.sub(pred, yv);
        let sq = g.square(d);
        g.mean(sq)
    }

    /// Scaled predictions for each configuration under encoding `z`.
    pub fn predict_scaled(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if z.len() != self.k {
            return Err(CoreError::Dimension { expected: self.k, got: z.len() });
        }
        if configs.is_empty() {
            return Ok(Vec::new());
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
        Ok(self.net.infer(&self.params, &Tensor::from_rows(&rows)?).into_data())
    }

    /// Latencies in seconds for each configuration.
    pub fn predict_batch(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.predict_scaled(z, configs)?.into_iter().map(|y| self.latency.unscale(y)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("regressor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Predicted latency in seconds of configuration `v` under encoding `z`.
pub fn predict_latency(r: &Regressor, z: &[f64], v: &[f64]) -> Result<f64> {
    Ok(r.predict_batch(z, &[v.to_vec()])?[0])
}

/// Output of [`train_regressor`]. With fine-tuning the embedder is the
/// updated one the regressor is bound to.
#[derive(Clone, Debug)]
pub struct RegressorFit {
    pub regressor: Regressor,
    pub embedder: Embedder,
    pub log: TrainLog,
}

/// Per-workload centroid of the rows of `enc`, one row per workload.
fn centroids(enc: &Tensor, groups: &[Vec<usize>]) -> Tensor {
    let k = enc.cols();
    let mut data = Vec::with_capacity(groups.len() * k);
    for rows in groups {
        let mut acc = vec![0.0; k];
        for &r in rows {
            for (a, z) in acc.iter_mut().zip(enc.row(r)) {
                *a += z;
            }
        }
        data.extend(acc.into_iter().map(|a| a / rows.len() as f64));
    }
    Tensor::matrix(groups.len(), k, data).expect("finite centroids")
}

/// Trains the latency regressor on a scaled dataset. Each training
/// workload is represented by the centroid over all of its observations.
pub fn train_regressor(e: &Embedder, data: &Dataset, scaler: &ScalerStats, hyper: &Hyper) -> Result<RegressorFit> {
    hyper.validate()?;
    if e.scaler_id != scaler.id() {
        return Err(CoreError::invalid("embedder was trained behind a different scaler"));
    }
    if e.input_dim != data.p() {
        return Err(CoreError::Dimension { expected: e.input_dim, got: data.p() });
    }
    let mut rng = seeded(hyper.seed, 4);
    let (net, mut params) = Regressor::init(e.k, data.s(), hyper, &mut rng);
    let targets: Vec<f64> = data.latency.iter().map(|&y| scaler.scale_latency(y)).collect();
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut embedder = e.clone();
    let finetune = hyper.finetune && matches!(e.encoder, Encoder::Neural(_));
    if hyper.finetune && !finetune {
        log::warn!("finetune requested for {}, which has no trainable encoder; ignored", e.kind);
    }
    let log = if finetune {
        let Encoder::Neural(n) = &e.encoder else { unreachable!() };
        let offset = params.append(&n.params);
        let enc_net = n.net.shifted(offset as isize);
        let (zs, ze) = (n.out_start, n.out_end);
        let log = run_epochs(
            "regressor_finetune",
            &mut params,
            hyper.lr,
            hyper.reg_epochs,
            hyper.reg_batch_size,
            &mut rng,
            |_, _| Ok(rows.clone()),
            |g, vars, items: &[usize], _| {
                let mut local: BTreeMap<usize, usize> = BTreeMap::new();
                for &r in items {
                    let next = local.len();
                    local.entry(data.workload[r]).or_insert(next);
                }
                let mut members: Vec<(usize, usize)> = local.iter().map(|(&w, &l)| (l, w)).collect();
                members.sort_unstable();
                let all_rows: Vec<usize> = members.iter().flat_map(|&(_, w)| data.groups[w].iter().copied()).collect();
                let mut avg = vec![0.0; members.len() * all_rows.len()];
                let mut col = 0;
                for (l, &(_, w)) in members.iter().enumerate() {
                    let n = data.groups[w].len();
                    for _ in 0..n {
                        avg[l * all_rows.len() + col] = 1.0 / n as f64;
                        col += 1;
                    }
                }
                let xv = g.constant(data.x_rows(&all_rows));
                let out = enc_net.forward(g, vars, xv);
                let enc = g.slice_cols(out, zs, ze);
                let a = g.constant(Tensor::matrix(members.len(), all_rows.len(), avg)?);
                let cents = g.matmul(a, enc);
                let idx: Vec<usize> = items.iter().map(|r| local[&data.workload[*r]]).collect();
                let z = g.gather_rows(cents, &idx);
                let y: Vec<f64> = items.iter().map(|&r| targets[r]).collect();
                Ok(Regressor::loss(&net, g, vars, z, &data.v_rows(items), &column(&y)))
            },
        )?;
        let mut tuned = params.split_off(offset);
        tuned.freeze_all();
        if let Encoder::Neural(n) = &mut embedder.encoder {
            n.params = tuned;
        }
        log
    } else {
        let enc = e.encode_batch(&data.x)?;
        let cents = centroids(&enc, &data.groups);
        run_epochs(
            "regressor",
            &mut params,
            hyper.lr,
            hyper.reg_epochs,
            hyper.reg_batch_size,
            &mut rng,
            |_, _| Ok(rows.clone()),
            |g, vars, items: &[usize], _| {
                let idx: Vec<usize> = items.iter().map(|&r| data.workload[r]).collect();
                let z = g.constant(cents.gather_rows(&idx));
                let y: Vec<f64> = items.iter().map(|&r| targets[r]).collect();
                Ok(Regressor::loss(&net, g, vars, z, &data.v_rows(items), &column(&y)))
            },
        )?
    };
    params.freeze_all();
    let regressor = Regressor {
        net,
        params,
        k: e.k,
        s: data.s(),
        embedder_id: embedder.id(),
        scaler_id: scaler.id(),
        finetune,
        latency: scaler.latency,
    };
    Ok(RegressorFit { regressor, embedder, log })
}

/// What evaluation needs from a latency model: an encoding built from a
/// new workload's admitted observations and predictions under it.
pub trait LatencyPredictor {
    /// Fewest admitted observations a new workload needs.
    fn min_admission(&self) -> usize;

    /// Workload encoding from admitted (scaled) observations of one
    /// workload.
    fn admit(&self, workload_id: &str, obs: &[&Observation]) -> Result<Vec<f64>>;

    /// Latencies in seconds for scaled configurations under encoding `z`.
    fn predict(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// A trained latency predictor of any method.
#[derive(Clone, Debug)]
pub enum LatencyModel {
    Encoded { embedder: Embedder, regressor: Regressor },
    Embedding { model: EmbeddingModel, hyper: Hyper },
}

impl LatencyModel {
    /// Fewest admitted observations a new workload needs.
    pub fn min_admission(&self) -> usize {
        match self {
            LatencyModel::Encoded { .. } => 1,
            LatencyModel::Embedding { model, .. } => model.k,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            LatencyModel::Encoded { embedder, .. } => embedder.k,
            LatencyModel::Embedding { model, .. } => model.k,
        }
    }

    /// Workload encoding from admitted (scaled) observations of one
    /// workload.
    pub fn admit(&self, workload_id: &str, obs: &[&Observation]) -> Result<Vec<f64>> {
        match self {
            LatencyModel::Encoded { embedder, .. } => extract_workload_encoding(embedder, obs),
            LatencyModel::Embedding { model, hyper } => {
                if obs.len() < model.k {
                    return Err(CoreError::NotApplicable(format!(
                        "the embedding architecture needs at least {} observations per new workload",
                        model.k
                    )));
                }
                let owned: Vec<Observation> = obs.iter().map(|o| (*o).clone()).collect();
                let (updated, _) = incremental_embed(model, workload_id, &owned, hyper)?;
                updated.z(workload_id)
            }
        }
    }

    /// Latencies in seconds for scaled configurations under encoding `z`.
    pub fn predict(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            LatencyModel::Encoded { regressor, .. } => regressor.predict_batch(z, configs),
            LatencyModel::Embedding { model, .. } => model.predict_with(z, configs),
        }
    }
}

impl LatencyPredictor for LatencyModel {
    fn min_admission(&self) -> usize {
        LatencyModel::min_admission(self)
    }

    fn admit(&self, workload_id: &str, obs: &[&Observation]) -> Result<Vec<f64>> {
        LatencyModel::admit(self, workload_id, obs)
    }

    fn predict(&self, z: &[f64], configs: &[Vec<f64>]) -> Result<Vec<f64>> {
        LatencyModel::predict(self, z, configs)
    }
}
