//! Helpers shared by the integration suites: random instances, an
//! independent eigen oracle and gradient-check drivers for every loss.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlembed_core::embed::neural::{AeNet, LossBatch};
use wlembed_core::embed::EmbeddingModel;
use wlembed_core::traces::{config_key, ConfigKey, LatencyRange, ScalerStats, SCALER_SCHEMA_VERSION};
use wlembed_core::{Hyper, Method, Regressor};
use wlembed_nn::{grad_check, Activation, Graph, ParamSet, Tensor};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues
/// in descending order with unit eigenvectors whose largest-magnitude
/// entry is positive.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = v.iter().map(|row| row[i]).collect();
            let big = col.iter().copied().fold(0.0_f64, |b, x| if x.abs() > b.abs() { x } else { b });
            if big < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    (values, vectors)
}

/// Soft nearest neighbor loss written as explicit sums of exponentials.
pub fn snn_oracle(z: &[Vec<f64>], workloads: &[usize], configs: &[ConfigKey], t: f64) -> f64 {
    let n = z.len();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            if j == i || configs[j] == configs[i] {
                continue;
            }
            let e = (-d(&z[i], &z[j]) / t).exp();
            if workloads[j] == workloads[i] {
                num += e;
            } else {
                den += e;
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CustomAe,
    Contractive,
    BetaVae,
    Triplet,
    Hybrid1,
    Hybrid2,
    EmbeddingArch,
    RegressorMse,
}

pub const ALL_LOSSES: [LossKind; 8] = [
    LossKind::CustomAe,
    LossKind::Contractive,
    LossKind::BetaVae,
    LossKind::Triplet,
    LossKind::Hybrid1,
    LossKind::Hybrid2,
    LossKind::EmbeddingArch,
    LossKind::RegressorMse,
];

const P: usize = 5;
const S: usize = 3;
const K: usize = 2;
const ROWS: usize = 4;

pub fn tiny_hyper(method: Method, seed: u64) -> Hyper {
    Hyper {
        embed_dim: K,
        hidden: vec![4],
        reg_hidden: vec![4],
        activation: Activation::Tanh,
        seed,
        gamma: 0.7,
        lambda: 0.5,
        beta: 0.3,
        alpha: 1.0,
        temperature: 1.0,
        ..Hyper::for_method(method)
    }
}

fn scaler_stub() -> ScalerStats {
    ScalerStats { schema_version: SCALER_SCHEMA_VERSION, knobs: vec![], metrics: vec![], latency: LatencyRange { min: 0.0, max: 1.0 } }
}

fn ae_instance(method: Method, seed: u64, batch: impl Fn(&mut ChaCha8Rng) -> LossBatch) -> (Hyper, AeNet, ParamSet, LossBatch) {
    let hyper = tiny_hyper(method, seed);
    let mut r = rng(seed);
    let mut params = ParamSet::new();
    let net = AeNet::new(method, P, S, &hyper, &mut params, &mut r).unwrap();
    let b = batch(&mut r);
    (hyper, net, params, b)
}

fn ae_error(method: Method, seed: u64, batch: impl Fn(&mut ChaCha8Rng) -> LossBatch) -> f64 {
    let (hyper, net, mut params, b) = ae_instance(method, seed, batch);
    if method == Method::Siamese {
        // distances ignore a shared shift, so this gradient is identically
        // zero and its relative error is undefined; see `triplet_shift_gradient`
        params.set_trainable(net.encoder.layers.last().unwrap().bias, false);
    }
    grad_check(&params, GRAD_STEP, |g, vars| net.loss(g, vars, &b, &hyper).unwrap()).unwrap()
}

fn triplet_batch(r: &mut ChaCha8Rng) -> LossBatch {
    LossBatch::Triplets {
        x: [uniform(r, ROWS, P, 0.0, 1.0), uniform(r, ROWS, P, 0.0, 1.0), uniform(r, ROWS, P, 0.0, 1.0)],
        v: [uniform(r, ROWS, S, 0.0, 1.0), uniform(r, ROWS, S, 0.0, 1.0), uniform(r, ROWS, S, 0.0, 1.0)],
    }
}

/// Largest analytic gradient entry of the triplet loss with respect to the
/// encoder's output bias.
pub fn triplet_shift_gradient(seed: u64) -> f64 {
    let (hyper, net, params, b) = ae_instance(Method::Siamese, seed, triplet_batch);
    let mut g = Graph::new();
    let vars = g.bind(&params);
    let loss = net.loss(&mut g, &vars, &b, &hyper).unwrap();
    let grads = g.backward(loss).unwrap();
    let bias = net.encoder.layers.last().unwrap().bias;
    grads.get(bias).map_or(0.0, |t| t.data().iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// Worst relative gradient error of one random instance of `kind`.
pub fn loss_grad_error(kind: LossKind, seed: u64) -> f64 {
    let rows = |r: &mut ChaCha8Rng| LossBatch::Rows { x: uniform(r, ROWS, P, 0.0, 1.0), v: uniform(r, ROWS, S, 0.0, 1.0), eps: None };
    match kind {
        LossKind::CustomAe => ae_error(Method::CustomAe, seed, rows),
        LossKind::Contractive => ae_error(Method::ContractiveAe, seed, rows),
        LossKind::BetaVae => ae_error(Method::BetaVae, seed, |r| LossBatch::Rows {
            x: uniform(r, ROWS, P, 0.0, 1.0),
            v: uniform(r, ROWS, S, 0.0, 1.0),
            eps: Some(uniform(r, ROWS, K, -1.5, 1.5)),
        }),
        LossKind::Triplet => ae_error(Method::Siamese, seed, triplet_batch),
        LossKind::Hybrid1 => ae_error(Method::Hybrid1, seed, triplet_batch),
        LossKind::Hybrid2 => ae_error(Method::Hybrid2, seed, |r| {
            let workloads = vec![0, 0, 1, 1, 2, 2];
            let configs: Vec<ConfigKey> = [0.0, 1.0, 0.0, 1.0, 1.0, 2.0].iter().map(|&c| config_key(&[c])).collect();
            LossBatch::Labeled { x: uniform(r, 6, P, 0.0, 1.0), workloads, configs }
        }),
        LossKind::EmbeddingArch => {
            let hyper = tiny_hyper(Method::Embedding, seed);
            let ids = vec!["a".to_string(), "b".into(), "c".into()];
            let model = EmbeddingModel::init(ids, S, &hyper, &scaler_stub()).unwrap();
            let mut r = rng(seed ^ 0xe);
            let z_rows = vec![0, 1, 2, 0, 2];
            let v = uniform(&mut r, z_rows.len(), S, 0.0, 1.0);
            let y = uniform(&mut r, z_rows.len(), 1, 0.0, 1.0);
            grad_check(&model.params, GRAD_STEP, |g, vars| model.loss(g, vars, &z_rows, &v, &y)).unwrap()
        }
        LossKind::RegressorMse => {
            let hyper = tiny_hyper(Method::Identity, seed);
            let mut r = rng(seed);
            let (net, mut params) = Regressor::init(K, S, &hyper, &mut r);
            let zi = params.add("z", uniform(&mut r, ROWS, K, -1.0, 1.0));
            let v = uniform(&mut r, ROWS, S, 0.0, 1.0);
            let y = uniform(&mut r, ROWS, 1, 0.0, 1.0);
            grad_check(&params, GRAD_STEP, |g, vars| Regressor::loss(&net, g, vars, vars[zi], &v, &y)).unwrap()
        }
    }
}

/// Worst error per loss over `GRAD_SEEDS` instances.
pub fn worst_grad_errors() -> Vec<(LossKind, f64)> {
    ALL_LOSSES
        .iter()
        .map(|&k| (k, (0..GRAD_SEEDS).map(|s| loss_grad_error(k, s)).fold(0.0, f64::max)))
        .collect()
}
