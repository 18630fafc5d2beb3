//! Neural encoders: custom and contractive autoencoders, the beta-VAE,
//! the siamese triplet network and the two hybrids.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use wlembed_nn::{Activation, Graph, Mlp, ParamSet, Tensor, Var};

use crate::data::Dataset;
use crate::embed::losses::{contractive_penalty, gaussian_kl_graph, mean_row_sq_dist, snn_loss_graph, triplet_loss_graph};
use crate::embed::triplets::{Triplet, TripletMiner};
use crate::error::{CoreError, Result};
use crate::hyper::{Hyper, Method};
use crate::traces::ConfigKey;
use crate::training::{run_epochs, seeded, TrainLog};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Encoder (and decoder) networks of one neural method, registered in a
/// single parameter set with the encoder first.
#[derive(Clone, Debug)]
pub struct AeNet {
    pub method: Method,
    pub encoder: Mlp,
    pub decoder: Option<Mlp>,
    /// Width of the configuration head at the front of the encoder output.
    pub head: usize,
    pub k: usize,
    /// Number of encoder parameters; decoder parameters follow.
    pub encoder_params: usize,
}

/// One minibatch in the shape a method's loss consumes.
#[derive(Clone, Debug)]
pub enum LossBatch {
    /// Plain rows. `eps` carries the VAE reparameterization noise.
    Rows { x: Tensor, v: Tensor, eps: Option<Tensor> },
    /// Anchor, positive and negative rows.
    Triplets { x: [Tensor; 3], v: [Tensor; 3] },
    /// Rows with workload labels and configuration identities.
    Labeled { x: Tensor, workloads: Vec<usize>, configs: Vec<ConfigKey> },
}

impl AeNet {
    pub fn new(method: Method, p: usize, s: usize, hyper: &Hyper, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = hyper.embed_dim;
        let (head, enc_out, dec_in, has_decoder) = match method {
            Method::CustomAe | Method::ContractiveAe => (s, s + k, s + k, true),
            Method::Hybrid1 => {
                let head = if hyper.lambda != 0.0 { s } else { 0 };
                (head, head + k, head + k, true)
            }
            Method::BetaVae => (0, 2 * k, k, true),
            Method::Siamese => (0, k, 0, false),
            Method::Hybrid2 => (0, k, k, true),
            other => return Err(CoreError::invalid(format!("{other} is not a neural encoder"))),
        };
        if method == Method::ContractiveAe && !hyper.activation.is_smooth() {
            return Err(CoreError::invalid("contractive_ae needs a smooth activation (tanh or sigmoid)"));
        }
        let mut dims = vec![p];
        dims.extend(&hyper.hidden);
        dims.push(enc_out);
        // the cross-workload soft-nearest-neighbor ratio is unbounded, so the
        // hybrid2 encoding lives in a bounded box
        let enc_act = if method == Method::Hybrid2 { Activation::Tanh } else { Activation::Identity };
        let encoder = Mlp::new(params, "encoder", &dims, hyper.activation, enc_act, rng);
        let encoder_params = params.len();
        let decoder = has_decoder.then(|| {
            let mut dims = vec![dec_in];
            dims.extend(hyper.hidden.iter().rev());
            dims.push(p);
            Mlp::new(params, "decoder", &dims, hyper.activation, Activation::Identity, rng)
        });
        Ok(Self { method, encoder, decoder, head, k, encoder_params })
    }

    /// Column range of the workload encoding in the encoder output.
    pub fn z_range(&self) -> (usize, usize) {
        (self.head, self.head + self.k)
    }

    /// Column range of the encoder output fed to the decoder.
    pub fn decoder_input(&self) -> (usize, usize) {
        match self.method {
            Method::BetaVae => (0, self.k),
            _ => (0, self.head + self.k),
        }
    }

    fn decode(&self, g: &mut Graph, vars: &[Var], bottleneck: Var) -> Var {
        self.decoder.as_ref().expect("decoder").forward(g, vars, bottleneck)
    }

    /// Mean minibatch loss of the method.
    pub fn loss(&self, g: &mut Graph, vars: &[Var], batch: &LossBatch, hyper: &Hyper) -> Result<Var> {
        match (self.method, batch) {
            (Method::CustomAe | Method::ContractiveAe, LossBatch::Rows { x, v, .. }) => {
                let xv = g.constant(x.clone());
                let vv = g.constant(v.clone());
                let e = self.encoder.forward(g, vars, xv);
                let recon = self.decode(g, vars, e);
                let mut loss = mean_row_sq_dist(g, recon, xv);
                if hyper.gamma != 0.0 {
                    let head = g.slice_cols(e, 0, self.head);
                    let c = mean_row_sq_dist(g, head, vv);
                    let c = g.scale(c, hyper.gamma);
                    loss = g.add(loss, c);
                }
                if self.method == Method::ContractiveAe && hyper.lambda != 0.0 {
                    let (a, b) = self.z_range();
                    let pen = contractive_penalty(g, &self.encoder, vars, xv, a, b)?;
                    let pen = g.scale(pen, hyper.lambda);
                    loss = g.add(loss, pen);
                }
                Ok(loss)
            }
            (Method::BetaVae, LossBatch::Rows { x, eps, .. }) => {
                let eps = eps.as_ref().ok_or_else(|| CoreError::invalid("beta_vae batch needs noise"))?;
                let xv = g.constant(x.clone());
                let e = self.encoder.forward(g, vars, xv);
                let mu = g.slice_cols(e, 0, self.k);
                let lv = g.slice_cols(e, self.k, 2 * self.k);
                let lv = g.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
                let half = g.scale(lv, 0.5);
                let sigma = g.exp(half);
                let ev = g.constant(eps.clone());
                let noise = g.mul(sigma, ev);
                let z = g.add(mu, noise);
                let recon = self.decode(g, vars, z);
                let loss = mean_row_sq_dist(g, recon, xv);
                if hyper.beta == 0.0 {
                    return Ok(loss);
                }
                let kl = gaussian_kl_graph(g, mu, lv);
                let kl = g.scale(kl, hyper.beta);
                Ok(g.add(loss, kl))
            }
            (Method::Siamese | Method::Hybrid1, LossBatch::Triplets { x, v }) => {
                let (za, zb) = self.z_range();
                let mut enc = Vec::with_capacity(3);
                let mut zs = Vec::with_capacity(3);
                let mut xs = Vec::with_capacity(3);
                for xi in x {
                    let xv = g.constant(xi.clone());
                    let e = self.encoder.forward(g, vars, xv);
                    zs.push(g.slice_cols(e, za, zb));
                    enc.push(e);
                    xs.push(xv);
                }
                let mut loss = triplet_loss_graph(g, zs[0], zs[1], zs[2], hyper.alpha);
                if self.method == Method::Hybrid1 {
                    if hyper.gamma != 0.0 {
                        for i in 0..3 {
                            let r = self.decode(g, vars, enc[i]);
                            let t = mean_row_sq_dist(g, r, xs[i]);
                            let t = g.scale(t, hyper.gamma);
                            loss = g.add(loss, t);
                        }
                    }
                    if hyper.lambda != 0.0 && self.head > 0 {
                        for i in 0..3 {
                            let vv = g.constant(v[i].clone());
                            let h = g.slice_cols(enc[i], 0, self.head);
                            let t = mean_row_sq_dist(g, h, vv);
                            let t = g.scale(t, hyper.lambda);
                            loss = g.add(loss, t);
                        }
                    }
                }
                Ok(loss)
            }
            (Method::Hybrid2, LossBatch::Labeled { x, workloads, configs }) => {
                let xv = g.constant(x.clone());
                let z = self.encoder.forward(g, vars, xv);
                let recon = self.decode(g, vars, z);
                let mut loss = mean_row_sq_dist(g, recon, xv);
                if hyper.lambda != 0.0 {
                    let snn = snn_loss_graph(g, z, workloads, configs, hyper.temperature)?;
                    let snn = g.scale(snn, hyper.snn_sign * hyper.lambda);
                    loss = g.add(loss, snn);
                }
                Ok(loss)
            }
            (m, _) => Err(CoreError::invalid(format!("batch shape does not fit method {m}"))),
        }
    }
}

/// Standard normal noise of the given shape.
pub fn normal_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("finite noise")
}

/// Stratified hybrid2 batches: each batch holds up to `w` workloads with up
/// to `c` observations at distinct configurations each, and satisfies the
/// soft-nearest-neighbor partner conditions.
pub fn snn_batches(data: &Dataset, w: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let n_w = data.n_workloads();
    if n_w < 2 || w < 2 || c < 2 {
        return Err(CoreError::invalid("stratified batches need at least two workloads and two configurations each"));
    }
    // distinct-config rows per workload
    let distinct: Vec<Vec<usize>> = data
        .groups
        .iter()
        .map(|rows| {
            let mut seen = std::collections::HashSet::new();
            rows.iter().copied().filter(|&r| seen.insert(&data.config_keys[r])).collect()
        })
        .collect();
    for (i, d) in distinct.iter().enumerate() {
        if d.len() < 2 {
            return Err(CoreError::Scheme {
                workload: data.workload_ids[i].clone(),
                reason: "stratified batches need two or more distinct configurations".into(),
            });
        }
    }
    let per_batch = w.min(n_w) * c;
    let n_batches = data.len().div_ceil(per_batch).max(1);
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch = None;
        for _attempt in 0..20 {
            let ws = sample(rng, n_w, w.min(n_w)).into_vec();
            let mut rows = Vec::with_capacity(per_batch);
            let mut labels = Vec::with_capacity(per_batch);
            for &wi in &ws {
                let d = &distinct[wi];
                for j in sample(rng, d.len(), c.min(d.len())) {
                    rows.push(d[j]);
                    labels.push(wi);
                }
            }
            let keys: Vec<ConfigKey> = rows.iter().map(|&r| data.config_keys[r].clone()).collect();
            if crate::embed::losses::snn_masks(&labels, &keys).is_ok() {
                batch = Some(rows);
                break;
            }
        }
        out.push(batch.ok_or_else(|| CoreError::invalid("could not draw a stratified batch with partners for every point"))?);
    }
    Ok(out)
}

/// Result of a neural training run.
#[derive(Clone, Debug)]
pub struct NeuralFit {
    pub net: AeNet,
    pub params: ParamSet,
    pub log: TrainLog,
}

/// Trains the encoder of `method` on a scaled dataset.
pub fn train_neural(method: Method, data: &Dataset, shared_pool: &[Vec<f64>], hyper: &Hyper) -> Result<NeuralFit> {
    hyper.validate()?;
    let mut params = ParamSet::new();
    let mut init_rng = seeded(hyper.seed, 1);
    let net = AeNet::new(method, data.p(), data.s(), hyper, &mut params, &mut init_rng)?;
    let mut rng = seeded(hyper.seed, 2);
    let stage = method.name();
    let log = match method {
        Method::CustomAe | Method::ContractiveAe | Method::BetaVae => {
            let rows: Vec<usize> = (0..data.len()).collect();
            let k = net.k;
            run_epochs(
                stage,
                &mut params,
                hyper.lr,
                hyper.epochs,
                hyper.batch_size,
                &mut rng,
                |_, _| Ok(rows.clone()),
                |g, vars, items: &[usize], rng| {
                    let eps = (method == Method::BetaVae).then(|| normal_noise(items.len(), k, rng));
                    let batch = LossBatch::Rows { x: data.x_rows(items), v: data.v_rows(items), eps };
                    net.loss(g, vars, &batch, hyper)
                },
            )?
        }
        Method::Siamese | Method::Hybrid1 => {
            let miner = TripletMiner::new(data, shared_pool, hyper.seed)?;
            run_epochs(
                stage,
                &mut params,
                hyper.lr,
                hyper.epochs,
                hyper.batch_size,
                &mut rng,
                |epoch, _| Ok(miner.epoch(epoch)),
                |g, vars, items: &[Triplet], _| {
                    let a: Vec<usize> = items.iter().map(|t| t.anchor).collect();
                    let p: Vec<usize> = items.iter().map(|t| t.positive).collect();
                    let n: Vec<usize> = items.iter().map(|t| t.negative).collect();
                    let batch = LossBatch::Triplets {
                        x: [data.x_rows(&a), data.x_rows(&p), data.x_rows(&n)],
                        v: [data.v_rows(&a), data.v_rows(&p), data.v_rows(&n)],
                    };
                    net.loss(g, vars, &batch, hyper)
                },
            )?
        }
        Method::Hybrid2 => run_epochs(
            stage,
            &mut params,
            hyper.lr,
            hyper.epochs,
            1,
            &mut rng,
            |_, rng| snn_batches(data, hyper.snn_batch_workloads, hyper.snn_batch_configs, rng),
            |g, vars, items: &[Vec<usize>], _| {
                let rows = &items[0];
                let batch = LossBatch::Labeled {
                    x: data.x_rows(rows),
                    workloads: rows.iter().map(|&r| data.workload[r]).collect(),
                    configs: rows.iter().map(|&r| data.config_keys[r].clone()).collect(),
                };
                net.loss(g, vars, &batch, hyper)
            },
        )?,
        other => return Err(CoreError::invalid(format!("{other} is not a neural encoder"))),
    };
    Ok(NeuralFit { net, params, log })
}
