//! Workload encoders and their training entry point.

pub mod embedding_arch;
pub mod linear;
pub mod losses;
pub mod neural;
pub mod triplets;

use serde::{Deserialize, Serialize};
use wlembed_nn::{Mlp, ParamSet, Tensor};

use crate::data::{params_serde, Dataset};
use crate::error::{CoreError, Result};
use crate::hyper::{Hyper, Method};
use crate::traces::content_id;
use crate::training::TrainLog;

pub use embedding_arch::{incremental_embed, train_embedding_arch, EmbeddingModel};
pub use linear::{fit_kpca, fit_pca, KpcaModel, PcaModel};
pub use losses::{gaussian_kl, snn_loss_graph, triplet_loss};
pub use neural::{train_neural, AeNet, LossBatch, NeuralFit};
pub use triplets::{Triplet, TripletMiner};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralEncoder {
    pub net: Mlp,
    #[serde(with = "params_serde")]
    pub params: ParamSet,
    /// Columns of the network output that form the workload encoding.
    pub out_start: usize,
    pub out_end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Encoder {
    Identity,
    Pca(PcaModel),
    Kpca(KpcaModel),
    Neural(NeuralEncoder),
}

/// A trained, frozen map from a scaled metric vector to a `k`-vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    pub kind: Method,
    pub input_dim: usize,
    pub k: usize,
    /// Id of the scaler the encoder was trained behind.
    pub scaler_id: String,
    pub hyper: Hyper,
    pub encoder: Encoder,
}

impl Embedder {
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(CoreError::Dimension { expected: self.input_dim, got: x.len() });
        }
        Ok(match &self.encoder {
            Encoder::Identity => x.to_vec(),
            Encoder::Pca(m) => m.encode(x),
            Encoder::Kpca(m) => m.encode(x),
            Encoder::Neural(n) => {
                let out = n.net.infer(&n.params, &Tensor::row_vector(x)?);
                out.data()[n.out_start..n.out_end].to_vec()
            }
        })
    }

    /// Encodes every row of `x`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim {
            return Err(CoreError::Dimension { expected: self.input_dim, got: x.cols() });
        }
        match &self.encoder {
            Encoder::Neural(n) => Ok(n.net.infer(&n.params, x).slice_cols(n.out_start, n.out_end)),
            _ => {
                let rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| self.encode(x.row(r))).collect::<Result<_>>()?;
                Ok(Tensor::from_rows(&rows)?)
            }
        }
    }

    /// Content hash binding downstream models to this encoder.
    pub fn id(&self) -> String {
        content_id(&serde_json::to_string(self).expect("embedder serializes"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("embedder serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Decoder of an autoencoder-style method, plus the location of its
/// configuration head in the encoder output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderHead {
    pub net: Mlp,
    #[serde(with = "params_serde")]
    pub params: ParamSet,
    /// Encoder output columns the decoder reads.
    pub input_start: usize,
    pub input_end: usize,
    /// Encoder output columns approximating the configuration, if any.
    pub config_head: Option<(usize, usize)>,
}

impl DecoderHead {
    /// Reconstructed metrics and, when a head exists, the approximated
    /// configuration for one input row.
    pub fn reconstruct(&self, e: &Embedder, x: &[f64]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let Encoder::Neural(n) = &e.encoder else {
            return Err(CoreError::invalid("only neural encoders have decoders"));
        };
        if x.len() != e.input_dim {
            return Err(CoreError::Dimension { expected: e.input_dim, got: x.len() });
        }
        let out = n.net.infer(&n.params, &Tensor::row_vector(x)?);
        let bottleneck = out.slice_cols(self.input_start, self.input_end);
        let recon = self.net.infer(&self.params, &bottleneck).into_data();
        let head = self.config_head.map(|(a, b)| out.data()[a..b].to_vec());
        Ok((recon, head))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decoder serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Output of [`fit_embedder`].
#[derive(Clone, Debug)]
pub struct EmbedderFit {
    pub embedder: Embedder,
    pub decoder: Option<DecoderHead>,
    pub log: Option<TrainLog>,
}

/// Splits a trained neural net into a frozen embedder and decoder.
pub fn freeze_neural(fit: NeuralFit, input_dim: usize, scaler_id: &str, hyper: &Hyper) -> (Embedder, Option<DecoderHead>) {
    let NeuralFit { net, mut params, .. } = fit;
    let dec_params = params.split_off(net.encoder_params);
    params.freeze_all();
    let (out_start, out_end) = net.z_range();
    let decoder = net.decoder.as_ref().map(|d| {
        let mut dp = dec_params;
        dp.freeze_all();
        let (input_start, input_end) = net.decoder_input();
        DecoderHead {
            net: d.shifted(-(net.encoder_params as isize)),
            params: dp,
            input_start,
            input_end,
            config_head: (net.head > 0).then_some((0, net.head)),
        }
    });
    let embedder = Embedder {
        kind: net.method,
        input_dim,
        k: net.k,
        scaler_id: scaler_id.to_string(),
        hyper: hyper.clone(),
        encoder: Encoder::Neural(NeuralEncoder { net: net.encoder, params, out_start, out_end }),
    };
    (embedder, decoder)
}

/// Fits the encoder of any method except the embedding architecture,
/// which couples encoding and regression (see [`train_embedding_arch`]).
pub fn fit_embedder(method: Method, data: &Dataset, shared_pool: &[Vec<f64>], scaler_id: &str, hyper: &Hyper) -> Result<EmbedderFit> {
    hyper.validate()?;
    let p = data.p();
    let plain = |k: usize, encoder: Encoder| Embedder {
        kind: method,
        input_dim: p,
        k,
        scaler_id: scaler_id.to_string(),
        hyper: hyper.clone(),
        encoder,
    };
    match method {
        Method::Identity => Ok(EmbedderFit { embedder: plain(p, Encoder::Identity), decoder: None, log: None }),
        Method::Pca => {
            let m = fit_pca(&data.x, hyper.embed_dim)?;
            Ok(EmbedderFit { embedder: plain(m.k(), Encoder::Pca(m)), decoder: None, log: None })
        }
        Method::Kpca => {
            let gamma = hyper.kpca_gamma.unwrap_or(1.0 / p as f64);
            let m = fit_kpca(&data.x, hyper.embed_dim, gamma, hyper.kpca_max_points, hyper.seed)?;
            Ok(EmbedderFit { embedder: plain(m.k(), Encoder::Kpca(m)), decoder: None, log: None })
        }
        Method::Embedding => Err(CoreError::NotApplicable(
            "the embedding architecture learns workload rows jointly with its regressor".into(),
        )),
        _ => {
            let fit = train_neural(method, data, shared_pool, hyper)?;
            let log = fit.log.clone();
            let (embedder, decoder) = freeze_neural(fit, p, scaler_id, hyper);
            Ok(EmbedderFit { embedder, decoder, log: Some(log) })
        }
    }
}
