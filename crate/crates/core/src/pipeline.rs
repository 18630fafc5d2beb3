//! End-to-end training of one method and its on-disk artifact set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::embed::{fit_embedder, train_embedding_arch, DecoderHead, Embedder, EmbeddingModel};
use crate::error::{CoreError, Result};
use crate::hyper::{Hyper, Method};
use crate::predictor::{train_regressor, LatencyModel, Regressor};
use crate::traces::{apply_scaler, fit_scaler, Observation, ScalerStats, TraceSet};
use crate::training::TrainLog;

pub const MODEL_FILE: &str = "model.json";
pub const SCALER_FILE: &str = "scaler.json";
pub const EMBEDDER_FILE: &str = "embedder.json";
pub const DECODER_FILE: &str = "decoder.json";
pub const REGRESSOR_FILE: &str = "regressor.json";
pub const EMBEDDING_FILE: &str = "embedding.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

/// Summary record written next to the model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub method: Method,
    pub hyper: Hyper,
    pub scaler_id: String,
    /// Scaled configurations observed for every training workload.
    pub shared_pool: Vec<Vec<f64>>,
    pub train_workloads: Vec<String>,
    pub retained_metrics: usize,
}

/// Everything produced by training one method on a raw training split.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub info: ModelInfo,
    pub scaler: ScalerStats,
    pub model: LatencyModel,
    pub decoder: Option<DecoderHead>,
    pub logs: Vec<TrainLog>,
}

/// Fits the scaler on `train_raw`, trains the encoder (if any) and the
/// latency model.
pub fn train_model(method: Method, train_raw: &TraceSet, hyper: &Hyper) -> Result<TrainedModel> {
    hyper.validate()?;
    let scaler = fit_scaler(train_raw)?;
    let scaled = apply_scaler(&scaler, train_raw)?;
    let data = Dataset::new(&scaled)?;
    let shared_pool = scaled.shared_configs();
    let info = ModelInfo {
        method,
        hyper: hyper.clone(),
        scaler_id: scaler.id(),
        shared_pool: shared_pool.clone(),
        train_workloads: data.workload_ids.clone(),
        retained_metrics: scaler.retained_metrics(),
    };
    if method == Method::Embedding {
        let (model, log) = train_embedding_arch(&data, &scaler, hyper)?;
        return Ok(TrainedModel {
            info,
            scaler,
            model: LatencyModel::Embedding { model, hyper: hyper.clone() },
            decoder: None,
            logs: vec![log],
        });
    }
    let fit = fit_embedder(method, &data, &shared_pool, &scaler.id(), hyper)?;
    let mut logs: Vec<TrainLog> = fit.log.into_iter().collect();
    let reg = train_regressor(&fit.embedder, &data, &scaler, hyper)?;
    logs.push(reg.log);
    Ok(TrainedModel {
        info,
        scaler,
        model: LatencyModel::Encoded { embedder: reg.embedder, regressor: reg.regressor },
        decoder: fit.decoder,
        logs,
    })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let mut text = body.to_string();
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| CoreError::invalid(format!("cannot read artifact {}: {e}", path.display())))
}

impl TrainedModel {
    pub fn embedder(&self) -> Option<&Embedder> {
        match &self.model {
            LatencyModel::Encoded { embedder, .. } => Some(embedder),
            LatencyModel::Embedding { .. } => None,
        }
    }

    /// Scales raw observations with the model's scaler.
    pub fn scale(&self, raw: &TraceSet) -> Result<TraceSet> {
        apply_scaler(&self.scaler, raw)
    }

    pub fn scale_observation(&self, raw: &Observation) -> Result<Observation> {
        self.scaler.scale_observation(raw)
    }

    /// Writes the artifact set. Output depends only on the model contents.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write(dir, MODEL_FILE, &serde_json::to_string_pretty(&self.info)?)?;
        write(dir, SCALER_FILE, &self.scaler.to_json())?;
        write(dir, TRAIN_LOG_FILE, &serde_json::to_string_pretty(&self.logs)?)?;
        match &self.model {
            LatencyModel::Encoded { embedder, regressor } => {
                write(dir, EMBEDDER_FILE, &embedder.to_json())?;
                write(dir, REGRESSOR_FILE, &regressor.to_json())?;
            }
            LatencyModel::Embedding { model, .. } => write(dir, EMBEDDING_FILE, &model.to_json())?,
        }
        if let Some(d) = &self.decoder {
            write(dir, DECODER_FILE, &d.to_json())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let info: ModelInfo = serde_json::from_str(&read(dir, MODEL_FILE)?)?;
        let scaler = ScalerStats::from_json(&read(dir, SCALER_FILE)?)?;
        if scaler.id() != info.scaler_id {
            return Err(CoreError::invalid("scaler artifact does not match the model record"));
        }
        let logs: Vec<TrainLog> = serde_json::from_str(&read(dir, TRAIN_LOG_FILE)?)?;
        let model = if info.method == Method::Embedding {
            let model = EmbeddingModel::from_json(&read(dir, EMBEDDING_FILE)?)?;
            LatencyModel::Embedding { model, hyper: info.hyper.clone() }
        } else {
            let embedder = Embedder::from_json(&read(dir, EMBEDDER_FILE)?)?;
            let regressor = Regressor::from_json(&read(dir, REGRESSOR_FILE)?)?;
            if regressor.embedder_id != embedder.id() || regressor.scaler_id != info.scaler_id {
                return Err(CoreError::invalid("regressor is bound to a different embedder or scaler"));
            }
            LatencyModel::Encoded { embedder, regressor }
        };
        let decoder = if dir.join(DECODER_FILE).exists() {
            Some(DecoderHead::from_json(&read(dir, DECODER_FILE)?)?)
        } else {
            None
        };
        Ok(Self { info, scaler, model, decoder, logs })
    }
}
