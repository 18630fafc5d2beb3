//! Workload encodings for latency prediction and configuration tuning of
//! distributed data-processing jobs.
//!
//! The crate covers trace ingestion and scaling, a synthetic trace
//! generator with a known latency surface, nine workload-encoding methods,
//! the downstream latency regressor, scheme-based evaluation, and
//! grid-search tuning.

pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod hyper;
pub mod pipeline;
pub mod predictor;
pub mod synth;
pub mod traces;
pub mod training;
pub mod tuner;

pub use data::Dataset;
pub use embed::{fit_embedder, DecoderHead, Embedder, EmbedderFit, EmbeddingModel, Encoder};
pub use error::{CoreError, Result};
pub use eval::{evaluate_model, evaluate_scheme, evaluate_trained, kfold_tune, mape, run_comparison, EvalReport, SchemeResult, Variant};
pub use hyper::{Hyper, Method};
pub use pipeline::{train_model, ModelInfo, TrainedModel};
pub use predictor::{extract_workload_encoding, predict_latency, train_regressor, AdmissionScheme, LatencyModel, LatencyPredictor, Pool, Regressor};
pub use synth::{generate, GroundTruth, SynthSpec};
pub use traces::{apply_scaler, fit_scaler, parse_trace_csv, split_workloads, Observation, ScalerStats, TraceSet};
pub use training::TrainLog;
pub use tuner::{enumerate_grid, improvement, recommend, recommend_with, KnobSpace, Recommendation, TunerOptions};
