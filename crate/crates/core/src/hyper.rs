use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wlembed_nn::Activation;

use crate::error::{CoreError, Result};

/// Every encoding method the toolkit can train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Identity,
    Pca,
    Kpca,
    Embedding,
    CustomAe,
    ContractiveAe,
    BetaVae,
    Siamese,
    Hybrid1,
    Hybrid2,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Identity,
        Method::Pca,
        Method::Kpca,
        Method::Embedding,
        Method::CustomAe,
        Method::ContractiveAe,
        Method::BetaVae,
        Method::Siamese,
        Method::Hybrid1,
        Method::Hybrid2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Pca => "pca",
            Method::Kpca => "kpca",
            Method::Embedding => "embedding",
            Method::CustomAe => "custom_ae",
            Method::ContractiveAe => "contractive_ae",
            Method::BetaVae => "beta_vae",
            Method::Siamese => "siamese",
            Method::Hybrid1 => "hybrid1",
            Method::Hybrid2 => "hybrid2",
        }
    }

    pub fn is_neural_encoder(self) -> bool {
        matches!(
            self,
            Method::CustomAe
                | Method::ContractiveAe
                | Method::BetaVae
                | Method::Siamese
                | Method::Hybrid1
                | Method::Hybrid2
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::invalid(format!("unknown method '{s}'")))
    }
}

/// Training hyperparameters. `gamma` and `lambda` weight different terms
/// depending on the method:
///
/// | method         | gamma                  | lambda                     |
/// |----------------|------------------------|----------------------------|
/// | custom_ae      | config approximation   | -                          |
/// | contractive_ae | config approximation   | Jacobian penalty           |
/// | hybrid1        | reconstruction         | config approximation       |
/// | hybrid2        | -                      | soft-nearest-neighbor term |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Embedding dimension `k`.
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    /// KL weight of the beta-VAE.
    pub beta: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Soft-nearest-neighbor temperature.
    pub temperature: f64,
    /// Sign applied to the soft-nearest-neighbor loss in the hybrid2
    /// objective: `recon + snn_sign * lambda * snn_loss`.
    pub snn_sign: f64,
    /// Workloads and configurations per stratified hybrid2 batch.
    pub snn_batch_workloads: usize,
    pub snn_batch_configs: usize,
    /// RBF width; `None` means `1 / p`.
    pub kpca_gamma: Option<f64>,
    /// Training points kept for the kernel eigenproblem.
    pub kpca_max_points: usize,
    pub reg_hidden: Vec<usize>,
    pub reg_epochs: usize,
    pub reg_batch_size: usize,
    pub finetune: bool,
    pub incremental_epochs: usize,
    pub incremental_lr: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: vec![64, 32],
            activation: Activation::Tanh,
            epochs: 150,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            gamma: 1.0,
            lambda: 1.0,
            beta: 1e-3,
            alpha: 1.0,
            temperature: 1.0,
            snn_sign: 1.0,
            snn_batch_workloads: 4,
            snn_batch_configs: 4,
            kpca_gamma: None,
            kpca_max_points: 600,
            reg_hidden: vec![64, 32],
            reg_epochs: 300,
            reg_batch_size: 32,
            finetune: false,
            incremental_epochs: 400,
            incremental_lr: 0.02,
        }
    }
}

impl Hyper {
    /// Documented per-method defaults.
    pub fn for_method(method: Method) -> Self {
        let base = Hyper::default();
        match method {
            Method::ContractiveAe => Hyper { lambda: 1e-3, ..base },
            Method::Embedding => Hyper { embed_dim: 5, epochs: 300, ..base },
            Method::Hybrid1 => Hyper { gamma: 0.1, lambda: 0.1, ..base },
            Method::Hybrid2 => Hyper { lambda: 0.5, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("batch_size", self.batch_size),
            ("reg_batch_size", self.reg_batch_size),
            ("snn_batch_workloads", self.snn_batch_workloads),
            ("snn_batch_configs", self.snn_batch_configs),
            ("kpca_max_points", self.kpca_max_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::invalid(format!("{name} must be positive")));
            }
        }
        if self.hidden.iter().chain(&self.reg_hidden).any(|&h| h == 0) {
            return Err(CoreError::invalid("hidden layer widths must be positive"));
        }
        let finite = [
            ("lr", self.lr),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("temperature", self.temperature),
            ("snn_sign", self.snn_sign),
            ("incremental_lr", self.incremental_lr),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(CoreError::invalid(format!("{name} must be finite")));
            }
        }
        if self.lr <= 0.0 || self.incremental_lr <= 0.0 {
            return Err(CoreError::invalid("learning rates must be positive"));
        }
        if self.beta < 0.0 {
            return Err(CoreError::invalid("beta must be >= 0"));
        }
        if self.temperature <= 0.0 {
            return Err(CoreError::invalid("temperature must be positive"));
        }
        if let Some(g) = self.kpca_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(CoreError::invalid("kpca_gamma must be positive"));
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override; the value is parsed as JSON, falling
    /// back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CoreError::invalid(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let value: serde_json::Value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("hyper serializes to an object");
        if !map.contains_key(key) {
            return Err(CoreError::invalid(format!("unknown hyperparameter '{key}'")));
        }
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(obj)
            .map_err(|e| CoreError::invalid(format!("bad value for '{key}': {e}")))?;
        Ok(())
    }
}
