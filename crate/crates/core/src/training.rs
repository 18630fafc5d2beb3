use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wlembed_nn::{Adam, AdamConfig, Graph, ParamSet, Var};

use crate::error::{CoreError, Result};

/// Per-epoch mean training loss of one model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn new(stage: impl Into<String>) -> Self {
        Self { stage: stage.into(), epoch_loss: Vec::new() }
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Runs minibatch Adam for `epochs` epochs.
///
/// `make_items` yields the training items of an epoch (they are shuffled
/// here); `batch_loss` builds the mean loss of one batch on a fresh graph.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epochs<T, M, L>(
    stage: &str,
    params: &mut ParamSet,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    mut make_items: M,
    mut batch_loss: L,
) -> Result<TrainLog>
where
    T: Clone,
    M: FnMut(usize, &mut ChaCha8Rng) -> Result<Vec<T>>,
    L: FnMut(&mut Graph, &[Var], &[T], &mut ChaCha8Rng) -> Result<Var>,
{
    let mut adam = Adam::new(params, AdamConfig::with_lr(lr));
    let mut log = TrainLog::new(stage);
    for epoch in 0..epochs {
        let mut items = make_items(epoch, rng)?;
        if items.is_empty() {
            return Err(CoreError::invalid(format!("{stage}: no training items")));
        }
        items.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in items.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let vars = g.bind(params);
            let loss = batch_loss(&mut g, &vars, batch, rng)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "{stage}: loss became {value} at epoch {epoch} (lr {lr:e})"
                )));
            }
            let grads = g.backward(loss).map_err(|e| CoreError::Numerical(format!("{stage}: epoch {epoch}: {e}")))?;
            adam.step(params, &grads)?;
            if params.iter().any(|p| !p.value.is_finite()) {
                return Err(CoreError::Numerical(format!("{stage}: parameters diverged at epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            count += batch.len();
        }
        log.epoch_loss.push(total / count as f64);
    }
    Ok(log)
}

/// ChaCha8 generator for `seed` on an independent `stream`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
