use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, ProvenanceRecord};
use super::model::{loss_and_gradient, loss_sum};
use super::optim::{OptimizerKind, OptimizerState};
use super::params::{ModelParams, ParamLayout};
use super::{EncodedPair, ModelConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::SeededRng;

const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm ceiling.
    pub clip_norm: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 8,
            optimizer: OptimizerKind::Sgd,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Token-weighted mean training loss over the epoch (0 when empty).
    pub train_loss: f64,
    pub steps: u64,
    pub tokens: usize,
}

/// Fresh checkpoint with parameters drawn from `uniform(-0.08, 0.08)`.
pub fn init_model(config: &ModelConfig) -> Result<ModelCheckpoint> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut rng = SeededRng::new(config.seed);
    let mut params = ModelParams::zeros(layout);
    for x in &mut params.data {
        *x = rng.uniform(-INIT_SCALE, INIT_SCALE) as f32 as f64;
    }
    let n = params.data.len();
    Ok(ModelCheckpoint {
        config: config.clone(),
        params,
        optimizer: OptimizerState::new(OptimizerKind::Sgd, n),
        provenance: Vec::new(),
        rng: rng.state(),
        src_vocab: None,
        tgt_vocab: None,
    })
}

/// One pass over `data` in an order shuffled by the checkpoint's RNG, in
/// consecutive batches of `hyper.batch_size`. `observer` sees the indices
/// of each batch before its update. On divergence the checkpoint is left
/// untouched.
pub fn train_epoch_observed(
    checkpoint: &mut ModelCheckpoint,
    domain: &str,
    data: &[EncodedPair],
    hyper: &TrainHyper,
    exec: Exec,
    mut observer: Option<&mut dyn FnMut(&[usize])>,
) -> Result<EpochStats> {
    hyper.validate()?;
    super::check_ids(&checkpoint.config, data)?;
    let mut params = checkpoint.params.clone();
    let mut optimizer = checkpoint.optimizer.clone();
    if optimizer.kind != hyper.optimizer {
        optimizer.reset_to(hyper.optimizer, params.data.len());
    }
    let mut rng = SeededRng::from_state(checkpoint.rng);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut order);

    let mut loss_total = 0.0;
    let mut tokens = 0usize;
    let mut steps = 0u64;
    for idx in order.chunks(hyper.batch_size) {
        if let Some(obs) = observer.as_deref_mut() {
            obs(idx);
        }
        let batch: Vec<EncodedPair> = idx.iter().map(|&i| data[i].clone()).collect();
        let (loss, grads, n) = loss_and_gradient(&params, &batch, exec)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step: optimizer.steps,
                loss,
            });
        }
        optimizer.apply(&mut params, &grads, hyper.learning_rate, hyper.clip_norm);
        if !params.all_finite() {
            return Err(Error::Divergence {
                step: optimizer.steps - 1,
                loss,
            });
        }
        loss_total += loss * n as f64;
        tokens += n;
        steps += 1;
    }

    checkpoint.params = params;
    checkpoint.optimizer = optimizer;
    checkpoint.rng = rng.state();
    match checkpoint.provenance.last_mut() {
        Some(last) if last.domain == domain => {
            last.epochs += 1;
            last.steps += steps;
        }
        _ => checkpoint.provenance.push(ProvenanceRecord {
            domain: domain.to_owned(),
            epochs: 1,
            steps,
        }),
    }
    Ok(EpochStats {
        train_loss: if tokens == 0 { 0.0 } else { loss_total / tokens as f64 },
        steps,
        tokens,
    })
}

pub fn train_epoch(
    checkpoint: &mut ModelCheckpoint,
    domain: &str,
    data: &[EncodedPair],
    hyper: &TrainHyper,
    exec: Exec,
) -> Result<EpochStats> {
    train_epoch_observed(checkpoint, domain, data, hyper, exec, None)
}

/// `exp` of the mean token cross-entropy over `data`.
pub fn perplexity(checkpoint: &ModelCheckpoint, data: &[EncodedPair], exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("perplexity of an empty corpus".into()));
    }
    let (sum, tokens) = loss_sum(&checkpoint.params, data, exec)?;
    let mean = sum / tokens as f64;
    if !mean.is_finite() {
        return Err(Error::Divergence {
            step: checkpoint.optimizer.steps,
            loss: mean,
        });
    }
    Ok(mean.exp())
}
