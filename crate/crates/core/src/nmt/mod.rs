//! Recurrent encoder-decoder with additive attention.
//!
//! The encoder is a stack of bidirectional recurrent layers over source
//! embeddings; its top layer yields one `2H` annotation per source token.
//! Each decoder step attends over the annotations with the previous top
//! decoder state, feeds `[embedding(prev); context]` through a stack of
//! recurrent layers and predicts the next token from
//! `[state; context; embedding(prev)]` with a linear softmax layer.
//! Recurrent cells are GRU by default, LSTM optionally.
//!
//! Arithmetic is fp64. Parameters and optimizer accumulators are kept
//! fp32-representable (rounded after every update) so checkpoints store them
//! in fp32 without loss.

mod cell;
mod checkpoint;
mod decode;
mod linalg;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ModelCheckpoint, ProvenanceRecord, FORMAT_VERSION, MAGIC};
pub use decode::{beam_search, decode_beam, greedy_decode, BeamOutcome, Hypothesis, ModelScorer, StepScorer};
pub use model::{
    backward, encode_source, forward_loss, initial_state, loss_and_gradient, step_distribution, BatchCache,
    DecoderState, EncodedSource, StepOutput,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{Gradients, ModelParams, ParamLayout, TensorSpec};
pub use train::{init_model, perplexity, train_epoch, train_epoch_observed, EpochStats, TrainHyper};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::subword::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks per cell (rows of `W` are `gates * hidden`).
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    /// Recurrent state width: `h` for GRU, `[h; c]` for LSTM.
    pub fn state_dim(self, hidden: usize) -> usize {
        match self {
            CellKind::Gru => hidden,
            CellKind::Lstm => 2 * hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(default)]
    pub cell: CellKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Published large-scale settings: 2-layer LSTM, 512-dim embeddings,
    /// 1000-dim hidden states.
    pub fn production(src_vocab: usize, tgt_vocab: usize, seed: u64) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            embedding_dim: 512,
            hidden_dim: 1000,
            encoder_layers: 2,
            decoder_layers: 2,
            cell: CellKind::Lstm,
            seed,
        }
    }

    /// Desk-scale defaults.
    pub fn desk(src_vocab: usize, tgt_vocab: usize, seed: u64) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            embedding_dim: 16,
            hidden_dim: 32,
            encoder_layers: 1,
            decoder_layers: 1,
            cell: CellKind::Gru,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.src_vocab,
            self.tgt_vocab,
            self.embedding_dim,
            self.hidden_dim,
            self.encoder_layers,
            self.decoder_layers,
        ];
        if dims.iter().any(|&d| d < 1) {
            return Err(Error::InvalidConfig("all model dimensions must be >= 1".into()));
        }
        if self.tgt_vocab <= crate::subword::EOS_ID as usize {
            return Err(Error::InvalidConfig("target vocabulary must include the reserved ids".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        ParamLayout::new(self).total()
    }
}

/// A training example as vocabulary ids. The target excludes `</s>`, which
/// the model appends.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

impl EncodedPair {
    pub fn new(src: Vec<u32>, tgt: Vec<u32>) -> Self {
        Self { src, tgt }
    }

    /// Predicted tokens: the target plus `</s>`.
    pub fn target_tokens(&self) -> usize {
        self.tgt.len() + 1
    }
}

/// Maps a corpus to ids (unknown tokens become `<unk>`).
pub fn encode_pairs(corpus: &ParallelCorpus, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<EncodedPair> {
    corpus
        .pairs
        .iter()
        .map(|p| EncodedPair::new(src_vocab.encode(&p.source), tgt_vocab.encode(&p.target)))
        .collect()
}

pub(crate) fn check_ids(config: &ModelConfig, batch: &[EncodedPair]) -> Result<()> {
    for pair in batch {
        if pair.src.is_empty() {
            return Err(Error::InvalidSentence("empty source sentence".into()));
        }
        if let Some(&id) = pair.src.iter().find(|&&id| id as usize >= config.src_vocab) {
            return Err(Error::VocabularyRange {
                side: "source",
                id,
                size: config.src_vocab,
            });
        }
        if let Some(&id) = pair.tgt.iter().find(|&&id| id as usize >= config.tgt_vocab) {
            return Err(Error::VocabularyRange {
                side: "target",
                id,
                size: config.tgt_vocab,
            });
        }
    }
    Ok(())
}
