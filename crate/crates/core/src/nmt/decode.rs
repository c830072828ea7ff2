use std::cmp::Ordering;

use super::checkpoint::ModelCheckpoint;
use super::model::{encode_source, initial_state, step_distribution, DecoderState, EncodedSource};
use super::params::ModelParams;
use super::{check_ids, EncodedPair};
use crate::error::Result;
use crate::subword::{BOS_ID, EOS_ID, PAD_ID};

/// Anything that yields a next-token distribution from a recurrent state.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Distribution over the next token after feeding `prev`, and the state
    /// that results.
    fn step(&self, state: &Self::State, prev: u32) -> (Vec<f64>, Self::State);
}

/// Single-model scorer over one encoded source sentence.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    encoded: EncodedSource,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, src: &[u32]) -> Self {
        Self {
            params,
            encoded: encode_source(params, src),
        }
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        initial_state(self.params, &self.encoded)
    }

    fn step(&self, state: &DecoderState, prev: u32) -> (Vec<f64>, DecoderState) {
        let out = step_distribution(self.params, &self.encoded, state, prev);
        (out.probs, out.state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output ids after `<s>`, ending with `</s>` when finished.
    pub tokens: Vec<u32>,
    /// Summed log-probability.
    pub score: f64,
    /// `score / tokens.len()`.
    pub normalized_score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<u32>, score: f64, finished: bool) -> Self {
        let normalized_score = score / tokens.len().max(1) as f64;
        Self {
            tokens,
            score,
            normalized_score,
            finished,
        }
    }

    /// Ids without the trailing `</s>`.
    pub fn output(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamOutcome {
    pub best: Hypothesis,
    /// Every completed hypothesis, best first.
    pub finished: Vec<Hypothesis>,
}

impl BeamOutcome {
    /// Highest unnormalized score among completed hypotheses.
    pub fn best_raw_score(&self) -> f64 {
        self.finished
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Live<S> {
    tokens: Vec<u32>,
    score: f64,
    state: S,
}

/// Higher score first, then lexicographically smaller ids.
fn rank(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Beam search. The live beam shrinks as hypotheses finish; when `max_len`
/// is reached the surviving hypotheses are kept unfinished. Completed
/// hypotheses are ranked by length-normalized score, ties by id order.
pub fn beam_search<S: StepScorer>(scorer: &S, beam: usize, max_len: usize) -> BeamOutcome {
    let beam = beam.max(1);
    let mut live = vec![Live {
        tokens: Vec::new(),
        score: 0.0,
        state: scorer.start(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len.max(1) {
        let room = beam - finished.len();
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        let mut expanded = Vec::with_capacity(live.len());
        for (i, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS_ID);
            let (probs, next) = scorer.step(&hyp.state, prev);
            expanded.push(next);
            for (tok, &p) in probs.iter().enumerate() {
                let tok = tok as u32;
                if tok == PAD_ID || tok == BOS_ID {
                    continue;
                }
                candidates.push((i, tok, hyp.score + p.ln()));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| {
                    live[a.0]
                        .tokens
                        .iter()
                        .chain(std::iter::once(&a.1))
                        .cmp(live[b.0].tokens.iter().chain(std::iter::once(&b.1)))
                })
        });
        candidates.truncate(room);
        let mut next_live = Vec::with_capacity(room);
        for (i, tok, score) in candidates {
            let mut tokens = live[i].tokens.clone();
            tokens.push(tok);
            if tok == EOS_ID {
                finished.push(Hypothesis::new(tokens, score, true));
            } else {
                next_live.push(Live {
                    tokens,
                    score,
                    state: expanded[i].clone(),
                });
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    for hyp in live {
        finished.push(Hypothesis::new(hyp.tokens, hyp.score, false));
    }
    finished.sort_by(|a, b| rank(a.normalized_score, &a.tokens, b.normalized_score, &b.tokens));
    BeamOutcome {
        best: finished[0].clone(),
        finished,
    }
}

/// Argmax decoding, lowest id on ties.
pub fn greedy_decode<S: StepScorer>(scorer: &S, max_len: usize) -> Hypothesis {
    let mut state = scorer.start();
    let mut prev = BOS_ID;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for _ in 0..max_len.max(1) {
        let (probs, next) = scorer.step(&state, prev);
        // ids scan upwards from `</s>`, the lowest scorable id
        let mut best = EOS_ID;
        for (tok, &p) in probs.iter().enumerate() {
            let tok = tok as u32;
            if tok != PAD_ID && tok != BOS_ID && p > probs[best as usize] {
                best = tok;
            }
        }
        tokens.push(best);
        score += probs[best as usize].ln();
        state = next;
        prev = best;
        if best == EOS_ID {
            return Hypothesis::new(tokens, score, true);
        }
    }
    Hypothesis::new(tokens, score, false)
}

pub fn decode_beam(checkpoint: &ModelCheckpoint, source: &[u32], beam: usize, max_len: usize) -> Result<Hypothesis> {
    check_ids(&checkpoint.config, &[EncodedPair::new(source.to_vec(), Vec::new())])?;
    let scorer = ModelScorer::new(&checkpoint.params, source);
    Ok(beam_search(&scorer, beam, max_len).best)
}
