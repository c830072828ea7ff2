//! Multi-model decoding: per-step target distributions of several models
//! combined by a convex weighting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::exec::Exec;
use crate::nmt::{
    beam_search, check_ids, encode_source, initial_state, step_distribution, DecoderState, EncodedPair,
    EncodedSource, Hypothesis, ModelCheckpoint, StepScorer,
};
use crate::subword::{undo_bpe_lenient, Vocabulary};

pub const DEFAULT_GRID_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    #[default]
    Balanced,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    /// `Σ w_k p_k`
    #[default]
    Probability,
    /// `softmax(Σ w_k ln p_k)`
    LogLinear,
}

/// Members plus their weights. Balanced mode always uses uniform weights.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    members: Vec<&'a ModelCheckpoint>,
    weights: Vec<f64>,
    pub combination: Combination,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<&'a ModelCheckpoint>, weights: Option<Vec<f64>>, mode: EnsembleMode) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("an ensemble needs at least one member".into()));
        }
        check_vocabularies(&members)?;
        let weights = match (mode, weights) {
            (EnsembleMode::Balanced, _) => vec![1.0 / members.len() as f64; members.len()],
            (EnsembleMode::Weighted, Some(w)) => {
                validate_weights(&w, members.len())?;
                w
            }
            (EnsembleMode::Weighted, None) => {
                return Err(Error::InvalidConfig("weighted ensemble requires weights".into()))
            }
        };
        Ok(Self {
            members,
            weights,
            combination: Combination::Probability,
        })
    }

    pub fn with_combination(mut self, combination: Combination) -> Self {
        self.combination = combination;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn members(&self) -> &[&'a ModelCheckpoint] {
        &self.members
    }

    fn reweighted(&self, weights: Vec<f64>) -> Self {
        Self {
            members: self.members.clone(),
            weights,
            combination: self.combination,
        }
    }
}

pub fn validate_weights(weights: &[f64], members: usize) -> Result<()> {
    if weights.len() != members {
        return Err(Error::InvalidConfig(format!(
            "{} weights for {members} members",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidConfig("weights must be finite and >= 0".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Members must agree on the target vocabulary; reports the first id whose
/// token differs.
pub fn check_vocabularies(members: &[&ModelCheckpoint]) -> Result<()> {
    let first = members[0];
    for m in &members[1..] {
        match (&first.tgt_vocab, &m.tgt_vocab) {
            (Some(a), Some(b)) => {
                let (ta, tb) = (a.tokens(), b.tokens());
                for id in 0..ta.len().max(tb.len()) {
                    let l = ta.get(id).map_or("<none>", String::as_str);
                    let r = tb.get(id).map_or("<none>", String::as_str);
                    if l != r {
                        return Err(Error::IncompatibleVocabulary {
                            id,
                            left: l.into(),
                            right: r.into(),
                        });
                    }
                }
            }
            _ if first.config.tgt_vocab != m.config.tgt_vocab => {
                let id = first.config.tgt_vocab.min(m.config.tgt_vocab);
                return Err(Error::IncompatibleVocabulary {
                    id,
                    left: if id < first.config.tgt_vocab { "<present>" } else { "<none>" }.into(),
                    right: if id < m.config.tgt_vocab { "<present>" } else { "<none>" }.into(),
                });
            }
            _ => {}
        }
    }
    Ok(())
}

/// Weighted combination of per-member distributions. Members with weight 0
/// may pass an empty slice.
pub fn combine(distributions: &[&[f64]], weights: &[f64], combination: Combination) -> Vec<f64> {
    let v = distributions.iter().map(|d| d.len()).max().unwrap_or(0);
    let mut out = vec![0.0; v];
    match combination {
        Combination::Probability => {
            for (d, &w) in distributions.iter().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                for (o, p) in out.iter_mut().zip(d.iter()) {
                    *o += w * p;
                }
            }
        }
        Combination::LogLinear => {
            for (d, &w) in distributions.iter().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                for (o, p) in out.iter_mut().zip(d.iter()) {
                    *o += w * p.ln();
                }
            }
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for o in &mut out {
                *o = (*o - max).exp();
                sum += *o;
            }
            for o in &mut out {
                *o /= sum;
            }
        }
    }
    out
}

/// Beam-search scorer over one source sentence; each member keeps its own
/// recurrent state per hypothesis.
pub struct EnsembleScorer<'e, 'a> {
    ensemble: &'e Ensemble<'a>,
    encoded: Vec<Option<EncodedSource>>,
}

impl<'e, 'a> EnsembleScorer<'e, 'a> {
    pub fn new(ensemble: &'e Ensemble<'a>, source: &[u32]) -> Self {
        let encoded = ensemble
            .members
            .iter()
            .zip(&ensemble.weights)
            .map(|(m, &w)| (w != 0.0).then(|| encode_source(&m.params, source)))
            .collect();
        Self { ensemble, encoded }
    }
}

impl StepScorer for EnsembleScorer<'_, '_> {
    type State = Vec<Option<DecoderState>>;

    fn start(&self) -> Self::State {
        self.ensemble
            .members
            .iter()
            .zip(&self.encoded)
            .map(|(m, e)| e.as_ref().map(|e| initial_state(&m.params, e)))
            .collect()
    }

    fn step(&self, state: &Self::State, prev: u32) -> (Vec<f64>, Self::State) {
        let (dists, next) = member_steps(self.ensemble, &self.encoded, state, prev);
        let refs: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
        (combine(&refs, &self.ensemble.weights, self.ensemble.combination), next)
    }
}

/// Per-member distributions for one step (empty for zero-weight members).
fn member_steps(
    ensemble: &Ensemble<'_>,
    encoded: &[Option<EncodedSource>],
    states: &[Option<DecoderState>],
    prev: u32,
) -> (Vec<Vec<f64>>, Vec<Option<DecoderState>>) {
    let mut dists = Vec::with_capacity(states.len());
    let mut next = Vec::with_capacity(states.len());
    for ((m, e), s) in ensemble.members.iter().zip(encoded).zip(states) {
        match (e, s) {
            (Some(e), Some(s)) => {
                let out = step_distribution(&m.params, e, s, prev);
                dists.push(out.probs);
                next.push(Some(out.state));
            }
            _ => {
                dists.push(Vec::new());
                next.push(None);
            }
        }
    }
    (dists, next)
}

/// The combined next-token distribution after feeding `prev_tokens` (after
/// `<s>`) to every member.
pub fn ensemble_step(ensemble: &Ensemble<'_>, source: &[u32], prev_tokens: &[u32]) -> Result<Vec<f64>> {
    check_source(ensemble, source)?;
    let scorer = EnsembleScorer::new(ensemble, source);
    let mut state = scorer.start();
    let mut prev = crate::subword::BOS_ID;
    let mut dist = Vec::new();
    for &tok in prev_tokens.iter().chain(std::iter::once(&u32::MAX)) {
        let (d, next) = scorer.step(&state, prev);
        dist = d;
        if tok == u32::MAX {
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(dist)
}

fn check_source(ensemble: &Ensemble<'_>, source: &[u32]) -> Result<()> {
    for m in &ensemble.members {
        check_ids(&m.config, &[EncodedPair::new(source.to_vec(), Vec::new())])?;
    }
    Ok(())
}

pub fn decode_ensemble(ensemble: &Ensemble<'_>, source: &[u32], beam: usize, max_len: usize) -> Result<Hypothesis> {
    check_source(ensemble, source)?;
    Ok(beam_search(&EnsembleScorer::new(ensemble, source), beam, max_len).best)
}

/// Source ids and detokenized references of a development set.
#[derive(Debug, Clone, Default)]
pub struct DevSet {
    pub sources: Vec<Vec<u32>>,
    pub references: Vec<Sentence>,
}

/// Hypothesis ids as a de-segmented sentence.
pub fn hypothesis_sentence(vocab: &Vocabulary, ids: &[u32]) -> Sentence {
    undo_bpe_lenient(&vocab.decode(ids))
}

/// Corpus BLEU of ensemble translations of `dev`.
pub fn ensemble_dev_bleu(
    ensemble: &Ensemble<'_>,
    dev: &DevSet,
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
    exec: Exec,
) -> Result<f64> {
    for s in &dev.sources {
        check_source(ensemble, s)?;
    }
    let hyps = exec.map(&dev.sources, |src| {
        let h = beam_search(&EnsembleScorer::new(ensemble, src), beam, max_len).best;
        hypothesis_sentence(vocab, &h.tokens)
    });
    Ok(bleu(&hyps, &dev.references, crate::eval::DEFAULT_MAX_ORDER)?.bleu)
}

/// Every weight vector on the simplex with coordinates in multiples of
/// `1 / divisions`, in lexicographic order.
pub fn simplex_lattice(members: usize, divisions: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for i in 0..=left {
            prefix.push(i);
            rec(left - i, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut points = Vec::new();
    rec(divisions, members, &mut Vec::new(), &mut points);
    points
        .into_iter()
        .map(|p| p.into_iter().map(|i| i as f64 / divisions as f64).collect())
        .collect()
}

/// Number of lattice divisions for a grid step; the step must divide 1.
pub fn grid_divisions(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} outside (0, 1]")));
    }
    let k = (1.0 / step).round();
    if (k * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("grid step {step} does not divide 1")));
    }
    Ok(k as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub weights: Vec<f64>,
    pub bleu: f64,
    /// Every evaluated lattice point with its dev BLEU, in lattice order.
    pub evaluated: Vec<(Vec<f64>, f64)>,
}

impl GridSearchResult {
    /// `w1,…,wN<TAB>devBLEU` audit lines.
    pub fn audit(&self) -> String {
        let mut out = String::new();
        for (w, b) in &self.evaluated {
            let ws: Vec<String> = w.iter().map(|x| format!("{x:.4}")).collect();
            writeln!(out, "{}\t{:.6}", ws.join(","), b).unwrap();
        }
        out
    }
}

/// Dev BLEU for every lattice point; the best wins, ties going to the
/// lexicographically smallest weight vector (the first in lattice order).
pub fn grid_search_weights(
    ensemble: &Ensemble<'_>,
    dev: &DevSet,
    vocab: &Vocabulary,
    step: f64,
    beam: usize,
    max_len: usize,
    exec: Exec,
) -> Result<GridSearchResult> {
    if dev.sources.is_empty() || dev.sources.len() != dev.references.len() {
        return Err(Error::LengthMismatch {
            hypotheses: dev.sources.len(),
            references: dev.references.len(),
        });
    }
    let divisions = grid_divisions(step)?;
    let lattice = simplex_lattice(ensemble.members.len(), divisions);
    let mut evaluated = Vec::with_capacity(lattice.len());
    for w in lattice {
        let e = ensemble.reweighted(w.clone());
        let b = ensemble_dev_bleu(&e, dev, vocab, beam, max_len, exec)?;
        evaluated.push((w, b));
    }
    let mut best = 0;
    for (i, (_, b)) in evaluated.iter().enumerate() {
        if *b > evaluated[best].1 {
            best = i;
        }
    }
    Ok(GridSearchResult {
        weights: evaluated[best].0.clone(),
        bleu: evaluated[best].1,
        evaluated,
    })
}

/// Ensemble spec file: one `PATH` or `PATH<TAB>WEIGHT` per line.
pub fn parse_ensemble_spec(text: &str) -> Result<(Vec<String>, Option<Vec<f64>>)> {
    let mut paths = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        paths.push(parts.next().unwrap().to_owned());
        if let Some(w) = parts.next() {
            weights.push(w.trim().parse::<f64>().map_err(|_| Error::Parse {
                what: "ensemble spec".into(),
                line: i + 1,
                message: format!("bad weight {w:?}"),
            })?);
        }
    }
    match weights.len() {
        0 => Ok((paths, None)),
        n if n == paths.len() => Ok((paths, Some(weights))),
        _ => Err(Error::Parse {
            what: "ensemble spec".into(),
            line: 0,
            message: "either every member has a weight or none does".into(),
        }),
    }
}
