//! Modified Moore-Lewis data selection.
//!
//! Each out-of-domain pair is scored by the cross-entropy difference
//! `H_in(src) - H_out(src)`, plus the same difference on the target side in
//! bilingual mode. Lower scores look more in-domain. Selection keeps the
//! best-ranked `ceil(fraction * n)` pairs of each out-of-domain corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ngram::{cross_entropy, train_lm, LmConfig, NgramLm};

/// In- and out-of-domain language models for both sides of the corpus.
#[derive(Debug, Clone)]
pub struct SelectionLms {
    pub in_source: NgramLm,
    pub out_source: NgramLm,
    pub in_target: NgramLm,
    pub out_target: NgramLm,
}

impl SelectionLms {
    pub fn train(in_domain: &ParallelCorpus, out_domain: &ParallelCorpus, config: &LmConfig) -> Result<Self> {
        Ok(Self {
            in_source: train_lm(in_domain.sources(), config)?,
            out_source: train_lm(out_domain.sources(), config)?,
            in_target: train_lm(in_domain.targets(), config)?,
            out_target: train_lm(out_domain.targets(), config)?,
        })
    }

    /// Same models with the in- and out-of-domain roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            in_source: self.out_source.clone(),
            out_source: self.in_source.clone(),
            in_target: self.out_target.clone(),
            out_target: self.in_target.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScore {
    pub pair_index: usize,
    /// Nats per token; lower is closer to the in-domain data.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelectionConfig {
    /// Fraction of each out-of-domain corpus to keep, in `(0, 1]`.
    pub fraction: f64,
    /// Score source and target sides (true) or the source side only.
    #[serde(default = "default_bilingual")]
    pub bilingual: bool,
}

fn default_bilingual() -> bool {
    true
}

impl SelectionConfig {
    pub fn new(fraction: f64) -> Result<Self> {
        let c = Self {
            fraction,
            bilingual: true,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection fraction {} not in (0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

pub fn score_pair(pair: &SentencePair, lms: &SelectionLms, bilingual: bool) -> f64 {
    let mut score = cross_entropy(&lms.in_source, &pair.source) - cross_entropy(&lms.out_source, &pair.source);
    if bilingual {
        score += cross_entropy(&lms.in_target, &pair.target) - cross_entropy(&lms.out_target, &pair.target);
    }
    score
}

/// Scores every pair and sorts ascending; equal scores keep corpus order.
pub fn rank_corpus(corpus: &ParallelCorpus, lms: &SelectionLms, bilingual: bool, exec: Exec) -> Vec<SelectionScore> {
    let mut scores: Vec<SelectionScore> = exec
        .map_range(corpus.len(), |i| SelectionScore {
            pair_index: i,
            score: score_pair(&corpus.pairs[i], lms, bilingual),
        });
    scores.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.pair_index.cmp(&b.pair_index)));
    scores
}

/// `ceil(fraction * n)`, ignoring floating-point dust just above an integer.
pub fn selected_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = fraction * n as f64;
    let k = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    (k as usize).clamp(1, n)
}

fn emit_in_corpus_order(corpus: &ParallelCorpus, ranked: &[SelectionScore]) -> ParallelCorpus {
    let mut keep: Vec<usize> = ranked.iter().map(|s| s.pair_index).collect();
    keep.sort_unstable();
    ParallelCorpus::new(
        corpus.domain.clone(),
        keep.into_iter().map(|i| corpus.pairs[i].clone()).collect(),
    )
}

/// Best-ranked `ceil(fraction * |corpus|)` pairs, re-emitted in corpus order.
pub fn select_fraction(corpus: &ParallelCorpus, lms: &SelectionLms, config: &SelectionConfig, exec: Exec) -> Result<ParallelCorpus> {
    config.validate()?;
    let ranked = rank_corpus(corpus, lms, config.bilingual, exec);
    let k = selected_count(config.fraction, corpus.len());
    Ok(emit_in_corpus_order(corpus, &ranked[..k]))
}

/// Pairs scoring strictly below `threshold`, in corpus order.
pub fn select_threshold(corpus: &ParallelCorpus, lms: &SelectionLms, threshold: f64, bilingual: bool, exec: Exec) -> ParallelCorpus {
    let ranked = rank_corpus(corpus, lms, bilingual, exec);
    let cut = ranked.partition_point(|s| s.score < threshold);
    emit_in_corpus_order(corpus, &ranked[..cut])
}

/// Applies selection separately to each out-of-domain corpus, training an
/// out-of-domain model per corpus against the shared in-domain data.
pub fn select_per_corpus(
    in_domain: &ParallelCorpus,
    out_domains: &[(ParallelCorpus, SelectionConfig)],
    lm_config: &LmConfig,
    exec: Exec,
) -> Result<Vec<(ParallelCorpus, Vec<SelectionScore>)>> {
    out_domains
        .iter()
        .map(|(corpus, cfg)| {
            cfg.validate()?;
            let lms = SelectionLms::train(in_domain, corpus, lm_config)?;
            let ranked = rank_corpus(corpus, &lms, cfg.bilingual, exec);
            let k = selected_count(cfg.fraction, corpus.len());
            Ok((emit_in_corpus_order(corpus, &ranked[..k]), ranked))
        })
        .collect()
}

/// `INDEX<TAB>SCORE` lines with 12 significant digits, in ranking order.
pub fn format_score_dump(scores: &[SelectionScore]) -> String {
    let mut out = String::new();
    for s in scores {
        writeln!(out, "{}\t{:.11e}", s.pair_index, s.score).unwrap();
    }
    out
}

pub fn write_score_dump(scores: &[SelectionScore], path: &Path) -> Result<()> {
    fs::write(path, format_score_dump(scores)).map_err(|e| Error::io(path, e))
}

pub fn parse_score_dump(text: &str) -> Result<Vec<SelectionScore>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let err = || Error::Parse {
                what: "score dump".into(),
                line: i + 1,
                message: "expected INDEX<TAB>SCORE".into(),
            };
            let (idx, score) = line.split_once('\t').ok_or_else(err)?;
            Ok(SelectionScore {
                pair_index: idx.parse().map_err(|_| err())?,
                score: score.parse().map_err(|_| err())?,
            })
        })
        .collect()
}
