//! Corpus BLEU and evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub use crate::nmt::perplexity;

pub const DEFAULT_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    /// In `[0, 1]`.
    pub bleu: f64,
    /// Modified precisions for orders `1..=max_order`.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BleuOptions {
    pub max_order: usize,
    pub lowercase: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_ORDER,
            lowercase: false,
        }
    }
}

/// Clipped n-gram matches and totals per order for one sentence pair.
fn ngram_stats(hyp: &[String], reference: &[String], max_order: usize, matched: &mut [usize], total: &mut [usize]) {
    for n in 1..=max_order {
        if hyp.len() < n {
            continue;
        }
        let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
        if reference.len() >= n {
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
        }
        let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
        for g in hyp.windows(n) {
            *hyp_counts.entry(g).or_default() += 1;
        }
        for (g, c) in hyp_counts {
            total[n - 1] += c;
            matched[n - 1] += c.min(ref_counts.get(g).copied().unwrap_or(0));
        }
    }
}

fn prepare(s: &Sentence, lowercase: bool) -> Vec<String> {
    if lowercase {
        s.iter().map(str::to_lowercase).collect()
    } else {
        s.tokens().to_vec()
    }
}

/// Single-reference corpus BLEU: clipped counts summed over the corpus,
/// geometric mean of the precisions, brevity penalty
/// `exp(1 - ref_len / hyp_len)` when the hypotheses are shorter. No
/// smoothing: any zero precision gives 0.
pub fn bleu_with(hypotheses: &[Sentence], references: &[Sentence], options: BleuOptions) -> Result<BleuScore> {
    if hypotheses.len() != references.len() || hypotheses.is_empty() {
        return Err(Error::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if options.max_order == 0 {
        return Err(Error::InvalidConfig("max_order must be >= 1".into()));
    }
    let mut matched = vec![0usize; options.max_order];
    let mut total = vec![0usize; options.max_order];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (prepare(h, options.lowercase), prepare(r, options.lowercase));
        hyp_len += h.len();
        ref_len += r.len();
        ngram_stats(&h, &r, options.max_order, &mut matched, &mut total);
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.iter().all(|&p| p > 0.0) {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / options.max_order as f64;
        (brevity_penalty * mean_log.exp()).min(1.0)
    } else {
        0.0
    };
    Ok(BleuScore {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

pub fn bleu(hypotheses: &[Sentence], references: &[Sentence], max_order: usize) -> Result<BleuScore> {
    bleu_with(
        hypotheses,
        references,
        BleuOptions {
            max_order,
            lowercase: false,
        },
    )
}

/// SMOOTHED sentence-level BLEU (add-one on orders ≥ 2). Only for ranking
/// on very small dev sets; never reported as corpus BLEU.
pub fn smoothed_sentence_bleu(hypothesis: &Sentence, reference: &Sentence) -> f64 {
    let n_max = DEFAULT_MAX_ORDER;
    let (h, r) = (hypothesis.tokens(), reference.tokens());
    if h.is_empty() {
        return 0.0;
    }
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    ngram_stats(h, r, n_max, &mut matched, &mut total);
    let mut log_sum = 0.0;
    for n in 0..n_max {
        let (m, t) = if n == 0 {
            (matched[0] as f64, total[0] as f64)
        } else {
            (matched[n] as f64 + 1.0, total[n] as f64 + 1.0)
        };
        if m == 0.0 {
            return 0.0;
        }
        log_sum += (m / t).ln();
    }
    let bp = if h.len() < r.len() {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / n_max as f64).exp()
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub testset: String,
    /// In `[0, 1]`; printed ×100.
    pub bleu: f64,
    pub perplexity: Option<f64>,
}

/// `SYSTEM<TAB>TESTSET<TAB>BLEU×100<TAB>PPL` lines (PPL `-` when absent).
pub fn format_report(rows: &[EvalRow]) -> String {
    let mut out = String::from("SYSTEM\tTESTSET\tBLEU\tPPL\n");
    for r in rows {
        let ppl = r.perplexity.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        writeln!(out, "{}\t{}\t{:.2}\t{}", r.system, r.testset, r.bleu * 100.0, ppl).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        Sentence::from_whitespace(text)
    }

    #[test]
    fn identical_corpus_scores_one() {
        let h = vec![s("a b c d e"), s("x y z w")];
        let b = bleu(&h, &h, 4).unwrap();
        assert_eq!(b.bleu, 1.0);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn clipping_hand_count() {
        let b = bleu(&[s("the the the the the the the")], &[s("the cat is on the mat")], 4).unwrap();
        assert_eq!(b.precisions[0], 2.0 / 7.0);
        assert_eq!(b.bleu, 0.0);
    }

    #[test]
    fn brevity_penalty_hand_value() {
        let b = bleu(&[s("a b c d")], &[s("a b c d e f g h")], 4).unwrap();
        assert!((b.brevity_penalty - (-1f64).exp()).abs() < 1e-15);
        assert!((b.bleu - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn lowercase_flag() {
        let opts = BleuOptions {
            lowercase: true,
            ..Default::default()
        };
        let h = [s("The Cat sat down")];
        let r = [s("the cat sat down")];
        assert_eq!(bleu_with(&h, &r, opts).unwrap().bleu, 1.0);
        assert!(bleu(&h, &r, 4).unwrap().bleu < 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            bleu(&[s("a")], &[], 4),
            Err(Error::LengthMismatch {
                hypotheses: 1,
                references: 0
            })
        ));
    }

    #[test]
    fn smoothed_sentence_bleu_is_positive_without_four_gram_match() {
        let v = smoothed_sentence_bleu(&s("a b x d"), &s("a b c d"));
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(smoothed_sentence_bleu(&s("a b c d"), &s("a b c d")), 1.0);
    }

    #[test]
    fn report_layout() {
        let rows = [EvalRow {
            system: "ALL".into(),
            testset: "in.test".into(),
            bleu: 0.3315,
            perplexity: Some(4.5),
        }];
        assert_eq!(format_report(&rows), "SYSTEM\tTESTSET\tBLEU\tPPL\nALL\tin.test\t33.15\t4.5000\n");
    }
}
