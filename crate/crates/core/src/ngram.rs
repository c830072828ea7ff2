//! Interpolated n-gram language models for cross-entropy scoring.
//!
//! `p(w | h) = Σ_k λ_k q_k(w | h)` over orders `k = 1..=n`, where `q_1` is
//! the add-one unigram over the training vocabulary plus `</s>` and `<unk>`,
//! and `q_k` for `k > 1` is the maximum-likelihood estimate given the last
//! `k - 1` tokens of history. When a history was never observed, `q_k` falls
//! back to `q_{k-1}`, so every level is a proper distribution and so is the
//! mixture. Sentences are padded with `n - 1` copies of `<s>` and closed
//! with `</s>`. Logs are natural.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::subword::{BOS, EOS, UNK};

const LM_HEADER: &str = "#ngram-lm 1";

const BOS_SYM: u32 = 0;
const EOS_SYM: u32 = 1;
const UNK_SYM: u32 = 2;

pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub order: usize,
    /// One weight per order (unigram first). `None` means uniform.
    pub weights: Option<Vec<f64>>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            weights: None,
        }
    }
}

impl LmConfig {
    pub fn with_order(order: usize) -> Self {
        Self { order, weights: None }
    }

    fn resolved_weights(&self) -> Result<Vec<f64>> {
        if self.order < 1 {
            return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
        }
        match &self.weights {
            None => Ok(vec![1.0 / self.order as f64; self.order]),
            Some(w) => {
                let sum: f64 = w.iter().sum();
                if w.len() != self.order || w.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "interpolation weights must be {} non-negative values summing to 1",
                        self.order
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    weights: Vec<f64>,
    /// Symbol table: `<s>`, `</s>`, `<unk>`, then the sorted training vocabulary.
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
    /// `levels[k]` holds counts for histories of length `k`.
    levels: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of predictable outcomes: training types plus `</s>` and `<unk>`.
    pub fn outcome_count(&self) -> usize {
        self.symbols.len() - 1
    }

    /// Add-one mass the unigram level assigns to `<unk>`.
    pub fn unk_floor(&self) -> f64 {
        1.0 / (self.unigram_total() as f64 + self.outcome_count() as f64)
    }

    /// Training types, `</s>` and `<unk>` (the outcomes `prob` is defined over).
    pub fn outcomes(&self) -> impl Iterator<Item = &str> {
        self.symbols[1..].iter().map(String::as_str)
    }

    fn unigram_total(&self) -> u64 {
        self.levels[0].get(&Vec::new()).map_or(0, |c| c.total)
    }

    fn sym(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_SYM)
    }

    /// Conditional probability of `token` after `history` (most recent last).
    /// History tokens may include `<s>`; unknown tokens are treated as `<unk>`.
    pub fn prob(&self, history: &[&str], token: &str) -> f64 {
        let h: Vec<u32> = history.iter().map(|t| self.sym(t)).collect();
        self.prob_ids(&h, self.sym(token))
    }

    fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let unigram_den = self.unigram_total() as f64 + self.outcome_count() as f64;
        let unigram_count = self.levels[0]
            .get(&Vec::new())
            .and_then(|c| c.next.get(&w))
            .copied()
            .unwrap_or(0);
        let mut q = (unigram_count as f64 + 1.0) / unigram_den;
        let mut p = self.weights[0] * q;
        for k in 1..self.order {
            let ctx = if history.len() >= k {
                &history[history.len() - k..]
            } else {
                // shorter than k: the model never pads beyond order - 1
                history
            };
            if ctx.len() == k {
                if let Some(c) = self.levels[k].get(ctx) {
                    q = c.next.get(&w).copied().unwrap_or(0) as f64 / c.total as f64;
                }
            }
            p += self.weights[k] * q;
        }
        p
    }

    fn padded(&self, sentence: &Sentence) -> Vec<u32> {
        let mut seq = vec![BOS_SYM; self.order - 1];
        seq.extend(sentence.iter().map(|t| self.sym(t)));
        seq.push(EOS_SYM);
        seq
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        writeln!(out, "{LM_HEADER}\torder={}\tweights={}", self.order, weights.join(",")).unwrap();
        for (k, level) in self.levels.iter().enumerate() {
            let mut lines: Vec<(String, &str, u64)> = Vec::new();
            for (ctx, counts) in level {
                let ctx_text: Vec<&str> = ctx.iter().map(|&s| self.symbols[s as usize].as_str()).collect();
                let ctx_text = ctx_text.join(" ");
                for (&w, &c) in &counts.next {
                    lines.push((ctx_text.clone(), &self.symbols[w as usize], c));
                }
            }
            lines.sort();
            for (ctx, w, c) in lines {
                writeln!(out, "{}\t{ctx}\t{w}\t{c}", k + 1).unwrap();
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, what: &str) -> Result<Self> {
        let err = |line: usize, m: &str| Error::Parse {
            what: what.to_owned(),
            line,
            message: m.to_owned(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let mut fields = header.split('\t');
        if fields.next() != Some(LM_HEADER) {
            return Err(err(1, "missing or unsupported version header"));
        }
        let order: usize = fields
            .next()
            .and_then(|f| f.strip_prefix("order="))
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| err(1, "bad order"))?;
        let weights: Vec<f64> = fields
            .next()
            .and_then(|f| f.strip_prefix("weights="))
            .ok_or_else(|| err(1, "missing weights"))?
            .split(',')
            .map(|w| w.parse().map_err(|_| err(1, "bad weight")))
            .collect::<Result<_>>()?;
        let weights = LmConfig {
            order,
            weights: Some(weights),
        }
        .resolved_weights()?;

        let mut rows = Vec::new();
        let mut vocab = BTreeSet::new();
        for (i, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            let [k, ctx, w, c] = parts[..] else {
                return Err(err(i + 2, "expected ORDER<TAB>CONTEXT<TAB>TOKEN<TAB>COUNT"));
            };
            let k: usize = k.parse().map_err(|_| err(i + 2, "bad order"))?;
            let c: u64 = c.parse().map_err(|_| err(i + 2, "bad count"))?;
            let ctx: Vec<String> = ctx.split(' ').filter(|s| !s.is_empty()).map(str::to_owned).collect();
            if k < 1 || k > order || ctx.len() != k - 1 {
                return Err(err(i + 2, "context length does not match order"));
            }
            if k == 1 && w != EOS {
                vocab.insert(w.to_owned());
            }
            rows.push((k, ctx, w.to_owned(), c));
        }
        let mut lm = Self::empty(order, weights, vocab);
        for (k, ctx, w, c) in rows {
            let ctx: Vec<u32> = ctx.iter().map(|t| lm.sym(t)).collect();
            let w = lm.sym(&w);
            let entry = lm.levels[k - 1].entry(ctx).or_default();
            entry.total += c;
            *entry.next.entry(w).or_default() += c;
        }
        Ok(lm)
    }

    fn empty(order: usize, weights: Vec<f64>, vocab: BTreeSet<String>) -> Self {
        let mut symbols: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        symbols.extend(vocab.into_iter().filter(|t| t != BOS && t != EOS && t != UNK));
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self {
            order,
            weights,
            symbols,
            ids,
            levels: vec![HashMap::new(); order],
        }
    }
}

/// Trains an interpolated n-gram model.
pub fn train_lm<'a>(corpus: impl IntoIterator<Item = &'a Sentence> + Clone, config: &LmConfig) -> Result<NgramLm> {
    let weights = config.resolved_weights()?;
    let vocab: BTreeSet<String> = corpus
        .clone()
        .into_iter()
        .flat_map(|s| s.iter().map(str::to_owned))
        .collect();
    let mut lm = NgramLm::empty(config.order, weights, vocab);
    let mut sentences = 0usize;
    for sentence in corpus {
        sentences += 1;
        let seq = lm.padded(sentence);
        for pos in (config.order - 1)..seq.len() {
            let w = seq[pos];
            for k in 0..config.order {
                let ctx = seq[pos - k..pos].to_vec();
                let entry = lm.levels[k].entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(w).or_default() += 1;
            }
        }
    }
    if sentences == 0 {
        return Err(Error::InvalidConfig("cannot train a language model on an empty corpus".into()));
    }
    Ok(lm)
}

/// Natural-log probability of the sentence including `</s>`.
pub fn log_prob(lm: &NgramLm, sentence: &Sentence) -> f64 {
    let seq = lm.padded(sentence);
    ((lm.order - 1)..seq.len())
        .map(|pos| lm.prob_ids(&seq[pos + 1 - lm.order..pos], seq[pos]).ln())
        .sum()
}

/// Nats per token, counting `</s>` as a token.
pub fn cross_entropy(lm: &NgramLm, sentence: &Sentence) -> f64 {
    -log_prob(lm, sentence) / (sentence.len() + 1) as f64
}

/// Every history observed in training, as token strings (for audits).
pub fn observed_histories(lm: &NgramLm) -> Vec<Vec<String>> {
    let mut out: BTreeMap<Vec<String>, ()> = BTreeMap::new();
    for level in &lm.levels {
        for ctx in level.keys() {
            out.insert(ctx.iter().map(|&s| lm.symbols[s as usize].clone()).collect(), ());
        }
    }
    out.into_keys().collect()
}
