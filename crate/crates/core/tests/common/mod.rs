//! Independent oracles shared by the integration tests. Nothing here calls
//! the library code it is checking.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use domadapt::corpus::{generate_synthetic_domains, DomainId, ParallelCorpus, Sentence, SentencePair, SyntheticTaskSpec};
use domadapt::ensemble::{ensemble_step, Combination, Ensemble, EnsembleMode};
use domadapt::eval::bleu;
use domadapt::ngram::{cross_entropy, train_lm, LmConfig};
use domadapt::nmt::{
    encode_pairs, forward_loss, init_model, loss_and_gradient, train_epoch, CellKind, EncodedPair, ModelCheckpoint,
    ModelConfig, ModelScorer, OptimizerKind, StepScorer, TrainHyper,
};
use domadapt::rng::SeededRng;
use domadapt::schedule::DevData;
use domadapt::selection::{rank_corpus, SelectionLms};
use domadapt::subword::{build_vocab, Vocabulary, BOS_ID, EOS_ID};
use domadapt::Exec;

/// Result of one finite-difference comparison.
pub struct GradCheck {
    pub config: ModelConfig,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Relative error with an absolute floor so that gradients that are zero
/// up to roundoff compare on absolute terms.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tiny_config(rng: &mut SeededRng, seed: u64) -> ModelConfig {
    ModelConfig {
        src_vocab: 5 + rng.below(16),
        tgt_vocab: 5 + rng.below(16),
        embedding_dim: 1 + rng.below(8),
        hidden_dim: 1 + rng.below(8),
        encoder_layers: 1 + rng.below(2),
        decoder_layers: 1 + rng.below(2),
        cell: if rng.chance(0.5) { CellKind::Gru } else { CellKind::Lstm },
        seed,
    }
}

pub fn random_batch(rng: &mut SeededRng, cfg: &ModelConfig, n: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let sl = 1 + rng.below(4);
            let tl = rng.below(4);
            EncodedPair::new(
                (0..sl).map(|_| rng.below(cfg.src_vocab) as u32).collect(),
                (0..tl).map(|_| 3 + rng.below(cfg.tgt_vocab - 3) as u32).collect(),
            )
        })
        .collect()
}

/// Central differences on every parameter of a randomly initialized tiny
/// model (weights widened to ±0.5 so curvature is non-trivial).
pub fn finite_difference_check(cfg: &ModelConfig, rng: &mut SeededRng) -> GradCheck {
    let mut params = init_model(cfg).unwrap().params;
    for x in &mut params.data {
        *x = rng.uniform(-0.5, 0.5);
    }
    let batch = random_batch(rng, cfg, 3);
    let (_, grads, _) = loss_and_gradient(&params, &batch, Exec::Sequential).unwrap();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for spec in params.layout.specs().to_vec() {
        for k in spec.offset..spec.offset + spec.len() {
            let orig = params.data[k];
            params.data[k] = orig + h;
            let (lp, _) = forward_loss(&params, &batch).unwrap();
            params.data[k] = orig - h;
            let (lm, _) = forward_loss(&params, &batch).unwrap();
            params.data[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let err = rel_error(grads.data[k], numeric);
            if err > worst.0 {
                worst = (err, spec.name.clone());
            }
        }
    }
    GradCheck {
        config: cfg.clone(),
        max_rel_error: worst.0,
        worst_tensor: worst.1,
        checked: params.data.len(),
    }
}

/// Corpus BLEU by explicit n-gram enumeration into string-keyed maps.
pub struct BleuOracle {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub bp: f64,
}

pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> BleuOracle {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            let grams = |s: &Vec<String>| {
                let mut m: HashMap<String, usize> = HashMap::new();
                if s.len() >= n {
                    for i in 0..=s.len() - n {
                        *m.entry(s[i..i + n].join("\u{1}")).or_default() += 1;
                    }
                }
                m
            };
            let hg = grams(h);
            let rg = grams(r);
            for (g, c) in &hg {
                total[n - 1] += c;
                matched[n - 1] += (*c).min(*rg.get(g).unwrap_or(&0));
            }
        }
    }
    let mut precisions = [0.0; 4];
    for i in 0..4 {
        precisions[i] = if total[i] == 0 { 0.0 } else { matched[i] as f64 / total[i] as f64 };
    }
    let bp = if hl == 0 {
        0.0
    } else if hl < rl {
        (1.0 - rl as f64 / hl as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.iter().all(|&p| p > 0.0) {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    } else {
        0.0
    };
    BleuOracle { bleu, precisions, bp }
}

/// Interpolated n-gram conditional computed straight from raw counts.
pub struct NgramOracle {
    order: usize,
    weights: Vec<f64>,
    /// counts[k][(context, token)] for order k+1
    counts: Vec<HashMap<(Vec<String>, String), usize>>,
    vocab: Vec<String>,
    unigram_total: usize,
}

impl NgramOracle {
    pub fn new(corpus: &[Vec<String>], order: usize, weights: Vec<f64>) -> Self {
        let mut counts = vec![HashMap::new(); order];
        let mut vocab: Vec<String> = Vec::new();
        let mut unigram_total = 0;
        for s in corpus {
            let mut seq: Vec<String> = vec!["<s>".to_string(); order - 1];
            seq.extend(s.iter().cloned());
            seq.push("</s>".into());
            for tok in s {
                if !vocab.contains(tok) {
                    vocab.push(tok.clone());
                }
            }
            for pos in order - 1..seq.len() {
                unigram_total += 1;
                for k in 0..order {
                    let ctx = seq[pos - k..pos].to_vec();
                    *counts[k].entry((ctx, seq[pos].clone())).or_insert(0) += 1;
                }
            }
        }
        Self {
            order,
            weights,
            counts,
            vocab,
            unigram_total,
        }
    }

    /// Outcomes: training vocabulary plus `</s>` and `<unk>`.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() + 2
    }

    fn q(&self, k: usize, history: &[String], token: &str) -> f64 {
        let token = if token == "</s>" || self.vocab.iter().any(|v| v == token) {
            token.to_string()
        } else {
            "<unk>".to_string()
        };
        if k == 0 {
            let c = self.counts[0].get(&(vec![], token)).copied().unwrap_or(0);
            return (c as f64 + 1.0) / (self.unigram_total as f64 + self.outcome_count() as f64);
        }
        let ctx = history[history.len() - k..].to_vec();
        let ctx_total: usize = self.counts[k]
            .iter()
            .filter(|((c, _), _)| *c == ctx)
            .map(|(_, n)| n)
            .sum();
        if ctx_total == 0 {
            return self.q(k - 1, history, &token);
        }
        let c = self.counts[k].get(&(ctx, token)).copied().unwrap_or(0);
        c as f64 / ctx_total as f64
    }

    /// `history` holds the previous `order - 1` tokens, oldest first.
    pub fn prob(&self, history: &[String], token: &str) -> f64 {
        (0..self.order).map(|k| self.weights[k] * self.q(k, history, token)).sum()
    }

    pub fn cross_entropy(&self, sentence: &[String]) -> f64 {
        let mut seq: Vec<String> = vec!["<s>".to_string(); self.order - 1];
        seq.extend(sentence.iter().cloned());
        seq.push("</s>".into());
        let lp: f64 = (self.order - 1..seq.len())
            .map(|pos| self.prob(&seq[pos + 1 - self.order..pos], &seq[pos]).ln())
            .sum();
        -lp / (sentence.len() + 1) as f64
    }
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

pub fn random_sentence(rng: &mut SeededRng, alphabet: &[&str], min_len: usize, max_len: usize) -> Vec<String> {
    let len = min_len + rng.below(max_len - min_len + 1);
    (0..len).map(|_| alphabet[rng.below(alphabet.len())].to_string()).collect()
}

pub fn random_corpus(rng: &mut SeededRng, alphabet: &[&str], sentences: usize, max_len: usize) -> Vec<Vec<String>> {
    (0..sentences).map(|_| random_sentence(rng, alphabet, 1, max_len)).collect()
}

fn sentence(tokens: &[String]) -> Sentence {
    Sentence::new(tokens.to_vec()).unwrap()
}

/// Largest |library − oracle| over `cases` random models, each probed on
/// every training-history × outcome combination plus an unseen history.
pub fn ngram_max_error(rng: &mut SeededRng, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let order = 1 + rng.below(3);
        let raw: Vec<f64> = (0..order).map(|_| rng.uniform(0.05, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let n = 1 + rng.below(6);
        let corpus = random_corpus(rng, &["a", "b", "c", "d", "e"], n, 6);
        let sentences: Vec<Sentence> = corpus.iter().map(|s| sentence(s)).collect();
        let lm = train_lm(
            &sentences,
            &LmConfig {
                order,
                weights: Some(weights.clone()),
            },
        )
        .unwrap();
        let oracle = NgramOracle::new(&corpus, order, weights);
        let pool = ["<s>", "a", "b", "c", "d", "e", "zz"];
        for _ in 0..10 {
            let history: Vec<String> = (0..order - 1).map(|_| pool[rng.below(pool.len())].to_string()).collect();
            let h: Vec<&str> = history.iter().map(String::as_str).collect();
            for tok in ["a", "b", "c", "d", "e", "</s>", "zz"] {
                worst = worst.max((lm.prob(&h, tok) - oracle.prob(&history, tok)).abs());
            }
        }
        let probe = random_sentence(rng, &["a", "b", "c", "x"], 0, 5);
        worst = worst.max((cross_entropy(&lm, &sentence(&probe)) - oracle.cross_entropy(&probe)).abs());
    }
    worst
}

/// Moore-Lewis scores and ranking checked against cross-entropy
/// differences computed by [`NgramOracle`]. Returns the largest score error
/// and whether every ranking was consistent with the oracle order.
pub fn moore_lewis_max_error(rng: &mut SeededRng, cases: usize) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut consistent = true;
    for _ in 0..cases {
        let order = 1 + rng.below(3);
        let bilingual = rng.chance(0.5);
        let mk = |rng: &mut SeededRng, name: &str, src: &[&str], tgt: &[&str], n: usize| {
            let pairs: Vec<(Vec<String>, Vec<String>)> = (0..n)
                .map(|_| (random_sentence(rng, src, 1, 6), random_sentence(rng, tgt, 1, 6)))
                .collect();
            let corpus = ParallelCorpus::new(
                DomainId::new(name).unwrap(),
                pairs
                    .iter()
                    .map(|(s, t)| SentencePair::new(sentence(s), sentence(t)).unwrap())
                    .collect(),
            );
            (pairs, corpus)
        };
        let (n_in, n_out) = (2 + rng.below(5), 3 + rng.below(10));
        let (in_pairs, in_corpus) = mk(rng, "in", &["a", "b", "c"], &["x", "y"], n_in);
        let (out_pairs, out_corpus) = mk(rng, "out", &["b", "c", "d", "e"], &["y", "z", "w"], n_out);
        let lms = SelectionLms::train(&in_corpus, &out_corpus, &LmConfig::with_order(order)).unwrap();
        let uniform = vec![1.0 / order as f64; order];
        let side = |pairs: &[(Vec<String>, Vec<String>)], target: bool| {
            let c: Vec<Vec<String>> = pairs.iter().map(|p| if target { p.1.clone() } else { p.0.clone() }).collect();
            NgramOracle::new(&c, order, uniform.clone())
        };
        let (in_s, out_s, in_t, out_t) =
            (side(&in_pairs, false), side(&out_pairs, false), side(&in_pairs, true), side(&out_pairs, true));
        let expected: Vec<f64> = out_pairs
            .iter()
            .map(|(s, t)| {
                let mut v = in_s.cross_entropy(s) - out_s.cross_entropy(s);
                if bilingual {
                    v += in_t.cross_entropy(t) - out_t.cross_entropy(t);
                }
                v
            })
            .collect();
        let ranked = rank_corpus(&out_corpus, &lms, bilingual, Exec::Sequential);
        let mut seen: Vec<usize> = ranked.iter().map(|r| r.pair_index).collect();
        seen.sort_unstable();
        consistent &= seen == (0..out_pairs.len()).collect::<Vec<_>>();
        for r in &ranked {
            worst = worst.max((r.score - expected[r.pair_index]).abs());
        }
        for w in ranked.windows(2) {
            let (a, b) = (expected[w[0].pair_index], expected[w[1].pair_index]);
            // oracle scores separated by more than roundoff keep oracle order
            consistent &= a <= b + 1e-9;
        }
    }
    (worst, consistent)
}

/// Library corpus BLEU against [`bleu_oracle`] on random corpora over a
/// small alphabet (so higher-order matches occur). Returns the largest
/// difference over BLEU, precisions and brevity penalty.
pub fn bleu_max_error(rng: &mut SeededRng, cases: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = 1 + rng.below(6);
        let alphabet = ["a", "b", "c", "d"];
        let refs: Vec<Vec<String>> = (0..n).map(|_| random_sentence(rng, &alphabet, 1, 12)).collect();
        let hyps: Vec<Vec<String>> = refs
            .iter()
            .map(|r| {
                if rng.chance(0.1) {
                    Vec::new()
                } else if rng.chance(0.5) {
                    // perturbed copy: keeps long matches
                    let mut out = Vec::new();
                    for t in r {
                        if rng.chance(0.15) {
                            continue;
                        }
                        out.push(if rng.chance(0.15) { alphabet[rng.below(4)].to_string() } else { t.clone() });
                    }
                    out
                } else {
                    random_sentence(rng, &alphabet, 1, 12)
                }
            })
            .collect();
        let oracle = bleu_oracle(&hyps, &refs);
        let h: Vec<Sentence> = hyps.iter().map(|s| Sentence::new(s.clone()).unwrap()).collect();
        let r: Vec<Sentence> = refs.iter().map(|s| sentence(s)).collect();
        let got = bleu(&h, &r, 4).unwrap();
        worst = worst.max((got.bleu - oracle.bleu).abs());
        worst = worst.max((got.brevity_penalty - oracle.bp).abs());
        for k in 0..4 {
            worst = worst.max((got.precisions[k] - oracle.precisions[k]).abs());
        }
    }
    worst
}

/// Small synthetic task encoded at word level, for tests that need trained
/// models.
pub struct TinyTask {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub train: BTreeMap<String, Vec<EncodedPair>>,
    pub dev: DevData,
}

pub fn tiny_task(seed: u64) -> TinyTask {
    let spec = SyntheticTaskSpec {
        shared_vocab_size: 30,
        per_domain_lexicon_size: 6,
        domain_count: 3,
        sentence_length_range: (2, 5),
        pair_counts: vec![120, 120, 40],
        seed,
        polysemous_count: 2,
        lexicon_rate: 0.4,
        polysemous_rate: 0.2,
        proximity: vec![0.0, 0.5, 0.0],
        dev_count: 12,
        test_count: 0,
        unseen_test_count: 0,
    };
    let task = generate_synthetic_domains(&spec).unwrap();
    let sv = build_vocab(task.domains.iter().flat_map(|d| d.train.sources()), 1000).unwrap();
    let tv = build_vocab(task.domains.iter().flat_map(|d| d.train.targets()), 1000).unwrap();
    let train = task
        .domains
        .iter()
        .map(|d| (d.train.domain.to_string(), encode_pairs(&d.train, &sv, &tv)))
        .collect();
    let dev_corpus = &task.in_domain().dev;
    let dev = DevData {
        name: "in.dev".into(),
        pairs: encode_pairs(dev_corpus, &sv, &tv),
        references: dev_corpus.targets().cloned().collect(),
    };
    TinyTask {
        src_vocab: sv,
        tgt_vocab: tv,
        train,
        dev,
    }
}

pub fn tiny_config(task: &TinyTask, seed: u64) -> ModelConfig {
    ModelConfig {
        src_vocab: task.src_vocab.len(),
        tgt_vocab: task.tgt_vocab.len(),
        embedding_dim: 8,
        hidden_dim: 12,
        encoder_layers: 1,
        decoder_layers: 1,
        cell: CellKind::Gru,
        seed,
    }
}

pub fn tiny_hyper() -> TrainHyper {
    TrainHyper {
        learning_rate: 0.1,
        batch_size: 8,
        optimizer: OptimizerKind::Adagrad,
        clip_norm: Some(5.0),
    }
}

/// Distinct models trained for `epochs` epochs on different domains, each
/// carrying the task vocabularies.
pub fn trained_members(task: &TinyTask, count: usize, epochs: usize) -> Vec<ModelCheckpoint> {
    let names: Vec<&String> = task.train.keys().collect();
    (0..count)
        .map(|i| {
            let mut ck = init_model(&tiny_config(task, 100 + i as u64)).unwrap();
            let name = names[i % names.len()];
            for _ in 0..epochs {
                train_epoch(&mut ck, name, &task.train[name], &tiny_hyper(), Exec::Parallel).unwrap();
            }
            ck.with_vocabularies(task.src_vocab.clone(), task.tgt_vocab.clone()).unwrap()
        })
        .collect()
}

/// Largest per-step probability difference between (1) a single-member
/// ensemble and the bare model, (2) an ensemble of identical copies under
/// random weights, in both combination modes, and the bare model. Steps
/// follow teacher-forced dev targets.
pub fn ensemble_identity_max_error(member: &ModelCheckpoint, sources: &[EncodedPair], rng: &mut SeededRng) -> f64 {
    let mut worst: f64 = 0.0;
    for pair in sources {
        let scorer = ModelScorer::new(&member.params, &pair.src);
        let copies = 2 + rng.below(3);
        let raw: Vec<f64> = (0..copies).map(|_| rng.uniform(0.1, 1.0)).collect();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / raw.iter().sum::<f64>()).collect();
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        let single = Ensemble::new(vec![member], None, EnsembleMode::Balanced).unwrap();
        let same = Ensemble::new(vec![member; copies], Some(weights), EnsembleMode::Weighted).unwrap();
        let same_log = Ensemble::new(vec![member; copies], None, EnsembleMode::Balanced)
            .unwrap()
            .with_combination(Combination::LogLinear);
        let mut state = scorer.start();
        let mut prev = BOS_ID;
        let mut prefix: Vec<u32> = Vec::new();
        for &tok in pair.tgt.iter().chain(std::iter::once(&EOS_ID)) {
            let (want, next) = scorer.step(&state, prev);
            for e in [&single, &same, &same_log] {
                let got = ensemble_step(e, &pair.src, &prefix).unwrap();
                for (a, b) in got.iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
            }
            state = next;
            prev = tok;
            prefix.push(tok);
        }
    }
    worst
}
