//! Parallel corpora: loading, tokenization, domain tags, shuffling,
//! length filtering and synthetic multi-domain task generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Prefix of reserved source-side domain tag tokens, e.g. `<dom:ted>`.
pub const DOMAIN_TAG_PREFIX: &str = "<dom:";

/// Default maximum sentence length used by [`filter_by_length`] callers.
pub const DEFAULT_MAX_LEN: usize = 80;

/// A tokenized sentence. No token is empty or contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidSentence(format!("bad token {bad:?}")));
        }
        Ok(Self(tokens))
    }

    /// Splits on whitespace runs; the result always satisfies the invariants.
    pub fn from_whitespace(line: &str) -> Self {
        Self(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        Self(tokens)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
}

impl SentencePair {
    pub fn new(source: Sentence, target: Sentence) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::InvalidSentence("empty side in sentence pair".into()));
        }
        Ok(Self { source, target })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == '>') {
            return Err(Error::InvalidConfig(format!("bad domain name {name:?}")));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn tag(&self) -> String {
        format!("{DOMAIN_TAG_PREFIX}{}>", self.0)
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Aligned sentence pairs from one domain. Order is significant: indices are
/// used for stable tie-breaking downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub domain: DomainId,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(domain: DomainId, pairs: Vec<SentencePair>) -> Self {
        Self { domain, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> + Clone {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> + Clone {
        self.pairs.iter().map(|p| &p.target)
    }
}

/// Set of domain names in use by one run; names must be distinct.
#[derive(Debug, Clone, Default)]
pub struct DomainRegistry {
    names: BTreeSet<DomainId>,
}

impl DomainRegistry {
    pub fn register(&mut self, id: DomainId) -> Result<()> {
        if !self.names.insert(id.clone()) {
            return Err(Error::DuplicateDomain(id.0));
        }
        Ok(())
    }

    pub fn contains(&self, id: &DomainId) -> bool {
        self.names.contains(id)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.names.iter().any(|d| d.as_str() == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DomainId> {
        self.names.iter()
    }
}

impl FromIterator<DomainId> for DomainRegistry {
    fn from_iter<I: IntoIterator<Item = DomainId>>(iter: I) -> Self {
        Self {
            names: iter.into_iter().collect(),
        }
    }
}

/// Reads two line-aligned UTF-8 files. Returns raw line pairs.
pub fn read_parallel_lines(source_path: &Path, target_path: &Path) -> Result<Vec<(String, String)>> {
    let src = read_lines(source_path)?;
    let tgt = read_lines(target_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Alignment {
            source_path: source_path.to_path_buf(),
            target_path: target_path.to_path_buf(),
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    Ok(src.into_iter().zip(tgt).collect())
}

/// Reads a UTF-8 file into lines, reporting the 1-based line of any decode error.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    if bytes.is_empty() {
        return Ok(lines);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Decode {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        lines.push(line.to_owned());
    }
    Ok(lines)
}

/// Loads a parallel corpus from two line-aligned files, splitting each line
/// on whitespace. Line pairs where either side is blank are dropped.
pub fn load_corpus(source_path: &Path, target_path: &Path, domain: DomainId) -> Result<ParallelCorpus> {
    let pairs = read_parallel_lines(source_path, target_path)?
        .into_iter()
        .filter_map(|(s, t)| {
            SentencePair::new(Sentence::from_whitespace(&s), Sentence::from_whitespace(&t)).ok()
        })
        .collect();
    Ok(ParallelCorpus::new(domain, pairs))
}

pub fn write_corpus(corpus: &ParallelCorpus, source_path: &Path, target_path: &Path) -> Result<()> {
    write_sentences(corpus.sources(), source_path)?;
    write_sentences(corpus.targets(), target_path)
}

pub fn write_sentences<'a>(sentences: impl Iterator<Item = &'a Sentence>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for s in sentences {
        writeln!(out, "{s}").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '«' | '»' | '“' | '”' | '‘' | '’' | '„' | '¿' | '¡' | '…' | '—' | '–' | '،' | '؛' | '؟'
        )
}

/// Minimal Moses-style tokenizer: whitespace split, then every leading and
/// trailing punctuation character of a chunk becomes its own token.
/// Punctuation inside a word (`don't`, `3.14`) stays attached.
pub fn tokenize(raw_line: &str) -> Sentence {
    let mut tokens = Vec::new();
    for chunk in raw_line.split_whitespace() {
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let first_word = chars.iter().position(|&(_, c)| !is_punct(c));
        let Some(first_word) = first_word else {
            tokens.extend(chars.iter().map(|&(_, c)| c.to_string()));
            continue;
        };
        let last_word = chars.iter().rposition(|&(_, c)| !is_punct(c)).unwrap();
        tokens.extend(chars[..first_word].iter().map(|&(_, c)| c.to_string()));
        let start = chars[first_word].0;
        let end = chars
            .get(last_word + 1)
            .map_or(chunk.len(), |&(offset, _)| offset);
        tokens.push(chunk[start..end].to_owned());
        tokens.extend(chars[last_word + 1..].iter().map(|&(_, c)| c.to_string()));
    }
    Sentence::from_tokens_unchecked(tokens)
}

/// Prefixes every source sentence with the reserved `<dom:NAME>` token.
/// Tagging an already tagged corpus is an error.
pub fn augment_with_domain_tag(corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
    let tag = corpus.domain.tag();
    for pair in &corpus.pairs {
        if pair
            .source
            .tokens()
            .first()
            .is_some_and(|t| t.starts_with(DOMAIN_TAG_PREFIX))
        {
            return Err(Error::AlreadyTagged {
                domain: corpus.domain.to_string(),
                tag,
            });
        }
        if pair.source.iter().chain(pair.target.iter()).any(|t| t == tag) {
            return Err(Error::TagCollision {
                domain: corpus.domain.to_string(),
                tag,
            });
        }
    }
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| {
            let mut src = Vec::with_capacity(p.source.len() + 1);
            src.push(tag.clone());
            src.extend(p.source.tokens().iter().cloned());
            SentencePair {
                source: Sentence::from_tokens_unchecked(src),
                target: p.target.clone(),
            }
        })
        .collect();
    Ok(ParallelCorpus::new(corpus.domain.clone(), pairs))
}

/// Seeded Fisher-Yates permutation of the pairs (ChaCha8 stream, see [`SeededRng`]).
pub fn shuffle(corpus: &ParallelCorpus, seed: u64) -> ParallelCorpus {
    let mut pairs = corpus.pairs.clone();
    SeededRng::new(seed).shuffle(&mut pairs);
    ParallelCorpus::new(corpus.domain.clone(), pairs)
}

/// Drops pairs where either side is longer than `max_len`, keeping order.
pub fn filter_by_length(corpus: &ParallelCorpus, max_len: usize) -> ParallelCorpus {
    let pairs = corpus
        .pairs
        .iter()
        .filter(|p| p.source.len() <= max_len && p.target.len() <= max_len)
        .cloned()
        .collect();
    ParallelCorpus::new(corpus.domain.clone(), pairs)
}

/// Parameters of a synthetic multi-domain translation task.
///
/// The source inventory has `shared_vocab_size` types. Each domain owns a
/// disjoint slice of `per_domain_lexicon_size` of them; `polysemous_count`
/// further types are used by every domain but translate differently per
/// domain; the remaining types are grammar words with one shared translation.
/// The last domain is the in-domain corpus and must be the smallest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub shared_vocab_size: usize,
    pub per_domain_lexicon_size: usize,
    pub domain_count: usize,
    pub sentence_length_range: (usize, usize),
    pub pair_counts: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub polysemous_count: usize,
    /// Probability that a position holds a lexicon word rather than a grammar word.
    #[serde(default = "default_lexicon_rate")]
    pub lexicon_rate: f64,
    /// Probability that a position holds a polysemous word.
    #[serde(default)]
    pub polysemous_rate: f64,
    /// Per domain: probability that a lexicon draw borrows from the
    /// in-domain lexicon, and that a polysemous word takes its in-domain
    /// sense. Larger means closer to the in-domain data.
    #[serde(default)]
    pub proximity: Vec<f64>,
    #[serde(default)]
    pub dev_count: usize,
    #[serde(default)]
    pub test_count: usize,
    /// Size of a test set for a held-out domain mixing all out-of-domain lexicons.
    #[serde(default)]
    pub unseen_test_count: usize,
}

fn default_lexicon_rate() -> f64 {
    0.4
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sentence_length_range;
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic spec: {m}")));
        if lo < 1 || hi < lo {
            return bad("sentence_length_range must satisfy 1 <= min <= max");
        }
        if self.domain_count < 1 || self.per_domain_lexicon_size < 1 {
            return bad("domain_count and per_domain_lexicon_size must be >= 1");
        }
        if self.pair_counts.len() != self.domain_count || self.pair_counts.iter().any(|&c| c < 1) {
            return bad("pair_counts needs one count >= 1 per domain");
        }
        let in_count = *self.pair_counts.last().unwrap();
        if self.pair_counts.iter().any(|&c| c < in_count) {
            return bad("the in-domain corpus (last) must be the smallest");
        }
        if !self.proximity.is_empty() && self.proximity.len() != self.domain_count {
            return bad("proximity needs one entry per domain");
        }
        let probs = [self.lexicon_rate, self.polysemous_rate]
            .into_iter()
            .chain(self.proximity.iter().copied());
        if probs.clone().any(|p| !(0.0..=1.0).contains(&p)) || self.lexicon_rate + self.polysemous_rate > 1.0 {
            return bad("rates must be probabilities with lexicon_rate + polysemous_rate <= 1");
        }
        if self.polysemous_rate > 0.0 && self.polysemous_count == 0 {
            return bad("polysemous_rate > 0 requires polysemous_count >= 1");
        }
        let needed = self.domain_count * self.per_domain_lexicon_size + self.polysemous_count + 1;
        if needed > self.shared_vocab_size {
            return Err(Error::Capacity {
                needed,
                available: self.shared_vocab_size,
            });
        }
        Ok(())
    }

    pub fn domain_name(&self, index: usize) -> String {
        if index + 1 == self.domain_count {
            "in".to_owned()
        } else {
            format!("od{}", index + 1)
        }
    }
}

/// Source word → target word substitution table.
pub type SubstitutionTable = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
    /// This domain's own entries: its lexicon slice and its senses of the
    /// polysemous words.
    pub table: SubstitutionTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    /// Out-of-domain corpora first, in-domain last.
    pub domains: Vec<SyntheticDomain>,
    /// Translations of grammar words, common to every domain.
    pub shared_table: SubstitutionTable,
    /// Held-out domain whose sentences mix every out-of-domain lexicon.
    pub unseen_test: Option<ParallelCorpus>,
}

impl SyntheticTask {
    pub fn in_domain(&self) -> &SyntheticDomain {
        self.domains.last().expect("validated: at least one domain")
    }

    pub fn train_corpora(&self) -> Vec<ParallelCorpus> {
        self.domains.iter().map(|d| d.train.clone()).collect()
    }
}

struct Lexicons {
    grammar: Vec<String>,
    own: Vec<Vec<String>>,
    polysemous: Vec<String>,
    // (domain, source word) → target word, covering lexicon and polysemous senses
    translation: Vec<BTreeMap<String, String>>,
    shared: BTreeMap<String, String>,
}

/// Builds a reproducible synthetic multi-domain task from `spec`.
pub fn generate_synthetic_domains(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = SeededRng::derived(spec.seed, 0x5EED);
    let lex = build_lexicons(spec, &mut rng);
    let n = spec.domain_count;
    let in_idx = n - 1;

    let mut domains = Vec::with_capacity(n);
    for d in 0..n {
        let id = DomainId::new(spec.domain_name(d))?;
        let draw = |count: usize, rng: &mut SeededRng| -> ParallelCorpus {
            let pairs = (0..count)
                .map(|_| synth_pair(spec, &lex, d, in_idx, rng))
                .collect();
            ParallelCorpus::new(id.clone(), pairs)
        };
        let train = draw(spec.pair_counts[d], &mut rng);
        let dev = draw(spec.dev_count, &mut rng);
        let test = draw(spec.test_count, &mut rng);
        domains.push(SyntheticDomain {
            train,
            dev,
            test,
            table: lex.translation[d].clone(),
        });
    }

    let unseen_test = (spec.unseen_test_count > 0 && n > 1).then(|| {
        let pairs = (0..spec.unseen_test_count)
            .map(|_| synth_unseen_pair(spec, &lex, &mut rng))
            .collect();
        ParallelCorpus::new(DomainId("unseen".into()), pairs)
    });

    Ok(SyntheticTask {
        domains,
        shared_table: lex.shared,
        unseen_test,
    })
}

fn build_lexicons(spec: &SyntheticTaskSpec, rng: &mut SeededRng) -> Lexicons {
    let mut source: Vec<String> = (0..spec.shared_vocab_size).map(|i| format!("s{i}")).collect();
    rng.shuffle(&mut source);
    let mut cursor = 0;
    let mut take = |k: usize| {
        let slice = source[cursor..cursor + k].to_vec();
        cursor += k;
        slice
    };
    let own: Vec<Vec<String>> = (0..spec.domain_count)
        .map(|_| take(spec.per_domain_lexicon_size))
        .collect();
    let polysemous = take(spec.polysemous_count);
    let grammar = take(spec.shared_vocab_size - spec.domain_count * spec.per_domain_lexicon_size - spec.polysemous_count);

    // Target ids are handed out from a shuffled pool so that ids carry no
    // information about which table they belong to.
    let target_total = grammar.len() + spec.domain_count * (spec.per_domain_lexicon_size + spec.polysemous_count);
    let mut pool: Vec<usize> = (0..target_total).collect();
    rng.shuffle(&mut pool);
    let mut pool = pool.into_iter().map(|i| format!("t{i}"));

    let shared = grammar
        .iter()
        .map(|s| (s.clone(), pool.next().unwrap()))
        .collect();
    let translation = own
        .iter()
        .map(|slice| {
            slice
                .iter()
                .chain(polysemous.iter())
                .map(|s| (s.clone(), pool.next().unwrap()))
                .collect()
        })
        .collect();
    Lexicons {
        grammar,
        own,
        polysemous,
        translation,
        shared,
    }
}

fn sentence_length(spec: &SyntheticTaskSpec, rng: &mut SeededRng) -> usize {
    let (lo, hi) = spec.sentence_length_range;
    lo + rng.below(hi - lo + 1)
}

fn realize(source: Vec<(String, String)>) -> SentencePair {
    let (src, tgt): (Vec<String>, Vec<String>) = source.into_iter().unzip();
    SentencePair {
        source: Sentence::from_tokens_unchecked(src),
        target: Sentence::from_tokens_unchecked(tgt),
    }
}

fn synth_pair(spec: &SyntheticTaskSpec, lex: &Lexicons, d: usize, in_idx: usize, rng: &mut SeededRng) -> SentencePair {
    let len = sentence_length(spec, rng);
    let proximity = spec.proximity.get(d).copied().unwrap_or(0.0);
    let words = (0..len)
        .map(|_| {
            let u = rng.uniform(0.0, 1.0);
            if u < spec.lexicon_rate {
                let owner = if d != in_idx && rng.chance(proximity) { in_idx } else { d };
                let w = &lex.own[owner][rng.below(lex.own[owner].len())];
                (w.clone(), lex.translation[owner][w].clone())
            } else if u < spec.lexicon_rate + spec.polysemous_rate {
                let w = &lex.polysemous[rng.below(lex.polysemous.len())];
                let sense = if d != in_idx && rng.chance(proximity) { in_idx } else { d };
                (w.clone(), lex.translation[sense][w].clone())
            } else {
                let w = &lex.grammar[rng.below(lex.grammar.len())];
                (w.clone(), lex.shared[w].clone())
            }
        })
        .collect();
    realize(words)
}

fn synth_unseen_pair(spec: &SyntheticTaskSpec, lex: &Lexicons, rng: &mut SeededRng) -> SentencePair {
    let len = sentence_length(spec, rng);
    let out_domains = spec.domain_count - 1;
    let words = (0..len)
        .map(|_| {
            if rng.chance(spec.lexicon_rate + spec.polysemous_rate) {
                let owner = rng.below(out_domains);
                let w = &lex.own[owner][rng.below(lex.own[owner].len())];
                (w.clone(), lex.translation[owner][w].clone())
            } else {
                let w = &lex.grammar[rng.below(lex.grammar.len())];
                (w.clone(), lex.shared[w].clone())
            }
        })
        .collect();
    realize(words)
}
