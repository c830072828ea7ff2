//! Byte-pair-encoding subword segmentation and size-limited vocabularies.
//!
//! Merges are learned greedily over word-internal symbol sequences: each
//! round merges the most frequent adjacent pair (ties go to the
//! lexicographically smallest `(left, right)`), stopping early once no pair
//! occurs at least twice. Segmented words mark every non-final unit with
//! [`MARKER`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Sentence, DOMAIN_TAG_PREFIX};
use crate::error::{Error, Result};

pub const MARKER: &str = "@@";

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

const BPE_HEADER: &str = "#bpe-version 1";

/// Production-scale merge count; desk-scale configs default to [`DESK_MERGES`].
pub const PRODUCTION_MERGES: usize = 50_000;
pub const DESK_MERGES: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

fn is_reserved(token: &str) -> bool {
    token.starts_with(DOMAIN_TAG_PREFIX) || matches!(token, PAD | BOS | EOS | UNK)
}

fn chars_of(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

fn merge_in_place(symbols: &mut Vec<String>, left: &str, right: &str) -> bool {
    let mut changed = false;
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
            changed = true;
        }
        i += 1;
    }
    changed
}

/// Learns up to `num_merges` merge operations from the words of `corpus`.
pub fn learn_bpe<'a>(corpus: impl IntoIterator<Item = &'a Sentence>, num_merges: usize) -> BpeModel {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for sentence in corpus {
        for w in sentence.iter().filter(|w| !is_reserved(w)) {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| (chars_of(w), c))
        .collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (left, right) = (left.to_owned(), right.to_owned());
        for (symbols, _) in &mut words {
            merge_in_place(symbols, &left, &right);
        }
        merges.push((left, right));
    }
    BpeModel { merges }
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for m in &merges {
            if !seen.insert(m) {
                return Err(Error::InvalidConfig(format!("duplicate merge {} {}", m.0, m.1)));
            }
        }
        Ok(Self { merges })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Subword units of one word, without markers.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = chars_of(word);
        for (left, right) in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            merge_in_place(&mut symbols, left, right);
        }
        symbols
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from(BPE_HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line, message: &str| Error::Parse {
            what: path.display().to_string(),
            line,
            message: message.into(),
        };
        let mut lines = text.lines();
        if lines.next() != Some(BPE_HEADER) {
            return Err(parse_err(1, "missing or unsupported version header"));
        }
        let merges = lines
            .enumerate()
            .map(|(i, l)| {
                let mut parts = l.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => Ok((a.to_owned(), b.to_owned())),
                    _ => Err(parse_err(i + 2, "expected `LEFT RIGHT`")),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_merges(merges)
    }
}

/// Applies a [`BpeModel`] with a per-word cache; use one encoder per corpus.
#[derive(Debug)]
pub struct BpeEncoder<'m> {
    model: &'m BpeModel,
    cache: HashMap<String, Vec<String>>,
}

impl<'m> BpeEncoder<'m> {
    pub fn new(model: &'m BpeModel) -> Self {
        Self {
            model,
            cache: HashMap::new(),
        }
    }

    pub fn apply(&mut self, sentence: &Sentence) -> Sentence {
        let mut out = Vec::with_capacity(sentence.len() * 2);
        for word in sentence.iter() {
            if is_reserved(word) {
                out.push(word.to_owned());
                continue;
            }
            let units = self
                .cache
                .entry(word.to_owned())
                .or_insert_with(|| self.model.segment_word(word));
            let last = units.len() - 1;
            out.extend(units.iter().enumerate().map(|(i, u)| {
                if i < last {
                    format!("{u}{MARKER}")
                } else {
                    u.clone()
                }
            }));
        }
        Sentence::from_tokens_unchecked(out)
    }
}

/// Segments every word into learned subword units.
pub fn apply_bpe(model: &BpeModel, sentence: &Sentence) -> Sentence {
    BpeEncoder::new(model).apply(sentence)
}

/// Re-joins marker-suffixed units with their successors.
pub fn undo_bpe(sentence: &Sentence) -> Result<Sentence> {
    let mut out = Vec::with_capacity(sentence.len());
    let mut pending = String::new();
    for token in sentence.iter() {
        match token.strip_suffix(MARKER) {
            Some(stem) if !stem.is_empty() => pending.push_str(stem),
            _ => {
                pending.push_str(token);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        return Err(Error::MalformedSegmentation(sentence.to_string()));
    }
    Ok(Sentence::from_tokens_unchecked(out))
}

/// Like [`undo_bpe`], but a dangling final unit (as a truncated model
/// output may produce) keeps its text without the marker.
pub fn undo_bpe_lenient(sentence: &Sentence) -> Sentence {
    undo_bpe(sentence).unwrap_or_else(|_| {
        let mut tokens = sentence.tokens().to_vec();
        if let Some(last) = tokens.last_mut() {
            if let Some(stem) = last.strip_suffix(MARKER) {
                *last = stem.to_owned();
            }
        }
        tokens.retain(|t| !t.is_empty());
        undo_bpe(&Sentence::from_tokens_unchecked(tokens)).unwrap_or_default()
    })
}

/// Token ↔ id map. Reserved tokens (`<pad> <s> </s> <unk>` then any domain
/// tags) occupy the lowest ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    reserved: usize,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, reserved: usize) -> Self {
        let id_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            id_of,
            reserved,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    pub fn id(&self, token: &str) -> u32 {
        self.id_of.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of a sentence (unknown tokens map to `<unk>`), without `</s>`.
    pub fn encode(&self, sentence: &Sentence) -> Vec<u32> {
        sentence.iter().map(|t| self.id(t)).collect()
    }

    /// Tokens of `ids`, stopping at the first `</s>` and skipping `<pad>`/`<s>`.
    pub fn decode(&self, ids: &[u32]) -> Sentence {
        let tokens = ids
            .iter()
            .take_while(|&&id| id != EOS_ID)
            .filter(|&&id| id != PAD_ID && id != BOS_ID)
            .map(|&id| self.token(id).to_owned())
            .collect();
        Sentence::from_tokens_unchecked(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{t}\t{i}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |m: &str| Error::Parse {
                what: path.display().to_string(),
                line: i + 1,
                message: m.into(),
            };
            let (tok, id) = line.split_once('\t').ok_or_else(|| err("expected TOKEN<TAB>ID"))?;
            let id: usize = id.parse().map_err(|_| err("bad id"))?;
            if id != i {
                return Err(err("ids must be dense and ascending"));
            }
            tokens.push(tok.to_owned());
        }
        Self::from_tokens(tokens).map_err(|m| Error::Parse {
            what: path.display().to_string(),
            line: 1,
            message: m.to_string(),
        })
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> std::result::Result<Self, &'static str> {
        let base = [PAD, BOS, EOS, UNK];
        if tokens.len() < base.len() || tokens[..4] != base {
            return Err("reserved tokens missing");
        }
        let reserved = 4 + tokens[4..].iter().take_while(|t| t.starts_with(DOMAIN_TAG_PREFIX)).count();
        let vocab = Self::from_parts(tokens, reserved);
        if vocab.id_of.len() != vocab.tokens.len() {
            return Err("duplicate token");
        }
        Ok(vocab)
    }
}

/// Keeps the most frequent tokens (ties: lexicographic) up to `limit`
/// entries including the reserved ones.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a Sentence>, limit: usize) -> Result<Vocabulary> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tags: Vec<String> = Vec::new();
    for s in corpus {
        for t in s.iter() {
            if t.starts_with(DOMAIN_TAG_PREFIX) {
                if !tags.iter().any(|x| x == t) {
                    tags.push(t.to_owned());
                }
            } else if !is_reserved(t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    tags.sort();
    let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].map(String::from).to_vec();
    tokens.extend(tags);
    let reserved = tokens.len();
    if limit <= reserved {
        return Err(Error::InvalidConfig(format!(
            "vocabulary limit {limit} must exceed the {reserved} reserved tokens"
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic and the sort is stable
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    tokens.extend(ranked.into_iter().take(limit - reserved).map(|(t, _)| t.to_owned()));
    Ok(Vocabulary::from_parts(tokens, reserved))
}
