use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use domadapt::corpus::{
    augment_with_domain_tag, filter_by_length, generate_synthetic_domains, load_corpus, read_lines,
    read_parallel_lines, tokenize, write_sentences, DomainId, ParallelCorpus, Sentence, SentencePair,
    DOMAIN_TAG_PREFIX,
};
use domadapt::ensemble::{
    decode_ensemble, grid_search_weights, hypothesis_sentence, parse_ensemble_spec, DevSet, Ensemble, EnsembleMode,
};
use domadapt::eval::{bleu_with, format_report, BleuOptions, EvalRow};
use domadapt::experiments::{default_finding_spec, run_finding_suite};
use domadapt::ngram::LmConfig;
use domadapt::nmt::{
    decode_beam, encode_pairs, init_model, load_checkpoint, perplexity, EncodedPair, ModelCheckpoint, ModelConfig,
};
use domadapt::schedule::{run_plan_from, translate_all, DevData, RunOptions};
use domadapt::selection::{format_score_dump, rank_corpus, selected_count, SelectionConfig, SelectionLms};
use domadapt::subword::{apply_bpe, build_vocab, learn_bpe, BpeEncoder, BpeModel, Vocabulary};
use domadapt::Exec;

use crate::config::{FilePair, RunConfig};
use crate::workspace::{sha256_file, sha256_text, write_file, Manifest, ManifestEntry, Workspace};
use crate::UsageError;

const SELECTED_SUFFIX: &str = ".sel";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Rows describing everything `prepare` reads.
fn input_rows(cfg: &RunConfig) -> anyhow::Result<Vec<ManifestEntry>> {
    let mut m = Manifest::default();
    m.push("param", "preprocess", "-", sha256_text(&format!("{:?}", cfg.preprocess)));
    if let Some(spec) = &cfg.synthetic {
        m.push("param", "synthetic", "-", sha256_text(&format!("{spec:?}")));
    }
    for (kind, set) in [("domain", &cfg.domains), ("devset", &cfg.devsets), ("testset", &cfg.testsets)] {
        for f in set {
            for p in [&f.source, &f.target] {
                m.push("input", &format!("{kind}:{}", f.name), &p.display().to_string(), sha256_file(p)?);
            }
        }
    }
    Ok(m.entries)
}

fn ensure_fresh(cfg: &RunConfig, ws: &Workspace) -> anyhow::Result<Manifest> {
    let manifest = ws.read_manifest()?;
    let recorded: Vec<&ManifestEntry> = manifest.inputs().collect();
    let now = input_rows(cfg)?;
    if recorded.len() != now.len() || recorded.iter().zip(&now).any(|(a, b)| *a != b) {
        bail!(
            "workspace {} is stale: inputs or preprocessing settings changed since `prepare`",
            ws.root.display()
        );
    }
    Ok(manifest)
}

fn tokenized_corpus(f: &FilePair) -> anyhow::Result<ParallelCorpus> {
    let lines = read_parallel_lines(&f.source, &f.target)?;
    let pairs = lines
        .iter()
        .filter_map(|(s, t)| SentencePair::new(tokenize(s), tokenize(t)).ok())
        .collect();
    Ok(ParallelCorpus::new(DomainId::new(f.name.clone())?, pairs))
}

/// An evaluation set before segmentation, with the domain whose tag its
/// sources receive.
struct RawEvalSet {
    name: String,
    kind: &'static str,
    domain: Option<String>,
    corpus: ParallelCorpus,
}

fn segment(corpus: &ParallelCorpus, bpe: &BpeModel) -> ParallelCorpus {
    let mut enc = BpeEncoder::new(bpe);
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| SentencePair {
            source: enc.apply(&p.source),
            target: enc.apply(&p.target),
        })
        .collect();
    ParallelCorpus::new(corpus.domain.clone(), pairs)
}

fn tag_sentence(s: &Sentence, domain: &str) -> anyhow::Result<Sentence> {
    let mut tokens = vec![DomainId::new(domain)?.tag()];
    tokens.extend(s.tokens().iter().cloned());
    Ok(Sentence::new(tokens)?)
}

pub fn prepare(cfg: &RunConfig) -> anyhow::Result<String> {
    let ws = Workspace::new(cfg.workspace.clone());
    let _lock = ws.lock()?;
    let pre = &cfg.preprocess;

    let mut train: Vec<ParallelCorpus> = Vec::new();
    let mut eval: Vec<RawEvalSet> = Vec::new();
    if let Some(spec) = &cfg.synthetic {
        let task = generate_synthetic_domains(spec)?;
        for d in &task.domains {
            let name = d.train.domain.to_string();
            train.push(d.train.clone());
            for (kind, set) in [("dev", &d.dev), ("test", &d.test)] {
                if !set.is_empty() {
                    eval.push(RawEvalSet {
                        name: format!("{name}.{kind}"),
                        kind,
                        domain: Some(name.clone()),
                        corpus: set.clone(),
                    });
                }
            }
        }
        if let Some(u) = task.unseen_test {
            eval.push(RawEvalSet {
                name: "unseen.test".into(),
                kind: "test",
                domain: None,
                corpus: u,
            });
        }
    }
    for f in &cfg.domains {
        train.push(tokenized_corpus(f)?);
    }
    for (kind, set) in [("dev", &cfg.devsets), ("test", &cfg.testsets)] {
        for f in set {
            eval.push(RawEvalSet {
                name: f.name.clone(),
                kind,
                domain: f.domain.clone(),
                corpus: tokenized_corpus(f)?,
            });
        }
    }
    let train: Vec<ParallelCorpus> = train.iter().map(|c| filter_by_length(c, pre.max_len)).collect();
    if let Some(empty) = train.iter().find(|c| c.is_empty()) {
        bail!("domain {} has no usable sentence pairs", empty.domain);
    }

    // one merge table for both sides
    let bpe = learn_bpe(train.iter().flat_map(|c| c.sources().chain(c.targets())), pre.bpe_merges);
    let mut segmented: Vec<ParallelCorpus> = train.iter().map(|c| segment(c, &bpe)).collect();
    if pre.domain_tags {
        segmented = segmented.iter().map(augment_with_domain_tag).collect::<domadapt::Result<_>>()?;
    }
    let src_vocab = build_vocab(segmented.iter().flat_map(|c| c.sources()), pre.vocab_limit)?;
    let tgt_vocab = build_vocab(segmented.iter().flat_map(|c| c.targets()), pre.vocab_limit)?;

    let mut manifest = Manifest {
        entries: input_rows(cfg)?,
    };
    let mut outputs: Vec<(String, PathBuf)> = Vec::new();
    for file in ["bpe.model", "vocab.src", "vocab.tgt"] {
        outputs.push((file.into(), ws.path(file)));
    }
    std::fs::create_dir_all(&ws.root)?;
    bpe.save(&ws.path("bpe.model"))?;
    src_vocab.save(&ws.path("vocab.src"))?;
    tgt_vocab.save(&ws.path("vocab.tgt"))?;
    std::fs::create_dir_all(ws.path("corpus"))?;
    std::fs::create_dir_all(ws.path("eval"))?;
    for c in &segmented {
        let (s, t) = ws.corpus(c.domain.as_str());
        domadapt::corpus::write_corpus(c, &s, &t)?;
        outputs.push((format!("corpus:{}", c.domain), s));
        outputs.push((format!("corpus:{}", c.domain), t));
    }
    for set in &eval {
        let seg = segment(&set.corpus, &bpe);
        let sources: Vec<Sentence> = match (&set.domain, pre.domain_tags) {
            (Some(d), true) => seg.sources().map(|s| tag_sentence(s, d)).collect::<anyhow::Result<_>>()?,
            _ => seg.sources().cloned().collect(),
        };
        let (s, t, r) = ws.eval_set(&set.name);
        write_sentences(sources.iter(), &s)?;
        write_sentences(seg.targets(), &t)?;
        write_sentences(set.corpus.targets(), &r)?;
        for p in [s, t, r] {
            outputs.push((format!("{}:{}", set.kind, set.name), p));
        }
    }
    for (name, p) in &outputs {
        manifest.push("output", name, &ws.relative(p), sha256_file(p)?);
    }
    ws.write_manifest(&manifest)?;
    Ok(format!(
        "prepared {} domains, {} eval sets; vocab {} / {}\n",
        segmented.len(),
        eval.len(),
        src_vocab.len(),
        tgt_vocab.len()
    ))
}

/// Domains with corpus files, in manifest order without repeats.
fn workspace_domains(manifest: &Manifest) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in &manifest.entries {
        if let Some(name) = e.name.strip_prefix("corpus:") {
            if !out.iter().any(|o| o == name) {
                out.push(name.to_owned());
            }
        }
    }
    out
}

fn eval_sets(manifest: &Manifest, kind: &str) -> Vec<String> {
    let prefix = format!("{kind}:");
    let mut out: Vec<String> = Vec::new();
    for e in &manifest.entries {
        if let Some(name) = e.name.strip_prefix(&prefix) {
            if !out.iter().any(|o| o == name) {
                out.push(name.to_owned());
            }
        }
    }
    out
}

fn strip_tags(corpus: &ParallelCorpus) -> ParallelCorpus {
    let strip = |s: &Sentence| {
        Sentence::new(s.iter().filter(|t| !t.starts_with(DOMAIN_TAG_PREFIX)).map(str::to_owned).collect()).unwrap()
    };
    ParallelCorpus::new(
        corpus.domain.clone(),
        corpus
            .pairs
            .iter()
            .map(|p| SentencePair {
                source: strip(&p.source),
                target: p.target.clone(),
            })
            .collect(),
    )
}

pub fn select(cfg: &RunConfig, exec: Exec) -> anyhow::Result<String> {
    let sel = cfg.selection.as_ref().ok_or_else(|| usage("config has no [selection] section"))?;
    let ws = Workspace::new(cfg.workspace.clone());
    let _lock = ws.lock()?;
    let mut manifest = ensure_fresh(cfg, &ws)?;
    let known = workspace_domains(&manifest);
    let check = |d: &str| {
        if known.iter().any(|k| k == d) {
            Ok(())
        } else {
            Err(domadapt::Error::UnknownDomain(d.to_owned()))
        }
    };
    check(&sel.in_domain)?;
    let outs: Vec<String> = if sel.out_domains.is_empty() {
        known
            .iter()
            .filter(|d| **d != sel.in_domain && !d.ends_with(SELECTED_SUFFIX))
            .cloned()
            .collect()
    } else {
        sel.out_domains.clone()
    };
    let load = |name: &str| -> anyhow::Result<ParallelCorpus> {
        check(name)?;
        let (s, t) = ws.corpus(name);
        Ok(load_corpus(&s, &t, DomainId::new(name)?)?)
    };
    let in_corpus = strip_tags(&load(&sel.in_domain)?);
    let lm = LmConfig::with_order(sel.lm_order);
    let mut summary = String::new();
    for name in &outs {
        let fraction = sel.fractions.get(name).copied().unwrap_or(sel.fraction);
        let scfg = SelectionConfig {
            fraction,
            bilingual: sel.bilingual,
        };
        scfg.validate()?;
        let corpus = load(name)?;
        let lms = SelectionLms::train(&in_corpus, &strip_tags(&corpus), &lm)?;
        let ranked = rank_corpus(&strip_tags(&corpus), &lms, sel.bilingual, exec);
        let k = selected_count(fraction, corpus.len());
        let mut keep: Vec<usize> = ranked[..k].iter().map(|r| r.pair_index).collect();
        keep.sort_unstable();
        let picked = ParallelCorpus::new(
            DomainId::new(format!("{name}{SELECTED_SUFFIX}"))?,
            keep.iter().map(|&i| corpus.pairs[i].clone()).collect(),
        );
        let (s, t) = ws.corpus(picked.domain.as_str());
        domadapt::corpus::write_corpus(&picked, &s, &t)?;
        let scores = ws.path(&format!("selected/{name}.scores.tsv"));
        write_file(&scores, format_score_dump(&ranked).as_bytes())?;
        let key = format!("corpus:{}", picked.domain);
        let score_key = format!("scores:{name}");
        manifest.entries.retain(|e| e.name != key && e.name != score_key);
        for p in [&s, &t] {
            manifest.push("output", &key, &ws.relative(p), sha256_file(p)?);
        }
        manifest.push("output", &score_key, &ws.relative(&scores), sha256_file(&scores)?);
        writeln!(summary, "{name}: kept {k} of {} pairs as {}", corpus.len(), picked.domain)?;
    }
    ws.write_manifest(&manifest)?;
    Ok(summary)
}

fn load_eval(ws: &Workspace, name: &str, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> anyhow::Result<DevData> {
    let (s, t, r) = ws.eval_set(name);
    let read = |p: &Path| -> anyhow::Result<Vec<Sentence>> {
        Ok(read_lines(p)?.iter().map(|l| Sentence::from_whitespace(l)).collect())
    };
    let (src, tgt, refs) = (read(&s)?, read(&t)?, read(&r)?);
    if src.len() != tgt.len() || src.len() != refs.len() {
        bail!("eval set {name}: files differ in length");
    }
    let pairs = src
        .iter()
        .zip(&tgt)
        .map(|(a, b)| EncodedPair::new(src_vocab.encode(a), tgt_vocab.encode(b)))
        .collect();
    Ok(DevData {
        name: name.to_owned(),
        pairs,
        references: refs,
    })
}

fn workspace_vocabs(ws: &Workspace) -> anyhow::Result<(Vocabulary, Vocabulary)> {
    Ok((Vocabulary::load(&ws.path("vocab.src"))?, Vocabulary::load(&ws.path("vocab.tgt"))?))
}

pub fn train(cfg: &RunConfig, from: Option<&Path>, name: Option<&str>, exec: Exec) -> anyhow::Result<String> {
    let plan = cfg.plan.as_ref().ok_or_else(|| usage("config has no [plan] section"))?;
    let ws = Workspace::new(cfg.workspace.clone());
    let _lock = ws.lock()?;
    let manifest = ensure_fresh(cfg, &ws)?;
    let (sv, tv) = workspace_vocabs(&ws)?;
    let known = workspace_domains(&manifest);
    let mut data: BTreeMap<String, Vec<EncodedPair>> = BTreeMap::new();
    for d in plan.domains() {
        if !known.contains(&d) {
            return Err(domadapt::Error::UnknownDomain(d).into());
        }
        let (s, t) = ws.corpus(&d);
        let corpus = load_corpus(&s, &t, DomainId::new(d.clone())?)?;
        data.insert(d, encode_pairs(&corpus, &sv, &tv));
    }
    let dev_names = if cfg.train.dev.is_empty() {
        eval_sets(&manifest, "dev")
    } else {
        cfg.train.dev.clone()
    };
    if dev_names.is_empty() {
        return Err(usage("training needs a dev set: add [[devset]] entries or dev_count to [synthetic]"));
    }
    let dev = dev_names
        .iter()
        .map(|n| load_eval(&ws, n, &sv, &tv))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let start = match from {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config.src_vocab != sv.len() || ck.config.tgt_vocab != tv.len() {
                bail!("checkpoint {} was built for a different workspace vocabulary", p.display());
            }
            ck
        }
        None => {
            let m = &cfg.model;
            let config = ModelConfig {
                src_vocab: sv.len(),
                tgt_vocab: tv.len(),
                embedding_dim: m.embedding_dim,
                hidden_dim: m.hidden_dim,
                encoder_layers: m.encoder_layers,
                decoder_layers: m.decoder_layers,
                cell: m.cell,
                seed: cfg.seed,
            };
            init_model(&config)?.with_vocabularies(sv.clone(), tv.clone())?
        }
    };
    let t = &cfg.train;
    let run_name = name.unwrap_or(&t.name);
    let out_dir = ws.run_dir(run_name);
    let options = RunOptions {
        hyper: t.hyper.clone(),
        eval_every: t.eval_every,
        beam: t.beam,
        max_len: t.max_len,
        metric: t.metric,
        skip_bleu: t.skip_bleu,
        audit: false,
        out_dir: Some(out_dir.clone()),
        exec,
    };
    let report = run_plan_from(plan, start, &data, &dev, &tv, &options)?;
    write_file(&out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    let best = &report.records[report.best_record];
    Ok(format!(
        "run {run_name}: {} epochs; best stage {} epoch {} dev ppl {:.4} dev BLEU {:.2}; wrote {}\n",
        report.records.len(),
        best.stage,
        best.epoch,
        best.dev_ppl,
        best.dev_bleu * 100.0,
        out_dir.display()
    ))
}

/// Where the sentences to translate come from.
pub enum Input<'a> {
    /// Raw text: tokenized, segmented and optionally tagged here.
    Raw { path: &'a Path, tag: Option<&'a str> },
    /// A prepared workspace evaluation set.
    Set(&'a str),
}

fn source_ids(cfg: &RunConfig, input: &Input<'_>, sv: &Vocabulary) -> anyhow::Result<Vec<Vec<u32>>> {
    let ws = Workspace::new(cfg.workspace.clone());
    match input {
        Input::Set(name) => {
            let (s, _, _) = ws.eval_set(name);
            Ok(read_lines(&s)?.iter().map(|l| sv.encode(&Sentence::from_whitespace(l))).collect())
        }
        Input::Raw { path, tag } => {
            let bpe = BpeModel::load(&ws.path("bpe.model"))?;
            read_lines(path)?
                .iter()
                .map(|l| {
                    let mut s = apply_bpe(&bpe, &tokenize(l));
                    if let Some(d) = tag {
                        s = tag_sentence(&s, d)?;
                    }
                    Ok(sv.encode(&s))
                })
                .collect()
        }
    }
}

fn checkpoint_vocabs(ck: &ModelCheckpoint, ws: &Workspace) -> anyhow::Result<(Vocabulary, Vocabulary)> {
    match (&ck.src_vocab, &ck.tgt_vocab) {
        (Some(s), Some(t)) => Ok((s.clone(), t.clone())),
        _ => workspace_vocabs(ws),
    }
}

fn lines_text(sentences: &[Sentence]) -> String {
    sentences.iter().map(|s| format!("{s}\n")).collect()
}

pub fn translate(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Input<'_>,
    beam: usize,
    max_len: usize,
    exec: Exec,
) -> anyhow::Result<String> {
    let ws = Workspace::new(cfg.workspace.clone());
    let ck = load_checkpoint(checkpoint)?;
    let (sv, tv) = checkpoint_vocabs(&ck, &ws)?;
    let sources = source_ids(cfg, input, &sv)?;
    for s in &sources {
        // surfaces out-of-range ids as a data error before decoding
        decode_beam(&ck, s, 1, 1)?;
    }
    Ok(lines_text(&translate_all(&ck, &sources, &tv, beam, max_len, exec)))
}

pub struct EnsembleArgs<'a> {
    pub spec: Option<&'a Path>,
    pub input: Input<'a>,
    pub tune_dev: Option<&'a str>,
    pub weights_out: Option<&'a Path>,
    pub audit_out: Option<&'a Path>,
}

pub fn ensemble(cfg: &RunConfig, args: &EnsembleArgs<'_>, exec: Exec) -> anyhow::Result<String> {
    let section = cfg.ensemble.clone().unwrap_or_default();
    let (paths, weights): (Vec<PathBuf>, Option<Vec<f64>>) = match args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let (paths, w) = parse_ensemble_spec(&text)?;
            let base = p.parent().unwrap_or(Path::new("."));
            (paths.iter().map(|x| base.join(x)).collect(), w)
        }
        None => (section.members.clone(), section.weights.clone()),
    };
    if paths.is_empty() {
        return Err(usage("no ensemble members: pass --spec or set [ensemble] members"));
    }
    let members = paths.iter().map(|p| load_checkpoint(p)).collect::<domadapt::Result<Vec<_>>>()?;
    let refs: Vec<&ModelCheckpoint> = members.iter().collect();
    let mode = if weights.is_some() {
        EnsembleMode::Weighted
    } else {
        EnsembleMode::Balanced
    };
    let mut ens = Ensemble::new(refs.clone(), weights, mode)?.with_combination(section.combination);
    let ws = Workspace::new(cfg.workspace.clone());
    let (sv, tv) = checkpoint_vocabs(&members[0], &ws)?;

    if let Some(dev_name) = args.tune_dev {
        let dev = load_eval(&ws, dev_name, &sv, &tv)?;
        let set = DevSet {
            sources: dev.pairs.iter().map(|p| p.src.clone()).collect(),
            references: dev.references,
        };
        let grid = grid_search_weights(&ens, &set, &tv, section.grid_step, section.beam, section.max_len, exec)?;
        if let Some(p) = args.audit_out {
            write_file(p, grid.audit().as_bytes())?;
        }
        if let Some(p) = args.weights_out {
            let mut spec = String::new();
            for (path, w) in paths.iter().zip(&grid.weights) {
                writeln!(spec, "{}\t{w}", path.display())?;
            }
            write_file(p, spec.as_bytes())?;
        }
        ens = Ensemble::new(refs, Some(grid.weights), EnsembleMode::Weighted)?.with_combination(section.combination);
    }
    let sources = source_ids(cfg, &args.input, &sv)?;
    let hyps = sources
        .iter()
        .map(|s| Ok(hypothesis_sentence(&tv, &decode_ensemble(&ens, s, section.beam, section.max_len)?.tokens)))
        .collect::<domadapt::Result<Vec<_>>>()?;
    Ok(lines_text(&hyps))
}

pub struct EvalRequest {
    pub system: String,
    pub testset: String,
    pub hyp: PathBuf,
    pub reference: PathBuf,
}

/// Batch file lines: `SYSTEM<TAB>TESTSET<TAB>HYP<TAB>REF`, paths relative
/// to the batch file.
pub fn parse_batch(path: &Path) -> anyhow::Result<Vec<EvalRequest>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(usage(format!("{}:{}: expected SYSTEM<TAB>TESTSET<TAB>HYP<TAB>REF", path.display(), i + 1)));
            }
            Ok(EvalRequest {
                system: f[0].into(),
                testset: f[1].into(),
                hyp: base.join(f[2]),
                reference: base.join(f[3]),
            })
        })
        .collect()
}

fn read_sentences(p: &Path) -> anyhow::Result<Vec<Sentence>> {
    Ok(read_lines(p)?.iter().map(|l| Sentence::from_whitespace(l)).collect())
}

pub fn evaluate_files(requests: &[EvalRequest], lowercase: bool) -> anyhow::Result<String> {
    let opts = BleuOptions {
        lowercase,
        ..BleuOptions::default()
    };
    let rows = requests
        .iter()
        .map(|r| {
            let b = bleu_with(&read_sentences(&r.hyp)?, &read_sentences(&r.reference)?, opts)?;
            Ok(EvalRow {
                system: r.system.clone(),
                testset: r.testset.clone(),
                bleu: b.bleu,
                perplexity: None,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(format_report(&rows))
}

/// Translates workspace sets with each checkpoint; reports BLEU and perplexity.
pub fn evaluate_checkpoints(
    cfg: &RunConfig,
    checkpoints: &[(String, PathBuf)],
    sets: &[String],
    beam: usize,
    max_len: usize,
    lowercase: bool,
    exec: Exec,
) -> anyhow::Result<String> {
    let ws = Workspace::new(cfg.workspace.clone());
    let opts = BleuOptions {
        lowercase,
        ..BleuOptions::default()
    };
    let mut rows = Vec::new();
    for (system, path) in checkpoints {
        let ck = load_checkpoint(path)?;
        let (sv, tv) = checkpoint_vocabs(&ck, &ws)?;
        for set in sets {
            let data = load_eval(&ws, set, &sv, &tv)?;
            let sources: Vec<Vec<u32>> = data.pairs.iter().map(|p| p.src.clone()).collect();
            let hyps = translate_all(&ck, &sources, &tv, beam, max_len, exec);
            rows.push(EvalRow {
                system: system.clone(),
                testset: set.clone(),
                bleu: bleu_with(&hyps, &data.references, opts)?.bleu,
                perplexity: Some(perplexity(&ck, &data.pairs, exec)?),
            });
        }
    }
    Ok(format_report(&rows))
}

pub fn findings(cfg: Option<&RunConfig>, seeds: Option<Vec<u64>>, out: &Path, exec: Exec) -> anyhow::Result<String> {
    let spec = cfg.and_then(|c| c.synthetic.clone()).unwrap_or_else(default_finding_spec);
    let section = cfg.and_then(|c| c.findings.clone());
    let mut options = section.as_ref().map(|s| s.options.clone()).unwrap_or_default();
    options.exec = exec;
    let seeds = seeds
        .or_else(|| section.map(|s| s.seeds))
        .unwrap_or_else(|| vec![1, 2, 3, 4, 5]);
    let report = run_finding_suite(&spec, &seeds, &options)?;
    write_file(&out.join("findings.tsv"), report.to_tsv().as_bytes())?;
    let summary = report.summary();
    write_file(&out.join("summary.txt"), summary.as_bytes())?;
    Ok(summary)
}
