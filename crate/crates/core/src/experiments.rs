//! Desk-scale finding suite on synthetic domains.
//!
//! Per seed, a fresh task is generated and every strategy is trained:
//! individual systems, ALL, OD→IN, ALL→IN, both stacking orders,
//! selection + in-domain against an equal-size random sample + in-domain,
//! and balanced / grid-weighted ensembles. Findings are orderings checked
//! per seed and aggregated by a seed count threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{generate_synthetic_domains, DomainId, DomainRegistry, ParallelCorpus, Sentence, SyntheticTaskSpec};
use crate::ensemble::{ensemble_dev_bleu, grid_search_weights, DevSet, Ensemble, EnsembleMode};
use crate::error::{Error, Result};
use crate::eval::{bleu, DEFAULT_MAX_ORDER};
use crate::exec::Exec;
use crate::ngram::LmConfig;
use crate::nmt::{encode_pairs, init_model, perplexity, CellKind, EncodedPair, ModelCheckpoint, ModelConfig, OptimizerKind, TrainHyper};
use crate::rng::SeededRng;
use crate::schedule::{
    concat_plan, run_plan_from, stacking_plan, translate_all, DevData, RunOptions, SelectionMetric, Stage,
    StageOverrides, TrainingPlan,
};
use crate::selection::{select_per_corpus, selected_count, SelectionConfig};
use crate::subword::{build_vocab, Vocabulary};

pub const ALL: &str = "ALL";
pub const OD: &str = "OD";
pub const OD_IN: &str = "OD->in";
pub const ALL_IN: &str = "ALL->in";
pub const STACK_FAR_NEAR: &str = "far->near->in";
pub const STACK_NEAR_FAR: &str = "near->far->in";
pub const SELECTED: &str = "sel+in";
pub const RANDOM: &str = "rand+in";
pub const ENS_BALANCED: &str = "ENS_b";
pub const ENS_WEIGHTED: &str = "ENS_w";

const SEL_DOMAIN: &str = "sel";
const RAND_DOMAIN: &str = "rand";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FindingOptions {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub cell: CellKind,
    pub hyper: TrainHyper,
    /// Epochs of every from-scratch stage.
    pub base_epochs: usize,
    /// Epochs of every in-domain fine-tuning stage.
    pub finetune_epochs: usize,
    /// Epochs of the selected-data and random-sample systems, whose corpora
    /// are a fraction of the size of the others.
    pub selection_epochs: usize,
    pub selection_fraction: f64,
    pub lm_order: usize,
    /// Must divide `1 / members` so the lattice holds the uniform point.
    pub grid_step: f64,
    pub beam: usize,
    pub max_len: usize,
    /// Seeds a finding must hold in; `None` means `ceil(4/5 · seeds)`.
    pub required_seeds: Option<usize>,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FindingOptions {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            hidden_dim: 32,
            cell: CellKind::Gru,
            hyper: TrainHyper {
                learning_rate: 0.1,
                batch_size: 16,
                optimizer: OptimizerKind::Adagrad,
                clip_norm: Some(5.0),
            },
            base_epochs: 4,
            finetune_epochs: 2,
            selection_epochs: 10,
            selection_fraction: 0.15,
            lm_order: 2,
            grid_step: 1.0 / 6.0,
            beam: 4,
            max_len: 30,
            required_seeds: None,
            exec: Exec::default(),
        }
    }
}

/// The default synthetic task of the suite: two out-of-domain corpora, one
/// far from and one near the small in-domain corpus.
pub fn default_finding_spec() -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        shared_vocab_size: 200,
        per_domain_lexicon_size: 20,
        domain_count: 3,
        sentence_length_range: (3, 8),
        pair_counts: vec![1500, 1500, 200],
        seed: 0,
        polysemous_count: 8,
        lexicon_rate: 0.35,
        polysemous_rate: 0.25,
        proximity: vec![0.0, 0.5, 0.0],
        dev_count: 100,
        test_count: 100,
        unseen_test_count: 100,
    }
}

/// One system evaluated on one seed. Ensembles carry BLEU only.
#[derive(Debug, Clone, PartialEq)]
pub struct FindingRow {
    pub seed: u64,
    pub system: String,
    pub in_dev_ppl: Option<f64>,
    pub in_dev_bleu: f64,
    pub in_test_ppl: Option<f64>,
    pub in_test_bleu: f64,
    pub unseen_ppl: Option<f64>,
    pub unseen_bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FindingCheck {
    pub id: &'static str,
    pub claim: &'static str,
    pub per_seed: Vec<(u64, bool)>,
    pub required: usize,
}

impl FindingCheck {
    pub fn holds(&self) -> usize {
        self.per_seed.iter().filter(|(_, ok)| *ok).count()
    }

    pub fn passed(&self) -> bool {
        self.holds() >= self.required
    }
}

#[derive(Debug, Clone)]
pub struct FindingsReport {
    pub rows: Vec<FindingRow>,
    pub checks: Vec<FindingCheck>,
    /// Grid-searched ensemble weights per seed.
    pub ensemble_weights: Vec<(u64, Vec<f64>)>,
    /// Largest model trained, in parameters.
    pub parameter_count: usize,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl FindingsReport {
    /// `seed  system  in_dev_ppl  in_dev_bleu  in_test_ppl  in_test_bleu  unseen_ppl  unseen_bleu`
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("seed\tsystem\tin_dev_ppl\tin_dev_bleu\tin_test_ppl\tin_test_bleu\tunseen_ppl\tunseen_bleu\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.2}\t{}\t{:.2}\t{}\t{:.2}",
                r.seed,
                r.system,
                opt(r.in_dev_ppl),
                r.in_dev_bleu * 100.0,
                opt(r.in_test_ppl),
                r.in_test_bleu * 100.0,
                opt(r.unseen_ppl),
                r.unseen_bleu * 100.0
            )
            .unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let seeds: Vec<String> = c
                .per_seed
                .iter()
                .map(|(s, ok)| format!("{s}:{}", if *ok { "y" } else { "n" }))
                .collect();
            writeln!(
                out,
                "{} ({}) {} {}/{} seeds (need {}) [{}]",
                if c.passed() { "PASS" } else { "FAIL" },
                c.id,
                c.claim,
                c.holds(),
                c.per_seed.len(),
                c.required,
                seeds.join(" ")
            )
            .unwrap();
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(FindingCheck::passed)
    }

    pub fn row(&self, seed: u64, system: &str) -> Option<&FindingRow> {
        self.rows.iter().find(|r| r.seed == seed && r.system == system)
    }
}

struct SeedData {
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    train: BTreeMap<String, Vec<EncodedPair>>,
    registry: DomainRegistry,
    out_names: Vec<String>,
    /// Out-of-domain names ordered far to near.
    by_distance: Vec<String>,
    in_name: String,
    in_dev: DevData,
    in_test: DevData,
    unseen: DevData,
}

fn dev_data(name: &str, corpus: &ParallelCorpus, sv: &Vocabulary, tv: &Vocabulary) -> DevData {
    DevData {
        name: name.to_owned(),
        pairs: encode_pairs(corpus, sv, tv),
        references: corpus.targets().cloned().collect(),
    }
}

/// Equal per-corpus counts drawn uniformly without replacement.
fn random_sample(corpora: &[ParallelCorpus], fraction: f64, rng: &mut SeededRng) -> Vec<crate::corpus::SentencePair> {
    let mut out = Vec::new();
    for c in corpora {
        let mut idx: Vec<usize> = (0..c.len()).collect();
        rng.shuffle(&mut idx);
        let mut keep = idx[..selected_count(fraction, c.len())].to_vec();
        keep.sort_unstable();
        out.extend(keep.into_iter().map(|i| c.pairs[i].clone()));
    }
    out
}

fn prepare(spec: &SyntheticTaskSpec, seed: u64, options: &FindingOptions) -> Result<SeedData> {
    if spec.domain_count < 3 {
        return Err(Error::InvalidConfig("the finding suite needs at least two out-of-domain corpora".into()));
    }
    if spec.dev_count == 0 || spec.test_count == 0 || spec.unseen_test_count == 0 {
        return Err(Error::InvalidConfig("the finding suite needs dev, test and unseen test sets".into()));
    }
    let task = generate_synthetic_domains(&SyntheticTaskSpec { seed, ..spec.clone() })?;
    let n = spec.domain_count;
    let names: Vec<String> = (0..n).map(|i| spec.domain_name(i)).collect();
    let out_corpora: Vec<ParallelCorpus> = task.domains[..n - 1].iter().map(|d| d.train.clone()).collect();
    let in_domain = task.in_domain();

    let selection = SelectionConfig::new(options.selection_fraction)?;
    let lm = LmConfig::with_order(options.lm_order);
    let picked = select_per_corpus(
        &in_domain.train,
        &out_corpora.iter().map(|c| (c.clone(), selection.clone())).collect::<Vec<_>>(),
        &lm,
        options.exec,
    )?;
    let mut sel_pairs: Vec<_> = picked.into_iter().flat_map(|(c, _)| c.pairs).collect();
    let mut rng = SeededRng::derived(seed, 0xA11D);
    let mut rand_pairs = random_sample(&out_corpora, options.selection_fraction, &mut rng);
    sel_pairs.extend(in_domain.train.pairs.iter().cloned());
    rand_pairs.extend(in_domain.train.pairs.iter().cloned());
    let sel = ParallelCorpus::new(DomainId::new(SEL_DOMAIN)?, sel_pairs);
    let rand = ParallelCorpus::new(DomainId::new(RAND_DOMAIN)?, rand_pairs);

    let all_train: Vec<&ParallelCorpus> = task.domains.iter().map(|d| &d.train).collect();
    let src_vocab = build_vocab(all_train.iter().flat_map(|c| c.sources()), usize::MAX)?;
    let tgt_vocab = build_vocab(all_train.iter().flat_map(|c| c.targets()), usize::MAX)?;

    let mut train = BTreeMap::new();
    for (name, d) in names.iter().zip(&task.domains) {
        train.insert(name.clone(), encode_pairs(&d.train, &src_vocab, &tgt_vocab));
    }
    train.insert(SEL_DOMAIN.to_owned(), encode_pairs(&sel, &src_vocab, &tgt_vocab));
    train.insert(RAND_DOMAIN.to_owned(), encode_pairs(&rand, &src_vocab, &tgt_vocab));
    let registry = train.keys().map(|k| DomainId::new(k.clone())).collect::<Result<_>>()?;

    let mut by_distance: Vec<usize> = (0..n - 1).collect();
    by_distance.sort_by(|&a, &b| {
        let p = |i: usize| spec.proximity.get(i).copied().unwrap_or(0.0);
        p(a).total_cmp(&p(b)).then(a.cmp(&b))
    });
    let unseen = task.unseen_test.as_ref().expect("unseen_test_count > 0");
    Ok(SeedData {
        in_dev: dev_data("in.dev", &in_domain.dev, &src_vocab, &tgt_vocab),
        in_test: dev_data("in.test", &in_domain.test, &src_vocab, &tgt_vocab),
        unseen: dev_data("unseen.test", unseen, &src_vocab, &tgt_vocab),
        out_names: names[..n - 1].to_vec(),
        by_distance: by_distance.into_iter().map(|i| names[i].clone()).collect(),
        in_name: names[n - 1].clone(),
        src_vocab,
        tgt_vocab,
        train,
        registry,
    })
}

fn ids(names: &[String]) -> Result<Vec<DomainId>> {
    names.iter().map(|n| DomainId::new(n.clone())).collect()
}

struct Runner<'a> {
    data: &'a SeedData,
    config: ModelConfig,
    run: RunOptions,
}

impl Runner<'_> {
    fn from_scratch(&self, plan: &TrainingPlan) -> Result<ModelCheckpoint> {
        let start = init_model(&self.config)?;
        self.from(plan, start)
    }

    fn from(&self, plan: &TrainingPlan, start: ModelCheckpoint) -> Result<ModelCheckpoint> {
        let report = run_plan_from(
            plan,
            start,
            &self.data.train,
            std::slice::from_ref(&self.data.in_dev),
            &self.data.tgt_vocab,
            &self.run,
        )?;
        Ok(report.best)
    }
}

fn test_bleu(ck: &ModelCheckpoint, set: &DevData, vocab: &Vocabulary, options: &FindingOptions) -> Result<f64> {
    let sources: Vec<Vec<u32>> = set.pairs.iter().map(|p| p.src.clone()).collect();
    let hyps: Vec<Sentence> = translate_all(ck, &sources, vocab, options.beam, options.max_len, options.exec);
    Ok(bleu(&hyps, &set.references, DEFAULT_MAX_ORDER)?.bleu)
}

fn dev_set(d: &DevData) -> DevSet {
    DevSet {
        sources: d.pairs.iter().map(|p| p.src.clone()).collect(),
        references: d.references.clone(),
    }
}

fn evaluate(seed: u64, system: &str, ck: &ModelCheckpoint, data: &SeedData, options: &FindingOptions) -> Result<FindingRow> {
    let exec = options.exec;
    let tv = &data.tgt_vocab;
    Ok(FindingRow {
        seed,
        system: system.to_owned(),
        in_dev_ppl: Some(perplexity(ck, &data.in_dev.pairs, exec)?),
        in_dev_bleu: test_bleu(ck, &data.in_dev, tv, options)?,
        in_test_ppl: Some(perplexity(ck, &data.in_test.pairs, exec)?),
        in_test_bleu: test_bleu(ck, &data.in_test, tv, options)?,
        unseen_ppl: Some(perplexity(ck, &data.unseen.pairs, exec)?),
        unseen_bleu: test_bleu(ck, &data.unseen, tv, options)?,
    })
}

fn ensemble_row(seed: u64, system: &str, e: &Ensemble<'_>, data: &SeedData, options: &FindingOptions) -> Result<FindingRow> {
    let b = |d: &DevData| ensemble_dev_bleu(e, &dev_set(d), &data.tgt_vocab, options.beam, options.max_len, options.exec);
    Ok(FindingRow {
        seed,
        system: system.to_owned(),
        in_dev_ppl: None,
        in_dev_bleu: b(&data.in_dev)?,
        in_test_ppl: None,
        in_test_bleu: b(&data.in_test)?,
        unseen_ppl: None,
        unseen_bleu: b(&data.unseen)?,
    })
}

/// Trains and evaluates every strategy for one seed.
pub fn run_seed(spec: &SyntheticTaskSpec, seed: u64, options: &FindingOptions) -> Result<(Vec<FindingRow>, Vec<f64>, usize)> {
    let data = prepare(spec, seed, options)?;
    let config = ModelConfig {
        src_vocab: data.src_vocab.len(),
        tgt_vocab: data.tgt_vocab.len(),
        embedding_dim: options.embedding_dim,
        hidden_dim: options.hidden_dim,
        encoder_layers: 1,
        decoder_layers: 1,
        cell: options.cell,
        seed,
    };
    let params = config.parameter_count();
    let runner = Runner {
        data: &data,
        config,
        run: RunOptions {
            hyper: options.hyper.clone(),
            eval_every: 1,
            beam: options.beam,
            max_len: options.max_len,
            metric: SelectionMetric::Perplexity,
            skip_bleu: true,
            audit: false,
            out_dir: None,
            exec: options.exec,
        },
    };
    let reg = &data.registry;
    let epochs = options.base_epochs;
    let ft = options.finetune_epochs;
    let in_id = DomainId::new(data.in_name.clone())?;
    let mut systems: Vec<(String, ModelCheckpoint)> = Vec::new();

    for name in data.out_names.iter().chain(std::iter::once(&data.in_name)) {
        let plan = concat_plan(&ids(std::slice::from_ref(name))?, epochs, reg)?;
        systems.push((name.clone(), runner.from_scratch(&plan)?));
    }
    let mut all_names = data.out_names.clone();
    all_names.push(data.in_name.clone());
    let all = runner.from_scratch(&concat_plan(&ids(&all_names)?, epochs, reg)?)?;
    let od = runner.from_scratch(&concat_plan(&ids(&data.out_names)?, epochs, reg)?)?;
    let in_only = TrainingPlan {
        stages: vec![Stage {
            domains: vec![data.in_name.clone()],
            epochs: ft,
            overrides: StageOverrides::default(),
        }],
    };
    in_only.validate(reg)?;
    let od_in = runner.from(&in_only, od.clone())?;
    let all_in = runner.from(&in_only, all.clone())?;

    let stack = |order: Vec<String>| -> Result<ModelCheckpoint> {
        let mut order = ids(&order)?;
        order.push(in_id.clone());
        let mut plan = stacking_plan(&order, epochs, reg)?;
        plan.stages.last_mut().unwrap().epochs = ft;
        runner.from_scratch(&plan)
    };
    let far_near = stack(data.by_distance.clone())?;
    let near_far = stack(data.by_distance.iter().rev().cloned().collect())?;
    let sel_epochs = options.selection_epochs;
    let sel = runner.from_scratch(&concat_plan(&ids(&[SEL_DOMAIN.to_owned()])?, sel_epochs, reg)?)?;
    let rand = runner.from_scratch(&concat_plan(&ids(&[RAND_DOMAIN.to_owned()])?, sel_epochs, reg)?)?;

    systems.extend([
        (ALL.to_owned(), all),
        (OD.to_owned(), od),
        (OD_IN.to_owned(), od_in),
        (ALL_IN.to_owned(), all_in),
        (STACK_FAR_NEAR.to_owned(), far_near),
        (STACK_NEAR_FAR.to_owned(), near_far),
        (SELECTED.to_owned(), sel),
        (RANDOM.to_owned(), rand),
    ]);

    let mut rows = Vec::with_capacity(systems.len() + 2);
    for (name, ck) in &systems {
        rows.push(evaluate(seed, name, ck, &data, options)?);
    }

    let find = |n: &str| &systems.iter().find(|(s, _)| s == n).unwrap().1;
    let members = vec![find(OD_IN), find(ALL_IN), find(STACK_FAR_NEAR)];
    let balanced = Ensemble::new(members.clone(), None, EnsembleMode::Balanced)?;
    let grid = grid_search_weights(
        &balanced,
        &dev_set(&data.in_dev),
        &data.tgt_vocab,
        options.grid_step,
        options.beam,
        options.max_len,
        options.exec,
    )?;
    let weighted = Ensemble::new(members, Some(grid.weights.clone()), EnsembleMode::Weighted)?;
    rows.push(ensemble_row(seed, ENS_BALANCED, &balanced, &data, options)?);
    rows.push(ensemble_row(seed, ENS_WEIGHTED, &weighted, &data, options)?);
    Ok((rows, grid.weights, params))
}

fn ppl(rows: &[FindingRow], system: &str, pick: fn(&FindingRow) -> Option<f64>) -> f64 {
    rows.iter().find(|r| r.system == system).and_then(pick).unwrap_or(f64::NAN)
}

fn in_dev(r: &FindingRow) -> Option<f64> {
    r.in_dev_ppl
}

fn unseen(r: &FindingRow) -> Option<f64> {
    r.unseen_ppl
}

type Predicate = fn(&[FindingRow]) -> bool;

fn predicates() -> Vec<(&'static str, &'static str, Predicate)> {
    vec![
        ("a", "OD->in beats ALL on in-domain dev perplexity", |r| {
            ppl(r, OD_IN, in_dev) < ppl(r, ALL, in_dev)
        }),
        ("b", "ALL beats the best stacked model (chosen on in-domain dev) on the unseen domain (perplexity)", |r| {
            let best = if ppl(r, STACK_FAR_NEAR, in_dev) <= ppl(r, STACK_NEAR_FAR, in_dev) {
                STACK_FAR_NEAR
            } else {
                STACK_NEAR_FAR
            };
            ppl(r, ALL, unseen) < ppl(r, best, unseen)
        }),
        ("c", "far->near stacking beats near->far on in-domain dev perplexity", |r| {
            ppl(r, STACK_FAR_NEAR, in_dev) < ppl(r, STACK_NEAR_FAR, in_dev)
        }),
        ("d", "sel+in beats rand+in, and ALL beats sel+in, on in-domain dev perplexity", |r| {
            ppl(r, SELECTED, in_dev) < ppl(r, RANDOM, in_dev) && ppl(r, ALL, in_dev) < ppl(r, SELECTED, in_dev)
        }),
        ("e", "grid-weighted ensemble dev BLEU >= balanced ensemble dev BLEU", |r| {
            let b = |s: &str| r.iter().find(|x| x.system == s).map_or(f64::NAN, |x| x.in_dev_bleu);
            b(ENS_WEIGHTED) >= b(ENS_BALANCED)
        }),
    ]
}

/// Runs every strategy for each seed and checks the findings.
pub fn run_finding_suite(spec: &SyntheticTaskSpec, seeds: &[u64], options: &FindingOptions) -> Result<FindingsReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("the finding suite needs at least one seed".into()));
    }
    let required = options.required_seeds.unwrap_or((4 * seeds.len()).div_ceil(5));
    let mut rows = Vec::new();
    let mut ensemble_weights = Vec::new();
    let mut parameter_count = 0;
    let mut per_seed: Vec<Vec<(u64, bool)>> = vec![Vec::new(); predicates().len()];
    for &seed in seeds {
        let (seed_rows, weights, params) = run_seed(spec, seed, options)?;
        for (k, (_, _, holds)) in predicates().into_iter().enumerate() {
            per_seed[k].push((seed, holds(&seed_rows)));
        }
        rows.extend(seed_rows);
        ensemble_weights.push((seed, weights));
        parameter_count = parameter_count.max(params);
    }
    let checks = predicates()
        .into_iter()
        .zip(per_seed)
        .map(|((id, claim, _), per_seed)| FindingCheck {
            id,
            claim,
            per_seed,
            required,
        })
        .collect();
    Ok(FindingsReport {
        rows,
        checks,
        ensemble_weights,
        parameter_count,
    })
}
