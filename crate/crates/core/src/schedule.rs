//! Training plans: concatenation, fine-tuning and model stacking, run on one
//! evolving checkpoint with per-epoch dev evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainId, DomainRegistry, Sentence};
use crate::ensemble::hypothesis_sentence;
use crate::error::{Error, Result};
use crate::eval::{bleu, DEFAULT_MAX_ORDER};
use crate::exec::Exec;
use crate::nmt::{
    beam_search, perplexity, save_checkpoint, train_epoch_observed, EncodedPair, ModelCheckpoint, ModelScorer,
    OptimizerKind, TrainHyper,
};
use crate::subword::Vocabulary;

/// Epochs of the final in-domain stage when not given.
pub const DEFAULT_FINETUNE_EPOCHS: usize = 3;
pub const DEV_BEAM: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub clip_norm: Option<f64>,
    /// Start the stage with fresh optimizer accumulators.
    pub reset_optimizer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub domains: Vec<String>,
    pub epochs: usize,
    #[serde(default)]
    pub overrides: StageOverrides,
}

impl Stage {
    pub fn hyper(&self, base: &TrainHyper) -> TrainHyper {
        let o = &self.overrides;
        TrainHyper {
            learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
            batch_size: o.batch_size.unwrap_or(base.batch_size),
            optimizer: o.optimizer.unwrap_or(base.optimizer),
            clip_norm: o.clip_norm.or(base.clip_norm),
        }
    }

    /// Provenance label: the stage's domains joined by `+`.
    pub fn label(&self) -> String {
        self.domains.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    pub stages: Vec<Stage>,
}

impl TrainingPlan {
    pub fn validate(&self, registry: &DomainRegistry) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidPlan("a plan needs at least one stage".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.epochs == 0 {
                return Err(Error::InvalidPlan(format!("stage {i} has 0 epochs")));
            }
            if stage.domains.is_empty() {
                return Err(Error::InvalidPlan(format!("stage {i} lists no domains")));
            }
            for (j, d) in stage.domains.iter().enumerate() {
                if !registry.contains_name(d) {
                    return Err(Error::UnknownDomain(d.clone()));
                }
                if stage.domains[..j].contains(d) {
                    return Err(Error::DuplicateDomain(d.clone()));
                }
            }
        }
        Ok(())
    }

    /// Every domain named by any stage, first appearance order.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in self.stages.iter().flat_map(|s| &s.domains) {
            if !out.contains(d) {
                out.push(d.clone());
            }
        }
        out
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }
}

fn check_known(domains: &[DomainId], registry: &DomainRegistry) -> Result<()> {
    for d in domains {
        if !registry.contains(d) {
            return Err(Error::UnknownDomain(d.to_string()));
        }
    }
    Ok(())
}

fn check_epochs(epochs: usize) -> Result<()> {
    if epochs == 0 {
        return Err(Error::InvalidPlan("epochs must be >= 1".into()));
    }
    Ok(())
}

/// One stage over the concatenation of `domains`.
pub fn concat_plan(domains: &[DomainId], epochs: usize, registry: &DomainRegistry) -> Result<TrainingPlan> {
    check_known(domains, registry)?;
    check_epochs(epochs)?;
    let plan = TrainingPlan {
        stages: vec![Stage {
            domains: domains.iter().map(|d| d.to_string()).collect(),
            epochs,
            overrides: StageOverrides::default(),
        }],
    };
    plan.validate(registry)?;
    Ok(plan)
}

/// `base` followed by a stage on `domain` alone.
pub fn finetune_plan(
    base: &TrainingPlan,
    domain: &DomainId,
    epochs: usize,
    registry: &DomainRegistry,
) -> Result<TrainingPlan> {
    check_known(std::slice::from_ref(domain), registry)?;
    check_epochs(epochs)?;
    let mut plan = base.clone();
    plan.stages.push(Stage {
        domains: vec![domain.to_string()],
        epochs,
        overrides: StageOverrides::default(),
    });
    plan.validate(registry)?;
    Ok(plan)
}

/// One stage per domain in the given order.
pub fn stacking_plan(order: &[DomainId], epochs_per_stage: usize, registry: &DomainRegistry) -> Result<TrainingPlan> {
    if order.len() < 2 {
        return Err(Error::InvalidPlan("stacking needs at least two domains".into()));
    }
    for (i, d) in order.iter().enumerate() {
        if order[..i].contains(d) {
            return Err(Error::DuplicateDomain(d.to_string()));
        }
    }
    check_known(order, registry)?;
    check_epochs(epochs_per_stage)?;
    let plan = TrainingPlan {
        stages: order
            .iter()
            .map(|d| Stage {
                domains: vec![d.to_string()],
                epochs: epochs_per_stage,
                overrides: StageOverrides::default(),
            })
            .collect(),
    };
    plan.validate(registry)?;
    Ok(plan)
}

/// A development set: encoded pairs for perplexity and de-segmented
/// references for BLEU.
#[derive(Debug, Clone)]
pub struct DevData {
    pub name: String,
    pub pairs: Vec<EncodedPair>,
    pub references: Vec<Sentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Highest mean dev BLEU.
    #[default]
    Bleu,
    /// Lowest mean dev perplexity.
    Perplexity,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub hyper: TrainHyper,
    /// Evaluate every this many epochs (and always at the end of a stage).
    pub eval_every: usize,
    pub beam: usize,
    pub max_len: usize,
    pub metric: SelectionMetric,
    /// Skip BLEU decoding (dev BLEU is then reported as NaN); only valid
    /// with perplexity selection.
    pub skip_bleu: bool,
    /// Record which example fed each update.
    pub audit: bool,
    /// Where to write `best.ckpt` and `final.ckpt`, if anywhere.
    pub out_dir: Option<PathBuf>,
    pub exec: Exec,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            hyper: TrainHyper::default(),
            eval_every: 1,
            beam: DEV_BEAM,
            max_len: 80,
            metric: SelectionMetric::Bleu,
            skip_bleu: false,
            audit: false,
            out_dir: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 0-based stage index.
    pub stage: usize,
    /// 1-based epoch within the stage.
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean over dev sets; NaN when not evaluated this epoch.
    pub dev_ppl: f64,
    pub dev_bleu: f64,
}

/// One example fed to the trainer: stage, epoch, domain and index within
/// that domain's corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exposure {
    pub stage: usize,
    pub epoch: usize,
    pub domain: String,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub plan: TrainingPlan,
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the selected checkpoint.
    pub best_record: usize,
    pub best: ModelCheckpoint,
    pub final_checkpoint: ModelCheckpoint,
    pub best_checkpoint_path: Option<PathBuf>,
    pub exposures: Vec<Exposure>,
}

impl RunReport {
    /// `stage,epoch,train_loss,dev_ppl,dev_bleu`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,epoch,train_loss,dev_ppl,dev_bleu\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.stage, r.epoch, r.train_loss, r.dev_ppl, r.dev_bleu
            )
            .unwrap();
        }
        out
    }

    pub fn best_dev_bleu(&self) -> f64 {
        self.records[self.best_record].dev_bleu
    }

    pub fn best_dev_ppl(&self) -> f64 {
        self.records[self.best_record].dev_ppl
    }
}

/// Translates `sources` with beam search and returns de-segmented outputs.
pub fn translate_all(
    checkpoint: &ModelCheckpoint,
    sources: &[Vec<u32>],
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
    exec: Exec,
) -> Vec<Sentence> {
    exec.map(sources, |src| {
        let h = beam_search(&ModelScorer::new(&checkpoint.params, src), beam, max_len).best;
        hypothesis_sentence(vocab, &h.tokens)
    })
}

/// Corpus BLEU of a single model on one dev set.
pub fn model_dev_bleu(
    checkpoint: &ModelCheckpoint,
    dev: &DevData,
    vocab: &Vocabulary,
    beam: usize,
    max_len: usize,
    exec: Exec,
) -> Result<f64> {
    let sources: Vec<Vec<u32>> = dev.pairs.iter().map(|p| p.src.clone()).collect();
    let hyps = translate_all(checkpoint, &sources, vocab, beam, max_len, exec);
    Ok(bleu(&hyps, &dev.references, DEFAULT_MAX_ORDER)?.bleu)
}

fn better(metric: SelectionMetric, candidate: &EpochRecord, incumbent: Option<&EpochRecord>) -> bool {
    let Some(inc) = incumbent else {
        return true;
    };
    match metric {
        SelectionMetric::Bleu => candidate.dev_bleu > inc.dev_bleu,
        SelectionMetric::Perplexity => candidate.dev_ppl < inc.dev_ppl,
    }
}

/// Runs `plan` from `start`. `train` maps every plan domain to its encoded
/// corpus; all corpora must already share one vocabulary.
pub fn run_plan_from(
    plan: &TrainingPlan,
    start: ModelCheckpoint,
    train: &BTreeMap<String, Vec<EncodedPair>>,
    dev: &[DevData],
    tgt_vocab: &Vocabulary,
    options: &RunOptions,
) -> Result<RunReport> {
    let registry: DomainRegistry = train
        .keys()
        .map(|k| DomainId::new(k.clone()))
        .collect::<Result<_>>()?;
    plan.validate(&registry)?;
    if dev.is_empty() {
        return Err(Error::InvalidConfig("run_plan needs at least one dev set".into()));
    }
    if options.skip_bleu && options.metric == SelectionMetric::Bleu {
        return Err(Error::InvalidConfig("BLEU selection cannot skip BLEU".into()));
    }
    let eval_every = options.eval_every.max(1);

    let mut ck = start;
    let mut records = Vec::with_capacity(plan.total_epochs());
    let mut exposures = Vec::new();
    let mut best: Option<(usize, ModelCheckpoint)> = None;
    let mut global_epoch = 0;
    for (si, stage) in plan.stages.iter().enumerate() {
        let hyper = stage.hyper(&options.hyper);
        let mut data = Vec::new();
        let mut origin = Vec::new();
        for d in &stage.domains {
            for (i, p) in train[d].iter().enumerate() {
                data.push(p.clone());
                origin.push((d.as_str(), i));
            }
        }
        if stage.overrides.reset_optimizer {
            let n = ck.params.data.len();
            ck.optimizer.reset_to(hyper.optimizer, n);
        }
        let label = stage.label();
        for epoch in 1..=stage.epochs {
            global_epoch += 1;
            let mut seen: Vec<usize> = Vec::new();
            let mut observer = |idx: &[usize]| seen.extend_from_slice(idx);
            let obs: Option<&mut dyn FnMut(&[usize])> = if options.audit { Some(&mut observer) } else { None };
            let stats = train_epoch_observed(&mut ck, &label, &data, &hyper, options.exec, obs).map_err(|e| {
                Error::StageFailed {
                    stage: si,
                    epoch,
                    source: Box::new(e),
                }
            })?;
            exposures.extend(seen.into_iter().map(|i| Exposure {
                stage: si,
                epoch,
                domain: origin[i].0.to_owned(),
                index: origin[i].1,
            }));

            let evaluate = global_epoch % eval_every == 0 || epoch == stage.epochs;
            let (mut dev_ppl, mut dev_bleu) = (f64::NAN, f64::NAN);
            if evaluate {
                let mut ppl_sum = 0.0;
                let mut bleu_sum = 0.0;
                for d in dev {
                    ppl_sum += perplexity(&ck, &d.pairs, options.exec).map_err(|e| Error::StageFailed {
                        stage: si,
                        epoch,
                        source: Box::new(e),
                    })?;
                    if !options.skip_bleu {
                        bleu_sum += model_dev_bleu(&ck, d, tgt_vocab, options.beam, options.max_len, options.exec)?;
                    }
                }
                dev_ppl = ppl_sum / dev.len() as f64;
                if !options.skip_bleu {
                    dev_bleu = bleu_sum / dev.len() as f64;
                }
            }
            let record = EpochRecord {
                stage: si,
                epoch,
                train_loss: stats.train_loss,
                dev_ppl,
                dev_bleu,
            };
            if evaluate && better(options.metric, &record, best.as_ref().map(|(i, _)| &records[*i])) {
                best = Some((records.len(), ck.clone()));
            }
            records.push(record);
        }
    }
    let (best_record, best_ck) = best.expect("at least one evaluated epoch");
    let mut best_checkpoint_path = None;
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("best.ckpt");
        save_checkpoint(&best_ck, &p)?;
        save_checkpoint(&ck, &dir.join("final.ckpt"))?;
        best_checkpoint_path = Some(p);
    }
    Ok(RunReport {
        plan: plan.clone(),
        records,
        best_record,
        best: best_ck,
        final_checkpoint: ck,
        best_checkpoint_path,
        exposures,
    })
}

/// Initializes a model from `config` and runs `plan`.
pub fn run_plan(
    plan: &TrainingPlan,
    config: &crate::nmt::ModelConfig,
    train: &BTreeMap<String, Vec<EncodedPair>>,
    dev: &[DevData],
    tgt_vocab: &Vocabulary,
    options: &RunOptions,
) -> Result<RunReport> {
    let start = crate::nmt::init_model(config)?;
    run_plan_from(plan, start, train, dev, tgt_vocab, options)
}
