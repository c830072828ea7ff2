//! `RunConfig`: the TOML file every subcommand reads.
//!
//! Relative paths resolve against the directory holding the config file.
//! `DOMADAPT_WORKSPACE` overrides the workspace directory; no environment
//! variable touches a hyperparameter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use domadapt::corpus::SyntheticTaskSpec;
use domadapt::ensemble::{Combination, DEFAULT_GRID_STEP};
use domadapt::experiments::FindingOptions;
use domadapt::nmt::{CellKind, TrainHyper};
use domadapt::schedule::{SelectionMetric, TrainingPlan};
use domadapt::subword::DESK_MERGES;

pub const WORKSPACE_ENV: &str = "DOMADAPT_WORKSPACE";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workspace: PathBuf,
    /// Seeds model initialization; required so no run draws hidden entropy.
    pub seed: u64,
    #[serde(default)]
    pub preprocess: Preprocess,
    /// Generate the domains instead of reading `[[domain]]` files.
    pub synthetic: Option<SyntheticTaskSpec>,
    #[serde(default, rename = "domain")]
    pub domains: Vec<FilePair>,
    #[serde(default, rename = "devset")]
    pub devsets: Vec<FilePair>,
    #[serde(default, rename = "testset")]
    pub testsets: Vec<FilePair>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    pub plan: Option<TrainingPlan>,
    pub selection: Option<SelectionSection>,
    pub ensemble: Option<EnsembleSection>,
    pub findings: Option<FindingsSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilePair {
    pub name: String,
    pub source: PathBuf,
    pub target: PathBuf,
    /// Domain whose tag is prepended to dev/test sources when tagging is on.
    pub domain: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub bpe_merges: usize,
    /// Vocabulary size per side, reserved tokens included.
    pub vocab_limit: usize,
    pub max_len: usize,
    pub domain_tags: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            bpe_merges: DESK_MERGES,
            vocab_limit: 8000,
            max_len: domadapt::corpus::DEFAULT_MAX_LEN,
            domain_tags: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub cell: CellKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = domadapt::nmt::ModelConfig::desk(1, 4, 0);
        Self {
            embedding_dim: d.embedding_dim,
            hidden_dim: d.hidden_dim,
            encoder_layers: d.encoder_layers,
            decoder_layers: d.decoder_layers,
            cell: d.cell,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Run directory name under `WORKSPACE/runs/`.
    pub name: String,
    pub hyper: TrainHyper,
    pub eval_every: usize,
    pub beam: usize,
    pub max_len: usize,
    pub metric: SelectionMetric,
    pub skip_bleu: bool,
    /// Dev set names used for checkpoint selection; all when empty.
    pub dev: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let r = domadapt::schedule::RunOptions::default();
        Self {
            name: "run".into(),
            hyper: r.hyper,
            eval_every: r.eval_every,
            beam: r.beam,
            max_len: r.max_len,
            metric: r.metric,
            skip_bleu: r.skip_bleu,
            dev: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub in_domain: String,
    /// Out-of-domain corpora to select from; every other domain when empty.
    #[serde(default)]
    pub out_domains: Vec<String>,
    pub fraction: f64,
    /// Per-corpus fraction overrides.
    #[serde(default)]
    pub fractions: BTreeMap<String, f64>,
    #[serde(default = "yes")]
    pub bilingual: bool,
    #[serde(default = "default_lm_order")]
    pub lm_order: usize,
}

fn yes() -> bool {
    true
}

fn default_lm_order() -> usize {
    domadapt::ngram::DEFAULT_ORDER
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: Vec<PathBuf>,
    pub weights: Option<Vec<f64>>,
    pub combination: Combination,
    pub grid_step: f64,
    pub beam: usize,
    pub max_len: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            members: Vec::new(),
            weights: None,
            combination: Combination::Probability,
            grid_step: DEFAULT_GRID_STEP,
            beam: domadapt::schedule::DEV_BEAM,
            max_len: 80,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingsSection {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub options: FindingOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(ws) = std::env::var_os(WORKSPACE_ENV) {
            cfg.workspace = PathBuf::from(ws);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace);
        for f in self.domains.iter_mut().chain(&mut self.devsets).chain(&mut self.testsets) {
            fix(&mut f.source);
            fix(&mut f.target);
        }
        if let Some(e) = &mut self.ensemble {
            e.members.iter_mut().for_each(fix);
        }
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.synthetic.is_some() && !self.domains.is_empty() {
            bail!("use either [synthetic] or [[domain]] entries, not both");
        }
        if self.synthetic.is_none() && self.domains.is_empty() {
            bail!("no domains configured: add [[domain]] entries or a [synthetic] spec");
        }
        let mut names: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("domain {} listed twice", w[0]);
        }
        Ok(())
    }
}
