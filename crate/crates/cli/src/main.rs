//! `domadapt`: prepare data, select, train, ensemble, translate, evaluate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training divergence.

mod commands;
mod config;
mod workspace;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EnsembleArgs, EvalRequest, Input};
use config::RunConfig;
use domadapt::Exec;

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "domadapt", version, about = "Domain adaptation for neural machine translation")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, segment, tag and index the configured corpora into the workspace.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Moore-Lewis selection from out-of-domain corpora into NAME.sel domains.
    Select {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured training plan.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
        /// Run directory name; defaults to `[train] name`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Translate with one checkpoint.
    Translate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 80)]
        max_len: usize,
    },
    /// Translate with an ensemble, optionally tuning member weights on a dev set.
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        /// Member list, one `PATH[<TAB>WEIGHT]` per line.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Grid-search weights for BLEU on this workspace dev set.
        #[arg(long)]
        tune_dev: Option<String>,
        /// Write the tuned weights as a member list.
        #[arg(long, requires = "tune_dev")]
        weights_out: Option<PathBuf>,
        /// Write every grid point with its dev BLEU.
        #[arg(long, requires = "tune_dev")]
        audit_out: Option<PathBuf>,
    },
    /// Corpus BLEU of hypothesis files, or BLEU and perplexity of checkpoints.
    Evaluate {
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Lines of SYSTEM<TAB>TESTSET<TAB>HYP<TAB>REF.
        #[arg(long, conflicts_with_all = ["hyp", "checkpoint"])]
        batch: Option<PathBuf>,
        /// `NAME=PATH` or `PATH`; needs --config and --set.
        #[arg(long, requires_all = ["config", "set"], conflicts_with = "hyp")]
        checkpoint: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        set: Vec<String>,
        #[arg(long, default_value = "system")]
        system: String,
        #[arg(long, default_value = "test")]
        testset: String,
        #[arg(long)]
        lowercase: bool,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 80)]
        max_len: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the multi-seed synthetic experiment suite.
    Findings {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct InputArgs {
    /// Raw text, one sentence per line.
    #[arg(long, required_unless_present = "set", conflicts_with = "set")]
    input: Option<PathBuf>,
    /// A prepared workspace evaluation set.
    #[arg(long)]
    set: Option<String>,
    /// Domain tag to prepend to raw input.
    #[arg(long, requires = "input")]
    tag: Option<String>,
}

impl InputArgs {
    fn as_input(&self) -> Input<'_> {
        match (&self.input, &self.set) {
            (Some(p), _) => Input::Raw {
                path: p,
                tag: self.tag.as_deref(),
            },
            (None, Some(s)) => Input::Set(s),
            (None, None) => unreachable!("clap requires one of --input, --set"),
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")).into())
}

fn emit(text: &str, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(p) => workspace::write_file(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Prepare { config } => emit(&commands::prepare(&load_config(&config)?)?, None),
        Command::Select { config } => emit(&commands::select(&load_config(&config)?, exec)?, None),
        Command::Train {
            config,
            from_checkpoint,
            name,
        } => {
            let cfg = load_config(&config)?;
            emit(&commands::train(&cfg, from_checkpoint.as_deref(), name.as_deref(), exec)?, None)
        }
        Command::Translate {
            config,
            checkpoint,
            input,
            output,
            beam,
            max_len,
        } => {
            let cfg = load_config(&config)?;
            let text = commands::translate(&cfg, &checkpoint, &input.as_input(), beam, max_len, exec)?;
            emit(&text, output.as_deref())
        }
        Command::Ensemble {
            config,
            spec,
            input,
            output,
            tune_dev,
            weights_out,
            audit_out,
        } => {
            let cfg = load_config(&config)?;
            let args = EnsembleArgs {
                spec: spec.as_deref(),
                input: input.as_input(),
                tune_dev: tune_dev.as_deref(),
                weights_out: weights_out.as_deref(),
                audit_out: audit_out.as_deref(),
            };
            emit(&commands::ensemble(&cfg, &args, exec)?, output.as_deref())
        }
        Command::Evaluate {
            hyp,
            reference,
            batch,
            checkpoint,
            config,
            set,
            system,
            testset,
            lowercase,
            beam,
            max_len,
            output,
        } => {
            let text = if let Some(b) = batch {
                commands::evaluate_files(&commands::parse_batch(&b)?, lowercase)?
            } else if let (Some(h), Some(r)) = (hyp, reference) {
                let req = EvalRequest {
                    system,
                    testset,
                    hyp: h,
                    reference: r,
                };
                commands::evaluate_files(&[req], lowercase)?
            } else if !checkpoint.is_empty() {
                let cfg = load_config(config.as_deref().expect("clap requires --config"))?;
                let named: Vec<(String, PathBuf)> = checkpoint
                    .iter()
                    .map(|c| match c.split_once('=') {
                        Some((n, p)) => (n.to_owned(), PathBuf::from(p)),
                        None => (c.clone(), PathBuf::from(c)),
                    })
                    .collect();
                commands::evaluate_checkpoints(&cfg, &named, &set, beam, max_len, lowercase, exec)?
            } else {
                return Err(UsageError("evaluate needs --hyp/--ref, --batch or --checkpoint".into()).into());
            };
            emit(&text, output.as_deref())
        }
        Command::Findings { config, seeds, out } => {
            let cfg = config.as_deref().map(load_config).transpose()?;
            emit(&commands::findings(cfg.as_ref(), seeds, &out, exec)?, None)
        }
    }
}

fn diverged(e: &domadapt::Error) -> bool {
    match e {
        domadapt::Error::Divergence { .. } => true,
        domadapt::Error::StageFailed { source, .. } => diverged(source),
        _ => false,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(d) = cause.downcast_ref::<domadapt::Error>() {
            if diverged(d) {
                return 3;
            }
            if matches!(d, domadapt::Error::InvalidConfig(_) | domadapt::Error::InvalidPlan(_)) {
                return 1;
            }
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
