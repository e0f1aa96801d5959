//! `fel` subcommands. Every command reads a run config, applies flag
//! overrides, writes `resolved_config.json` into `--out` and then its own
//! artifacts. Failures print one line `ERROR:<code>: <message>` to stderr and
//! exit with 1 (invalid input) or 2 (runtime failure).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fel_core::datagen::{
    encode_ad, encode_ct, gen_ad_dataset, gen_ct_datasets, gen_synthetic_corpus, parse_markup, AdExample, CtExample,
    DataError, Document, Segmentation, StreamTag,
};
use fel_core::derive_seed;
use fel_core::model::{grad_check, init_model, Model, ModelError, Scope};
use fel_core::tokenizer::{build_vocab, Vocab};
use fel_core::train::{
    corpus_documents, cross_validate, evaluate, pretrain, run_alignment_experiment, CvData, CvItem, Objective,
    PretrainCorpus, SplitMode, Task, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::config::RunConfig;
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::tsv::{loss_log, ordering_matrix};
use crate::vocab_file::{read_vocab, write_vocab};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            exit: 1,
            message: message.into(),
        }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            exit: 2,
            message: message.into(),
        }
    }

    /// The single stderr line, newlines flattened.
    pub fn line(&self) -> String {
        format!("ERROR:{}: {}", self.code, self.message.replace(['\n', '\r'], " "))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::BudgetMismatch(_) | TrainError::NoObjectives => {
                CliError::invalid("CONFIG_INVALID", e.to_string())
            }
            TrainError::Data(_) | TrainError::Tokenizer(_) | TrainError::SplitOverlap(_) | TrainError::Empty(_) => {
                CliError::runtime("DATA", e.to_string())
            }
            TrainError::Model(ModelError::Config(_)) => CliError::invalid("CONFIG_INVALID", e.to_string()),
            _ => CliError::runtime("TRAIN", e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::runtime("DATA", e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        TrainError::from(e).into()
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::runtime("CHECKPOINT", e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "fel", version, about = "Objective-aligned pretraining and few-example finetuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Corpus file; the synthetic corpus is generated when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary file; built from the corpus when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Builds a unigram vocabulary from the corpus.
    BuildVocab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Writes the synthetic corpus, CT/AD datasets and pretraining shards.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Multitask pretraining from fresh weights.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Comma-separated subset of mlm,nsp,hyp,pad.
        #[arg(long)]
        objectives: Option<String>,
    },
    /// Cross-validated finetuning; writes a CV report.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        /// pred, pred+trm or pred+trm+emb.
        #[arg(long)]
        scope: Option<String>,
        /// CT or AD records (JSON Lines).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Fixed CT test set (JSON Lines).
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Scores a checkpoint on a labeled set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Central-difference gradient check of the model section's shape.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrains every experiment arm and cross-validates each.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        scope: Option<String>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::BuildVocab { common, .. }
            | Command::GenData { common }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Gradcheck { common }
            | Command::Experiment { common, .. } => common,
        }
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn set_path(slot: &mut Option<String>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(path_string(p));
    }
}

fn parse_task(s: &str) -> Result<Task, CliError> {
    s.parse().map_err(|e: TrainError| CliError::invalid("USAGE", e.to_string()))
}

fn parse_scope(s: &str) -> Result<Scope, CliError> {
    s.parse().map_err(|e: ModelError| CliError::invalid("USAGE", e.to_string()))
}

/// Loads the config named by `--config` and applies the command's flags.
pub fn resolve_config(cmd: &Command) -> Result<RunConfig, CliError> {
    let common = cmd.common();
    let text = fs::read_to_string(&common.config).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::invalid("CONFIG_NOT_FOUND", format!("{}", common.config.display()))
        } else {
            CliError::invalid("CONFIG_NOT_FOUND", format!("{}: {e}", common.config.display()))
        }
    })?;
    let mut cfg = RunConfig::from_json(&text).map_err(|e| CliError::invalid("CONFIG_INVALID", e.to_string()))?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    match cmd {
        Command::BuildVocab { corpus, .. } => set_path(&mut cfg.inputs.corpus, corpus),
        Command::GenData { .. } | Command::Gradcheck { .. } => {}
        Command::Pretrain { corpus, objectives, .. } => {
            set_path(&mut cfg.inputs.corpus, &corpus.corpus);
            set_path(&mut cfg.inputs.vocab, &corpus.vocab);
            if let Some(o) = objectives {
                cfg.pretrain.objectives =
                    Objective::parse_list(o).map_err(|e| CliError::invalid("USAGE", e.to_string()))?;
            }
        }
        Command::Finetune {
            corpus,
            checkpoint,
            task,
            scope,
            train,
            test,
            ..
        } => {
            set_path(&mut cfg.inputs.corpus, &corpus.corpus);
            set_path(&mut cfg.inputs.vocab, &corpus.vocab);
            set_path(&mut cfg.inputs.checkpoint, checkpoint);
            set_path(&mut cfg.inputs.train, train);
            set_path(&mut cfg.inputs.test, test);
            if let Some(t) = task {
                cfg.experiment.task = parse_task(t)?;
            }
            if let Some(s) = scope {
                cfg.finetune.scope = parse_scope(s)?;
            }
        }
        Command::Evaluate {
            corpus,
            checkpoint,
            task,
            test,
            ..
        } => {
            set_path(&mut cfg.inputs.corpus, &corpus.corpus);
            set_path(&mut cfg.inputs.vocab, &corpus.vocab);
            set_path(&mut cfg.inputs.checkpoint, checkpoint);
            set_path(&mut cfg.inputs.test, test);
            if let Some(t) = task {
                cfg.experiment.task = parse_task(t)?;
            }
        }
        Command::Experiment { task, scope, .. } => {
            if let Some(t) = task {
                cfg.experiment.task = parse_task(t)?;
            }
            if let Some(s) = scope {
                cfg.finetune.scope = parse_scope(s)?;
            }
        }
    }
    let cfg = cfg.resolve();
    cfg.validate().map_err(|e| CliError::invalid("CONFIG_INVALID", e))?;
    Ok(cfg)
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn create(dir: &Path) -> Result<Out, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime("IO", format!("{}: {e}", dir.display())))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::runtime("IO", format!("{}: {e}", p.display())))
    }
}

fn read_input(path: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::invalid("INPUT_NOT_FOUND", path.to_string())
        } else {
            CliError::runtime("IO", format!("{path}: {e}"))
        }
    })
}

fn read_input_bytes(path: &str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::invalid("INPUT_NOT_FOUND", path.to_string())
        } else {
            CliError::runtime("IO", format!("{path}: {e}"))
        }
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Documents of a corpus file: blocks separated by blank lines; a block with
/// link markup is a wiki document, any other block a web document.
pub fn parse_corpus(text: &str) -> Result<Vec<Document>, DataError> {
    let mut docs = Vec::new();
    let mut block = String::new();
    let flush = |block: &mut String, docs: &mut Vec<Document>| -> Result<(), DataError> {
        let b = block.trim();
        if !b.is_empty() {
            let stream = if b.contains("[[") { StreamTag::Wiki } else { StreamTag::Web };
            docs.push(parse_markup(b, stream)?);
        }
        block.clear();
        Ok(())
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block, &mut docs)?;
        } else {
            if !block.is_empty() {
                block.push('\n');
            }
            block.push_str(line);
        }
    }
    flush(&mut block, &mut docs)?;
    Ok(docs)
}

fn documents(cfg: &RunConfig) -> Result<Vec<Document>, CliError> {
    let docs = match &cfg.inputs.corpus {
        Some(p) => parse_corpus(&read_input(p)?)?,
        None => corpus_documents(&gen_synthetic_corpus(&cfg.data.corpus)?)?,
    };
    if docs.is_empty() {
        return Err(CliError::runtime("DATA", "corpus has no documents"));
    }
    Ok(docs)
}

fn vocabulary(cfg: &RunConfig, docs: Option<&[Document]>) -> Result<Vocab, CliError> {
    if let Some(p) = &cfg.inputs.vocab {
        return read_vocab(&read_input(p)?).map_err(|e| CliError::runtime("DATA", format!("{p}: {e}")));
    }
    let owned;
    let docs = match docs {
        Some(d) => d,
        None => {
            owned = documents(cfg)?;
            &owned
        }
    };
    build_vocab(docs.iter().map(|d| d.plain.as_str()), cfg.tokenizer.vocab_size)
        .map_err(|e| CliError::runtime("DATA", e.to_string()))
}

fn model_for(cfg: &RunConfig, vocab: &Vocab) -> Result<Model, CliError> {
    if let Some(p) = &cfg.inputs.checkpoint {
        let model = load_checkpoint(&read_input_bytes(p)?)?;
        if model.config().vocab_size != vocab.len() {
            return Err(CliError::invalid(
                "CONFIG_INVALID",
                format!("checkpoint vocabulary {} differs from vocabulary {}", model.config().vocab_size, vocab.len()),
            ));
        }
        return Ok(model);
    }
    if let Some(n) = cfg.model.vocab_size {
        if n != vocab.len() {
            return Err(CliError::invalid(
                "CONFIG_INVALID",
                format!("model.vocab_size {n} differs from vocabulary size {}", vocab.len()),
            ));
        }
    }
    Ok(init_model(&cfg.model.to_config(vocab.len()), cfg.master_seed)?)
}

/// Encodes a task file into CV items.
fn task_items(path: &str, task: Task, vocab: &Vocab, max_len: usize, seed: u64) -> Result<Vec<CvItem>, CliError> {
    let text = read_input(path)?;
    let bad = |e: crate::jsonl::JsonlError| CliError::runtime("DATA", format!("{path}: {e}"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = match task {
        Task::Ct => read_jsonl::<CtExample>(&text)
            .map_err(bad)?
            .into_iter()
            .map(|ex| {
                Ok(CvItem {
                    example: encode_ct(&ex, vocab, max_len)?,
                    text: ex.query,
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?,
        Task::Ad => read_jsonl::<AdExample>(&text)
            .map_err(bad)?
            .into_iter()
            .map(|ex| {
                Ok(CvItem {
                    example: encode_ad(&ex, vocab, max_len, Segmentation::Viterbi, &mut rng)?,
                    text: format!("{} {}", ex.acronym, ex.snippet),
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?,
    };
    if items.is_empty() {
        return Err(CliError::runtime("DATA", format!("{path}: no records")));
    }
    Ok(items)
}

fn build_vocab_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let docs = documents(cfg)?;
    let vocab = build_vocab(docs.iter().map(|d| d.plain.as_str()), cfg.tokenizer.vocab_size)
        .map_err(|e| CliError::runtime("DATA", e.to_string()))?;
    out.write("vocab.txt", write_vocab(&vocab))?;
    Ok(vec![format!("vocab: {} pieces from {} documents", vocab.len(), docs.len())])
}

fn gen_data_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let corpus = gen_synthetic_corpus(&cfg.data.corpus)?;
    let docs = corpus_documents(&corpus)?;
    let vocab = vocabulary(cfg, Some(&docs))?;
    let pre = PretrainCorpus::build(&docs, vocab.clone(), cfg.data.encoding.clone())?;
    let (ct_pool, ct_test) = gen_ct_datasets(
        &corpus.lexicon,
        cfg.data.ct_pool,
        cfg.data.ct_test,
        derive_seed(cfg.master_seed, 11),
    )?;
    let ad = gen_ad_dataset(&corpus.lexicon, cfg.data.ad_snippets, derive_seed(cfg.master_seed, 12))?;
    let text: Vec<&str> = corpus.wiki.iter().chain(&corpus.web).map(String::as_str).collect();
    out.write("corpus.txt", text.join("\n\n") + "\n")?;
    out.write("lexicon.json", to_json(&corpus.lexicon))?;
    out.write("vocab.txt", write_vocab(&vocab))?;
    out.write("ct_pool.jsonl", write_jsonl(&ct_pool))?;
    out.write("ct_test.jsonl", write_jsonl(&ct_test))?;
    out.write("ad.jsonl", write_jsonl(&ad))?;
    out.write("pretrain_hyp.jsonl", write_jsonl(&pre.hyp))?;
    out.write("pretrain_pad.jsonl", write_jsonl(&pre.pad))?;
    Ok(vec![format!(
        "data: {} documents, {} CT pool / {} CT test / {} AD records, {} link / {} acronym pretraining examples",
        docs.len(),
        ct_pool.len(),
        ct_test.len(),
        ad.len(),
        pre.hyp.len(),
        pre.pad.len()
    )])
}

fn pretrain_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let docs = documents(cfg)?;
    let vocab = vocabulary(cfg, Some(&docs))?;
    let pre = PretrainCorpus::build(&docs, vocab.clone(), cfg.data.encoding.clone())?;
    let model = model_for(cfg, &vocab)?;
    let res = pretrain(model, &pre, &cfg.pretrain)?;
    out.write("vocab.txt", write_vocab(&vocab))?;
    out.write("model.ckpt", save_checkpoint(&res.model))?;
    out.write("loss.tsv", loss_log(&res.log))?;
    Ok(vec![format!("pretrained {} steps on {} examples", res.steps, res.examples)])
}

fn finetune_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let task = cfg.experiment.task;
    let train = cfg
        .inputs
        .train
        .as_deref()
        .ok_or_else(|| CliError::invalid("USAGE", "finetune needs --train (or inputs.train)"))?;
    if cfg.finetune.multitask_finetune {
        return Err(CliError::invalid(
            "CONFIG_INVALID",
            "multitask finetuning needs both task sets; the finetune command takes one",
        ));
    }
    let vocab = vocabulary(cfg, None)?;
    let model = model_for(cfg, &vocab)?;
    let max_len = cfg.data.encoding.max_seq_len;
    let seed = derive_seed(cfg.master_seed, 13);
    let pool = task_items(train, task, &vocab, max_len, seed)?;
    let test = match &cfg.inputs.test {
        Some(p) => task_items(p, task, &vocab, max_len, derive_seed(seed, 1))?,
        None => Vec::new(),
    };
    let mut cv = cfg.experiment.cv.clone();
    cv.mode = if test.is_empty() {
        SplitMode::Standard
    } else if task == Task::Ct {
        SplitMode::CtDisjoint
    } else {
        return Err(CliError::invalid("USAGE", "--test applies to the CT task only"));
    };
    let report = cross_validate(&model, &CvData { pool, test }, task, &cv, &cfg.finetune)?;
    out.write("cv_report.json", to_json(&report))?;
    let a = &report.aggregate;
    Ok(vec![format!(
        "{task}: {} runs, accuracy {:.4} +- {:.4}, perplexity {:.4} +- {:.4}",
        report.runs.len(),
        a.accuracy.mean,
        a.accuracy.std,
        a.perplexity.mean,
        a.perplexity.std
    )])
}

fn evaluate_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let task = cfg.experiment.task;
    let test = cfg
        .inputs
        .test
        .as_deref()
        .ok_or_else(|| CliError::invalid("USAGE", "evaluate needs --test (or inputs.test)"))?;
    let vocab = vocabulary(cfg, None)?;
    let model = model_for(cfg, &vocab)?;
    let items = task_items(test, task, &vocab, cfg.data.encoding.max_seq_len, derive_seed(cfg.master_seed, 13))?;
    let examples: Vec<_> = items.into_iter().map(|i| i.example).collect();
    let m = evaluate(&model, &examples, task)?;
    out.write("metrics.json", to_json(&m))?;
    Ok(vec![format!(
        "{task}: accuracy {:.4}, perplexity {:.4} over {} labels",
        m.accuracy, m.perplexity, m.n_labels
    )])
}

#[derive(serde::Serialize)]
struct GradCheckSummary {
    max_rel_err: f64,
    max_abs_err: f64,
    max_excess: f64,
    checked: usize,
    tolerance: f64,
    pass: bool,
}

fn gradcheck_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let vocab_size = cfg.model.vocab_size.unwrap_or(cfg.tokenizer.vocab_size);
    let r = grad_check(&cfg.model.to_config(vocab_size), cfg.master_seed, GRADCHECK_TOL)?;
    let pass = r.max_rel_err < GRADCHECK_TOL;
    out.write(
        "gradcheck.json",
        to_json(&GradCheckSummary {
            max_rel_err: r.max_rel_err,
            max_abs_err: r.max_abs_err,
            max_excess: r.max_excess,
            checked: r.checked,
            tolerance: GRADCHECK_TOL,
            pass,
        }),
    )?;
    let line = format!("max_rel_err={:e} checked={} {}", r.max_rel_err, r.checked, if pass { "PASS" } else { "FAIL" });
    if !pass {
        return Err(CliError::runtime("GRADCHECK_FAILED", line));
    }
    Ok(vec![line])
}

fn experiment_cmd(cfg: &RunConfig, out: &Out) -> Result<Vec<String>, CliError> {
    let report = run_alignment_experiment(&cfg.experiment_config(), &mut |s| eprintln!("{s}"))?;
    out.write("experiment_report.json", to_json(&report))?;
    for arm in &report.arms {
        out.write(&format!("loss_{}.tsv", arm.name), loss_log(&arm.loss_log))?;
        for s in &arm.sizes {
            out.write(&format!("cv_{}_{}.json", arm.name, s.size), to_json(&s.report))?;
        }
    }
    let names: Vec<String> = report.arms.iter().map(|a| a.name.clone()).collect();
    out.write("ordering.tsv", ordering_matrix(&names, &report.diffs))?;
    let mut lines = Vec::new();
    for arm in &report.arms {
        for s in &arm.sizes {
            let a = &s.report.aggregate;
            lines.push(format!(
                "{} size {}: accuracy {:.4} +- {:.4}, perplexity {:.4} +- {:.4}",
                arm.name, s.size, a.accuracy.mean, a.accuracy.std, a.perplexity.mean, a.perplexity.std
            ));
        }
    }
    Ok(lines)
}

/// Runs a parsed command; returns the lines to print on success.
pub fn execute(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = resolve_config(&cli.command)?;
    let out = Out::create(&cli.command.common().out)?;
    out.write(RESOLVED_CONFIG, cfg.to_json())?;
    match &cli.command {
        Command::BuildVocab { .. } => build_vocab_cmd(&cfg, &out),
        Command::GenData { .. } => gen_data_cmd(&cfg, &out),
        Command::Pretrain { .. } => pretrain_cmd(&cfg, &out),
        Command::Finetune { .. } => finetune_cmd(&cfg, &out),
        Command::Evaluate { .. } => evaluate_cmd(&cfg, &out),
        Command::Gradcheck { .. } => gradcheck_cmd(&cfg, &out),
        Command::Experiment { .. } => experiment_cmd(&cfg, &out),
    }
}

/// Parses `args` (program name first), runs the command and reports.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", CliError::invalid("USAGE", first.trim_start_matches("error: ")).line());
            return ExitCode::from(1);
        }
    };
    match execute(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit)
        }
    }
}
