//! The `beex` command line: experiment configuration, dataset plumbing and
//! one function per subcommand. The binary only parses and dispatches.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::SizeLedger;
use crate::binarize::Binarizer;
use crate::checkpoint::{self, Checkpoint, Dtype};
use crate::data::{self, Dataset, LabelSet, RawExample, TsvSchema};
use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::frozen::{Activation, FrozenModel, Kernel};
use crate::model::{BeexModel, LatentWeights, ModelConfig, ParamCounts, WeightSource};
use crate::report::{run_eval, sweep_delta, write_sweep_csv, Evaluation};
use crate::train::{
    train_with, EpochReport, ExitTraining, StepRecord, TrainConfig, TrainEvent, TrainOutcome,
};

pub const SEED_ENV: &str = "BEEX_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    KeywordSentiment,
    PairEntailment,
    Tsv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    pub source: DataSource,
    /// Synthetic split sizes. `eval_size = 0` evaluates on the dev split.
    pub train_size: usize,
    pub dev_size: usize,
    pub eval_size: usize,
    /// Generator seed for the synthetic corpora.
    pub seed: u64,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub schema: TsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: "keyword-sentiment".into(),
            source: DataSource::KeywordSentiment,
            train_size: 2000,
            dev_size: 500,
            eval_size: 500,
            seed: 7,
            train_path: None,
            dev_path: None,
            eval_path: None,
            schema: TsvSchema::default(),
        }
    }
}

pub struct RawSplits {
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
    pub eval: Vec<RawExample>,
}

impl DataConfig {
    pub fn load(&self) -> Result<RawSplits> {
        match self.source {
            DataSource::KeywordSentiment | DataSource::PairEntailment => {
                if self.train_size == 0 || self.dev_size == 0 {
                    return Err(Error::Config(
                        "train_size and dev_size must be positive".into(),
                    ));
                }
                let n = self.train_size + self.dev_size + self.eval_size;
                let all = match self.source {
                    DataSource::KeywordSentiment => data::keyword_sentiment(n, self.seed),
                    _ => data::pair_entailment(n, self.seed),
                };
                let (train, rest) = all.split_at(self.train_size);
                let (dev, eval) = rest.split_at(self.dev_size);
                let eval = if eval.is_empty() { dev } else { eval };
                Ok(RawSplits {
                    train: train.to_vec(),
                    dev: dev.to_vec(),
                    eval: eval.to_vec(),
                })
            }
            DataSource::Tsv => {
                let path = |p: &Option<PathBuf>, what: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(format!("tsv source needs data.{what}_path")))
                };
                let train = data::load_tsv(path(&self.train_path, "train")?, &self.schema)?;
                let dev = data::load_tsv(path(&self.dev_path, "dev")?, &self.schema)?;
                let eval = match &self.eval_path {
                    Some(p) => data::load_tsv(p, &self.schema)?,
                    None => dev.clone(),
                };
                Ok(RawSplits { train, dev, eval })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub deltas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            deltas: vec![1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

/// Everything one run needs, read from TOML or JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// `.json` files are parsed as JSON, anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "beex",
    version,
    about = "Binarized early-exit transformer encoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and label set from the training split.
    BuildVocab(Common),
    /// Train, then write latent and frozen checkpoints and a JSON-lines log.
    Train(Common),
    /// Evaluate a checkpoint: metric, exit histogram, FLOPs with and without early exit.
    Eval(EvalArgs),
    /// Metric and FLOPs for every δ in the sweep list.
    Sweep(EvalArgs),
    /// b(r) vs clip, no early exit, and no SLFN variants.
    Ablate(Common),
    /// Convert a latent checkpoint to packed sign bits.
    Freeze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint's (or a config's) architecture and size ledger.
    Inspect {
        #[arg(long, conflicts_with = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed and the BEEX_SEED environment variable.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `b2` or `clip`.
    #[arg(long)]
    pub binarizer: Option<String>,
    /// `literal` or `corrected`.
    #[arg(long)]
    pub slfn_rule: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Artifact directory.
    #[arg(long, default_value = "runs/default")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Defaults to `<out-dir>/frozen.beex`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run every block and only the final head.
    #[arg(long)]
    pub no_ee: bool,
    /// Evaluate on the unpacked float path instead of the packed kernel.
    #[arg(long, conflicts_with = "latent")]
    pub dense: bool,
    /// Evaluate the latent weights `b(W)` (defaults to `<out-dir>/latent.beex`).
    #[arg(long)]
    pub latent: bool,
}

impl Common {
    /// Config file plus flag and environment overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) => Some(
                s.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an integer")))?,
            ),
            Err(_) => None,
        };
        if let Some(seed) = self.seed.or(env_seed) {
            cfg.train.seed = seed;
        }
        if let Some(b) = &self.binarizer {
            cfg.model.binarizer = b.parse()?;
        }
        if let Some(r) = &self.slfn_rule {
            cfg.model.slfn_rule = r.parse()?;
        }
        if let Some(d) = self.delta {
            cfg.train.delta = d;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Encoded splits with the vocabulary and label set they were built with.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    pub train: Dataset,
    pub dev: Dataset,
    pub eval: Dataset,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = cfg.data.load()?;
    let vocab = data::build_vocabulary(&raw.train);
    let labels = LabelSet::infer(&raw.train);
    prepare_with(cfg, &raw, vocab, labels)
}

fn prepare_with(
    cfg: &ExperimentConfig,
    raw: &RawSplits,
    vocab: Vocabulary,
    labels: LabelSet,
) -> Result<Prepared> {
    if labels.len() < 2 {
        return Err(Error::Data(
            "training split has fewer than two labels".into(),
        ));
    }
    let n = &cfg.data.name;
    let max_len = cfg.model.max_len;
    Ok(Prepared {
        train: data::encode(&format!("{n}/train"), &raw.train, &vocab, &labels, max_len)?,
        dev: data::encode(&format!("{n}/dev"), &raw.dev, &vocab, &labels, max_len)?,
        eval: data::encode(&format!("{n}/eval"), &raw.eval, &vocab, &labels, max_len)?,
        vocab,
        labels,
    })
}

/// The model config with vocabulary size and class count filled in.
pub fn model_config(cfg: &ExperimentConfig, p: &Prepared) -> Result<ModelConfig> {
    let m = ModelConfig {
        vocab_size: p.vocab.len(),
        num_classes: p.labels.len(),
        ..cfg.model.clone()
    };
    m.validate()?;
    Ok(m)
}

const VOCAB_FILE: &str = "vocab.tsv";
const LABELS_FILE: &str = "labels.json";

fn write_vocab(dir: &Path, p: &Prepared) -> Result<()> {
    fs::create_dir_all(dir)?;
    p.vocab
        .write_tsv(BufWriter::new(File::create(dir.join(VOCAB_FILE))?))?;
    fs::write(
        dir.join(LABELS_FILE),
        serde_json::to_string_pretty(&p.labels)?,
    )?;
    Ok(())
}

fn read_vocab(dir: &Path) -> Result<(Vocabulary, LabelSet)> {
    let open = |name: &str| {
        File::open(dir.join(name))
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", dir.join(name).display())))
    };
    let vocab = Vocabulary::read_tsv(BufReader::new(open(VOCAB_FILE)?))?;
    let labels: LabelSet = serde_json::from_reader(BufReader::new(open(LABELS_FILE)?))
        .map_err(|e| Error::Data(format!("bad {LABELS_FILE}: {e}")))?;
    Ok((vocab, labels))
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochReport),
}

/// Trains on `p` and appends every step and epoch to `log`.
pub fn train_logged(
    cfg: &ExperimentConfig,
    p: &Prepared,
    mut log: impl Write,
    verbose: bool,
) -> Result<TrainOutcome> {
    let model = BeexModel::new(
        model_config(cfg, p)?,
        &mut ChaCha8Rng::seed_from_u64(cfg.train.seed),
    )?;
    let mut io_err = None;
    let out = train_with(model, &p.train, &p.dev, &cfg.train, |e| {
        let line = match e {
            TrainEvent::Step(s) => LogLine::Step(s),
            TrainEvent::Epoch(r) => {
                if verbose {
                    eprintln!(
                        "epoch {:>3}  loss {:.4}  dev {} {:.4}  lr {:.2e}",
                        r.epoch, r.train_loss, cfg.train.metric, r.dev_metric, r.learning_rate
                    );
                }
                LogLine::Epoch(r)
            }
        };
        if io_err.is_none() {
            if let Err(err) = serde_json::to_writer(&mut log, &line)
                .map_err(Error::from)
                .and_then(|_| log.write_all(b"\n").map_err(Error::from))
            {
                io_err = Some(err);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    log.flush()?;
    Ok(out)
}

fn load_frozen(path: &Path) -> Result<FrozenModel> {
    Ok(checkpoint::load(path)?.into_frozen())
}

fn write_evaluation(dir: &Path, stem: &str, ev: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.json")), ev.report.to_json()?)?;
    ev.report
        .write_csv(File::create(dir.join(format!("{stem}.csv")))?)?;
    ev.report
        .write_histogram_csv(File::create(dir.join(format!("{stem}_histogram.csv")))?)?;
    ev.write_traces(BufWriter::new(File::create(
        dir.join(format!("{stem}_traces.jsonl")),
    )?))?;
    Ok(())
}

fn print_report(ev: &Evaluation) {
    let r = &ev.report;
    let delta = r.delta.map_or("off".to_string(), |d| format!("{d:e}"));
    println!("dataset            {}", r.dataset);
    println!("samples            {}", r.samples);
    println!("early exit δ       {delta}");
    println!("{:<18} {:.4}", r.metric_name, r.metric);
    println!("mean exit depth    {:.3}", r.mean_exit_depth);
    println!("exit histogram     {:?}", r.exit_histogram);
    println!("params saved       {}", r.params_saved);
    println!(
        "GFLOPs EE / WEE    {:.6} / {:.6}",
        r.gflops_ee, r.gflops_wee
    );
    println!("FLOPs reduction    {:.2}%", r.reduction_percent);
}

fn cmd_build_vocab(args: &Common) -> Result<()> {
    let cfg = args.resolve()?;
    let p = prepare(&cfg)?;
    write_vocab(&args.out_dir, &p)?;
    println!(
        "{} tokens, {} labels -> {}",
        p.vocab.len(),
        p.labels.len(),
        args.out_dir.join(VOCAB_FILE).display()
    );
    Ok(())
}

fn cmd_train(args: &Common) -> Result<()> {
    let cfg = args.resolve()?;
    let p = prepare(&cfg)?;
    let dir = &args.out_dir;
    write_vocab(dir, &p)?;
    let log = BufWriter::new(File::create(dir.join("train_log.jsonl"))?);
    let out = train_logged(&cfg, &p, log, true)?;
    let resolved = ExperimentConfig {
        model: out.model.config.clone(),
        ..cfg.clone()
    };
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&resolved)?,
    )?;
    checkpoint::save_latent(&out.model, dir.join("latent.beex"), Dtype::F32)?;
    checkpoint::save_frozen(
        &FrozenModel::from_model(&out.model),
        dir.join("frozen.beex"),
    )?;
    println!(
        "best dev {} {:.4} at epoch {}; checkpoints in {}",
        cfg.train.metric,
        out.best_metric,
        out.best_epoch,
        dir.display()
    );
    Ok(())
}

fn eval_inputs(args: &EvalArgs) -> Result<(ExperimentConfig, Checkpoint, Dataset)> {
    let cfg = args.common.resolve()?;
    let dir = &args.common.out_dir;
    let default = if args.latent {
        "latent.beex"
    } else {
        "frozen.beex"
    };
    let path = args.checkpoint.clone().unwrap_or_else(|| dir.join(default));
    let ckpt = checkpoint::load(&path)?;
    let (vocab, labels) = read_vocab(dir)?;
    let raw = cfg.data.load()?;
    let cfg = ExperimentConfig {
        model: ckpt.config().clone(),
        ..cfg
    };
    let p = prepare_with(&cfg, &raw, vocab, labels)?;
    if p.vocab.len() != cfg.model.vocab_size {
        return Err(Error::Data(format!(
            "vocabulary has {} tokens, checkpoint expects {}",
            p.vocab.len(),
            cfg.model.vocab_size
        )));
    }
    Ok((cfg, ckpt, p.eval))
}

/// Runs `f` on the weights selected by `--latent` / `--dense`.
fn with_weights<T>(
    ckpt: &Checkpoint,
    args: &EvalArgs,
    f: impl FnOnce(&dyn WeightSource) -> Result<T>,
) -> Result<T> {
    if args.latent {
        return match ckpt {
            Checkpoint::Latent(m) => f(&LatentWeights::new(m)),
            Checkpoint::Frozen(_) => {
                Err(Error::Config("--latent needs a latent checkpoint".into()))
            }
        };
    }
    let kernel = if args.dense {
        Kernel::Dense
    } else {
        Kernel::Packed
    };
    let owned;
    let frozen = match ckpt {
        Checkpoint::Frozen(f) => f,
        Checkpoint::Latent(m) => {
            owned = FrozenModel::from_model(m);
            &owned
        }
    };
    f(&frozen.weights(kernel, Activation::Trained))
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (cfg, ckpt, data) = eval_inputs(args)?;
    let delta = (!args.no_ee).then_some(cfg.train.delta);
    let ev = with_weights(&ckpt, args, |w| run_eval(w, &data, delta, cfg.train.metric))?;
    let stem = match (args.latent, args.no_ee) {
        (false, false) => "eval",
        (false, true) => "eval_no_ee",
        (true, false) => "eval_latent",
        (true, true) => "eval_latent_no_ee",
    };
    write_evaluation(&args.common.out_dir, stem, &ev)?;
    print_report(&ev);
    Ok(())
}

fn cmd_sweep(args: &EvalArgs) -> Result<()> {
    let (cfg, ckpt, data) = eval_inputs(args)?;
    let rows = with_weights(&ckpt, args, |w| {
        sweep_delta(w, &data, &cfg.sweep.deltas, cfg.train.metric)
    })?;
    fs::create_dir_all(&args.common.out_dir)?;
    write_sweep_csv(&rows, File::create(args.common.out_dir.join("sweep.csv"))?)?;
    println!(
        "{:>10} {:>8} {:>10} {:>12} {:>10}",
        "delta", cfg.train.metric, "depth", "GFLOPs EE", "reduction"
    );
    for r in &rows {
        println!(
            "{:>10.0e} {:>8.4} {:>10.3} {:>12.6} {:>9.2}%",
            r.delta, r.metric, r.mean_exit_depth, r.gflops_ee, r.reduction_percent
        );
    }
    Ok(())
}

/// One ablation result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub metric: f64,
    pub mean_exit_depth: f64,
    pub reduction_percent: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// The configured model with `b(r)`.
    Base,
    Clip,
    /// Trained on the final exit only, evaluated at full depth.
    NoEarlyExit,
    NoSlfn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "b2",
            Variant::Clip => "clip",
            Variant::NoEarlyExit => "wee",
            Variant::NoSlfn => "wslfn",
        }
    }

    fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.model.binarizer = Binarizer::SecondOrder;
        match self {
            Variant::Base => {}
            Variant::Clip => c.model.binarizer = Binarizer::Clip,
            Variant::NoEarlyExit => c.train.exits = ExitTraining::FinalOnly,
            Variant::NoSlfn => c.model.use_slfn = false,
        }
        c
    }
}

/// Trains and evaluates each variant on the same splits.
pub fn ablate(
    cfg: &ExperimentConfig,
    p: &Prepared,
    variants: &[Variant],
    verbose: bool,
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let vc = v.apply(cfg);
            if verbose {
                eprintln!("variant {}", v.name());
            }
            let out = train_logged(&vc, p, std::io::sink(), verbose)?;
            let frozen = FrozenModel::from_model(&out.model);
            let delta = (v != Variant::NoEarlyExit).then_some(vc.train.delta);
            let w = frozen.weights(Kernel::Packed, Activation::Trained);
            let ev = run_eval(&w, &p.eval, delta, vc.train.metric)?;
            Ok(AblationRow {
                variant: v.name().to_string(),
                metric: ev.report.metric,
                mean_exit_depth: ev.report.mean_exit_depth,
                reduction_percent: ev.report.reduction_percent,
                best_epoch: out.best_epoch,
            })
        })
        .collect()
}

fn cmd_ablate(args: &Common) -> Result<()> {
    let cfg = args.resolve()?;
    let variants = match cfg.model.binarizer {
        Binarizer::Clip => vec![Variant::Base, Variant::Clip],
        Binarizer::SecondOrder => vec![
            Variant::Base,
            Variant::Clip,
            Variant::NoEarlyExit,
            Variant::NoSlfn,
        ],
    };
    let p = prepare(&cfg)?;
    let rows = ablate(&cfg, &p, &variants, true)?;
    fs::create_dir_all(&args.out_dir)?;
    let mut w = csv::Writer::from_path(args.out_dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!(
        "{:<8} {:>8} {:>8} {:>10}",
        "variant", cfg.train.metric, "depth", "reduction"
    );
    for r in &rows {
        println!(
            "{:<8} {:>8.4} {:>8.3} {:>9.2}%",
            r.variant, r.metric, r.mean_exit_depth, r.reduction_percent
        );
    }
    let get = |name: &str| rows.iter().find(|r| r.variant == name).map(|r| r.metric);
    if let (Some(b2), Some(clip)) = (get("b2"), get("clip")) {
        println!("clip ≤ b2: {}", clip <= b2);
    }
    Ok(())
}

fn cmd_freeze(checkpoint: &Path, out: &Path) -> Result<()> {
    let frozen = load_frozen(checkpoint)?;
    checkpoint::save_frozen(&frozen, out)?;
    let (_, ledger) = checkpoint::measure_size(out)?;
    println!(
        "{} ({} bytes payload)",
        out.display(),
        ledger.frozen_bytes()
    );
    Ok(())
}

fn print_size(config: &ModelConfig, ledger: &SizeLedger) -> Result<()> {
    let counts = ParamCounts::of(config)?;
    println!(
        "architecture       C={} D={} H={} D_h={} |V|={} m={} slfn={} ({})",
        config.blocks,
        config.model_dim(),
        config.heads,
        config.hidden_dim,
        config.vocab_size,
        config.num_classes,
        config.use_slfn,
        config.slfn_rule
    );
    println!("binarizer          {}", config.binarizer);
    println!("binary params      {}", counts.latent_total());
    println!("float params       {}", counts.full_precision_total());
    println!("latent bytes       {}", ledger.latent_bytes());
    println!("frozen bytes       {}", ledger.frozen_bytes());
    println!("ratio              {:.2}x", ledger.ratio());
    println!(
        "binary weights     {} bytes",
        ledger.binary_bits().div_ceil(8)
    );
    for (group, bits) in ledger.full_precision_breakdown() {
        println!("  {group:<16} {} bytes", bits / 8);
    }
    Ok(())
}

fn cmd_inspect(checkpoint: Option<&Path>, config: Option<&Path>) -> Result<()> {
    match (checkpoint, config) {
        (Some(path), _) => {
            let (header, ledger) = checkpoint::measure_size(path)?;
            println!("kind               {:?}", header.kind);
            println!(
                "file bytes         {}",
                checkpoint::container_bytes(&header)?
            );
            print_size(&header.config, &ledger)
        }
        (None, cfg) => {
            let cfg = match cfg {
                Some(p) => ExperimentConfig::from_file(p)?,
                None => ExperimentConfig::default(),
            };
            cfg.model.validate()?;
            print_size(&cfg.model, &SizeLedger::for_config(&cfg.model)?)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Freeze { checkpoint, out } => cmd_freeze(checkpoint, out),
        Command::Inspect { checkpoint, config } => {
            cmd_inspect(checkpoint.as_deref(), config.as_deref())
        }
    }
}
