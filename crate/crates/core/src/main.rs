use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use afdsc::corpus::{
    generate_mixed_probe, generate_synthetic_corpus, load_asc_file, load_corpus_with, load_queries,
    synthetic_lexicon, write_asc_file, write_corpus, Domain, LabeledQuery, Lexicon, LoadOptions,
    SynthConfig,
};
use afdsc::eval::{
    compare_poolers, cross_domain, evaluate, format_table, run_ablation, ResultsFile, SeedReport,
    Variant,
};
use afdsc::trainer::{load_checkpoint, save_checkpoint, write_metrics_csv, Trainer};
use afdsc::{Document, Error, Pooling, Result, TrainConfig};

#[derive(Parser)]
#[command(
    name = "afdsc",
    version,
    about = "Zero-shot aspect sentiment from document ratings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, held-out aspect queries and a mixed-polarity probe.
    Synth(SynthArgs),
    /// Train a model on a rated JSONL corpus.
    Train(TrainArgs),
    /// Score a checkpoint on labeled aspect queries.
    Eval(EvalArgs),
    /// Predict aspect polarities for query spans.
    Predict(PredictArgs),
    /// Train and evaluate the objective ablations.
    Ablate(ExperimentArgs),
    /// Train and evaluate each document pooling strategy.
    Poolers(ExperimentArgs),
    /// Train on one domain, evaluate on another.
    Crossdomain(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Restaurant,
    Electronics,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Restaurant => Domain::Restaurant,
            DomainArg::Electronics => Domain::Electronics,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    PosAtt,
    Cls,
    Avg,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::PosAtt => Pooling::PosAttention,
            PoolingArg::Cls => Pooling::Cls,
            PoolingArg::Avg => Pooling::Avg,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    num_docs: usize,
    #[arg(long, default_value_t = 1000)]
    num_queries: usize,
    #[arg(long, default_value_t = 1)]
    min_aspects: usize,
    #[arg(long, default_value_t = 3)]
    max_aspects: usize,
    #[arg(long, value_enum, default_value_t = DomainArg::Restaurant)]
    domain: DomainArg,
    /// Documents in the mixed-polarity probe (two queries each).
    #[arg(long, default_value_t = 300)]
    mixed_docs: usize,
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON file mirroring the training config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named starting point: desk, paper-2ep, paper-3ep.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    #[arg(long)]
    no_wsp: bool,
    #[arg(long)]
    no_mwp: bool,
    #[arg(long)]
    no_pos_mask: bool,
    /// Positive and negative opinion word lists used to fill missing `lex`.
    #[arg(long, requires = "negative_lexicon")]
    positive_lexicon: Option<PathBuf>,
    #[arg(long, requires = "positive_lexicon")]
    negative_lexicon: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            (None, Some(name)) => TrainConfig::preset(name)?,
            (None, None) => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.dropout {
            cfg.model.dropout_rate = v;
        }
        if let Some(p) = self.pooling {
            cfg.pooling = p.into();
        }
        cfg.use_wsp &= !self.no_wsp;
        cfg.use_mwp &= !self.no_mwp;
        cfg.use_pos_mask &= !self.no_pos_mask;
        cfg.validate()?;
        Ok(cfg)
    }

    fn lexicon(&self) -> Result<Option<Lexicon>> {
        match (&self.positive_lexicon, &self.negative_lexicon) {
            (Some(p), Some(n)) => Ok(Some(Lexicon::load(p, n)?)),
            _ => Ok(None),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Rated JSONL corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint (its config is used; flags are ignored).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Labeled aspect queries (JSONL).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Aspect queries (JSONL); `polarity` is not required.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Rated JSONL training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Labeled aspect queries (JSONL).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Subset of full, -wsp, -mwp, -pos_mask (ablate only).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    variants: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(out: &mut dyn Write, rows: &[T], path: &Path) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut *out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn load_training(args: &ConfigArgs, cfg: &TrainConfig, corpus: &Path) -> Result<Vec<Document>> {
    let lexicon = args.lexicon()?;
    let opts = LoadOptions {
        rules: cfg.aspect_rules.clone(),
        lexicon: lexicon.as_ref(),
    };
    load_corpus_with(corpus, &opts)
}

fn load_labeled(cfg: &TrainConfig, path: &Path) -> Result<Vec<LabeledQuery>> {
    let opts = LoadOptions {
        rules: cfg.aspect_rules.clone(),
        lexicon: None,
    };
    load_asc_file(path, &opts)
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_docs: args.num_docs,
        num_queries: args.num_queries,
        min_aspects: args.min_aspects,
        max_aspects: args.max_aspects,
        domain: args.domain.into(),
        seed: args.seed,
    };
    let corpus = generate_synthetic_corpus(&cfg)?;
    create_dir(&args.out)?;
    write_corpus(&args.out.join("train.jsonl"), &corpus.documents())?;
    write_asc_file(&args.out.join("heldout.jsonl"), &corpus.heldout)?;
    let mixed = generate_mixed_probe(args.mixed_docs, cfg.domain, args.seed);
    write_asc_file(&args.out.join("mixed.jsonl"), &mixed)?;
    synthetic_lexicon().write(
        &args.out.join("positive.txt"),
        &args.out.join("negative.txt"),
    )?;
    write_json(&args.out.join("synth_config.json"), &cfg)
}

fn train(args: TrainArgs) -> Result<()> {
    create_dir(&args.out)?;
    let mut trainer = match &args.resume {
        Some(ckpt) => {
            let state = load_checkpoint(ckpt)?;
            let docs = load_training(&args.config, &state.config, &args.corpus)?;
            Trainer::from_state(&docs, state)?
        }
        None => {
            let cfg = args.config.resolve()?;
            let docs = load_training(&args.config, &cfg, &args.corpus)?;
            Trainer::new(&docs, cfg)?
        }
    };
    write_json(&args.out.join("config.json"), &trainer.state().config)?;
    trainer.run()?;
    write_metrics_csv(&args.out.join("metrics.csv"), trainer.log())?;
    write_json(&args.out.join("epochs.json"), &trainer.epoch_metrics())?;
    save_checkpoint(trainer.state(), &args.out.join("checkpoint.json"))
}

fn print_reports(reports: &[SeedReport], format: Format) -> Result<()> {
    match format {
        Format::Table => print!("{}", format_table(reports)),
        Format::Json => println!("{}", serde_json::to_string_pretty(reports)?),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let state = load_checkpoint(&args.ckpt)?;
    let queries = load_labeled(&state.config, &args.queries)?;
    let (result, predictions) = evaluate(&state.model, &state.vocab, &queries)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &state.config)?;
    let report = SeedReport::from_runs("eval", vec![state.config.seed], vec![result]);
    write_json(
        &args.out.join("results.json"),
        &ResultsFile::new(&state.config, vec![report.clone()]),
    )?;
    let path = args.out.join("predictions.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_jsonl(&mut std::io::BufWriter::new(file), &predictions, &path)?;
    print_reports(&[report], args.format)
}

fn predict(args: PredictArgs) -> Result<()> {
    let state = load_checkpoint(&args.ckpt)?;
    let opts = LoadOptions {
        rules: state.config.aspect_rules.clone(),
        lexicon: None,
    };
    let queries = load_queries(&args.input, &opts)?;
    let predictions = queries
        .iter()
        .map(|q| state.model.predict_aspect_polarity(&state.vocab, q))
        .collect::<Result<Vec<_>>>()?;
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
                write_json(&dir.join("config.json"), &state.config)?;
            }
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write_jsonl(&mut std::io::BufWriter::new(file), &predictions, path)
        }
        None => write_jsonl(
            &mut std::io::stdout().lock(),
            &predictions,
            Path::new("<stdout>"),
        ),
    }
}

enum Experiment {
    Ablate,
    Poolers,
    CrossDomain,
}

fn experiment(kind: Experiment, args: ExperimentArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let docs = load_training(&args.config, &cfg, &args.corpus)?;
    let queries = load_labeled(&cfg, &args.queries)?;
    create_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    let reports = match kind {
        Experiment::Ablate => {
            let variants = match &args.variants {
                Some(names) => names
                    .iter()
                    .map(|n| Variant::parse(n))
                    .collect::<Result<Vec<_>>>()?,
                None => Variant::ALL.to_vec(),
            };
            run_ablation(&docs, &queries, &cfg, &variants, &args.seeds)?
        }
        Experiment::Poolers => compare_poolers(
            &docs,
            &queries,
            &cfg,
            &[Pooling::PosAttention, Pooling::Cls, Pooling::Avg],
            &args.seeds,
        )?,
        Experiment::CrossDomain => vec![cross_domain(&docs, &queries, &cfg, &args.seeds)?],
    };
    write_json(
        &args.out.join("results.json"),
        &ResultsFile::new(&cfg, reports.clone()),
    )?;
    print_reports(&reports, args.format)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Ablate(a) => experiment(Experiment::Ablate, a),
        Command::Poolers(a) => experiment(Experiment::Poolers, a),
        Command::Crossdomain(a) => experiment(Experiment::CrossDomain, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
