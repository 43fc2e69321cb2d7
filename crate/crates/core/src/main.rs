use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgl_mha::data::{EmbeddingSource, Vocabulary};
use cgl_mha::model::predict;
use cgl_mha::tensor::{BackwardFault, OpKind};
use cgl_mha::train::{
    ablate, ablation_jsonl, ablation_table, baseline_rows, evaluate, gradcheck, load_split, load_trained,
    split_validation, cumulative_rows, train, GradcheckConfig, RunConfig,
};
use cgl_mha::{Error, Result};

#[derive(Parser)]
#[command(name = "cgl-mha", version, about = "Train and run the CNN/GRU/BiLSTM/attention sarcasm classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, vocabulary and logs.
    Train(RunArgs),
    /// Score a checkpoint on a labelled file.
    Evaluate(EvalArgs),
    /// Classify headlines given as arguments or one per line on stdin.
    Predict(PredictArgs),
    /// Train and evaluate the cumulative module ablation.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Also run the single-encoder baselines (CNN only, GRU only).
        #[arg(long)]
        baselines: bool,
    },
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_train: Option<PathBuf>,
    #[arg(long)]
    data_test: Option<PathBuf>,
    /// Word vectors, one `token v1 … vD` per line.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    no_cnn: bool,
    #[arg(long)]
    no_gru: bool,
    #[arg(long)]
    no_lstm: bool,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    no_pretrained: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(h) = self.heads {
            cfg.model.heads = h;
        }
        for (src, dst) in [
            (&self.data_train, &mut cfg.data_train),
            (&self.data_test, &mut cfg.data_test),
            (&self.embeddings, &mut cfg.embeddings),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir.clone_from(d);
        }
        cfg.model.use_cnn &= !self.no_cnn;
        cfg.model.use_gru &= !self.no_gru;
        cfg.model.use_lstm &= !self.no_lstm;
        cfg.model.use_attention &= !self.no_attention;
        cfg.use_pretrained &= !self.no_pretrained;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    data_test: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    texts: Vec<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Include gate biases in the recurrent cells.
    #[arg(long)]
    biases: bool,
    /// Test fixture: scale the backward rule of one op, e.g. `sigmoid:0.5`.
    #[arg(long, hide = true)]
    fault: Option<String>,
    #[arg(long)]
    json: bool,
}

fn vocab_path(checkpoint: &Path, vocab: &Option<PathBuf>) -> PathBuf {
    vocab
        .clone()
        .unwrap_or_else(|| checkpoint.with_file_name("vocab.txt"))
}

fn parse_fault(spec: &str) -> Result<BackwardFault> {
    let (op, factor) = spec
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("fault {spec:?} is not op:factor")))?;
    let factor = factor
        .parse()
        .map_err(|_| Error::Config(format!("bad fault factor {factor:?}")))?;
    Ok(BackwardFault {
        op: op.parse::<OpKind>()?,
        factor,
    })
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let (outcome, artifacts, test) = train(&cfg)?;
            println!(
                "best epoch {} of {}{}",
                outcome.best_epoch,
                outcome.log.len(),
                if outcome.stopped_early { " (stopped early)" } else { "" }
            );
            println!("checkpoint  {}", artifacts.checkpoint.display());
            println!("vocabulary  {}", artifacts.vocab.display());
            println!("log         {}", artifacts.log_text.display());
            if let Some(report) = test {
                println!("{report}");
            }
        }
        Command::Evaluate(args) => {
            let vocab = vocab_path(&args.checkpoint, &args.vocab);
            let report = evaluate(&args.checkpoint, &vocab, &args.data_test, args.batch_size)?;
            println!("{}", if args.json { json(&report) } else { report.to_string() });
        }
        Command::Predict(args) => {
            let vocab = vocab_path(&args.checkpoint, &args.vocab);
            let (model, vocab) = load_trained(&args.checkpoint, &vocab)?;
            let texts = if args.texts.is_empty() {
                std::io::stdin()
                    .lock()
                    .lines()
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(|e| Error::Data(format!("reading stdin: {e}")))?
            } else {
                args.texts
            };
            for (text, outcome) in texts.iter().zip(predict(&model, &vocab, &texts)?) {
                let record = match outcome {
                    Ok(p) => serde_json::json!({
                        "text": text,
                        "label": p.label,
                        "sarcastic": p.label == 1,
                        "probabilities": p.probabilities,
                    }),
                    Err(_) => serde_json::json!({ "text": text, "error": "unclassifiable: no tokens after normalization" }),
                };
                println!("{record}");
            }
        }
        Command::Ablate { run, baselines } => {
            let cfg = run.resolve()?;
            let train_set = load_split(cfg.data_train.as_deref(), "train")?;
            let test_set = load_split(cfg.data_test.as_deref(), "test")?;
            let embeddings = match &cfg.embeddings {
                Some(path) => {
                    let (train_part, _) = split_validation(&cfg, &train_set);
                    let vocab = Vocabulary::build(&train_part)?;
                    Some(EmbeddingSource::load(path, cfg.model.embed_dim, Some(&vocab))?)
                }
                None => None,
            };
            let mut rows = cumulative_rows();
            if baselines {
                rows.extend(baseline_rows());
            }
            let results = ablate(&cfg, &rows, &train_set, &test_set, embeddings.as_ref())?;
            let dir = &cfg.out_dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
            let table = ablation_table(&results);
            for (name, body) in [("ablation.jsonl", ablation_jsonl(&results)), ("ablation.txt", table.clone())] {
                let path = dir.join(name);
                std::fs::write(&path, body).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            }
            print!("{table}");
        }
        Command::Gradcheck(args) => {
            let mut cfg = GradcheckConfig {
                seed: args.seed,
                fault: args.fault.as_deref().map(parse_fault).transpose()?,
                ..GradcheckConfig::default()
            };
            cfg.model.seed = args.seed;
            cfg.model.biases_enabled = args.biases;
            let report = gradcheck(&cfg)?;
            print!("{}", if args.json { json(&report) + "\n" } else { report.text() });
            if !report.passed {
                eprintln!("gradient check failed for: {}", report.failing().join(", "));
                return Ok(3);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
