//! Command-line front end: `hrt <generate|train|finetune|distill|translate|bench|eval>`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::bench::{bleu, measure_wps, sequence_accuracy, token_accuracy};
use crate::data::{generate_synthetic, Corpus, SyntheticSpec, SyntheticTask, TokenId, Vocabulary};
use crate::decoding::{DecodeMode, DecodeOptions, Workspace};
use crate::error::{Error, Result};
use crate::model::{InferenceModel, ModelConfig, Seq2Seq};
use crate::numerics::Scalar;
use crate::training::{distill_corpus, train_with, write_loss_csv, TaskMix, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "hrt", about = "Hybrid-regressive translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic parallel corpus and its vocabulary.
    Generate(GenerateArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training an AT checkpoint with the joint task mix.
    Finetune(FinetuneArgs),
    /// Replace corpus targets with a teacher's beam-search output.
    Distill(DistillArgs),
    /// Translate one sentence per line.
    Translate(TranslateArgs),
    /// Measure decoding speed (batch size 1).
    Bench(BenchArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskName {
    Copy,
    Reverse,
    MappedSwap,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "mapped-swap")]
    task: TaskName,
    #[arg(long, default_value_t = 50_000)]
    pairs: usize,
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 40)]
    max_len: usize,
    /// Regular (non-special) tokens.
    #[arg(long, default_value_t = 64)]
    regular: usize,
    #[arg(long, default_value_t = 0.3)]
    swap_prob: f64,
    /// Seed of the token map, kept apart from the sampling seed so train
    /// and test sets can share a map.
    #[arg(long, default_value_t = 7)]
    map_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    chunk_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pairs split off the end into `<out>.test`.
    #[arg(long, default_value_t = 0)]
    heldout: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab_out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainShared {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// File of `key=value` lines setting model and training fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single `key=value` override, applied after `--config`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Loss trace CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    shared: TrainShared,
    /// Train the plain autoregressive baseline instead of the joint mix.
    #[arg(long)]
    at_only: bool,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    shared: TrainShared,
    /// AT checkpoint to start from.
    #[arg(long)]
    init: PathBuf,
}

#[derive(Args, Debug)]
struct DistillArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 0.6)]
    length_penalty: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeName {
    At,
    Hrt,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum, default_value = "hrt")]
    mode: ModeName,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    b_at: usize,
    #[arg(long, default_value_t = 1)]
    b_nat: usize,
    #[arg(long, default_value_t = 0.6)]
    length_penalty: f64,
    /// Output length cap; defaults to the model's.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[command(flatten)]
    decode: DecodeArgs,
    /// One sentence per line; a tab-separated corpus uses its source side.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-sentence JSON lines with scores and call counts.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Report JSON file; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    /// One reference per line; a tab-separated corpus uses its target side.
    #[arg(long)]
    r#ref: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => {
            let tasks = if a.at_only { TaskMix::AtOnly } else { TaskMix::Joint };
            train_cmd(a.shared, None, tasks)
        }
        Command::Finetune(a) => train_cmd(a.shared, Some(a.init), TaskMix::Joint),
        Command::Distill(a) => distill(a),
        Command::Translate(a) => match a.decode.precision {
            Precision::F32 => translate::<f32>(a),
            Precision::F64 => translate::<f64>(a),
        },
        Command::Bench(a) => match a.decode.precision {
            Precision::F32 => bench::<f32>(a),
            Precision::F64 => bench::<f64>(a),
        },
        Command::Eval(a) => eval(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let task = match a.task {
        TaskName::Copy => SyntheticTask::Copy,
        TaskName::Reverse => SyntheticTask::Reverse,
        TaskName::MappedSwap => SyntheticTask::mapped_swap(a.regular, a.swap_prob, a.map_seed),
    };
    let spec = SyntheticSpec {
        task,
        n_pairs: a.pairs + a.heldout,
        lengths: a.min_len..=a.max_len,
        vocab_size: a.regular + 4 + a.chunk_sizes.len(),
        chunk_sizes: a.chunk_sizes,
        max_len: a.max_len.max(SyntheticSpec::default().max_len),
        seed: a.seed,
    };
    let corpus = generate_synthetic(&spec)?;
    corpus.vocab.save(&a.vocab_out)?;
    let (train, test) = corpus.split_tail(a.heldout);
    train.save(&a.out)?;
    if !test.is_empty() {
        test.save(with_suffix(&a.out, "test"))?;
    }
    eprintln!("wrote {} pairs to {}", train.len(), a.out.display());
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads `key=value` lines; `#` starts a comment.
fn parse_settings(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::MalformedLine {
            line: i + 1,
            reason: "expected key=value".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Overlays `settings` on the serialized `base`, rejecting unknown keys.
fn apply_settings<T: serde::Serialize + DeserializeOwned>(base: &T, settings: &[(String, String)]) -> Result<T> {
    let mut obj: Map<String, Value> = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    };
    for (k, v) in settings {
        if !obj.contains_key(k) {
            continue;
        }
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()));
        obj.insert(k.clone(), value);
    }
    Ok(serde_json::from_value(Value::Object(obj))?)
}

fn load_settings(shared: &TrainShared) -> Result<Vec<(String, String)>> {
    let mut settings = match &shared.config {
        Some(p) => parse_settings(&fs::read_to_string(p).map_err(|e| Error::file(p, e))?)?,
        None => Vec::new(),
    };
    for o in &shared.overrides {
        settings.extend(parse_settings(o)?);
    }
    let model_keys = serde_json::to_value(ModelConfig::default())?;
    let train_keys = serde_json::to_value(TrainConfig::default())?;
    for (k, _) in &settings {
        if model_keys.get(k).is_none() && train_keys.get(k).is_none() {
            return Err(Error::InvalidConfig(format!("unknown setting {k:?}")));
        }
    }
    Ok(settings)
}

fn train_cmd(shared: TrainShared, init: Option<PathBuf>, tasks: TaskMix) -> Result<()> {
    let corpus = Corpus::load_with_vocab(&shared.corpus, &shared.vocab)?;
    let settings = load_settings(&shared)?;
    let mut cfg: TrainConfig = apply_settings(&TrainConfig::default(), &settings)?;
    cfg.tasks = tasks;
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    let mut model = match &init {
        Some(p) => Seq2Seq::load(p)?,
        None => {
            let config: ModelConfig = apply_settings(&ModelConfig::for_vocab(&corpus.vocab), &settings)?;
            Seq2Seq::new(config, cfg.seed)?
        }
    };
    eprintln!(
        "training {} parameters on {} pairs for {} steps",
        model.num_parameters(),
        corpus.len(),
        cfg.steps
    );
    let every = shared.log_every.max(1);
    let trace = train_with(&mut model, &corpus, &cfg, |r| {
        if (r.step + 1) % every == 0 {
            eprintln!("step {:>6}  loss {:.4}  p_k {:.3}  lr {:.2e}", r.step + 1, r.loss, r.p_k, r.lr);
        }
    })?;
    model.save(&shared.out)?;
    if let Some(p) = &shared.loss_csv {
        write_loss_csv(p, &trace)?;
    }
    Ok(())
}

fn distill(a: DistillArgs) -> Result<()> {
    let corpus = Corpus::load_with_vocab(&a.corpus, &a.vocab)?;
    let teacher = InferenceModel::<f32>::from_model(&Seq2Seq::load(&a.teacher)?);
    let (out, report) = distill_corpus(&teacher, &corpus, a.beam, a.length_penalty)?;
    out.save(&a.out)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn decode_options(a: &DecodeArgs) -> Result<DecodeOptions> {
    let mode = match a.mode {
        ModeName::At => DecodeMode::At,
        ModeName::Hrt => DecodeMode::Hrt { k: a.k },
    };
    if a.b_nat < 1 || a.b_at < a.b_nat {
        return Err(Error::BeamOrder {
            b_at: a.b_at,
            b_nat: a.b_nat,
        });
    }
    Ok(DecodeOptions {
        mode,
        b_at: a.b_at,
        b_nat: a.b_nat,
        length_penalty: a.length_penalty,
        max_len: a.max_len,
    })
}

/// Source sentences of a plain or tab-separated file.
fn read_sources(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| vocab.encode(l.split('\t').next().unwrap_or(""), i + 1))
        .collect()
}

fn load_inference<T: Scalar>(a: &DecodeArgs) -> Result<(InferenceModel<T>, Vocabulary)> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = Seq2Seq::load(&a.checkpoint)?;
    model.config().check_vocab(&vocab)?;
    Ok((InferenceModel::from_model(&model), vocab))
}

fn translate<T: Scalar>(a: TranslateArgs) -> Result<()> {
    let (model, vocab) = load_inference::<T>(&a.decode)?;
    let opts = decode_options(&a.decode)?;
    let sources = read_sources(&a.input, &vocab)?;
    let mut ws = Workspace::new(model.config(), opts.b_at, opts.b_nat)?;
    let create = |p: &Path| fs::File::create(p).map(BufWriter::new).map_err(|e| Error::file(p, e));
    let mut out = create(&a.output)?;
    let mut trace = a.trace.as_deref().map(create).transpose()?;
    let mut tokens = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let stats = ws.translate_into(&model, src, &opts, &mut tokens)?;
        writeln!(out, "{}", vocab.decode(&tokens))?;
        if let Some(t) = trace.as_mut() {
            let mut v = serde_json::to_value(stats)?;
            v["line"] = (i + 1).into();
            v["output_len"] = tokens.len().into();
            writeln!(t, "{v}")?;
        }
    }
    out.flush()?;
    if let Some(mut t) = trace {
        t.flush()?;
    }
    Ok(())
}

fn bench<T: Scalar>(a: BenchArgs) -> Result<()> {
    let (model, vocab) = load_inference::<T>(&a.decode)?;
    let opts = decode_options(&a.decode)?;
    let sources = read_sources(&a.input, &vocab)?;
    let name = a.input.file_name().map_or("input".into(), |n| n.to_string_lossy().into_owned());
    let (report, _) = measure_wps(&model, &name, &sources, &opts, a.runs)?;
    for r in &report.runs {
        println!("{}", serde_json::to_string(r)?);
    }
    let summary = serde_json::to_string(&report)?;
    println!("{summary}");
    eprintln!(
        "{:<12} {:>10} {:>10} {:>12} {:>14}",
        "dataset", "wps", "std", "latency_ms", "decoder_calls"
    );
    eprintln!(
        "{:<12} {:>10.1} {:>10.1} {:>12.3} {:>14}",
        report.dataset,
        report.wps_mean,
        report.wps_std,
        report.mean_latency * 1e3,
        report.decoder_calls
    );
    if let Some(p) = &a.out {
        fs::write(p, summary).map_err(|e| Error::file(p, e))?;
    }
    Ok(())
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text
        .lines()
        .map(|l| {
            let side = l.rsplit('\t').next().unwrap_or(l);
            side.split_whitespace().map(str::to_string).collect()
        })
        .collect())
}

fn eval(a: EvalArgs) -> Result<()> {
    let hyp = read_token_lines(&a.hyp)?;
    let refs = read_token_lines(&a.r#ref)?;
    let score = bleu(&hyp, &refs, 4)?;
    println!("{score:.2}");
    eprintln!(
        "sequence accuracy {:.4}  token accuracy {:.4}",
        sequence_accuracy(&hyp, &refs),
        token_accuracy(&hyp, &refs)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_overlay() {
        let s = parse_settings("steps = 7 # short\n\nwarmup=3\ntasks=atonly\nd_model=32\n").unwrap();
        let c: TrainConfig = apply_settings(&TrainConfig::default(), &s).unwrap();
        assert_eq!((c.steps, c.warmup, c.tasks), (7, 3, TaskMix::AtOnly));
        let m: ModelConfig = apply_settings(&ModelConfig::default(), &s).unwrap();
        assert_eq!(m.d_model, 32);
        assert!(parse_settings("novalue").is_err());
    }

    #[test]
    fn misuse_exits_nonzero() {
        let args = |v: &[&str]| v.iter().map(OsString::from).collect::<Vec<_>>();
        assert_eq!(run(args(&["hrt", "frobnicate"])), 2);
        assert_eq!(run(args(&["hrt", "eval", "--hyp", "/nonexistent/a", "--ref", "/nonexistent/b"])), 1);
    }
}
