//! `tprcap` — synthetic caption corpora, tensor-product sequence
//! demos, captioner training, and metric scoring from one binary.
//!
//! Exit codes: 0 success, 1 usage or validation problems, 2 runtime
//! failures (I/O, corrupt files, numeric breakdown).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tprcap_core::captioner::{DecodeOptions, Model, ModelDims};
use tprcap_core::cell::{GActivation, VariantConfig};
use tprcap_core::checkpoint::{load_checkpoint, save_checkpoint};
use tprcap_core::data::{encode_dataset, Dataset, EncodedSample};
use tprcap_core::metrics::{bleu, cider_d, rouge_l, CorpusStats};
use tprcap_core::synth::{synth_generate, Grammar, SynthConfig};
use tprcap_core::tpr::{retrieval_experiment, RoleBasis};
use tprcap_core::trainer::{
    corpus_stats, grad_check, OptimizerKind, TrainConfig, Trainer,
};
use tprcap_core::vocab::Vocabulary;
use tprcap_core::{Error, Tensor};

const AFTER_HELP: &str = "Options resolve in three layers: built-in defaults, \
then entries from --config (a plain key=value file, one option per line, '#' \
comments), then explicit command-line flags. TPR_SEED in the environment \
stands in for --seed when neither layer sets it.";

#[derive(Parser)]
#[command(name = "tprcap", version, about = "Tensor-product caption toolkit", after_help = AFTER_HELP)]
struct Cli {
    /// Key=value file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic caption dataset as JSONL.
    GenData(GenDataArgs),
    /// Train a captioner (cross-entropy, then optional SCST epochs).
    Train(TrainArgs),
    /// Score a checkpoint's greedy captions against a dataset.
    Eval(EvalArgs),
    /// Decode captions for a dataset with a trained checkpoint.
    Caption(CaptionArgs),
    /// Score one candidate sentence against reference sentences.
    Metrics(MetricsArgs),
    /// Audit training gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Bind and retrieve random sequences; report exact-recovery rate.
    TprDemo(TprDemoArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output JSONL path.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Image-feature dimension.
    #[arg(long, default_value_t = 32)]
    k_v: usize,
    /// Gaussian noise scale on the feature vector.
    #[arg(long, default_value_t = 0.05)]
    feature_noise: f64,
    /// Uniform noise ceiling on the tag vector.
    #[arg(long, default_value_t = 0.1)]
    tag_noise: f64,
    #[arg(long, env = "TPR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Training-history JSONL path; omitted, history goes to stdout.
    #[arg(long, value_name = "PATH")]
    history: Option<PathBuf>,
    /// Samples held out for validation.
    #[arg(long, default_value_t = 8)]
    val: usize,
    /// Variant: e+t, h+t, h+e+t, e+dt, h+dt, or h+e+dt ("tpr"/"dtpr"
    /// spellings also accepted).
    #[arg(long, default_value = "e+dt")]
    variant: String,
    /// Role dimension; power of two, bounds caption length.
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Hidden-state size.
    #[arg(long, default_value_t = 64)]
    m: usize,
    /// Tag-factor activation: sigmoid or tanh.
    #[arg(long, default_value = "sigmoid")]
    g_activation: String,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    xe_epochs: usize,
    #[arg(long, default_value_t = 0)]
    scst_epochs: usize,
    /// Epochs without validation improvement before a phase stops.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// sgd or adam.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Policy share of the mixed SCST objective.
    #[arg(long, default_value_t = 0.7)]
    scst_weight: f64,
    /// Cross-entropy share of the mixed SCST objective.
    #[arg(long, default_value_t = 0.3)]
    xe_weight: f64,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, env = "TPR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset to score against (JSONL).
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Trained checkpoint.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
}

#[derive(Args)]
struct CaptionArgs {
    /// Dataset supplying features (JSONL).
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Trained checkpoint.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Beam width; omitted, decoding is greedy.
    #[arg(long, value_name = "WIDTH")]
    beam: Option<usize>,
    /// Caption at most this many samples.
    #[arg(long, value_name = "N")]
    limit: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Candidate sentence (whitespace-tokenized).
    #[arg(long)]
    candidate: String,
    /// Reference sentence; repeat for multiple references.
    #[arg(long, required = true)]
    reference: Vec<String>,
    /// JSONL dataset supplying CIDEr-D document frequencies. Without
    /// it the references form a one-document corpus, whose idf — and
    /// therefore CIDEr-D — is identically zero.
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Variant to audit, e.g. e+dtpr.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    k_v: usize,
    #[arg(long, default_value_t = 16)]
    k_s: usize,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    /// Random coordinates probed per tensor.
    #[arg(long, default_value_t = 32)]
    per_tensor: usize,
    /// Content tokens in the probe caption.
    #[arg(long, default_value_t = 5)]
    caption_len: usize,
    #[arg(long, env = "TPR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TprDemoArgs {
    /// Role dimension (power of two); also the sequence length.
    #[arg(long, default_value_t = 32)]
    d: usize,
    /// Token-table size.
    #[arg(long, default_value_t = 1000)]
    vocab: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, env = "TPR_SEED", default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let mut argv = Vec::new();
    for arg in std::env::args_os() {
        match arg.into_string() {
            Ok(s) => argv.push(s),
            Err(raw) => {
                eprintln!("error: argument {raw:?} is not valid UTF-8");
                return ExitCode::from(1);
            }
        }
    }
    run(argv)
}

fn run(argv: Vec<String>) -> ExitCode {
    let (argv, config_path) = match extract_config(argv) {
        Ok(pair) => pair,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let argv = match config_path {
        Some(path) => match expand_config(argv, &path) {
            Ok(expanded) => expanded,
            Err(msg) => {
                eprintln!("error: {msg}");
                return ExitCode::from(1);
            }
        },
        None => argv,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Validation-style failures exit 1; broken files, I/O, and numeric
/// breakdown exit 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Numeric(_) | Error::Corrupt(_) | Error::Version { .. } => 2,
        _ => 1,
    }
}

/// Pulls `--config PATH` (or `--config=PATH`) out of the raw argument
/// list so the file can be expanded before clap parses anything.
fn extract_config(argv: Vec<String>) -> Result<(Vec<String>, Option<String>), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            match it.next() {
                Some(value) => path = Some(value),
                None => return Err("--config needs a file path".into()),
            }
        } else if let Some(value) = arg.strip_prefix("--config=") {
            path = Some(value.to_string());
        } else {
            rest.push(arg);
        }
    }
    Ok((rest, path))
}

/// Turns each `key=value` line into `--key value` inserted right after
/// the subcommand. Keys the command line already sets are dropped, so
/// explicit flags win.
fn expand_config(argv: Vec<String>, path: &str) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {path}: {e}"))?;
    let explicit: Vec<String> = argv
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("config {path} line {}: expected key=value", i + 1));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("config {path} line {}: empty key", i + 1));
        }
        if explicit.iter().any(|e| *e == key) {
            continue;
        }
        flags.push(format!("--{key}"));
        flags.push(value.trim().to_string());
    }
    // The subcommand is the first bare word after the binary name.
    let at = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map(|(i, _)| i + 1);
    let mut out = argv;
    if let Some(at) = at {
        out.splice(at..at, flags);
    }
    Ok(out)
}

fn parse_variant(name: &str) -> Result<VariantConfig, Error> {
    let mut embedding = false;
    let mut hidden = false;
    let mut base = None;
    for part in name.to_ascii_lowercase().split('+') {
        match part.trim() {
            "e" => embedding = true,
            "h" => hidden = true,
            "t" | "tpr" => base = Some(false),
            "dt" | "dtpr" => base = Some(true),
            other => {
                return Err(Error::Validation(format!(
                    "unknown variant component {other:?} in {name:?}"
                )))
            }
        }
    }
    let config = VariantConfig {
        decompose_embedding: embedding,
        decompose_hidden: hidden,
        decompose_tpr: base.ok_or_else(|| {
            Error::Validation(format!("variant {name:?} names no t/dt base"))
        })?,
    };
    if VariantConfig::ALL.contains(&config) {
        Ok(config)
    } else {
        Err(Error::Validation(format!(
            "variant {name:?} is not one of e+t, h+t, h+e+t, e+dt, h+dt, h+e+dt"
        )))
    }
}

fn parse_activation(name: &str) -> Result<GActivation, Error> {
    match name.to_ascii_lowercase().as_str() {
        "sigmoid" => Ok(GActivation::Sigmoid),
        "tanh" => Ok(GActivation::Tanh),
        other => Err(Error::Validation(format!(
            "activation {other:?} is neither sigmoid nor tanh"
        ))),
    }
}

fn parse_optimizer(name: &str) -> Result<OptimizerKind, Error> {
    match name.to_ascii_lowercase().as_str() {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(Error::Validation(format!(
            "optimizer {other:?} is neither sgd nor adam"
        ))),
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Caption(args) => run_caption(args),
        Command::Metrics(args) => run_metrics(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::TprDemo(args) => run_tpr_demo(args),
    }
}

fn run_gen_data(args: GenDataArgs) -> Result<ExitCode, Error> {
    let config = SynthConfig {
        n_samples: args.n,
        k_v: args.k_v,
        feature_noise: args.feature_noise,
        tag_noise: args.tag_noise,
        seed: args.seed,
    };
    let dataset = synth_generate(&config, &Grammar::desk_default())?;
    let vocab = dataset.vocabulary()?;
    dataset.save(&args.out)?;
    println!(
        "wrote {} samples to {} ({} vocabulary tokens)",
        dataset.len(),
        args.out.display(),
        vocab.len()
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads a dataset and encodes it against its own corpus vocabulary.
fn load_encoded(path: &PathBuf) -> Result<(Dataset, Vocabulary, Vec<EncodedSample>), Error> {
    let dataset = Dataset::load(path)?;
    if dataset.is_empty() {
        return Err(Error::Validation(format!(
            "{} holds no samples",
            path.display()
        )));
    }
    let vocab = dataset.vocabulary()?;
    let encoded = encode_dataset(&dataset, &vocab)?;
    Ok((dataset, vocab, encoded))
}

fn check_model_fits(model: &Model, vocab: &Vocabulary, sample: &EncodedSample) -> Result<(), Error> {
    if vocab.len() != model.dims.vocab {
        return Err(Error::Validation(format!(
            "dataset vocabulary has {} tokens but the checkpoint expects {}; \
             use the corpus the model was trained on",
            vocab.len(),
            model.dims.vocab
        )));
    }
    model.check_feature(&sample.v, &sample.tags)
}

fn run_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let variant = parse_variant(&args.variant)?;
    let activation = parse_activation(&args.g_activation)?;
    let optimizer = parse_optimizer(&args.optimizer)?;

    let dataset = Dataset::load(&args.data)?;
    if dataset.is_empty() {
        return Err(Error::Validation(format!(
            "{} holds no samples",
            args.data.display()
        )));
    }
    dataset.validate_capacity(args.d)?;
    let vocab = dataset.vocabulary()?;
    let (train_split, val_split) = dataset.split(args.val, args.seed)?;
    let train_set = encode_dataset(&train_split, &vocab)?;
    let val_set = encode_dataset(&val_split, &vocab)?;

    let first = &dataset.samples[0];
    let dims = ModelDims {
        d: args.d,
        m: args.m,
        k_v: first.v.len(),
        k_s: first.tags.len(),
        vocab: vocab.len(),
    };
    let mut model = Model::init(&dims, variant, args.seed)?;
    model.g_activation = activation;

    let config = TrainConfig {
        lr: args.lr,
        batch_size: args.batch,
        xe_epochs: args.xe_epochs,
        scst_epochs: args.scst_epochs,
        seed: args.seed,
        optimizer,
        scst_weight: args.scst_weight,
        xe_weight: args.xe_weight,
        patience: args.patience,
        clip_norm: args.clip_norm,
        require_xe_pretrained: true,
    };
    let mut trainer = Trainer::new(model, config)?;
    let history = trainer.train(&train_set, &val_set)?;

    let mut lines = String::new();
    for record in &history.epochs {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Validation(format!("history record: {e}")))?;
        lines.push_str(&line);
        lines.push('\n');
    }
    match &args.history {
        Some(path) => fs::write(path, &lines)?,
        None => print!("{lines}"),
    }
    save_checkpoint(&trainer.model, trainer.xe_trained, &args.out)?;
    println!(
        "best epoch {} val-cider {:.4}; wrote {}",
        history.best_epoch,
        history.best_val_cider,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let (model, _) = load_checkpoint(&args.model)?;
    let (_, vocab, encoded) = load_encoded(&args.data)?;
    check_model_fits(&model, &vocab, &encoded[0])?;

    let stats = corpus_stats(&encoded)?;
    let opts = DecodeOptions::greedy(model.dims.d);
    let (mut bleu4, mut rouge, mut cider) = (0.0, 0.0, 0.0);
    for sample in &encoded {
        let out = model.generate(&sample.v, &sample.tags, &opts)?;
        if !out.ids.is_empty() {
            bleu4 += bleu(&out.ids, &sample.refs, 4)?.cumulative[3];
            rouge += rouge_l(&out.ids, &sample.refs)?;
        }
        cider += cider_d(&out.ids, &sample.refs, &stats)?;
    }
    let n = encoded.len() as f64;
    println!("samples {}", encoded.len());
    println!("bleu-4 {:.6}", bleu4 / n);
    println!("rouge-l {:.6}", rouge / n);
    println!("cider-d {:.6}", cider / n);
    Ok(ExitCode::SUCCESS)
}

fn run_caption(args: CaptionArgs) -> Result<ExitCode, Error> {
    let (model, _) = load_checkpoint(&args.model)?;
    let (_, vocab, encoded) = load_encoded(&args.data)?;
    check_model_fits(&model, &vocab, &encoded[0])?;

    let opts = match args.beam {
        Some(width) => DecodeOptions::beam(width, model.dims.d),
        None => DecodeOptions::greedy(model.dims.d),
    };
    let limit = args.limit.unwrap_or(encoded.len());
    for sample in encoded.iter().take(limit) {
        let out = model.generate(&sample.v, &sample.tags, &opts)?;
        println!("{}\t{}", sample.id, vocab.decode(&out.ids)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_metrics(args: MetricsArgs) -> Result<ExitCode, Error> {
    let candidate: Vec<String> =
        args.candidate.split_whitespace().map(str::to_string).collect();
    let references: Vec<Vec<String>> = args
        .reference
        .iter()
        .map(|r| r.split_whitespace().map(str::to_string).collect())
        .collect();
    if references.iter().any(|r: &Vec<String>| r.is_empty()) {
        return Err(Error::Validation("empty reference sentence".into()));
    }
    let stats = match &args.corpus {
        Some(path) => {
            let dataset = Dataset::load(path)?;
            let docs: Vec<Vec<Vec<String>>> = dataset
                .samples
                .iter()
                .map(|s| s.captions.clone())
                .collect();
            CorpusStats::from_references(&docs)?
        }
        None => CorpusStats::from_references(std::slice::from_ref(&references))?,
    };
    let report = bleu(&candidate, &references, 4)?;
    for (i, score) in report.cumulative.iter().enumerate() {
        println!("bleu-{} {:.6}", i + 1, score);
    }
    println!("rouge-l {:.6}", rouge_l(&candidate, &references)?);
    println!("cider-d {:.6}", cider_d(&candidate, &references, &stats)?);
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let variant = parse_variant(&args.variant)?;
    if args.vocab <= Vocabulary::UNK + 1 {
        return Err(Error::Validation(format!(
            "vocab {} leaves no room for content tokens",
            args.vocab
        )));
    }
    let dims = ModelDims {
        d: args.d,
        m: args.m,
        k_v: args.k_v,
        k_s: args.k_s,
        vocab: args.vocab,
    };
    let model = Model::init(&dims, variant, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let v = Tensor::uniform(&[args.k_v], -1.0, 1.0, &mut rng);
    let tags = Tensor::uniform(&[args.k_s], 0.0, 1.0, &mut rng);
    if args.caption_len == 0 || args.caption_len + 2 > args.d {
        return Err(Error::Validation(format!(
            "caption length {} does not fit capacity {}",
            args.caption_len, args.d
        )));
    }
    let mut caption = vec![Vocabulary::BOS];
    for _ in 0..args.caption_len {
        caption.push(rand::Rng::random_range(&mut rng, Vocabulary::UNK + 1..args.vocab));
    }
    caption.push(Vocabulary::EOS);

    let reports = grad_check(&model, &v, &tags, &caption, args.per_tensor, args.seed)?;
    let mut worst = 0.0f64;
    for report in &reports {
        println!(
            "{:<12} {:.3e} ({} coords)",
            report.name, report.worst_rel_err, report.coords_checked
        );
        worst = worst.max(report.worst_rel_err);
    }
    println!("worst relative error {:.3e} over {} tensors", worst, reports.len());
    if worst < 1e-4 {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck failed: worst relative error reached 1e-4");
        Ok(ExitCode::from(1))
    }
}

fn run_tpr_demo(args: TprDemoArgs) -> Result<ExitCode, Error> {
    if args.vocab == 0 || args.trials == 0 {
        return Err(Error::Validation("vocab and trials must be positive".into()));
    }
    let basis = RoleBasis::sylvester(args.d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let embeddings = Tensor::uniform(&[args.d, args.vocab], -1.0, 1.0, &mut rng);
    let report = retrieval_experiment(&embeddings, &basis, args.d, args.trials, &mut rng)?;
    println!(
        "d {} sequence-length {} vocab {} trials {}",
        args.d, args.d, args.vocab, args.trials
    );
    println!("retrieval accuracy {:.3}", report.accuracy());
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse_to_the_six_configs() {
        let cases = [
            ("e+t", 0),
            ("h+t", 1),
            ("h+e+t", 2),
            ("e+dt", 3),
            ("h+dt", 4),
            ("h+e+dt", 5),
            ("E+dTPR", 3),
            ("e+tpr", 0),
        ];
        for (name, idx) in cases {
            assert_eq!(parse_variant(name).unwrap(), VariantConfig::ALL[idx], "{name}");
        }
        assert!(parse_variant("t").is_err(), "plain TPR is not a listed variant");
        assert!(parse_variant("e+h").is_err(), "no base term");
        assert!(parse_variant("x+t").is_err());
    }

    #[test]
    fn config_extraction_handles_both_spellings() {
        let argv = |words: &[&str]| words.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (rest, path) =
            extract_config(argv(&["tprcap", "tpr-demo", "--config", "a.cfg", "--d", "8"]))
                .unwrap();
        assert_eq!(rest, argv(&["tprcap", "tpr-demo", "--d", "8"]));
        assert_eq!(path.as_deref(), Some("a.cfg"));

        let (_, path) = extract_config(argv(&["tprcap", "--config=b.cfg", "train"])).unwrap();
        assert_eq!(path.as_deref(), Some("b.cfg"));

        assert!(extract_config(argv(&["tprcap", "train", "--config"])).is_err());
    }

    #[test]
    fn config_expansion_defers_to_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# demo\nd=16\ntrials = 25\n\n").unwrap();
        let argv = vec![
            "tprcap".to_string(),
            "tpr-demo".to_string(),
            "--trials".to_string(),
            "10".to_string(),
        ];
        let out = expand_config(argv, path.to_str().unwrap()).unwrap();
        assert_eq!(
            out,
            ["tprcap", "tpr-demo", "--d", "16", "--trials", "10"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );

        let bad = dir.path().join("bad.cfg");
        fs::write(&bad, "just words\n").unwrap();
        let argv = vec!["tprcap".to_string(), "tpr-demo".to_string()];
        let err = expand_config(argv, bad.to_str().unwrap()).unwrap_err();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn underscore_keys_become_dashed_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.cfg");
        fs::write(&path, "k_v=12\n").unwrap();
        let argv = vec!["tprcap".to_string(), "gen-data".to_string()];
        let out = expand_config(argv, path.to_str().unwrap()).unwrap();
        assert_eq!(out[2], "--k-v");
        assert_eq!(out[3], "12");
    }
}
