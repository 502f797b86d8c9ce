//! The `negscope` command line: train, predict, ensemble, evaluate,
//! ablate, strip-punct, gradcheck and synth verbs.
//!
//! Every option can come from a flat `key = value` config file via
//! `--config`; explicit flags win. Each run that produces files writes a
//! JSON manifest next to its primary output recording the verb, the
//! resolved configuration, the seed and the SHA-256 of every input, so
//! equal manifests mean equal outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{grad_check, ParamStore, Precision};
use crate::corpus::{
    parse_corpus, serialize_corpus, strip_labels_corpus, to_instances,
};
use crate::embeddings::{
    compose_crosslingual, load_translation_table, load_vectors, ComposeMethod, EmbeddingTable,
    FeatureMask, Vocab,
};
use crate::ensemble::{
    labels_from_tsv, labels_to_tsv, probs_from_tsv, probs_to_tsv, vote_files, InstanceKey,
    InstanceProbs,
};
use crate::evaluation::{
    easy_hard_split, evaluate_instances, instance_diagnostics, lca_environment_report,
    strip_punctuation, EvalReport,
};
use crate::models::{
    build_model, build_vocabs, instance_loss, load_checkpoint, predict_corpus_probs,
    save_checkpoint, GcnLabelMode, ModelConfig, ModelKind, PreEncoder, ScopeModel,
};
use crate::synth::{generate, SynthOptions, SynthTask};
use crate::training::{ablate_grid, train, DevMetric, TrainConfig, TrainJob};
use crate::Error;

#[derive(Parser)]
#[command(
    name = "negscope",
    version,
    about = "Token-level negation-scope labeling over dependency trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on NSF corpora and write a checkpoint.
    Train(TrainArgs),
    /// Predict per-token scope probabilities with a trained checkpoint.
    Predict(PredictArgs),
    /// Combine two probability files by confidence voting.
    Ensemble(EnsembleArgs),
    /// Score predictions against a gold NSF file.
    Evaluate(EvaluateArgs),
    /// Run the 3x3 feature-ablation grid of BiLSTM + D-LSTM ensembles.
    Ablate(AblateArgs),
    /// Remove punctuation tokens from a corpus, reattaching dependents.
    StripPunct(StripPunctArgs),
    /// Check model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus with deterministic gold scopes.
    Synth(SynthArgs),
}

/// Hyperparameters shared by the training-style verbs.
#[derive(Args, Clone)]
struct ModelOpts {
    /// Flat key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_word: Option<usize>,
    #[arg(long)]
    d_cue: Option<usize>,
    #[arg(long)]
    d_pos: Option<usize>,
    #[arg(long)]
    d_label: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// GCN layer count K.
    #[arg(long)]
    layers: Option<usize>,
    /// Output-layer dropout (BiLSTM, D-LSTM).
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    neighbor_dropout: Option<f64>,
    /// GCN pre-encoder: dense-relu | bilstm.
    #[arg(long)]
    pre_encoder: Option<String>,
    /// GCN label handling: label-weighted | label-bias.
    #[arg(long)]
    label_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// single | double.
    #[arg(long)]
    precision: Option<String>,
    /// Input features: all | -w (no word) | -p (no PoS).
    #[arg(long, allow_hyphen_values = true)]
    features: Option<String>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// f1 | pcs.
    #[arg(long)]
    dev_metric: Option<String>,
    #[arg(long)]
    no_shuffle: bool,
    /// Global-norm gradient clip; 0 disables.
    #[arg(long)]
    clip: Option<f64>,
}

#[derive(Args, Clone)]
struct EmbedOpts {
    /// Word-vector file (one line per word: word v1 .. vd).
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Translation TSV (source, target, probability).
    #[arg(long)]
    translations: Option<PathBuf>,
    /// Cross-lingual composition: premapped | average | average-uniform | argmax.
    #[arg(long)]
    compose: Option<String>,
    /// Freeze word embeddings even in monolingual mode.
    #[arg(long)]
    freeze_words: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// bilstm | dlstm | gcn.
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Truncate language-specific deprel subtypes (conj:and → conj).
    #[arg(long)]
    strip_labels: bool,
    #[command(flatten)]
    model_opts: ModelOpts,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[command(flatten)]
    embed_opts: EmbedOpts,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// NSF input.
    #[arg(long)]
    input: PathBuf,
    /// Probability TSV output.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed_opts: EmbedOpts,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Probability TSV of member A (wins ties).
    #[arg(long)]
    a: PathBuf,
    /// Probability TSV of member B.
    #[arg(long)]
    b: PathBuf,
    /// Voted-labels TSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions: a probability TSV or a voted-labels TSV.
    #[arg(long)]
    pred: PathBuf,
    /// Gold NSF file.
    #[arg(long)]
    gold: PathBuf,
    /// Report PCS over easy vs hard instances.
    #[arg(long)]
    easy_hard: bool,
    /// Report per-label F1/PCS by scope LCA environment.
    #[arg(long)]
    lca_report: bool,
    /// Machine-readable TSV instead of the aligned table.
    #[arg(long)]
    tsv: bool,
    /// Per-instance macro averaging instead of micro.
    #[arg(long, name = "macro")]
    macro_avg: bool,
    /// Write per-instance diagnostics TSV here.
    #[arg(long)]
    per_instance: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Output directory for the grid table, TSV and manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    model_opts: ModelOpts,
    #[command(flatten)]
    train_opts: TrainOpts,
}

#[derive(Args)]
struct StripPunctArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// bilstm | dlstm | gcn | all.
    #[arg(long, default_value = "all")]
    model: String,
    /// Random instances per model.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    min_tokens: usize,
    #[arg(long, default_value_t = 12)]
    max_tokens: usize,
    /// GCN layer count for the checked model.
    #[arg(long, default_value_t = 2)]
    layers: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// subtree | window.
    #[arg(long)]
    task: SynthTask,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    min_tokens: usize,
    #[arg(long, default_value_t = 10)]
    max_tokens: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// NSF output path.
    #[arg(long)]
    out: PathBuf,
}

/// Entry point; returns the process exit code (0 success, 1 validation
/// failure, 2 usage error).
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::StripPunct(args) => cmd_strip_punct(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

// ── Config files and manifests ───────────────────────────────────────

struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<ConfigFile, Error> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected 'key = value'",
                        path.display(),
                        i + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(ConfigFile(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Error> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }
}

fn parse_mask(s: &str) -> Result<FeatureMask, Error> {
    match s {
        "all" => Ok(FeatureMask::ALL),
        "-w" | "no-word" => Ok(FeatureMask::NO_WORD),
        "-p" | "no-pos" => Ok(FeatureMask::NO_POS),
        other => Err(Error::Config(format!(
            "unknown feature mask '{other}' (expected all, -w or -p)"
        ))),
    }
}

fn parse_precision(s: &str) -> Result<Precision, Error> {
    match s {
        "single" => Ok(Precision::Single),
        "double" => Ok(Precision::Double),
        other => Err(Error::Config(format!("unknown precision '{other}'"))),
    }
}

fn parse_pre_encoder(s: &str) -> Result<PreEncoder, Error> {
    match s {
        "dense-relu" => Ok(PreEncoder::DenseRelu),
        "bilstm" => Ok(PreEncoder::Bilstm),
        other => Err(Error::Config(format!("unknown pre-encoder '{other}'"))),
    }
}

fn parse_label_mode(s: &str) -> Result<GcnLabelMode, Error> {
    match s {
        "label-weighted" => Ok(GcnLabelMode::LabelWeighted),
        "label-bias" => Ok(GcnLabelMode::LabelBias),
        other => Err(Error::Config(format!("unknown label mode '{other}'"))),
    }
}

impl ModelOpts {
    fn resolve(&self) -> Result<(ModelConfig, ConfigFile), Error> {
        let file = ConfigFile::load(self.config.as_deref())?;
        let defaults = ModelConfig::default();
        let config = ModelConfig {
            d_word: self.d_word.or(file.get("d_word")?).unwrap_or(defaults.d_word),
            d_cue: self.d_cue.or(file.get("d_cue")?).unwrap_or(defaults.d_cue),
            d_pos: self.d_pos.or(file.get("d_pos")?).unwrap_or(defaults.d_pos),
            d_label: self
                .d_label
                .or(file.get("d_label")?)
                .unwrap_or(defaults.d_label),
            d_hidden: self
                .hidden
                .or(file.get("hidden")?)
                .unwrap_or(defaults.d_hidden),
            gcn_layers: self
                .layers
                .or(file.get("layers")?)
                .unwrap_or(defaults.gcn_layers),
            output_dropout: self
                .dropout
                .or(file.get("dropout")?)
                .unwrap_or(defaults.output_dropout),
            neighbor_dropout: self
                .neighbor_dropout
                .or(file.get("neighbor_dropout")?)
                .unwrap_or(defaults.neighbor_dropout),
            gcn_pre_encoder: match self
                .pre_encoder
                .clone()
                .or(file.get("pre_encoder")?)
            {
                Some(s) => parse_pre_encoder(&s)?,
                None => defaults.gcn_pre_encoder,
            },
            gcn_label_mode: match self.label_mode.clone().or(file.get("label_mode")?) {
                Some(s) => parse_label_mode(&s)?,
                None => defaults.gcn_label_mode,
            },
            dlstm_coupling: true,
            seed: self.seed.or(file.get("seed")?).unwrap_or(defaults.seed),
            mask: match self.features.clone().or(file.get("features")?) {
                Some(s) => parse_mask(&s)?,
                None => defaults.mask,
            },
            precision: match self.precision.clone().or(file.get("precision")?) {
                Some(s) => parse_precision(&s)?,
                None => defaults.precision,
            },
        };
        Ok((config, file))
    }
}

impl TrainOpts {
    fn resolve(&self, file: &ConfigFile, seed: u64) -> Result<TrainConfig, Error> {
        let defaults = TrainConfig::default();
        let clip = self.clip.or(file.get("clip")?);
        Ok(TrainConfig {
            learning_rate: self.lr.or(file.get("lr")?).unwrap_or(defaults.learning_rate),
            max_epochs: self
                .epochs
                .or(file.get("epochs")?)
                .unwrap_or(defaults.max_epochs),
            patience: self
                .patience
                .or(file.get("patience")?)
                .unwrap_or(defaults.patience),
            dev_metric: match self.dev_metric.clone().or(file.get("dev_metric")?) {
                Some(s) => s.parse::<DevMetric>().map_err(Error::Config)?,
                None => defaults.dev_metric,
            },
            seed,
            shuffle: !self.no_shuffle
                && file.get::<bool>("shuffle")?.unwrap_or(true),
            grad_clip: match clip {
                Some(c) if c <= 0.0 => None,
                Some(c) => Some(c),
                None => defaults.grad_clip,
            },
            ..defaults
        })
    }
}

#[derive(Serialize)]
struct ManifestInput {
    path: String,
    sha256: String,
}

/// Provenance record written next to every file-producing run.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: String,
    seed: u64,
    resolved_config: BTreeMap<String, String>,
    inputs: Vec<ManifestInput>,
    outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            resolved_config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.resolved_config.insert(key.to_string(), value.to_string());
        self
    }

    fn config_json(&mut self, key: &str, value: &impl Serialize) -> &mut Self {
        self.resolved_config.insert(
            key.to_string(),
            serde_json::to_string(value).expect("serializable config"),
        );
        self
    }

    fn input(&mut self, path: &Path) -> Result<&mut Self, Error> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        self.inputs.push(ManifestInput {
            path: path.display().to_string(),
            sha256: hex::encode(digest),
        });
        Ok(self)
    }

    fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Write `<primary output>.manifest.json`.
    fn write_beside(&self, primary_output: &Path) -> Result<(), Error> {
        let mut name = primary_output.as_os_str().to_os_string();
        name.push(".manifest.json");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(PathBuf::from(name), json)?;
        Ok(())
    }
}

// ── Word-table construction ──────────────────────────────────────────

fn parse_compose(s: &str) -> Result<ComposeMethod, Error> {
    match s {
        "premapped" => Ok(ComposeMethod::Premapped),
        "average" => Ok(ComposeMethod::Average { weighted: true }),
        "average-uniform" => Ok(ComposeMethod::Average { weighted: false }),
        "argmax" => Ok(ComposeMethod::Argmax),
        other => Err(Error::Config(format!(
            "unknown composition method '{other}'"
        ))),
    }
}

/// Build the word-embedding table for a vocabulary from the embedding
/// flags. `None` means random trainable initialization.
fn word_table_for(vocab: &Vocab, opts: &EmbedOpts) -> Result<Option<EmbeddingTable>, Error> {
    let Some(vectors_path) = &opts.vectors else {
        if opts.compose.is_some() {
            return Err(Error::Config("--compose requires --vectors".into()));
        }
        return Ok(None);
    };
    let loaded = load_vectors(vectors_path)?;
    let table = match &opts.compose {
        None => {
            // monolingual: project the file's vectors onto the vocabulary
            let composed =
                compose_crosslingual(ComposeMethod::Premapped, vocab, &loaded, None)?;
            log::info!(
                "word vectors cover {:.1}% of the vocabulary",
                composed.coverage * 100.0
            );
            let mut table = composed.table;
            table.trainable = !opts.freeze_words;
            table
        }
        Some(method) => {
            let method = parse_compose(method)?;
            let translations = match method {
                ComposeMethod::Premapped => None,
                _ => Some(load_translation_table(opts.translations.as_ref().ok_or_else(
                    || Error::Config("this composition method requires --translations".into()),
                )?)?),
            };
            // cross-lingual tables stay frozen: the shared space must not drift
            compose_crosslingual(method, vocab, &loaded, translations.as_ref())?.table
        }
    };
    Ok(Some(table))
}

// ── Verbs ────────────────────────────────────────────────────────────

fn cmd_train(args: TrainArgs) -> Result<i32, Error> {
    let (model_config, file) = args.model_opts.resolve()?;
    let train_config = args.train_opts.resolve(&file, model_config.seed)?;
    let mut train_corpus = parse_corpus(&args.train)?;
    let mut dev_corpus = parse_corpus(&args.dev)?;
    if args.strip_labels {
        train_corpus = strip_labels_corpus(&train_corpus);
        dev_corpus = strip_labels_corpus(&dev_corpus);
    }
    let vocabs = build_vocabs(&train_corpus);
    let word_table = word_table_for(&vocabs.word, &args.embed_opts)?;

    let result = train(TrainJob {
        kind: args.model,
        train: &train_corpus,
        dev: &dev_corpus,
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        word_table: word_table.as_ref(),
        strip_labels: args.strip_labels,
    })?;
    save_checkpoint(&args.out, &result.checkpoint)?;

    let log_path = args.out.with_extension("log");
    let mut log_text = String::new();
    for row in &result.log {
        log_text.push_str(&row.line());
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;
    println!(
        "best epoch {} ({} {:.2}); checkpoint written to {}",
        result.best_epoch,
        match train_config.dev_metric {
            DevMetric::F1 => "dev_f1",
            DevMetric::Pcs => "dev_pcs",
        },
        result.best_metric,
        args.out.display()
    );

    let mut manifest = RunManifest::new("train", model_config.seed);
    manifest
        .config("model", args.model.as_str())
        .config("strip_labels", args.strip_labels)
        .config_json("model_config", &model_config)
        .config_json("train_config", &train_config);
    manifest.input(&args.train)?.input(&args.dev)?;
    if let Some(v) = &args.embed_opts.vectors {
        manifest.input(v)?;
    }
    if let Some(t) = &args.embed_opts.translations {
        manifest.input(t)?;
    }
    manifest.output(&args.out).output(&log_path);
    manifest.write_beside(&args.out)?;
    Ok(0)
}

fn cmd_predict(args: PredictArgs) -> Result<i32, Error> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let (mut model, mut store) = checkpoint.restore()?;
    let mut corpus = parse_corpus(&args.input)?;
    if checkpoint.strip_labels {
        corpus = strip_labels_corpus(&corpus);
    }
    if args.embed_opts.vectors.is_some() {
        // swap in a word table composed for the input language
        let vocabs = build_vocabs(&corpus);
        let table = word_table_for(&vocabs.word, &args.embed_opts)?
            .expect("--vectors implies a table");
        model.replace_word_table(&mut store, &table)?;
    }

    let instances = to_instances(&corpus);
    let per_instance = predict_corpus_probs(&model, &store, &corpus)?;
    let rows: Vec<InstanceProbs> = instances
        .iter()
        .zip(per_instance)
        .map(|(r, probs)| InstanceProbs {
            key: InstanceKey {
                sentence_id: corpus.sentences[r.sentence].source_id.clone(),
                instance_index: r.annotation,
            },
            probs,
        })
        .collect();
    std::fs::write(&args.out, probs_to_tsv(&rows))?;
    println!(
        "wrote probabilities for {} instances to {}",
        rows.len(),
        args.out.display()
    );

    let mut manifest = RunManifest::new("predict", checkpoint.config.seed);
    manifest
        .config("model", checkpoint.kind.as_str())
        .config("strip_labels", checkpoint.strip_labels);
    manifest.input(&args.checkpoint)?.input(&args.input)?;
    if let Some(v) = &args.embed_opts.vectors {
        manifest.input(v)?;
    }
    if let Some(t) = &args.embed_opts.translations {
        manifest.input(t)?;
    }
    manifest.output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(0)
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<i32, Error> {
    let a = probs_from_tsv(&std::fs::read_to_string(&args.a)?)?;
    let b = probs_from_tsv(&std::fs::read_to_string(&args.b)?)?;
    let voted = vote_files(&a, &b)?;
    std::fs::write(&args.out, labels_to_tsv(&voted))?;
    println!(
        "voted {} instances to {}",
        voted.len(),
        args.out.display()
    );
    let mut manifest = RunManifest::new("ensemble", 0);
    manifest.input(&args.a)?.input(&args.b)?;
    manifest.output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(0)
}

/// Load predictions from a probability or labels TSV; the two are told
/// apart by their label column ('S'/'_' versus a float).
fn load_predictions(path: &Path) -> Result<Vec<(InstanceKey, Vec<bool>)>, Error> {
    let text = std::fs::read_to_string(path)?;
    let looks_like_labels = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| matches!(l.split('\t').nth(3), Some("S") | Some("_")))
        .unwrap_or(false);
    if looks_like_labels {
        Ok(labels_from_tsv(&text)?
            .into_iter()
            .map(|i| (i.key, i.labels))
            .collect())
    } else {
        Ok(probs_from_tsv(&text)?
            .into_iter()
            .map(|i| {
                let labels = i.probs.iter().map(|&(o, s)| s > o).collect();
                (i.key, labels)
            })
            .collect())
    }
}

fn format_report(report: &EvalReport, tsv: bool) -> String {
    if tsv {
        format!(
            "instances\t{}\nprecision\t{:.4}\nrecall\t{:.4}\nf1\t{:.4}\npcs\t{:.4}\n",
            report.instances, report.precision, report.recall, report.f1, report.pcs
        )
    } else {
        format!(
            "instances  {}\nprecision  {:.2}\nrecall     {:.2}\nf1         {:.2}\npcs        {:.2}\n",
            report.instances, report.precision, report.recall, report.f1, report.pcs
        )
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32, Error> {
    let gold = parse_corpus(&args.gold)?;
    let instances = to_instances(&gold);
    let predicted = load_predictions(&args.pred)?;
    if predicted.len() != instances.len() {
        return Err(Error::Config(format!(
            "prediction file has {} instances, gold has {}",
            predicted.len(),
            instances.len()
        )));
    }
    let mut predictions: Vec<BTreeSet<usize>> = Vec::with_capacity(instances.len());
    for ((key, labels), r) in predicted.iter().zip(&instances) {
        let sentence = &gold.sentences[r.sentence];
        if key.sentence_id != sentence.source_id || key.instance_index != r.annotation {
            return Err(Error::Config(format!(
                "misaligned instance: prediction {key} against gold {}#{}",
                sentence.source_id, r.annotation
            )));
        }
        if labels.len() != sentence.len() {
            return Err(Error::Config(format!(
                "instance {key}: {} predicted tokens for a {}-token sentence",
                labels.len(),
                sentence.len()
            )));
        }
        predictions.push(
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l)
                .map(|(i, _)| i + 1)
                .collect(),
        );
    }

    let report = evaluate_instances(&gold, &instances, &predictions, args.macro_avg)?;
    print!("{}", format_report(&report, args.tsv));

    if args.easy_hard {
        let (easy, hard) = easy_hard_split(&gold, &instances);
        let subset = |refs: &[crate::corpus::InstanceRef]| -> Result<EvalReport, Error> {
            let preds: Vec<BTreeSet<usize>> = refs
                .iter()
                .map(|r| {
                    let pos = instances
                        .iter()
                        .position(|other| other.sentence == r.sentence && other.annotation == r.annotation)
                        .expect("subset of instances");
                    predictions[pos].clone()
                })
                .collect();
            Ok(evaluate_instances(&gold, refs, &preds, args.macro_avg)?)
        };
        let easy_report = subset(&easy)?;
        let hard_report = subset(&hard)?;
        if args.tsv {
            println!("easy_count\t{}", easy.len());
            println!("easy_pcs\t{:.4}", easy_report.pcs);
            println!("easy_f1\t{:.4}", easy_report.f1);
            println!("hard_count\t{}", hard.len());
            println!("hard_pcs\t{:.4}", hard_report.pcs);
            println!("hard_f1\t{:.4}", hard_report.f1);
        } else {
            println!("\ncondition   count     PCS      F1");
            println!("easy     {:>8}{:>8.2}{:>8.2}", easy.len(), easy_report.pcs, easy_report.f1);
            println!("hard     {:>8}{:>8.2}{:>8.2}", hard.len(), hard_report.pcs, hard_report.f1);
        }
    }

    if args.lca_report {
        let rows = lca_environment_report(&gold, &instances, &predictions)?;
        if args.tsv {
            println!("label\tinstances\tf1\tpcs");
            for row in rows {
                println!("{}\t{}\t{:.4}\t{:.4}", row.label, row.instances, row.f1, row.pcs);
            }
        } else {
            println!("\nlabel            n      F1     PCS");
            for row in rows {
                println!("{:<12}{:>6}{:>8.1}{:>8.1}", row.label, row.instances, row.f1, row.pcs);
            }
        }
    }

    if let Some(path) = &args.per_instance {
        let diags = instance_diagnostics(&gold, &instances, &predictions)?;
        let mut out = String::from("sentence_id\tinstance\teasy\tlca_labels\texact\n");
        for d in diags {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                d.sentence_id,
                d.instance_index,
                if d.easy { "easy" } else { "hard" },
                d.lca_labels.join(","),
                d.exact
            ));
        }
        std::fs::write(path, out)?;
        let mut manifest = RunManifest::new("evaluate", 0);
        manifest.input(&args.pred)?.input(&args.gold)?;
        manifest.output(path);
        manifest.write_beside(path)?;
    }
    Ok(0)
}

fn cmd_ablate(args: AblateArgs) -> Result<i32, Error> {
    let (model_config, file) = args.model_opts.resolve()?;
    let train_config = args.train_opts.resolve(&file, model_config.seed)?;
    let train_corpus = parse_corpus(&args.train)?;
    let dev_corpus = parse_corpus(&args.dev)?;
    let test_corpus = parse_corpus(&args.test)?;
    let grid = ablate_grid(
        &train_corpus,
        &dev_corpus,
        &test_corpus,
        &model_config,
        &train_config,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    let table_path = args.out_dir.join("ablation.txt");
    let tsv_path = args.out_dir.join("ablation.tsv");
    std::fs::write(&table_path, grid.table())?;
    std::fs::write(&tsv_path, grid.tsv())?;
    print!("{}", grid.table());

    let mut manifest = RunManifest::new("ablate", model_config.seed);
    manifest
        .config_json("model_config", &model_config)
        .config_json("train_config", &train_config);
    manifest.input(&args.train)?.input(&args.dev)?.input(&args.test)?;
    manifest.output(&table_path).output(&tsv_path);
    manifest.write_beside(&args.out_dir.join("ablation"))?;
    Ok(0)
}

fn cmd_strip_punct(args: StripPunctArgs) -> Result<i32, Error> {
    let corpus = parse_corpus(&args.input)?;
    let stripped = strip_punctuation(&corpus);
    std::fs::write(&args.output, serialize_corpus(&stripped))?;
    println!(
        "stripped punctuation from {} sentences into {}",
        stripped.sentences.len(),
        args.output.display()
    );
    let mut manifest = RunManifest::new("strip-punct", 0);
    manifest.input(&args.input)?;
    manifest.output(&args.output);
    manifest.write_beside(&args.output)?;
    Ok(0)
}

/// Per-model gradient check over freshly sampled tree instances.
pub fn gradcheck_models(
    kinds: &[ModelKind],
    trials: usize,
    eps: f64,
    tol: f64,
    seed: u64,
    token_range: (usize, usize),
    gcn_layers: usize,
) -> Result<Vec<(ModelKind, f64, bool)>, Error> {
    let mut results = Vec::new();
    for &kind in kinds {
        let mut worst = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for trial in 0..trials {
            let corpus = generate(&SynthOptions {
                task: SynthTask::Subtree,
                sentences: 1,
                min_tokens: token_range.0,
                max_tokens: token_range.1,
                vocab_size: 20,
                seed: rng.random::<u64>(),
            });
            let sentence = &corpus.sentences[0];
            let tree = crate::corpus::build_tree(sentence)?;
            let ann = sentence.annotations[0].clone();
            let config = ModelConfig {
                d_word: 4,
                d_cue: 2,
                d_pos: 3,
                d_label: 3,
                d_hidden: 4,
                gcn_layers,
                output_dropout: 0.0,
                neighbor_dropout: 0.0,
                precision: Precision::Double,
                seed: rng.random::<u64>(),
                ..ModelConfig::default()
            };
            let vocabs = build_vocabs(&corpus);
            let mut store = ParamStore::new();
            let mut model_rng = ChaCha8Rng::seed_from_u64(config.seed);
            let model = build_model(kind, &config, &vocabs, None, &mut store, &mut model_rng)?;
            let report = grad_check(&mut store, eps, tol, |tape, store| {
                let probs = model
                    .forward(tape, store, sentence, &tree, &ann.cues)
                    .map_err(|e| match e {
                        Error::Autodiff(a) => a,
                        other => panic!("model forward failed: {other}"),
                    })?;
                Ok(instance_loss(tape, &probs, &ann)?.expect("instances have non-cue tokens"))
            })?;
            worst = worst.max(report.max_rel_err);
            log::debug!(
                "gradcheck {} trial {trial}: max rel err {:.3e}",
                kind.as_str(),
                report.max_rel_err
            );
        }
        results.push((kind, worst, worst <= tol));
    }
    Ok(results)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32, Error> {
    let kinds: Vec<ModelKind> = match args.model.as_str() {
        "all" => vec![ModelKind::Bilstm, ModelKind::Dlstm, ModelKind::Gcn],
        other => vec![other
            .parse::<ModelKind>()
            .map_err(Error::Config)?],
    };
    let results = gradcheck_models(
        &kinds,
        args.trials,
        args.eps,
        args.tol,
        args.seed,
        (args.min_tokens, args.max_tokens),
        args.layers,
    )?;
    let mut all_pass = true;
    for (kind, worst, pass) in &results {
        println!(
            "{}: max rel err {:.3e} over {} trials ... {}",
            kind.as_str(),
            worst,
            args.trials,
            if *pass { "pass" } else { "FAIL" }
        );
        all_pass &= *pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_synth(args: SynthArgs) -> Result<i32, Error> {
    let options = SynthOptions {
        task: args.task,
        sentences: args.n,
        min_tokens: args.min_tokens,
        max_tokens: args.max_tokens,
        vocab_size: args.vocab,
        seed: args.seed,
    };
    if options.min_tokens < 3 {
        return Err(Error::Config("sentences need at least 3 tokens".into()));
    }
    if options.max_tokens < options.min_tokens {
        return Err(Error::Config("max tokens below min tokens".into()));
    }
    let corpus = generate(&options);
    std::fs::write(&args.out, serialize_corpus(&corpus))?;
    println!(
        "generated {} sentences ({} instances) into {}",
        corpus.sentences.len(),
        corpus.instance_count(),
        args.out.display()
    );
    let mut manifest = RunManifest::new("synth", options.seed);
    manifest
        .config("task", format!("{:?}", options.task).to_lowercase())
        .config("n", options.sentences)
        .config("min_tokens", options.min_tokens)
        .config("max_tokens", options.max_tokens)
        .config("vocab", options.vocab_size);
    manifest.output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(0)
}
