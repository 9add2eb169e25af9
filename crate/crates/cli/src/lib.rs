//! Command-line driver: `seqlab <subcommand> …`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use seqlab::corpus::{
    corpus_stats, default_label_set, parse_conll, parse_i2b2, write_conll, Sentence, TaggedCorpus,
};
use seqlab::ensemble::{majority_vote, VoteInput};
use seqlab::eval::{entity_prf, report_json, report_table};
use seqlab::features::{
    load_embedding_file, longest_word_len, WordLookup, WordSource, WordVectorProvider,
};
use seqlab::relabel::{relabel_corpus, RelabelConfig};
use seqlab::selftest::run_selftest;
use seqlab::tagger::{
    init_model, load_model, predict, save_model, train_with_callback, ModelBundle, ModelConfig,
    TrainOptions,
};

#[derive(Debug, Parser)]
#[command(
    name = "seqlab",
    version,
    about = "Clinical concept extraction with a BiLSTM-CRF tagger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert an i2b2-2010 report and concept file to CoNLL.
    Ingest(IngestArgs),
    /// Shift entity starts past leading stopwords and frequent words.
    Relabel(RelabelArgs),
    /// Tag distribution, entity counts and entity-length histogram as JSON.
    Stats(StatsArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Tag a corpus with a trained model.
    Tag(TagArgs),
    /// Entity-level precision, recall and F1.
    Eval(EvalArgs),
    /// Combine several prediction files by per-token majority vote.
    Vote(VoteArgs),
    /// Run the built-in numerical and roundtrip checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Report text, one sentence per line, whitespace-tokenized.
    #[arg(long)]
    report: PathBuf,
    /// Concept annotations (`.con`).
    #[arg(long)]
    concepts: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RelabelArgs {
    /// CoNLL corpus.
    input: PathBuf,
    /// JSON file naming the stopword, frequent-word and abbreviation lists.
    #[arg(long)]
    relabel_config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the per-class change summary (default: stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpus (CoNLL).
    #[arg(long)]
    train: PathBuf,
    /// Word vectors: `file:<path>`, `hash:<dim>:<seed>` or `lookup:<dim>`.
    #[arg(long)]
    embeddings: String,
    /// Validation corpus, scored after every epoch.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Embedding file for the validation corpus (file embeddings only).
    #[arg(long)]
    validation_embeddings: Option<PathBuf>,
    /// JSON model config; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    bilstm1_units: Option<usize>,
    #[arg(long)]
    bilstm2_units: Option<usize>,
    /// Character slots per word; 0 measures the training corpus.
    #[arg(long)]
    max_word_len: Option<usize>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Stop once validation F1 reaches this value.
    #[arg(long)]
    target_f1: Option<f64>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the training report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// CoNLL corpus; existing tags are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Required for models trained on embedding files.
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VoteArgs {
    /// Prediction files over the same sentences, in model order.
    #[arg(required = true)]
    predictions: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Relabel(a) => relabel(a),
        Command::Stats(a) => stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Tag(a) => tag(a),
        Command::Eval(a) => eval(a),
        Command::Vote(a) => vote(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<TaggedCorpus> {
    parse_conll(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn ingest(a: IngestArgs) -> Result<i32> {
    let doc = parse_i2b2(&read(&a.report)?, &read(&a.concepts)?)
        .with_context(|| format!("parsing {}", a.concepts.display()))?;
    for w in &doc.warnings {
        warn!("{}: {w}", a.concepts.display());
    }
    let corpus = doc.to_corpus(&default_label_set())?;
    emit(a.out.as_deref(), &write_conll(&corpus))?;
    Ok(0)
}

fn relabel(a: RelabelArgs) -> Result<i32> {
    let config = match &a.relabel_config {
        Some(path) => RelabelConfig::from_json_file(path)?,
        None => RelabelConfig::default(),
    };
    let corpus = read_corpus(&a.input)?;
    let (out, summary) = relabel_corpus(&corpus, &config)?;
    emit(a.out.as_deref(), &write_conll(&out))?;
    let summary = serde_json::to_string_pretty(&summary)? + "\n";
    match &a.summary {
        Some(path) => {
            fs::write(path, summary).with_context(|| format!("writing {}", path.display()))?
        }
        None => eprint!("{summary}"),
    }
    Ok(0)
}

fn stats(a: StatsArgs) -> Result<i32> {
    let corpus = read_corpus(&a.input)?;
    let stats = corpus_stats(&corpus)?;
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&stats)? + "\n"),
    )?;
    Ok(0)
}

/// Parsed `--embeddings` value.
#[derive(Debug, Clone, PartialEq)]
enum EmbeddingSpec {
    File(PathBuf),
    Hash { dim: usize, seed: u64 },
    Lookup { dim: usize },
}

fn parse_embedding_spec(spec: &str) -> Result<EmbeddingSpec> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let number = |s: &str, what: &str| -> Result<u64> {
        s.parse()
            .with_context(|| format!("bad {what} `{s}` in --embeddings {spec}"))
    };
    Ok(match kind {
        "file" if !rest.is_empty() => EmbeddingSpec::File(PathBuf::from(rest)),
        "hash" => {
            let (dim, seed) = rest.split_once(':').unwrap_or((rest, "0"));
            EmbeddingSpec::Hash {
                dim: number(dim, "dimension")? as usize,
                seed: number(seed, "seed")?,
            }
        }
        "lookup" => EmbeddingSpec::Lookup {
            dim: number(rest, "dimension")? as usize,
        },
        _ => bail!(
            "--embeddings must be file:<path>, hash:<dim>:<seed> or lookup:<dim>, got `{spec}`"
        ),
    })
}

fn file_provider(path: &Path) -> Result<WordVectorProvider> {
    load_embedding_file(path).with_context(|| format!("loading {}", path.display()))
}

/// Flags over the config file over built-in defaults.
fn resolve_config(a: &TrainArgs, corpus: &TaggedCorpus) -> Result<ModelConfig> {
    let mut config = match &a.config {
        Some(path) => serde_json::from_str::<ModelConfig>(&read(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => ModelConfig::default(),
    };
    config.label_set = corpus.merged_label_set(&config.label_set);
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.bilstm1_units {
        config.bilstm1_units = v;
    }
    if let Some(v) = a.bilstm2_units {
        config.bilstm2_units = v;
    }
    if let Some(v) = a.max_word_len {
        config.max_word_len = v;
    }
    if config.max_word_len == 0 {
        config.max_word_len = longest_word_len(corpus).max(config.char_encoder.max_kernel());
    }
    config.validate()?;
    Ok(config)
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let corpus = read_corpus(&a.train)?;
    corpus
        .validate()
        .with_context(|| format!("validating {}", a.train.display()))?;
    let mut config = resolve_config(&a, &corpus)?;
    let provider = match parse_embedding_spec(&a.embeddings)? {
        EmbeddingSpec::File(path) => {
            let p = file_provider(&path)?;
            config.word_source = WordSource::File;
            config.word_dim = p.dim();
            p
        }
        EmbeddingSpec::Hash { dim, seed } => {
            config.word_source = WordSource::Hash { seed };
            config.word_dim = dim;
            WordVectorProvider::Hash { dim, seed }
        }
        EmbeddingSpec::Lookup { dim } => {
            let lookup = WordLookup::from_corpus(dim, &corpus);
            config.word_source = WordSource::Lookup {
                vocab: lookup.words().to_vec(),
            };
            config.word_dim = dim;
            WordVectorProvider::Lookup(lookup)
        }
    };
    let validation = match &a.validation {
        Some(path) => {
            let c = read_corpus(path)?;
            c.validate()
                .with_context(|| format!("validating {}", path.display()))?;
            let p = match (&config.word_source, &a.validation_embeddings) {
                (WordSource::File, Some(emb)) => file_provider(emb)?,
                (WordSource::File, None) => {
                    bail!("--validation with file embeddings needs --validation-embeddings")
                }
                (_, Some(_)) => bail!("--validation-embeddings only applies to file embeddings"),
                (_, None) => provider.clone(),
            };
            Some((c, p))
        }
        None => None,
    };

    let mut bundle = init_model(&config, config.seed)?;
    let options = TrainOptions {
        patience: a.patience,
        target_f1: a.target_f1,
        ..TrainOptions::from_bundle(&bundle)
    };
    info!(
        "training on {} sentences for up to {} epochs (seed {})",
        corpus.len(),
        options.epochs,
        options.seed
    );
    let report = train_with_callback(
        &mut bundle,
        &corpus,
        &provider,
        validation.as_ref().map(|(c, p)| (c, p)),
        &options,
        |e| match e.validation_f1 {
            Some(f1) => info!("epoch {} nll {:.4} validation f1 {:.4}", e.epoch, e.nll, f1),
            None => info!("epoch {} nll {:.4}", e.epoch, e.nll),
        },
    )?;
    save_model(&bundle, &a.out)?;
    let report = serde_json::to_string_pretty(&report)? + "\n";
    match &a.report {
        Some(path) => {
            fs::write(path, report).with_context(|| format!("writing {}", path.display()))?
        }
        None => eprint!("{report}"),
    }
    Ok(0)
}

fn tag_provider(bundle: &ModelBundle, spec: Option<&str>) -> Result<WordVectorProvider> {
    let spec = spec.map(parse_embedding_spec).transpose()?;
    let provider = match (&bundle.config.word_source, spec) {
        (WordSource::File, Some(EmbeddingSpec::File(path))) => file_provider(&path)?,
        (WordSource::File, _) => {
            bail!("this model reads word vectors from a file; pass --embeddings file:<path>")
        }
        (WordSource::Hash { seed }, Some(EmbeddingSpec::Hash { dim, seed: s }))
            if dim == bundle.config.word_dim && s == *seed =>
        {
            bundle.builtin_provider().expect("hash source")
        }
        (WordSource::Lookup { .. }, Some(EmbeddingSpec::Lookup { dim }))
            if dim == bundle.config.word_dim =>
        {
            bundle.builtin_provider().expect("lookup source")
        }
        (_, Some(_)) => bail!("--embeddings does not match the model's word vectors"),
        (_, None) => bundle.builtin_provider().expect("built-in source"),
    };
    bundle.check_provider(&provider)?;
    Ok(provider)
}

fn tag(a: TagArgs) -> Result<i32> {
    let bundle = load_model(&a.model)?;
    let provider = tag_provider(&bundle, a.embeddings.as_deref())?;
    let corpus = read_corpus(&a.input)?;
    let sentences = corpus
        .sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let tags = predict(&bundle, i, &s.tokens, &provider)
                .with_context(|| format!("{}: sentence {}", a.input.display(), i + 1))?;
            Ok(Sentence {
                tokens: s.tokens.clone(),
                tags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = TaggedCorpus {
        sentences,
        label_set: bundle.config.label_set.clone(),
    };
    emit(a.out.as_deref(), &write_conll(&out))?;
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let gold = read_corpus(&a.gold)?;
    let pred = read_corpus(&a.pred)?;
    let labels = gold.merged_label_set(&default_label_set());
    let gold = TaggedCorpus::with_label_set(gold.sentences, labels)?;
    let report = entity_prf(&gold, &pred)?;
    let json = report_json(&report) + "\n";
    if let Some(path) = &a.out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(None, &if a.json { json } else { report_table(&report) })?;
    Ok(0)
}

fn vote(a: VoteArgs) -> Result<i32> {
    let corpora = a
        .predictions
        .par_iter()
        .map(|p| read_corpus(p))
        .collect::<Result<Vec<_>>>()?;
    let first = &corpora[0];
    for (path, c) in a.predictions.iter().zip(&corpora).skip(1) {
        if c.len() != first.len() {
            bail!(
                "{} has {} sentences, {} has {}",
                path.display(),
                c.len(),
                a.predictions[0].display(),
                first.len()
            );
        }
        for (i, (s, f)) in c.sentences.iter().zip(&first.sentences).enumerate() {
            if s.tokens != f.tokens {
                bail!(
                    "{}: sentence {} has different tokens",
                    path.display(),
                    i + 1
                );
            }
        }
    }
    let sentences = (0..first.len())
        .into_par_iter()
        .map(|i| {
            let input = VoteInput::new(
                corpora
                    .iter()
                    .map(|c| c.sentences[i].tags.clone())
                    .collect(),
            );
            let tags = majority_vote(&input).with_context(|| format!("sentence {}", i + 1))?;
            Ok(Sentence {
                tokens: first.sentences[i].tokens.clone(),
                tags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = TaggedCorpus::new(sentences);
    emit(a.out.as_deref(), &write_conll(&out))?;
    Ok(0)
}

fn selftest(a: SelftestArgs) -> Result<i32> {
    let results = run_selftest(a.seed);
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", results.len());
        return Ok(1);
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_specs() {
        assert_eq!(
            parse_embedding_spec("file:a/b.emb").unwrap(),
            EmbeddingSpec::File("a/b.emb".into())
        );
        assert_eq!(
            parse_embedding_spec("hash:64:3").unwrap(),
            EmbeddingSpec::Hash { dim: 64, seed: 3 }
        );
        assert_eq!(
            parse_embedding_spec("lookup:50").unwrap(),
            EmbeddingSpec::Lookup { dim: 50 }
        );
        for bad in ["file:", "hash:x:1", "glove:300", "lookup:"] {
            assert!(parse_embedding_spec(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn usage_errors_are_nonzero() {
        assert_eq!(run(["seqlab", "frobnicate"]), 2);
        assert_eq!(run(["seqlab", "stats"]), 2);
        assert_eq!(run(["seqlab", "--help"]), 0);
    }
}
