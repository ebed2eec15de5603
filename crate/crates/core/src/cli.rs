//! The `mlsr` command line: one subcommand per pipeline stage, each reading
//! and writing plain files so intermediate artifacts can be inspected.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::diagnostics::{coactivation_report, stopword_mass, top_terms_tsv, CoActivationReport};
use crate::embedding::{write_embedding_file, EmbeddingProvider};
use crate::encoders::{
    encode_document_input, encode_query_input, EncoderConfig, ModelParams, Providers,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Cutoffs, Qrels, Run};
use crate::index::InvertedIndex;
use crate::ingest::{load_corpus, load_queries, write_corpus, write_queries};
use crate::sparse::{read_jsonl, write_jsonl, SparseRecord, SparseVector};
use crate::synthetic::{generate, SyntheticSpec};
use crate::training::{
    read_pairs, save_checkpoint, train, write_pairs, CheckpointManifest, TrainingConfig,
    TrainingData,
};
use crate::vocab::Vocabulary;

#[derive(Debug, Parser)]
#[command(
    name = "mlsr",
    version,
    about = "Multimodal learned sparse retrieval pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic text-image fixture.
    Synth(SynthArgs),
    /// Write freshly initialised head parameters.
    Init(InitArgs),
    /// Encode queries or documents into sparse vectors.
    Encode(EncodeArgs),
    /// Train head parameters on query-document pairs.
    Train(TrainArgs),
    /// Build an inverted index from document vectors.
    Index(IndexArgs),
    /// Retrieve top-k documents for query vectors into a TREC run.
    Search(SearchArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Report co-activation density and top terms of a vector file.
    Diagnose(DiagnoseArgs),
}

/// Where dense inputs come from. Without `--token-embeddings` the toy
/// provider is used with `--dim` and `--seed`.
#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Token-level embedding JSONL (keys are term ids).
    #[arg(long)]
    pub token_embeddings: Option<PathBuf>,
    /// Item-level embedding JSONL (images, optionally pooled queries).
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EmbeddingArgs {
    fn providers(&self) -> Result<Providers> {
        let text = match &self.token_embeddings {
            Some(path) => EmbeddingProvider::open(path)?,
            None => EmbeddingProvider::toy(self.dim, self.seed)?,
        };
        let items = self
            .items
            .as_ref()
            .map(EmbeddingProvider::open)
            .transpose()?;
        let providers = Providers { text, items };
        providers.check()?;
        Ok(providers)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 64)]
    pub held_out_pairs: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["corpus", "queries"])))]
pub struct EncodeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// TSV of `query_id<TAB>doc_id` pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// JSON training hyperparameters; missing fields take defaults. Its
    /// `seed` is replaced by `--seed`.
    #[arg(long)]
    pub training_config: Option<PathBuf>,
    /// Starting parameters; freshly initialised from `--seed` if absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    pub loss_log: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query vector JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    #[arg(long, default_value = "mlsr")]
    pub tag: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated cutoffs applied to every metric. Defaults to
    /// NDCG/MAP at 5,10,100,500,1000 and Recall at 20,100,500,1000.
    #[arg(long)]
    pub cutoffs: Option<String>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// One stopword per line.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional TSV of each vector's top terms.
    #[arg(long)]
    pub top_terms: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct DiagnosticsReport {
    pub coactivation: CoActivationReport,
    /// Mean share of weight on stoplisted terms, when a stoplist is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_stopword_mass: Option<f64>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlsr: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Init(a) => cmd_init(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Index(a) => cmd_index(&a),
        Command::Search(a) => cmd_search(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
    }
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, serde_json::to_string_pretty(value)? + "\n")
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn load_model(
    config: &Path,
    params: &Path,
    vocab: &Vocabulary,
    dim: usize,
) -> Result<(EncoderConfig, ModelParams)> {
    let config = EncoderConfig::load(config)?;
    let params = ModelParams::load(params)?;
    params.check(&config, dim, vocab.len())?;
    Ok((config, params))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        train_pairs: a.train_pairs,
        held_out_pairs: a.held_out_pairs,
        dim: a.dim,
        embedding_seed: a.seed,
        seed: a.seed,
        ..Default::default()
    };
    let corpus = generate(&spec)?;
    let dir = &a.out;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus.vocab.save(dir.join("vocab.txt"))?;
    write_queries(dir.join("queries.jsonl"), &corpus.queries)?;
    write_corpus(dir.join("corpus.jsonl"), &corpus.docs)?;
    write_embedding_file(dir.join("images.jsonl"), spec.dim, &corpus.images)?;
    corpus.qrels.write(dir.join("qrels.txt"))?;
    corpus
        .held_out_qrels()
        .write(dir.join("held_out_qrels.txt"))?;
    write_pairs(dir.join("train_pairs.tsv"), &corpus.train_pairs)?;
    write_pairs(dir.join("held_out_pairs.tsv"), &corpus.held_out_pairs)?;
    write_text(&dir.join("stoplist.txt"), corpus.stoplist.join("\n") + "\n")?;
    eprintln!(
        "wrote {} queries, {} documents, {} terms to {}",
        corpus.queries.len(),
        corpus.docs.len(),
        corpus.vocab.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_init(a: &InitArgs) -> Result<()> {
    let config = EncoderConfig::load(&a.config)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    if a.dim == 0 {
        return Err(Error::Contract("--dim must be > 0".into()));
    }
    ModelParams::init(&config, a.dim, vocab.len(), a.seed).save(&a.out)
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let providers = a.embeddings.providers()?;
    let (config, params) = load_model(&a.config, &a.params, &vocab, providers.dim())?;
    let records = if let Some(path) = &a.corpus {
        load_corpus(path)?
            .iter()
            .map(|d| {
                let input = providers.prepare_document(d, &vocab, &config)?;
                Ok(SparseRecord {
                    id: d.id.clone(),
                    vector: encode_document_input(&input, &config, &params)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let path = a
            .queries
            .as_ref()
            .expect("clap requires --corpus or --queries");
        load_queries(path)?
            .iter()
            .map(|q| {
                let input = providers.prepare_query_record(q, &vocab, &config)?;
                Ok(SparseRecord {
                    id: q.id.clone(),
                    vector: encode_query_input(&input, &config, &params)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    write_jsonl(&a.out, &records)?;
    eprintln!("encoded {} records to {}", records.len(), a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let providers = a.embeddings.providers()?;
    let config = EncoderConfig::load(&a.config)?;
    config.validate()?;
    let mut tcfg = match &a.training_config {
        Some(path) => TrainingConfig::load(path)?,
        None => TrainingConfig::default(),
    };
    tcfg.seed = a.embeddings.seed;
    let init = match &a.params {
        Some(path) => {
            let p = ModelParams::load(path)?;
            p.check(&config, providers.dim(), vocab.len())?;
            p
        }
        None => ModelParams::init(&config, providers.dim(), vocab.len(), tcfg.seed),
    };

    let pairs = read_pairs(&a.pairs)?;
    let wanted_q: HashSet<&str> = pairs.iter().map(|p| p.query_id.as_str()).collect();
    let wanted_d: HashSet<&str> = pairs.iter().map(|p| p.doc_id.as_str()).collect();
    let queries = load_queries(&a.queries)?
        .iter()
        .filter(|q| wanted_q.contains(q.id.as_str()))
        .map(|q| providers.prepare_query_record(q, &vocab, &config))
        .collect::<Result<Vec<_>>>()?;
    let docs = load_corpus(&a.corpus)?
        .iter()
        .filter(|d| wanted_d.contains(d.id.as_str()))
        .map(|d| providers.prepare_document(d, &vocab, &config))
        .collect::<Result<Vec<_>>>()?;

    let outcome = train(
        &pairs,
        &TrainingData::new(queries, docs),
        &tcfg,
        &config,
        init,
    )?;
    for e in &outcome.epochs {
        eprintln!(
            "epoch {}: mean infonce {:.6}, mean total {:.6}",
            e.epoch, e.mean_infonce, e.mean_total
        );
    }
    save_checkpoint(
        &a.out,
        &outcome.params,
        CheckpointManifest {
            epoch: tcfg.epochs,
            seed: tcfg.seed,
        },
    )?;
    write_text(&a.loss_log, outcome.loss_log_csv())
}

pub fn cmd_index(a: &IndexArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let docs: Vec<(String, SparseVector)> = read_jsonl(&a.vectors)?
        .into_iter()
        .map(|r| (r.id, r.vector))
        .collect();
    let index = InvertedIndex::build(&docs, vocab.len())?;
    index.save(&a.out)?;
    let s = index.stats();
    eprintln!(
        "indexed {} documents: {} terms used, {} postings, mean list length {:.2}",
        s.doc_count, s.terms_used, s.total_postings, s.mean_posting_length
    );
    Ok(())
}

pub fn cmd_search(a: &SearchArgs) -> Result<()> {
    if a.tag.is_empty() || a.tag.chars().any(char::is_whitespace) {
        return Err(Error::Contract(format!(
            "run tag {:?} must be non-empty without whitespace",
            a.tag
        )));
    }
    let index = InvertedIndex::load(&a.index)?;
    let queries = read_jsonl(&a.queries)?;
    let lists = queries
        .iter()
        .map(|q| {
            q.vector.check_vocab(index.vocab_size())?;
            Ok(index.search(&q.id, &q.vector, a.k))
        })
        .collect::<Result<Vec<_>>>()?;
    Run {
        tag: a.tag.clone(),
        lists,
    }
    .write(&a.out)
}

fn parse_cutoffs(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Contract(format!("bad cutoff {s:?} in --cutoffs")))
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let run = Run::read(&a.run)?;
    let qrels = Qrels::read(&a.qrels)?;
    let cutoffs = match &a.cutoffs {
        Some(text) => Cutoffs::uniform(&parse_cutoffs(text)?),
        None => Cutoffs::default(),
    };
    let report = evaluate_run(&run.lists, &qrels, &cutoffs)?;
    write_json(&a.out, &report)?;
    print!(
        "{}",
        report.to_table(if run.tag.is_empty() { "-" } else { &run.tag })
    );
    if !report.skipped_queries.is_empty() || !report.no_relevant_queries.is_empty() {
        eprintln!(
            "{} run queries without judgments, {} without relevant documents (excluded from means)",
            report.skipped_queries.len(),
            report.no_relevant_queries.len()
        );
    }
    Ok(())
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let records = read_jsonl(&a.vectors)?;
    for r in &records {
        r.vector.check_vocab(vocab.len())?;
    }
    let vectors: Vec<SparseVector> = records.iter().map(|r| r.vector.clone()).collect();
    let mean_stopword_mass = match &a.stoplist {
        Some(path) => {
            let stop: HashSet<String> = read_lines(path)?.into_iter().collect();
            let total: f64 = vectors
                .iter()
                .map(|v| stopword_mass(v, &vocab, &stop))
                .sum();
            Some(if vectors.is_empty() {
                0.0
            } else {
                total / vectors.len() as f64
            })
        }
        None => None,
    };
    let report = DiagnosticsReport {
        coactivation: coactivation_report(&vectors, vocab.len()),
        mean_stopword_mass,
    };
    write_json(&a.out, &report)?;
    if let Some(path) = &a.top_terms {
        let pairs: Vec<(String, SparseVector)> =
            records.into_iter().map(|r| (r.id, r.vector)).collect();
        write_text(path, top_terms_tsv(&pairs, &vocab, a.top_k))?;
    }
    let c = &report.coactivation;
    println!(
        "documents {}  active terms {}/{}  mean active dims {:.2}  density {:.4}  postings per active term {:.2}",
        c.doc_count, c.active_terms, c.vocab_size, c.mean_active_dims, c.density, c.expected_postings_per_active_term
    );
    Ok(())
}
