#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use mlsr::diagnostics::{coactivation_report, CoActivationReport};
use mlsr::encoders::{encode_document_input, encode_query_input, DocInput, Providers, QueryInput};
use mlsr::eval::{evaluate_run, Cutoffs, MetricReport};
use mlsr::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use mlsr::training::{train, TrainOutcome, TrainingConfig, TrainingData};
use mlsr::{EmbeddingProvider, EncoderConfig, InvertedIndex, ModelParams, SparseVector, Variant};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

/// Toy token embeddings plus the corpus's image vectors held in memory.
pub fn providers(corpus: &SyntheticCorpus, spec: &SyntheticSpec) -> Providers {
    let records: HashMap<_, _> = corpus.images.iter().cloned().collect();
    Providers {
        text: EmbeddingProvider::toy(spec.dim, spec.embedding_seed).unwrap(),
        items: Some(EmbeddingProvider::File {
            dim: spec.dim,
            source: PathBuf::from("<memory>"),
            records,
        }),
    }
}

pub struct Trained {
    pub corpus: SyntheticCorpus,
    pub config: EncoderConfig,
    pub outcome: TrainOutcome,
    pub queries: Vec<QueryInput>,
    pub docs: Vec<DocInput>,
}

impl Trained {
    pub fn params(&self) -> &ModelParams {
        &self.outcome.params
    }

    pub fn doc_vectors(&self) -> Vec<(String, SparseVector)> {
        self.docs
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    encode_document_input(d, &self.config, self.params()).unwrap(),
                )
            })
            .collect()
    }

    pub fn query_vector(&self, q: &QueryInput) -> SparseVector {
        encode_query_input(q, &self.config, self.params()).unwrap()
    }

    pub fn doc_density(&self) -> CoActivationReport {
        let vecs: Vec<SparseVector> = self.doc_vectors().into_iter().map(|(_, v)| v).collect();
        coactivation_report(&vecs, self.corpus.vocab.len())
    }

    /// Held-out queries against every document in the corpus.
    pub fn held_out_report(&self, k: usize) -> MetricReport {
        let index = InvertedIndex::build(&self.doc_vectors(), self.corpus.vocab.len()).unwrap();
        let by_id: HashMap<&str, &QueryInput> =
            self.queries.iter().map(|q| (q.id.as_str(), q)).collect();
        let run: Vec<_> = self
            .corpus
            .held_out_pairs
            .iter()
            .map(|p| {
                index.search(
                    &p.query_id,
                    &self.query_vector(by_id[p.query_id.as_str()]),
                    k,
                )
            })
            .collect();
        evaluate_run(&run, &self.corpus.held_out_qrels(), &Cutoffs::uniform(&[k])).unwrap()
    }
}

pub fn train_synthetic(variant: Variant, tcfg: &TrainingConfig) -> Trained {
    let spec = SyntheticSpec::default();
    let corpus = generate(&spec).unwrap();
    let providers = providers(&corpus, &spec);
    let config = EncoderConfig::new(variant);
    let queries: Vec<QueryInput> = corpus
        .queries
        .iter()
        .map(|q| {
            providers
                .prepare_query_record(q, &corpus.vocab, &config)
                .unwrap()
        })
        .collect();
    let docs: Vec<DocInput> = corpus
        .docs
        .iter()
        .map(|d| {
            providers
                .prepare_document(d, &corpus.vocab, &config)
                .unwrap()
        })
        .collect();
    let data = TrainingData::new(queries.clone(), docs.clone());
    let init = ModelParams::init(&config, spec.dim, corpus.vocab.len(), tcfg.seed);
    let outcome = train(&corpus.train_pairs, &data, tcfg, &config, init).unwrap();
    Trained {
        corpus,
        config,
        outcome,
        queries,
        docs,
    }
}
