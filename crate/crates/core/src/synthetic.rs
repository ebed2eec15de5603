//! Seeded synthetic text-image corpora for tests, demos and the bundled
//! fixture.
//!
//! Every pair owns a distinct set of topic terms. The query mentions those
//! topics in its title, surrounded by stopwords and punctuation; the
//! document's caption mentions them too, and its "image" embedding is the
//! normalised sum of the topics' toy token embeddings plus uniform noise.
//! Vocabulary entries named `fillerNN` never occur in any text and can only
//! be reached by MLM expansion.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{toy_token_embedding, DenseEmbedding};
use crate::error::Result;
use crate::eval::Qrels;
use crate::ingest::{DocumentRecord, QueryRecord};
use crate::training::TrainingPair;
use crate::vocab::Vocabulary;

pub const STOPWORDS: [&str; 10] = ["the", "of", "and", "a", "in", "to", "is", "with", ",", "."];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_pairs: usize,
    pub held_out_pairs: usize,
    pub topics: usize,
    pub topics_per_item: usize,
    pub fillers: usize,
    pub dim: usize,
    /// Amplitude of the uniform noise added to image embeddings.
    pub image_noise: f64,
    /// Seed of the toy token embeddings the images are derived from.
    pub embedding_seed: u64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_pairs: 256,
            held_out_pairs: 64,
            topics: 64,
            topics_per_item: 3,
            fillers: 32,
            dim: 16,
            image_noise: 0.1,
            embedding_seed: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: Vocabulary,
    pub queries: Vec<QueryRecord>,
    pub docs: Vec<DocumentRecord>,
    /// Item-level embeddings keyed by `image_embedding_ref`.
    pub images: Vec<(String, DenseEmbedding)>,
    pub train_pairs: Vec<TrainingPair>,
    pub held_out_pairs: Vec<TrainingPair>,
    /// One relevant document per query, for every query.
    pub qrels: Qrels,
    pub stoplist: Vec<String>,
}

impl SyntheticCorpus {
    pub fn held_out_qrels(&self) -> Qrels {
        let mut q = Qrels::new();
        for p in &self.held_out_pairs {
            q.insert(&p.query_id, &p.doc_id, 1)
                .expect("pairs are unique");
        }
        q
    }

    pub fn held_out_queries(&self) -> Vec<QueryRecord> {
        let ids: HashSet<&str> = self
            .held_out_pairs
            .iter()
            .map(|p| p.query_id.as_str())
            .collect();
        self.queries
            .iter()
            .filter(|q| ids.contains(q.id.as_str()))
            .cloned()
            .collect()
    }
}

fn topic_term(i: usize) -> String {
    format!("topic{i:02}")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut terms: Vec<String> = STOPWORDS.iter().map(|s| s.to_string()).collect();
    terms.extend((0..spec.topics).map(topic_term));
    terms.extend((0..spec.fillers).map(|i| format!("filler{i:02}")));
    let vocab = Vocabulary::new(terms)?;

    let total = spec.train_pairs + spec.held_out_pairs;
    let mut used: HashSet<BTreeSet<usize>> = HashSet::new();
    let mut topic_sets = Vec::with_capacity(total);
    while topic_sets.len() < total {
        let mut set = BTreeSet::new();
        while set.len() < spec.topics_per_item {
            set.insert(rng.gen_range(0..spec.topics));
        }
        if used.insert(set.clone()) {
            topic_sets.push(set);
        }
    }

    let stop = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&'static str> {
        (0..n).map(|_| *STOPWORDS.choose(rng).unwrap()).collect()
    };

    let mut queries = Vec::with_capacity(total);
    let mut docs = Vec::with_capacity(total);
    let mut images = Vec::with_capacity(total);
    let mut pairs = Vec::with_capacity(total);
    for (n, topics) in topic_sets.iter().enumerate() {
        let mut words: Vec<String> = topics.iter().map(|&t| topic_term(t)).collect();
        words.shuffle(&mut rng);
        let distractor = topic_term(rng.gen_range(0..spec.topics));

        let qid = format!("q{n:04}");
        let did = format!("d{n:04}");
        let img = format!("img{n:04}");
        queries.push(QueryRecord {
            id: qid.clone(),
            page_title: Some(words.join(" ")),
            section_title: Some(stop(&mut rng, 2).join(" ")),
            context_page_description: Some(format!("{distractor} {}", stop(&mut rng, 3).join(" "))),
            context_section_description: Some(stop(&mut rng, 4).join(" ")),
        });

        let mut caption: Vec<String> = words.clone();
        caption.extend(stop(&mut rng, 3).into_iter().map(String::from));
        caption.shuffle(&mut rng);
        docs.push(DocumentRecord {
            id: did.clone(),
            caption: Some(caption.join(" ")),
            image_embedding_ref: Some(img.clone()),
        });

        let mut h = vec![0.0; spec.dim];
        for &t in topics {
            let id = vocab.id(&topic_term(t)).expect("topic in vocab");
            let e = toy_token_embedding(spec.embedding_seed, id, spec.dim);
            for (a, b) in h.iter_mut().zip(&e.0) {
                *a += b;
            }
        }
        for a in h.iter_mut() {
            *a += spec.image_noise * rng.gen_range(-1.0..1.0);
        }
        images.push((img, DenseEmbedding(h).normalized()));

        pairs.push(TrainingPair {
            query_id: qid,
            doc_id: did,
        });
    }

    let mut qrels = Qrels::new();
    for p in &pairs {
        qrels.insert(&p.query_id, &p.doc_id, 1)?;
    }
    let held_out_pairs = pairs.split_off(spec.train_pairs);
    Ok(SyntheticCorpus {
        vocab,
        queries,
        docs,
        images,
        train_pairs: pairs,
        held_out_pairs,
        qrels,
        stoplist: STOPWORDS.iter().map(|s| s.to_string()).collect(),
    })
}
