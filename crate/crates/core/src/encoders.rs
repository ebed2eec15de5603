//! Sparse projection heads and the bi-encoder variants built from them.
//!
//! * MLP head: each input token position `j` scores `ReLU(h_j · W + b)`;
//!   term `i` gets `sum over positions with t_j = i of ln(1 + score_j)`.
//!   Only input tokens can receive weight.
//! * MLM head: a pooled vector `h_0` is projected onto every vocabulary term,
//!   `w_i = ReLU(h_0 · e_i + b_i)`, so any term may activate.
//!
//! | variant | query | caption                | image |
//! |---------|-------|------------------------|-------|
//! | M1      | MLM   | -                      | MLM   |
//! | M2      | MLP   | -                      | MLM   |
//! | M3      | MLP   | MLP (query head reused) | -     |
//! | M4      | MLP   | MLP (query head reused) | MLM   |

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{mean_pool, DenseEmbedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::ingest::{build_query_text, DocumentRecord, QueryRecord};
use crate::sparse::SparseVector;
use crate::vocab::{tokenize, TermId, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Mlp,
    Mlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: Variant,
    #[serde(default)]
    pub fusion: Fusion,
    /// Keep only this many MLM activations per vector.
    #[serde(default)]
    pub mlm_top_k: Option<usize>,
}

impl EncoderConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            fusion: Fusion::Sum,
            mlm_top_k: None,
        }
    }

    pub fn query_head(&self) -> HeadKind {
        match self.variant {
            Variant::M1 => HeadKind::Mlm,
            _ => HeadKind::Mlp,
        }
    }

    pub fn uses_caption(&self) -> bool {
        matches!(self.variant, Variant::M3 | Variant::M4)
    }

    pub fn uses_image(&self) -> bool {
        !matches!(self.variant, Variant::M3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlm_top_k == Some(0) {
            return Err(Error::Contract("mlm_top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHeadParams {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl MlpHeadParams {
    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn pre_activation(&self, h: &DenseEmbedding) -> f64 {
        h.dot(&self.weight) + self.bias
    }
}

/// `term_embeddings` is row-major `vocab_size x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHeadParams {
    pub dim: usize,
    pub term_embeddings: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MlmHeadParams {
    pub fn new(rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != bias.len() {
            return Err(Error::Contract(format!(
                "MLM head has {} rows but {} biases",
                rows.len(),
                bias.len()
            )));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Contract("MLM head rows differ in length".into()));
        }
        Ok(Self {
            dim,
            term_embeddings: rows.into_iter().flatten().collect(),
            bias,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, term: usize) -> &[f64] {
        &self.term_embeddings[term * self.dim..(term + 1) * self.dim]
    }

    pub fn pre_activations(&self, h0: &DenseEmbedding) -> Vec<f64> {
        (0..self.vocab_size())
            .map(|i| h0.dot(self.row(i)) + self.bias[i])
            .collect()
    }
}

/// All head parameters of one bi-encoder. The MLP head is shared between the
/// query side and caption encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mlp: Option<MlpHeadParams>,
    pub query_mlm: Option<MlmHeadParams>,
    pub doc_mlm: Option<MlmHeadParams>,
}

impl ModelParams {
    /// Weights uniform in `(-1/sqrt(d), 1/sqrt(d))`, biases zero.
    pub fn init(config: &EncoderConfig, dim: usize, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let mlp = (config.query_head() == HeadKind::Mlp).then(|| MlpHeadParams {
            weight: draw(dim),
            bias: 0.0,
        });
        let query_mlm = (config.query_head() == HeadKind::Mlm).then(|| MlmHeadParams {
            dim,
            term_embeddings: draw(vocab_size * dim),
            bias: vec![0.0; vocab_size],
        });
        let doc_mlm = config.uses_image().then(|| MlmHeadParams {
            dim,
            term_embeddings: draw(vocab_size * dim),
            bias: vec![0.0; vocab_size],
        });
        Self {
            mlp,
            query_mlm,
            doc_mlm,
        }
    }

    pub fn check(&self, config: &EncoderConfig, dim: usize, vocab_size: usize) -> Result<()> {
        let need_mlp = config.query_head() == HeadKind::Mlp;
        let need_qmlm = config.query_head() == HeadKind::Mlm;
        let need_dmlm = config.uses_image();
        let missing =
            |what: &str| Error::Contract(format!("{:?} requires a {what}", config.variant));
        if need_mlp != self.mlp.is_some() {
            return Err(missing("query MLP head (and no other)"));
        }
        if need_qmlm != self.query_mlm.is_some() {
            return Err(missing("query MLM head (and no other)"));
        }
        if need_dmlm != self.doc_mlm.is_some() {
            return Err(missing("document MLM head (and no other)"));
        }
        if let Some(mlp) = &self.mlp {
            if mlp.dim() != dim {
                return Err(Error::Contract(format!(
                    "MLP head dimension {} != embedding dimension {dim}",
                    mlp.dim()
                )));
            }
        }
        for mlm in [&self.query_mlm, &self.doc_mlm].into_iter().flatten() {
            if mlm.dim != dim || mlm.vocab_size() != vocab_size {
                return Err(Error::Contract(format!(
                    "MLM head is {}x{}, expected {vocab_size}x{dim}",
                    mlm.vocab_size(),
                    mlm.dim
                )));
            }
        }
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        if self.flat().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Data("non-finite head parameter".into()))
        }
    }

    /// Every parameter in a fixed order: MLP W, MLP b, query MLM E, query MLM
    /// bias, document MLM E, document MLM bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(m) = &self.mlp {
            out.extend_from_slice(&m.weight);
            out.push(m.bias);
        }
        for m in [&self.query_mlm, &self.doc_mlm].into_iter().flatten() {
            out.extend_from_slice(&m.term_embeddings);
            out.extend_from_slice(&m.bias);
        }
        out
    }

    /// Mutable references in the same order as [`ModelParams::flat`].
    pub fn flat_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        if let Some(m) = &mut self.mlp {
            out.extend(m.weight.iter_mut());
            out.push(&mut m.bias);
        }
        for m in [&mut self.query_mlm, &mut self.doc_mlm]
            .into_iter()
            .flatten()
        {
            out.extend(m.term_embeddings.iter_mut());
            out.extend(m.bias.iter_mut());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for v in z.flat_mut() {
            *v = 0.0;
        }
        z
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for line in self.to_lines() {
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut params = Self {
            mlp: None,
            query_mlm: None,
            doc_mlm: None,
        };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ParamLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
            let dup = || Error::parse(path, n + 1, "head declared twice");
            match parsed {
                ParamLine::Mlp { weight, b } => {
                    if params.mlp.is_some() {
                        return Err(dup());
                    }
                    params.mlp = Some(MlpHeadParams { weight, bias: b });
                }
                ParamLine::Mlm { rows, bias, role } => {
                    let head = MlmHeadParams::new(rows, bias)
                        .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
                    let slot = match role.unwrap_or(Role::Document) {
                        Role::Query => &mut params.query_mlm,
                        Role::Document => &mut params.doc_mlm,
                    };
                    if slot.is_some() {
                        return Err(dup());
                    }
                    *slot = Some(head);
                }
            }
        }
        params.check_finite()?;
        Ok(params)
    }

    fn to_lines(&self) -> Vec<ParamLine> {
        let mut lines = Vec::new();
        if let Some(m) = &self.mlp {
            lines.push(ParamLine::Mlp {
                weight: m.weight.clone(),
                b: m.bias,
            });
        }
        for (m, role) in [
            (&self.query_mlm, Role::Query),
            (&self.doc_mlm, Role::Document),
        ] {
            if let Some(m) = m {
                lines.push(ParamLine::Mlm {
                    rows: (0..m.vocab_size()).map(|i| m.row(i).to_vec()).collect(),
                    bias: m.bias.clone(),
                    role: Some(role),
                });
            }
        }
        lines
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Query,
    Document,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "lowercase")]
enum ParamLine {
    Mlp {
        #[serde(rename = "W")]
        weight: Vec<f64>,
        b: f64,
    },
    Mlm {
        #[serde(rename = "E")]
        rows: Vec<Vec<f64>>,
        bias: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
    },
}

pub fn mlp_encode(
    tokens: &TokenSequence,
    embeddings: &[DenseEmbedding],
    params: &MlpHeadParams,
) -> Result<SparseVector> {
    if tokens.len() != embeddings.len() {
        return Err(Error::Contract(format!(
            "{} tokens but {} embeddings",
            tokens.len(),
            embeddings.len()
        )));
    }
    let mut weights: BTreeMap<TermId, f64> = BTreeMap::new();
    for (&term, h) in tokens.ids().iter().zip(embeddings) {
        if h.dim() != params.dim() {
            return Err(Error::Contract(format!(
                "embedding dimension {} != MLP dimension {}",
                h.dim(),
                params.dim()
            )));
        }
        let score = params.pre_activation(h);
        if score > 0.0 {
            *weights.entry(term).or_insert(0.0) += score.ln_1p();
        }
    }
    SparseVector::from_sorted(weights.into_iter().filter(|&(_, w)| w > 0.0).collect())
}

pub fn mlm_encode(
    pooled: &DenseEmbedding,
    params: &MlmHeadParams,
    top_k: Option<usize>,
) -> Result<SparseVector> {
    if pooled.dim() != params.dim {
        return Err(Error::Contract(format!(
            "pooled dimension {} != MLM dimension {}",
            pooled.dim(),
            params.dim
        )));
    }
    let activations: Vec<f64> = params
        .pre_activations(pooled)
        .into_iter()
        .map(|z| z.max(0.0))
        .collect();
    let v = SparseVector::from_dense(&activations);
    Ok(match top_k {
        Some(k) => v.top_k(k),
        None => v,
    })
}

pub fn fuse_document_vectors(
    caption: &SparseVector,
    image: &SparseVector,
    rule: Fusion,
) -> SparseVector {
    match rule {
        Fusion::Sum => caption.add(image),
        Fusion::Max => caption.max(image),
    }
}

/// Tokens with their contextual embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextInput {
    pub tokens: TokenSequence,
    pub embeddings: Vec<DenseEmbedding>,
}

/// Everything the query encoder of a given variant needs.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryInput {
    pub id: String,
    pub text: TextInput,
    /// Present for MLM query heads with non-empty input.
    pub pooled: Option<DenseEmbedding>,
}

/// Everything the document encoder of a given variant needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DocInput {
    pub id: String,
    pub caption: Option<TextInput>,
    pub image: Option<DenseEmbedding>,
}

pub fn encode_query_input(
    query: &QueryInput,
    config: &EncoderConfig,
    params: &ModelParams,
) -> Result<SparseVector> {
    match config.query_head() {
        HeadKind::Mlp => {
            let mlp = params
                .mlp
                .as_ref()
                .ok_or_else(|| Error::Contract("missing query MLP head".into()))?;
            mlp_encode(&query.text.tokens, &query.text.embeddings, mlp)
        }
        HeadKind::Mlm => {
            let mlm = params
                .query_mlm
                .as_ref()
                .ok_or_else(|| Error::Contract("missing query MLM head".into()))?;
            match &query.pooled {
                Some(h0) => mlm_encode(h0, mlm, config.mlm_top_k),
                None => Ok(SparseVector::empty()),
            }
        }
    }
}

pub fn encode_document_input(
    doc: &DocInput,
    config: &EncoderConfig,
    params: &ModelParams,
) -> Result<SparseVector> {
    let caption_vec = if config.uses_caption() {
        let caption = doc
            .caption
            .as_ref()
            .ok_or_else(|| Error::Data(format!("document {:?} has no caption", doc.id)))?;
        let mlp = params
            .mlp
            .as_ref()
            .ok_or_else(|| Error::Contract("missing shared MLP head".into()))?;
        Some(mlp_encode(&caption.tokens, &caption.embeddings, mlp)?)
    } else {
        None
    };
    let image_vec = if config.uses_image() {
        let image = doc
            .image
            .as_ref()
            .ok_or_else(|| Error::Data(format!("document {:?} has no image embedding", doc.id)))?;
        let mlm = params
            .doc_mlm
            .as_ref()
            .ok_or_else(|| Error::Contract("missing document MLM head".into()))?;
        Some(mlm_encode(image, mlm, config.mlm_top_k)?)
    } else {
        None
    };
    Ok(match (caption_vec, image_vec) {
        (Some(c), Some(i)) => fuse_document_vectors(&c, &i, config.fusion),
        (Some(c), None) => c,
        (None, Some(i)) => i,
        (None, None) => SparseVector::empty(),
    })
}

/// Embedding sources: `text` supplies token embeddings (toy or token-level
/// file); `items` supplies item-level pooled vectors (images, and optionally
/// pooled queries).
#[derive(Debug, Clone)]
pub struct Providers {
    pub text: EmbeddingProvider,
    pub items: Option<EmbeddingProvider>,
}

impl Providers {
    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    pub fn check(&self) -> Result<()> {
        if let Some(items) = &self.items {
            if items.dim() != self.text.dim() {
                return Err(Error::Contract(format!(
                    "item embeddings have dimension {}, token embeddings {}",
                    items.dim(),
                    self.text.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn text_input(&self, text: &str, vocab: &Vocabulary) -> Result<TextInput> {
        let tokens = tokenize(text, vocab);
        let embeddings = self.text.embed_tokens(&tokens)?;
        Ok(TextInput { tokens, embeddings })
    }

    pub fn prepare_query(
        &self,
        id: &str,
        text: &str,
        vocab: &Vocabulary,
        config: &EncoderConfig,
    ) -> Result<QueryInput> {
        let text = self.text_input(text, vocab)?;
        let pooled = if config.query_head() == HeadKind::Mlm {
            match &self.items {
                Some(items) if items.contains(id) => Some(items.embed_pooled(id, None)?),
                _ if text.tokens.is_empty() => None,
                _ if self.text.is_toy() => Some(self.text.embed_pooled(id, Some(&text.tokens))?),
                _ => Some(mean_pool(&text.embeddings)?),
            }
        } else {
            None
        };
        Ok(QueryInput {
            id: id.to_string(),
            text,
            pooled,
        })
    }

    pub fn prepare_query_record(
        &self,
        q: &QueryRecord,
        vocab: &Vocabulary,
        config: &EncoderConfig,
    ) -> Result<QueryInput> {
        self.prepare_query(&q.id, &build_query_text(q), vocab, config)
    }

    pub fn prepare_document(
        &self,
        doc: &DocumentRecord,
        vocab: &Vocabulary,
        config: &EncoderConfig,
    ) -> Result<DocInput> {
        let caption = match (&doc.caption, config.uses_caption()) {
            (Some(c), true) => Some(self.text_input(c, vocab)?),
            (None, true) => {
                return Err(Error::Data(format!("document {:?} has no caption", doc.id)))
            }
            _ => None,
        };
        let image = if config.uses_image() {
            let image_ref = doc.image_embedding_ref.as_deref().ok_or_else(|| {
                Error::Data(format!("document {:?} has no image embedding", doc.id))
            })?;
            let items = self.items.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "document {:?} needs an image embedding but no item embedding file was given",
                    doc.id
                ))
            })?;
            Some(items.embed_pooled(image_ref, None).map_err(|e| match e {
                Error::Lookup(id) => Error::Data(format!(
                    "document {:?}: image embedding {id:?} not found",
                    doc.id
                )),
                other => other,
            })?)
        } else {
            None
        };
        Ok(DocInput {
            id: doc.id.clone(),
            caption,
            image,
        })
    }
}

/// Encodes raw queries and documents with fixed parameters.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    pub config: &'a EncoderConfig,
    pub params: &'a ModelParams,
    pub vocab: &'a Vocabulary,
    pub providers: &'a Providers,
}

impl Encoder<'_> {
    pub fn encode_query(&self, id: &str, text: &str) -> Result<SparseVector> {
        let input = self
            .providers
            .prepare_query(id, text, self.vocab, self.config)?;
        encode_query_input(&input, self.config, self.params)
    }

    pub fn encode_query_record(&self, q: &QueryRecord) -> Result<SparseVector> {
        self.encode_query(&q.id, &build_query_text(q))
    }

    pub fn encode_document(&self, doc: &DocumentRecord) -> Result<SparseVector> {
        let input = self
            .providers
            .prepare_document(doc, self.vocab, self.config)?;
        encode_document_input(&input, self.config, self.params)
    }
}
