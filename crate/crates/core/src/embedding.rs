//! Dense embedding providers standing in for the transformer backbone.
//!
//! Two kinds exist:
//!
//! * **toy**: context-free unit vectors generated from `(seed, token_id)`.
//! * **file**: precomputed vectors loaded from an embedding JSONL file,
//!   keyed by token id (`"17"`) for token-level files or by record id for
//!   item-level files (images, pooled queries).
//!
//! ## Toy generator recipe
//!
//! `splitmix64(x)` is the standard SplitMix64 step: add `0x9E3779B97F4A7C15`
//! then apply the finalizer `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//! z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31` (wrapping arithmetic).
//!
//! 1. `key = splitmix64(splitmix64(seed) ^ token_id)`
//! 2. Run a SplitMix64 stream from state `key`: component `k` (0-based) is
//!    `splitmix64(key + k * 0x9E3779B97F4A7C15)`, i.e. the `k+1`-th output.
//! 3. Map each 64-bit output `z` to `(z >> 11) * 2^-53 * 2 - 1` in `[-1, 1)`.
//! 4. Divide by the Euclidean norm.
//!
//! Pooled toy vectors are the mean of the token vectors, renormalized.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TermId, TokenSequence};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseEmbedding(pub Vec<f64>);

impl DenseEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            self.0.iter_mut().for_each(|v| *v /= norm);
        }
        self
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The toy embedding of one vocabulary term.
pub fn toy_token_embedding(seed: u64, token_id: TermId, dim: usize) -> DenseEmbedding {
    let mut state = splitmix64(splitmix64(seed) ^ u64::from(token_id));
    let values = (0..dim)
        .map(|_| {
            let z = splitmix64(state);
            state = state.wrapping_add(GOLDEN_GAMMA);
            (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    DenseEmbedding(values).normalized()
}

/// Mean of the inputs, rescaled to unit length.
pub fn mean_pool(embeddings: &[DenseEmbedding]) -> Result<DenseEmbedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot pool an empty token sequence".into()))?;
    let mut sum = vec![0.0; first.dim()];
    for e in embeddings {
        for (s, v) in sum.iter_mut().zip(&e.0) {
            *s += v;
        }
    }
    let n = embeddings.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(DenseEmbedding(sum).normalized())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pooling: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Toy {
        dim: usize,
        seed: u64,
    },
    File {
        dim: usize,
        source: PathBuf,
        records: HashMap<String, DenseEmbedding>,
    },
}

impl EmbeddingProvider {
    pub fn toy(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("embedding dimension must be > 0".into()));
        }
        Ok(Self::Toy { dim, seed })
    }

    /// Loads an embedding JSONL file fully into memory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: EmbeddingHeader = loop {
            match lines.next() {
                None => return Err(Error::parse(path, 1, "missing {\"dim\": d} header")),
                Some((n, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line)
                        .map_err(|e| Error::parse(path, n + 1, format!("bad header: {e}")))?;
                }
            }
        };
        if header.dim == 0 {
            return Err(Error::parse(path, 1, "dim must be > 0"));
        }
        let mut records = HashMap::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
            if rec.values.len() != header.dim {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!(
                        "record {:?} has {} values, header declares {}",
                        rec.id,
                        rec.values.len(),
                        header.dim
                    ),
                ));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, n + 1, "non-finite embedding value"));
            }
            if records
                .insert(rec.id.clone(), DenseEmbedding(rec.values))
                .is_some()
            {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!("duplicate id {:?}", rec.id),
                ));
            }
        }
        Ok(Self::File {
            dim: header.dim,
            source: path.to_path_buf(),
            records,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy { dim, .. } | Self::File { dim, .. } => *dim,
        }
    }

    pub fn is_toy(&self) -> bool {
        matches!(self, Self::Toy { .. })
    }

    pub fn contains(&self, id: &str) -> bool {
        match self {
            Self::Toy { .. } => false,
            Self::File { records, .. } => records.contains_key(id),
        }
    }

    fn lookup(&self, id: &str) -> Result<DenseEmbedding> {
        match self {
            Self::Toy { .. } => Err(Error::Lookup(id.to_string())),
            Self::File { records, .. } => records
                .get(id)
                .cloned()
                .ok_or_else(|| Error::Lookup(id.to_string())),
        }
    }

    /// One embedding per token, in input order.
    pub fn embed_tokens(&self, tokens: &TokenSequence) -> Result<Vec<DenseEmbedding>> {
        tokens
            .ids()
            .iter()
            .map(|&t| match self {
                Self::Toy { dim, seed } => Ok(toy_token_embedding(*seed, t, *dim)),
                Self::File { .. } => self.lookup(&t.to_string()),
            })
            .collect()
    }

    /// The pooled vector of an item. File providers look `item_id` up; toy
    /// providers mean-pool `fallback_tokens`.
    pub fn embed_pooled(
        &self,
        item_id: &str,
        fallback_tokens: Option<&TokenSequence>,
    ) -> Result<DenseEmbedding> {
        match self {
            Self::File { .. } => self.lookup(item_id),
            Self::Toy { .. } => {
                let tokens = fallback_tokens.filter(|t| !t.is_empty()).ok_or_else(|| {
                    Error::EmptyInput(format!("no tokens to pool for item {item_id:?}"))
                })?;
                let mut embeddings = self.embed_tokens(tokens)?;
                if embeddings.len() == 1 {
                    // Already unit length; renormalising would only add rounding.
                    return Ok(embeddings.pop().unwrap());
                }
                mean_pool(&embeddings)
            }
        }
    }
}

/// Writes an embedding JSONL file (header line, then one record per line).
pub fn write_embedding_file(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[(String, DenseEmbedding)],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &EmbeddingHeader { dim, pooling: None })?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for (id, emb) in records {
        if emb.dim() != dim {
            return Err(Error::Contract(format!(
                "record {id:?} has dimension {}, expected {dim}",
                emb.dim()
            )));
        }
        let line = EmbeddingLine {
            id: id.clone(),
            values: emb.0.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent restatement of the documented recipe.
    fn reference_vector(seed: u64, token: u64, dim: usize) -> Vec<f64> {
        fn mix(mut z: u64) -> u64 {
            z = z.wrapping_add(0x9E3779B97F4A7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        }
        let key = mix(mix(seed) ^ token);
        let raw: Vec<f64> = (0..dim as u64)
            .map(|k| {
                let z = mix(key.wrapping_add(k.wrapping_mul(0x9E3779B97F4A7C15)));
                ((z >> 11) as f64) / 9007199254740992.0 * 2.0 - 1.0
            })
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v / norm).collect()
    }

    #[test]
    fn toy_vector_matches_documented_recipe() {
        let p = EmbeddingProvider::toy(4, 7).unwrap();
        let got = p.embed_tokens(&TokenSequence(vec![3])).unwrap();
        assert_eq!(got[0].0, reference_vector(7, 3, 4));
        assert!((got[0].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn toy_is_keyed_by_token_only() {
        let p = EmbeddingProvider::toy(8, 1).unwrap();
        assert!(p
            .embed_tokens(&TokenSequence::default())
            .unwrap()
            .is_empty());
        let e = p.embed_tokens(&TokenSequence(vec![5, 2, 5])).unwrap();
        assert_eq!(e[0], e[2]);
        assert_ne!(e[0], e[1]);
        let other_seed = EmbeddingProvider::toy(8, 2).unwrap();
        assert_ne!(
            other_seed.embed_tokens(&TokenSequence(vec![5])).unwrap()[0],
            e[0]
        );
    }

    #[test]
    fn toy_pooling() {
        let p = EmbeddingProvider::toy(6, 3).unwrap();
        let single = p.embed_pooled("q", Some(&TokenSequence(vec![9]))).unwrap();
        assert_eq!(single, p.embed_tokens(&TokenSequence(vec![9])).unwrap()[0]);
        assert!(matches!(
            p.embed_pooled("q", Some(&TokenSequence::default())),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            p.embed_pooled("q", None),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn mean_pool_of_orthogonal_units() {
        let u = DenseEmbedding(vec![1.0, 0.0, 0.0]);
        let w = DenseEmbedding(vec![0.0, 1.0, 0.0]);
        let pooled = mean_pool(&[u, w]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in pooled.0.iter().zip([h, h, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn file_provider_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let v = DenseEmbedding(vec![0.1, -0.25, 3.0]);
        write_embedding_file(
            &path,
            3,
            &[("img1".into(), v.clone()), ("4".into(), v.clone())],
        )
        .unwrap();
        let p = EmbeddingProvider::open(&path).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.embed_pooled("img1", None).unwrap(), v);
        assert_eq!(p.embed_tokens(&TokenSequence(vec![4])).unwrap(), vec![v]);
        match p.embed_pooled("nope", None) {
            Err(Error::Lookup(id)) => assert_eq!(id, "nope"),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, "{\"dim\":3}\n{\"id\":\"a\",\"values\":[1.0,2.0]}\n").unwrap();
        assert!(matches!(
            EmbeddingProvider::open(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
