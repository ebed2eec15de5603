//! Contrastive training of the projection heads.
//!
//! The loss of a batch of `B` aligned (query, document) pairs is
//!
//! ```text
//! infonce = (1/B) sum_q -log softmax_d(s_qd / tau)[q]      s_qd = <q_vec, d_vec>
//! flops(V) = sum_i (mean_n V[n][i])^2
//! total   = infonce + lambda * (flops(queries) + flops(documents))
//! ```
//!
//! Gradients are derived by hand through the heads. The backbone is frozen
//! (embeddings are inputs), so only `W`, `b`, `E` and the MLM biases move.
//! The ReLU subgradient at exactly zero is taken as zero. Updates are plain
//! SGD with a fixed learning rate.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DenseEmbedding;
use crate::encoders::{
    encode_document_input, encode_query_input, mlm_encode, mlp_encode, DocInput, EncoderConfig,
    Fusion, HeadKind, MlmHeadParams, MlpHeadParams, ModelParams, QueryInput, TextInput,
};
use crate::error::{Error, Result};
use crate::sparse::{dot, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub seed: u64,
    pub flops_lambda: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 2.0,
            temperature: 1.0,
            seed: 0,
            flops_lambda: 0.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("epochs and batch_size must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Contract("temperature must be > 0".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate < 0.0
            || self.flops_lambda.is_nan()
            || self.flops_lambda < 0.0
        {
            return Err(Error::Contract(
                "learning_rate and flops_lambda must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub query_id: String,
    pub doc_id: String,
}

/// Reads `query_id<TAB>doc_id` lines.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (q, d) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected query_id<TAB>doc_id"))?;
        pairs.push(TrainingPair {
            query_id: q.trim().to_string(),
            doc_id: d.trim().to_string(),
        });
    }
    Ok(pairs)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TrainingPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in pairs {
        writeln!(out, "{}\t{}", p.query_id, p.doc_id).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Row-wise softmax cross-entropy with the diagonal as targets, and its
/// gradient with respect to the raw scores.
pub fn infonce_with_grad(scores: &[Vec<f64>], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = scores.len();
    if scores.iter().any(|row| row.len() != b) {
        return Err(Error::Contract("score matrix must be square".into()));
    }
    if b == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut loss = 0.0;
    let mut grad = vec![vec![0.0; b]; b];
    for (q, row) in scores.iter().enumerate() {
        let scaled: Vec<f64> = row.iter().map(|s| s / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (scaled[q] - max);
        for d in 0..b {
            let p = exps[d] / z;
            let target = if d == q { 1.0 } else { 0.0 };
            grad[q][d] = (p - target) / (b as f64 * temperature);
        }
    }
    Ok(((loss / b as f64).max(0.0), grad))
}

pub fn infonce_loss(scores: &[Vec<f64>], temperature: f64) -> Result<f64> {
    infonce_with_grad(scores, temperature).map(|(l, _)| l)
}

/// `sum_i (mean over the batch of w_i)^2`.
pub fn flops_penalty(batch: &[SparseVector], vocab_size: usize) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let mut mean = vec![0.0; vocab_size];
    for v in batch {
        for (t, w) in v.iter() {
            mean[t as usize] += w;
        }
    }
    let n = batch.len() as f64;
    mean.iter().map(|m| (m / n).powi(2)).sum()
}

/// Adds `lambda * d flops / d V[n]` into `grads[n]`.
fn add_flops_grad(dense: &[Vec<f64>], lambda: f64, grads: &mut [Vec<f64>]) {
    let n = dense.len();
    if n == 0 || lambda == 0.0 {
        return;
    }
    let vocab = dense[0].len();
    let mut mean = vec![0.0; vocab];
    for v in dense {
        for (m, w) in mean.iter_mut().zip(v) {
            *m += w;
        }
    }
    let scale = 2.0 * lambda / (n as f64 * n as f64);
    for g in grads.iter_mut() {
        for (gi, m) in g.iter_mut().zip(&mean) {
            *gi += scale * m;
        }
    }
}

/// Query and document inputs of one batch, aligned by position.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub queries: &'a [&'a QueryInput],
    pub docs: &'a [&'a DocInput],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub infonce: f64,
    pub flops: f64,
    pub total: f64,
}

/// Width of the dense gradient buffers. MLP-only models (M3) cannot expand,
/// so every active term is an input token and the largest id bounds them.
fn vocab_size_of(params: &ModelParams, batch: Batch<'_>) -> usize {
    if let Some(mlm) = params.doc_mlm.as_ref().or(params.query_mlm.as_ref()) {
        return mlm.vocab_size();
    }
    let query_tokens = batch.queries.iter().flat_map(|q| q.text.tokens.ids());
    let caption_tokens = batch
        .docs
        .iter()
        .filter_map(|d| d.caption.as_ref())
        .flat_map(|c| c.tokens.ids());
    query_tokens
        .chain(caption_tokens)
        .max()
        .map_or(0, |&t| t as usize + 1)
}

struct Forward {
    queries: Vec<SparseVector>,
    docs: Vec<SparseVector>,
    loss: LossBreakdown,
    score_grad: Vec<Vec<f64>>,
}

fn forward_pass(
    batch: Batch<'_>,
    config: &EncoderConfig,
    params: &ModelParams,
    tcfg: &TrainingConfig,
    vocab_size: usize,
) -> Result<Forward> {
    if batch.queries.len() != batch.docs.len() {
        return Err(Error::Contract(
            "batch queries and documents differ in length".into(),
        ));
    }
    let queries = batch
        .queries
        .iter()
        .map(|q| encode_query_input(q, config, params))
        .collect::<Result<Vec<_>>>()?;
    let docs = batch
        .docs
        .iter()
        .map(|d| encode_document_input(d, config, params))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| docs.iter().map(|d| dot(q, d)).collect())
        .collect();
    let (infonce, score_grad) = infonce_with_grad(&scores, tcfg.temperature)?;
    let flops = if tcfg.flops_lambda > 0.0 {
        flops_penalty(&queries, vocab_size) + flops_penalty(&docs, vocab_size)
    } else {
        0.0
    };
    Ok(Forward {
        queries,
        docs,
        loss: LossBreakdown {
            infonce,
            flops,
            total: infonce + tcfg.flops_lambda * flops,
        },
        score_grad,
    })
}

/// Loss of one batch.
pub fn batch_loss(
    batch: Batch<'_>,
    config: &EncoderConfig,
    params: &ModelParams,
    tcfg: &TrainingConfig,
) -> Result<LossBreakdown> {
    let vocab_size = vocab_size_of(params, batch);
    Ok(forward_pass(batch, config, params, tcfg, vocab_size)?.loss)
}

fn mlp_backward(text: &TextInput, head: &MlpHeadParams, grad_w: &[f64], out: &mut MlpHeadParams) {
    for (&term, h) in text.tokens.ids().iter().zip(&text.embeddings) {
        let g = grad_w[term as usize];
        if g == 0.0 {
            continue;
        }
        let a = head.pre_activation(h);
        if a > 0.0 {
            let coef = g / (1.0 + a);
            for (o, x) in out.weight.iter_mut().zip(&h.0) {
                *o += coef * x;
            }
            out.bias += coef;
        }
    }
}

/// Only entries present in `encoded` (after ReLU and any top-k cut) carry
/// gradient.
fn mlm_backward(
    h0: &DenseEmbedding,
    encoded: &SparseVector,
    grad_w: &[f64],
    out: &mut MlmHeadParams,
) {
    let dim = out.dim;
    for t in encoded.term_ids() {
        let i = t as usize;
        let g = grad_w[i];
        if g == 0.0 {
            continue;
        }
        for (o, x) in out.term_embeddings[i * dim..(i + 1) * dim]
            .iter_mut()
            .zip(&h0.0)
        {
            *o += g * x;
        }
        out.bias[i] += g;
    }
}

/// Loss and the gradient of the total loss for every head parameter. The
/// gradient is returned in a [`ModelParams`] of the same shape.
pub fn backward(
    batch: Batch<'_>,
    config: &EncoderConfig,
    params: &ModelParams,
    tcfg: &TrainingConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let vocab_size = vocab_size_of(params, batch);
    let fwd = forward_pass(batch, config, params, tcfg, vocab_size)?;
    let b = fwd.queries.len();
    let q_dense: Vec<Vec<f64>> = fwd.queries.iter().map(|v| v.to_dense(vocab_size)).collect();
    let d_dense: Vec<Vec<f64>> = fwd.docs.iter().map(|v| v.to_dense(vocab_size)).collect();

    let mut gq = vec![vec![0.0; vocab_size]; b];
    let mut gd = vec![vec![0.0; vocab_size]; b];
    for q in 0..b {
        for d in 0..b {
            let g = fwd.score_grad[q][d];
            if g == 0.0 {
                continue;
            }
            for (t, w) in fwd.docs[d].iter() {
                gq[q][t as usize] += g * w;
            }
            for (t, w) in fwd.queries[q].iter() {
                gd[d][t as usize] += g * w;
            }
        }
    }
    add_flops_grad(&q_dense, tcfg.flops_lambda, &mut gq);
    add_flops_grad(&d_dense, tcfg.flops_lambda, &mut gd);

    let mut grads = params.zeros_like();

    for (q, input) in batch.queries.iter().enumerate() {
        match config.query_head() {
            HeadKind::Mlp => {
                let head = params
                    .mlp
                    .as_ref()
                    .expect("forward pass checked the MLP head");
                mlp_backward(&input.text, head, &gq[q], grads.mlp.as_mut().unwrap());
            }
            HeadKind::Mlm => {
                if let Some(h0) = &input.pooled {
                    mlm_backward(
                        h0,
                        &fwd.queries[q],
                        &gq[q],
                        grads.query_mlm.as_mut().unwrap(),
                    );
                }
            }
        }
    }

    for (d, input) in batch.docs.iter().enumerate() {
        let caption_vec = match (&input.caption, config.uses_caption()) {
            (Some(text), true) => {
                let head = params
                    .mlp
                    .as_ref()
                    .expect("forward pass checked the MLP head");
                Some((text, mlp_encode(&text.tokens, &text.embeddings, head)?))
            }
            _ => None,
        };
        let image_vec = match (&input.image, config.uses_image()) {
            (Some(h0), true) => {
                let head = params
                    .doc_mlm
                    .as_ref()
                    .expect("forward pass checked the MLM head");
                Some((h0, mlm_encode(h0, head, config.mlm_top_k)?))
            }
            _ => None,
        };

        // Route the fused-vector gradient to the two parts.
        let (g_caption, g_image) = match (&caption_vec, &image_vec, config.fusion) {
            (Some((_, c)), Some((_, m)), Fusion::Max) => {
                let mut gc = vec![0.0; vocab_size];
                let mut gm = vec![0.0; vocab_size];
                for i in 0..vocab_size {
                    let (cw, mw) = (
                        c.get(i as u32).unwrap_or(0.0),
                        m.get(i as u32).unwrap_or(0.0),
                    );
                    if cw >= mw {
                        gc[i] = gd[d][i];
                    } else {
                        gm[i] = gd[d][i];
                    }
                }
                (gc, gm)
            }
            _ => (gd[d].clone(), gd[d].clone()),
        };

        if let Some((text, _)) = caption_vec {
            let head = params.mlp.as_ref().unwrap();
            mlp_backward(text, head, &g_caption, grads.mlp.as_mut().unwrap());
        }
        if let Some((h0, encoded)) = image_vec {
            mlm_backward(h0, &encoded, &g_image, grads.doc_mlm.as_mut().unwrap());
        }
    }

    Ok((fwd.loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub infonce: f64,
    pub flops: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_infonce: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

impl TrainOutcome {
    /// CSV with header `step,epoch,infonce,flops,total`; values printed in
    /// shortest round-trip form.
    pub fn loss_log_csv(&self) -> String {
        let mut out = String::from("step,epoch,infonce,flops,total\n");
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.step, s.epoch, s.infonce, s.flops, s.total
            )
            .unwrap();
        }
        out
    }
}

/// Inputs available for resolving training pairs.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub queries: HashMap<String, QueryInput>,
    pub docs: HashMap<String, DocInput>,
}

impl TrainingData {
    pub fn new(queries: Vec<QueryInput>, docs: Vec<DocInput>) -> Self {
        Self {
            queries: queries.into_iter().map(|q| (q.id.clone(), q)).collect(),
            docs: docs.into_iter().map(|d| (d.id.clone(), d)).collect(),
        }
    }

    fn resolve<'a>(
        &'a self,
        pairs: &[TrainingPair],
    ) -> Result<Vec<(&'a QueryInput, &'a DocInput)>> {
        pairs
            .iter()
            .map(|p| {
                let q = self.queries.get(&p.query_id).ok_or_else(|| {
                    Error::Data(format!(
                        "training pair references unknown query {:?}",
                        p.query_id
                    ))
                })?;
                let d = self.docs.get(&p.doc_id).ok_or_else(|| {
                    Error::Data(format!(
                        "training pair references unknown document {:?}",
                        p.doc_id
                    ))
                })?;
                Ok((q, d))
            })
            .collect()
    }
}

/// Shuffling draws from ChaCha8 stream 1 of `seed`; [`ModelParams::init`]
/// uses stream 0.
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Runs `epochs x ceil(N / batch_size)` SGD steps starting from `init`.
pub fn train(
    pairs: &[TrainingPair],
    data: &TrainingData,
    tcfg: &TrainingConfig,
    config: &EncoderConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let resolved = data.resolve(pairs)?;
    let mut params = init;
    let mut rng = shuffle_rng(tcfg.seed);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut step = 0;
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_infonce, mut sum_total, mut n_steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let queries: Vec<&QueryInput> = chunk.iter().map(|&i| resolved[i].0).collect();
            let docs: Vec<&DocInput> = chunk.iter().map(|&i| resolved[i].1).collect();
            let batch = Batch {
                queries: &queries,
                docs: &docs,
            };
            let (loss, grads) = backward(batch, config, &params, tcfg)?;
            for (p, g) in params.flat_mut().into_iter().zip(grads.flat()) {
                *p -= tcfg.learning_rate * g;
            }
            step += 1;
            steps.push(StepLog {
                step,
                epoch,
                infonce: loss.infonce,
                flops: loss.flops,
                total: loss.total,
            });
            sum_infonce += loss.infonce;
            sum_total += loss.total;
            n_steps += 1;
        }
        epochs.push(EpochLog {
            epoch,
            mean_infonce: sum_infonce / n_steps as f64,
            mean_total: sum_total / n_steps as f64,
        });
    }
    Ok(TrainOutcome {
        params,
        steps,
        epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub epoch: usize,
    pub seed: u64,
}

/// Writes the parameter file at `path` and its manifest at
/// `<path>.manifest.json`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    manifest: CheckpointManifest,
) -> Result<()> {
    let path = path.as_ref();
    params.save(path)?;
    let mpath = manifest_path(path);
    fs::write(&mpath, serde_json::to_string(&manifest)? + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    name.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Coordinates whose analytic and numeric values were both below
    /// [`ZERO_GRADIENT_FLOOR`] and were therefore compared absolutely.
    pub near_zero_coordinates: usize,
}

/// Gradients smaller than this in both estimates are treated as zero. With
/// `epsilon = 1e-5` central differences carry roundoff near `1e-11`, so an
/// exact zero that the analytic side reaches only up to cancellation (e.g.
/// a bias whose softmax contributions sum to 0) would otherwise score a
/// relative error of 1.
pub const ZERO_GRADIENT_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|)`; the absolute error `|a - n|` when the analytic
/// value is exactly 0 or both values are below [`ZERO_GRADIENT_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == 0.0 || analytic.abs().max(numeric.abs()) < ZERO_GRADIENT_FLOOR {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs())
    }
}

/// Compares [`backward`] with central differences of the total loss.
/// `max_coords` limits the check to a seeded random subset of coordinates.
pub fn finite_diff_check(
    params: &ModelParams,
    batch: Batch<'_>,
    config: &EncoderConfig,
    tcfg: &TrainingConfig,
    epsilon: f64,
    max_coords: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Contract("epsilon must lie in (0, 1e-3]".into()));
    }
    let (_, grads) = backward(batch, config, params, tcfg)?;
    let analytic = grads.flat();
    let n = analytic.len();
    let coords: Vec<usize> = match max_coords {
        Some((k, seed)) if k < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(k);
            all.sort_unstable();
            all
        }
        _ => (0..n).collect(),
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        coordinates: coords.len(),
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        near_zero_coordinates: 0,
    };
    for &c in &coords {
        let original = *probe.flat_mut()[c];
        *probe.flat_mut()[c] = original + epsilon;
        let plus = batch_loss(batch, config, &probe, tcfg)?.total;
        *probe.flat_mut()[c] = original - epsilon;
        let minus = batch_loss(batch, config, &probe, tcfg)?.total;
        *probe.flat_mut()[c] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        if analytic[c] != 0.0 && analytic[c].abs().max(numeric.abs()) < ZERO_GRADIENT_FLOOR {
            report.near_zero_coordinates += 1;
        }
        report.max_relative_error = report
            .max_relative_error
            .max(relative_error(analytic[c], numeric));
        report.max_absolute_error = report.max_absolute_error.max((analytic[c] - numeric).abs());
    }
    Ok(report)
}
