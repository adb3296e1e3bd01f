//! Small pre-LN transformer encoder with a tied LM head.
//!
//! Hidden states are kept one token per row inside the tape; the public
//! tensor-level helpers expose the column layout (`e x l`) used for prompts.

mod checkpoint;
mod pretrain;

pub use checkpoint::{checkpoint_parameter_count, load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use pretrain::{masked_token_accuracy, pretrain, PretrainConfig, PretrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::vocab;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            model_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_seq_len: 64,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return bad(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.vocab_size <= vocab::NUM_SPECIAL {
            return bad(format!(
                "vocab_size {} leaves no room beyond {} special tokens",
                self.vocab_size,
                vocab::NUM_SPECIAL
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.ffn_dim == 0 || self.max_seq_len == 0 {
            return bad("ffn_dim and max_seq_len must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Closed-form number of weights.
    pub fn parameter_count(&self) -> usize {
        let (v, e, f, s) = (self.vocab_size, self.model_dim, self.ffn_dim, self.max_seq_len);
        let attention = 4 * e * e + 4 * e;
        let norms = 4 * e;
        let ffn = e * f + f + f * e + e;
        v * e + s * e + self.num_layers * (attention + norms + ffn) + 2 * e
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub attn_norm_gain: Tensor,
    pub attn_norm_bias: Tensor,
    pub query: Tensor,
    pub query_bias: Tensor,
    pub key: Tensor,
    pub key_bias: Tensor,
    pub value: Tensor,
    pub value_bias: Tensor,
    pub output: Tensor,
    pub output_bias: Tensor,
    pub ffn_norm_gain: Tensor,
    pub ffn_norm_bias: Tensor,
    pub ffn_in: Tensor,
    pub ffn_in_bias: Tensor,
    pub ffn_out: Tensor,
    pub ffn_out_bias: Tensor,
}

impl LayerWeights {
    const NAMES: [&'static str; 16] = [
        "attn_norm_gain",
        "attn_norm_bias",
        "query",
        "query_bias",
        "key",
        "key_bias",
        "value",
        "value_bias",
        "output",
        "output_bias",
        "ffn_norm_gain",
        "ffn_norm_bias",
        "ffn_in",
        "ffn_in_bias",
        "ffn_out",
        "ffn_out_bias",
    ];

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.query,
            &self.query_bias,
            &self.key,
            &self.key_bias,
            &self.value,
            &self.value_bias,
            &self.output,
            &self.output_bias,
            &self.ffn_norm_gain,
            &self.ffn_norm_bias,
            &self.ffn_in,
            &self.ffn_in_bias,
            &self.ffn_out,
            &self.ffn_out_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.query,
            &mut self.query_bias,
            &mut self.key,
            &mut self.key_bias,
            &mut self.value,
            &mut self.value_bias,
            &mut self.output,
            &mut self.output_bias,
            &mut self.ffn_norm_gain,
            &mut self.ffn_norm_bias,
            &mut self.ffn_in,
            &mut self.ffn_in_bias,
            &mut self.ffn_out,
            &mut self.ffn_out_bias,
        ]
    }
}

/// All weights `θ`. The LM head is tied to `token_embedding`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm_gain: Tensor,
    pub final_norm_bias: Tensor,
}

impl BackboneWeights {
    /// Tensors in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LayerWeights::NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm_gain".to_string(), &self.final_norm_gain));
        out.push(("final_norm_bias".to_string(), &self.final_norm_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &mut self.token_embedding),
            ("position_embedding".to_string(), &mut self.position_embedding),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in LayerWeights::NAMES.iter().zip(layer.tensors_mut()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("final_norm_gain".to_string(), &mut self.final_norm_gain));
        out.push(("final_norm_bias".to_string(), &mut self.final_norm_bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Canonical little-endian serialization of every weight.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, t) in self.named_tensors() {
            out.extend((name.len() as u64).to_le_bytes());
            out.extend(name.as_bytes());
            t.write_bytes(&mut out);
        }
        out
    }

    /// First 8 bytes of the SHA-256 of [`Self::to_bytes`].
    pub fn content_hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    fn set_requires_grad(&mut self, flag: bool) {
        for (_, t) in self.named_tensors_mut() {
            t.set_requires_grad(flag);
        }
    }

    /// Checks names, count and shapes against `config`.
    pub(crate) fn check_shapes(&self, config: &BackboneConfig) -> Result<()> {
        let reference = init_weights(config, &mut ChaCha8Rng::seed_from_u64(0), true);
        let ours = self.named_tensors();
        let theirs = reference.named_tensors();
        if ours.len() != theirs.len() {
            return Err(Error::Integrity(format!(
                "expected {} tensors, found {}",
                theirs.len(),
                ours.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in ours.iter().zip(&theirs) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Integrity(format!(
                    "tensor {n1} {:?} does not match expected {n2} {:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        Ok(())
    }
}

fn init_weights(config: &BackboneConfig, rng: &mut ChaCha8Rng, zeros: bool) -> BackboneWeights {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut gaussian = |shape: &[usize]| {
        let len = shape.iter().product();
        let data = if zeros {
            vec![0.0; len]
        } else {
            (0..len).map(|_| normal.sample(rng)).collect()
        };
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    };
    let (e, f) = (config.model_dim, config.ffn_dim);
    let token_embedding = gaussian(&[config.vocab_size, e]);
    let position_embedding = gaussian(&[config.max_seq_len, e]);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm_gain: Tensor::filled(&[e], 1.0),
            attn_norm_bias: Tensor::zeros(&[e]),
            query: gaussian(&[e, e]),
            query_bias: gaussian(&[e]),
            key: gaussian(&[e, e]),
            key_bias: gaussian(&[e]),
            value: gaussian(&[e, e]),
            value_bias: gaussian(&[e]),
            output: gaussian(&[e, e]),
            output_bias: gaussian(&[e]),
            ffn_norm_gain: Tensor::filled(&[e], 1.0),
            ffn_norm_bias: Tensor::zeros(&[e]),
            ffn_in: gaussian(&[e, f]),
            ffn_in_bias: gaussian(&[f]),
            ffn_out: gaussian(&[f, e]),
            ffn_out_bias: gaussian(&[e]),
        })
        .collect();
    BackboneWeights {
        token_embedding,
        position_embedding,
        layers,
        final_norm_gain: Tensor::filled(&[e], 1.0),
        final_norm_bias: Tensor::zeros(&[e]),
    }
}

/// Backbone whose weights may still be trained (pretraining, full fine-tuning).
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    weights: BackboneWeights,
    dropout_enabled: bool,
}

/// Seeded Gaussian initialization; layer-norm gains start at 1 and biases at 0.
pub fn init_backbone(config: BackboneConfig) -> Result<Backbone> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = init_weights(&config, &mut rng, false);
    weights.set_requires_grad(true);
    Ok(Backbone {
        config,
        weights,
        dropout_enabled: true,
    })
}

impl Backbone {
    pub(crate) fn from_parts(config: BackboneConfig, weights: BackboneWeights, dropout_enabled: bool) -> Self {
        Self {
            config,
            weights,
            dropout_enabled,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn weights(&self) -> &BackboneWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut BackboneWeights {
        &mut self.weights
    }

    pub fn dropout_enabled(&self) -> bool {
        self.dropout_enabled
    }

    pub fn set_dropout(&mut self, enabled: bool) {
        self.dropout_enabled = enabled;
    }

    pub fn weights_hash(&self) -> u64 {
        self.weights.content_hash()
    }

    /// Dropout rate that applies to a forward pass in the given mode.
    pub fn effective_dropout(&self, training: bool) -> f64 {
        if training && self.dropout_enabled {
            self.config.dropout_p
        } else {
            0.0
        }
    }

    /// Marks every weight non-trainable and records the content hash.
    pub fn freeze(mut self) -> FrozenBackbone {
        self.weights.set_requires_grad(false);
        let weights_hash = self.weights.content_hash();
        FrozenBackbone {
            inner: self,
            weights_hash,
        }
    }

    /// Places the weights on `tape`, differentiable iff `trainable`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> BoundBackbone {
        let mut leaf = |t: &'a Tensor| if trainable { tape.param(t) } else { tape.constant(t) };
        let w = &self.weights;
        let token_embedding = leaf(&w.token_embedding);
        let position_embedding = leaf(&w.position_embedding);
        let layers = w
            .layers
            .iter()
            .map(|l| {
                let t = l.tensors();
                BoundLayer {
                    attn_norm_gain: leaf(t[0]),
                    attn_norm_bias: leaf(t[1]),
                    query: leaf(t[2]),
                    query_bias: leaf(t[3]),
                    key: leaf(t[4]),
                    key_bias: leaf(t[5]),
                    value: leaf(t[6]),
                    value_bias: leaf(t[7]),
                    output: leaf(t[8]),
                    output_bias: leaf(t[9]),
                    ffn_norm_gain: leaf(t[10]),
                    ffn_norm_bias: leaf(t[11]),
                    ffn_in: leaf(t[12]),
                    ffn_in_bias: leaf(t[13]),
                    ffn_out: leaf(t[14]),
                    ffn_out_bias: leaf(t[15]),
                }
            })
            .collect();
        let final_norm_gain = leaf(&w.final_norm_gain);
        let final_norm_bias = leaf(&w.final_norm_bias);
        BoundBackbone {
            token_embedding,
            position_embedding,
            layers,
            final_norm_gain,
            final_norm_bias,
            num_heads: self.config.num_heads,
            max_seq_len: self.config.max_seq_len,
            vocab_size: self.config.vocab_size,
        }
    }

    fn check_sequence(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Parameter("token sequence must be nonempty".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// `X ∈ R^{e x l}`: column `i` is the embedding of token `i`.
    pub fn embed(&self, tokens: &[usize]) -> Result<Tensor> {
        self.check_sequence(tokens)?;
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape, false);
        let rows = bound.embed_rows(&mut tape, tokens)?;
        let cols = tape.transpose(rows);
        Ok(tape.to_tensor(cols))
    }

    /// Runs the encoder over `[P | X]` and returns `e x (n + l)` hidden states.
    ///
    /// Dropout is only active when `training` is set and dropout is enabled.
    pub fn encode_with_prompt(&self, prompt: &Tensor, input: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
        let e = self.config.model_dim;
        let (pe, n) = prompt_dims(prompt, e);
        let (xe, _) = input.dims();
        if pe != e || xe != e {
            return Err(Error::Dimension {
                op: "encode_with_prompt",
                left: prompt.shape().to_vec(),
                right: input.shape().to_vec(),
            });
        }
        let mut tape = Tape::new(seed);
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input);
        let x_rows = tape.transpose(x);
        let seq = if n == 0 {
            x_rows
        } else {
            let p = tape.constant(prompt);
            let p_rows = tape.transpose(p);
            tape.concat_rows(&[p_rows, x_rows])?
        };
        let hidden = bound.encode_rows(&mut tape, seq, self.effective_dropout(training))?;
        let out = tape.transpose(hidden);
        Ok(tape.to_tensor(out))
    }

    /// Mean-pools hidden columns and applies the tied LM head: logits over `V`.
    pub fn predict_label_distribution(&self, hidden: &Tensor) -> Result<Tensor> {
        let (e, t) = hidden.dims();
        if e != self.config.model_dim || t == 0 {
            return Err(Error::Dimension {
                op: "predict_label_distribution",
                left: hidden.shape().to_vec(),
                right: vec![self.config.model_dim],
            });
        }
        let mut tape = Tape::new(0);
        let bound = self.bind(&mut tape, false);
        let h = tape.constant(hidden);
        let rows = tape.transpose(h);
        let logits = bound.pooled_logits(&mut tape, rows)?;
        Ok(Tensor::vector(tape.value(logits).to_vec()))
    }
}

fn prompt_dims(prompt: &Tensor, e: usize) -> (usize, usize) {
    if prompt.is_empty() {
        (e, 0)
    } else {
        prompt.dims()
    }
}

/// Immutable host model used for prompt tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBackbone {
    inner: Backbone,
    weights_hash: u64,
}

impl FrozenBackbone {
    pub fn model(&self) -> &Backbone {
        &self.inner
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.inner.config
    }

    pub fn weights(&self) -> &BackboneWeights {
        &self.inner.weights
    }

    /// Hash recorded at freeze time.
    pub fn weights_hash(&self) -> u64 {
        self.weights_hash
    }

    /// Hash of the weights as they are now.
    pub fn current_hash(&self) -> u64 {
        self.inner.weights.content_hash()
    }

    pub fn serialize_weights(&self) -> Vec<u8> {
        self.inner.weights.to_bytes()
    }

    pub fn dropout_enabled(&self) -> bool {
        self.inner.dropout_enabled
    }

    pub fn set_dropout(&mut self, enabled: bool) {
        self.inner.dropout_enabled = enabled;
    }

    pub fn embedding_row(&self, token: usize) -> &[f64] {
        self.inner.weights.token_embedding.row(token)
    }

    pub fn parameter_count(&self) -> usize {
        self.inner.weights.parameter_count()
    }

    /// A trainable copy, for full fine-tuning.
    pub fn unfreeze(&self) -> Backbone {
        let mut b = self.inner.clone();
        b.weights.set_requires_grad(true);
        b
    }
}

pub fn freeze(backbone: Backbone) -> FrozenBackbone {
    backbone.freeze()
}

pub(crate) struct BoundLayer {
    attn_norm_gain: Var,
    attn_norm_bias: Var,
    query: Var,
    query_bias: Var,
    key: Var,
    key_bias: Var,
    value: Var,
    value_bias: Var,
    output: Var,
    output_bias: Var,
    ffn_norm_gain: Var,
    ffn_norm_bias: Var,
    ffn_in: Var,
    ffn_in_bias: Var,
    ffn_out: Var,
    ffn_out_bias: Var,
}

impl BoundLayer {
    fn vars(&self) -> [Var; 16] {
        [
            self.attn_norm_gain,
            self.attn_norm_bias,
            self.query,
            self.query_bias,
            self.key,
            self.key_bias,
            self.value,
            self.value_bias,
            self.output,
            self.output_bias,
            self.ffn_norm_gain,
            self.ffn_norm_bias,
            self.ffn_in,
            self.ffn_in_bias,
            self.ffn_out,
            self.ffn_out_bias,
        ]
    }
}

/// Backbone weights placed on a tape.
pub struct BoundBackbone {
    token_embedding: Var,
    position_embedding: Var,
    layers: Vec<BoundLayer>,
    final_norm_gain: Var,
    final_norm_bias: Var,
    num_heads: usize,
    max_seq_len: usize,
    vocab_size: usize,
}

impl BoundBackbone {
    /// Leaf handles in the same order as [`BackboneWeights::named_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding, self.position_embedding];
        for l in &self.layers {
            out.extend(l.vars());
        }
        out.push(self.final_norm_gain);
        out.push(self.final_norm_bias);
        out
    }

    pub fn token_embedding(&self) -> Var {
        self.token_embedding
    }

    /// Token embeddings, one row per token.
    pub fn embed_rows(&self, tape: &mut Tape<'_>, tokens: &[usize]) -> Result<Var> {
        tape.gather_rows(self.token_embedding, tokens)
    }

    /// Adds positions `0..T` and runs every layer plus the final norm.
    pub fn encode_rows(&self, tape: &mut Tape<'_>, seq: Var, dropout_p: f64) -> Result<Var> {
        let (stacked, _) = self.encode_stacked(tape, &[seq], dropout_p)?;
        Ok(stacked)
    }

    /// Encodes several sequences together and returns one hidden matrix each.
    ///
    /// Dense sublayers run once over the stacked rows; attention never
    /// crosses sequence boundaries, so each output equals what
    /// [`encode_rows`](Self::encode_rows) gives for that sequence alone
    /// when dropout is off.
    pub fn encode_batch(&self, tape: &mut Tape<'_>, seqs: &[Var], dropout_p: f64) -> Result<Vec<Var>> {
        let (stacked, lengths) = self.encode_stacked(tape, seqs, dropout_p)?;
        if seqs.len() == 1 {
            return Ok(vec![stacked]);
        }
        let mut out = Vec::with_capacity(seqs.len());
        let mut offset = 0;
        for &t in &lengths {
            out.push(tape.slice_rows(stacked, offset, t)?);
            offset += t;
        }
        Ok(out)
    }

    /// Like [`encode_batch`](Self::encode_batch) but leaves the outputs
    /// stacked in input order, with the per-sequence lengths.
    pub fn encode_stacked(&self, tape: &mut Tape<'_>, seqs: &[Var], dropout_p: f64) -> Result<(Var, Vec<usize>)> {
        let lengths: Vec<usize> = seqs.iter().map(|&s| tape.dims(s).0).collect();
        if let Some(&t) = lengths.iter().find(|&&t| t > self.max_seq_len) {
            return Err(Error::Parameter(format!(
                "sequence of {t} positions exceeds max_seq_len {}",
                self.max_seq_len
            )));
        }
        let positions: Vec<usize> = lengths.iter().flat_map(|&t| 0..t).collect();
        let pos = tape.gather_rows(self.position_embedding, &positions)?;
        let rows = if seqs.len() == 1 { seqs[0] } else { tape.concat_rows(seqs)? };
        let mut x = tape.add(rows, pos)?;
        let training = dropout_p > 0.0;
        for layer in &self.layers {
            x = self.layer_forward(tape, layer, x, &lengths, dropout_p, training)?;
        }
        let x = tape.layer_norm_rows(x, self.final_norm_gain, self.final_norm_bias, LAYER_NORM_EPS)?;
        Ok((x, lengths))
    }

    fn layer_forward(
        &self,
        tape: &mut Tape<'_>,
        l: &BoundLayer,
        x: Var,
        lengths: &[usize],
        p: f64,
        training: bool,
    ) -> Result<Var> {
        let h = tape.layer_norm_rows(x, l.attn_norm_gain, l.attn_norm_bias, LAYER_NORM_EPS)?;
        let q = linear(tape, h, l.query, l.query_bias)?;
        let k = linear(tape, h, l.key, l.key_bias)?;
        let v = linear(tape, h, l.value, l.value_bias)?;
        let merged = tape.attention(q, k, v, lengths, self.num_heads, p, training)?;
        let attn_out = linear(tape, merged, l.output, l.output_bias)?;
        let attn_out = tape.dropout(attn_out, p, training)?;
        let x = tape.add(x, attn_out)?;

        let h = tape.layer_norm_rows(x, l.ffn_norm_gain, l.ffn_norm_bias, LAYER_NORM_EPS)?;
        let inner = linear(tape, h, l.ffn_in, l.ffn_in_bias)?;
        let inner = tape.gelu(inner);
        let inner = tape.dropout(inner, p, training)?;
        let ffn_out = linear(tape, inner, l.ffn_out, l.ffn_out_bias)?;
        let ffn_out = tape.dropout(ffn_out, p, training)?;
        tape.add(x, ffn_out)
    }

    /// Mean-pooled read-out through the tied embedding: a `V x 1` logit column.
    pub fn pooled_logits(&self, tape: &mut Tape<'_>, hidden_rows: Var) -> Result<Var> {
        let pooled = tape.mean_rows(hidden_rows);
        let column = tape.transpose(pooled);
        let logits = tape.matmul(self.token_embedding, column)?;
        debug_assert_eq!(tape.dims(logits).0, self.vocab_size);
        Ok(logits)
    }
}

fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_broadcast(y, b)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
