//! Small classifiers with an explicit embedding stage.
//!
//! Every model maps token ids through an embedding table to a `[B, L, d]`
//! tensor, then pools and classifies. Exposing the embedding tensor as a
//! first-class graph node is what lets the adversarial step perturb it and
//! read `dL/dx` at exactly that point. Dense-feature models (vocab size 0)
//! skip the table and take the `[B, L, d]` input directly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::{NodeId, Tape};
use crate::loss;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp,
    TinyTransformer,
}

/// Architecture description. `hidden_dims` are the MLP hidden widths, or the
/// feed-forward width of a transformer block (first entry, default `2*d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// 0 selects dense-feature mode (no embedding table).
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    /// Transformer blocks (1 or 2); must be 0 for other kinds.
    pub blocks: usize,
}

impl ModelSpec {
    pub fn linear(vocab_size: usize, embed_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            vocab_size,
            embed_dim,
            hidden_dims: Vec::new(),
            num_classes,
            blocks: 0,
        }
    }

    pub fn mlp(
        vocab_size: usize,
        embed_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
    ) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            vocab_size,
            embed_dim,
            hidden_dims,
            num_classes,
            blocks: 0,
        }
    }

    pub fn tiny_transformer(
        vocab_size: usize,
        embed_dim: usize,
        ffn_dim: usize,
        num_classes: usize,
        blocks: usize,
    ) -> Self {
        ModelSpec {
            kind: ModelKind::TinyTransformer,
            vocab_size,
            embed_dim,
            hidden_dims: vec![ffn_dim],
            num_classes,
            blocks,
        }
    }

    pub fn validate(&self) -> CoreResult<()> {
        let fail = |detail: String| Err(CoreError::InvalidArgument { detail });
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".to_string());
        }
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        match self.kind {
            ModelKind::Linear => {
                if self.blocks != 0 {
                    return fail("linear model takes no blocks".to_string());
                }
            }
            ModelKind::Mlp => {
                if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
                    return fail("mlp needs positive hidden dims".to_string());
                }
                if self.blocks != 0 {
                    return fail("mlp takes no blocks".to_string());
                }
            }
            ModelKind::TinyTransformer => {
                if !(1..=2).contains(&self.blocks) {
                    return fail(format!("transformer blocks must be 1 or 2, got {}", self.blocks));
                }
            }
        }
        Ok(())
    }

    fn ffn_dim(&self) -> usize {
        self.hidden_dims
            .first()
            .copied()
            .unwrap_or(2 * self.embed_dim)
    }

    /// Ordered (name, shape) template of all parameters.
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let c = self.num_classes;
        let mut out = Vec::new();
        if self.vocab_size > 0 {
            out.push(("embed.table".into(), vec![self.vocab_size, d]));
        }
        match self.kind {
            ModelKind::Linear => {
                out.push(("head.weight".into(), vec![d, c]));
                out.push(("head.bias".into(), vec![c]));
            }
            ModelKind::Mlp => {
                let mut prev = d;
                for (i, &h) in self.hidden_dims.iter().enumerate() {
                    out.push((format!("mlp.{i}.weight"), vec![prev, h]));
                    out.push((format!("mlp.{i}.bias"), vec![h]));
                    prev = h;
                }
                out.push(("head.weight".into(), vec![prev, c]));
                out.push(("head.bias".into(), vec![c]));
            }
            ModelKind::TinyTransformer => {
                let ff = self.ffn_dim();
                for b in 0..self.blocks {
                    out.push((format!("block.{b}.attn.wq"), vec![d, d]));
                    out.push((format!("block.{b}.attn.wk"), vec![d, d]));
                    out.push((format!("block.{b}.attn.wv"), vec![d, d]));
                    out.push((format!("block.{b}.attn.wo"), vec![d, d]));
                    out.push((format!("block.{b}.ffn.w1"), vec![d, ff]));
                    out.push((format!("block.{b}.ffn.b1"), vec![ff]));
                    out.push((format!("block.{b}.ffn.w2"), vec![ff, d]));
                    out.push((format!("block.{b}.ffn.b2"), vec![d]));
                }
                out.push(("head.weight".into(), vec![d, c]));
                out.push(("head.bias".into(), vec![c]));
            }
        }
        out
    }
}

#[derive(Clone)]
struct ParamEntry {
    name: String,
    tensor: Tensor,
    offset: usize,
}

/// Named model parameters with a flat scalar index space.
///
/// The flat index enumerates every scalar across all parameter tensors in
/// declaration order; per-scalar buffers (gradients, importance scores,
/// probabilities, masks) are plain vectors indexed the same way.
#[derive(Clone)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParameterStore {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> CoreResult<Self> {
        let mut out = Vec::with_capacity(entries.len());
        let mut offset = 0;
        for (name, tensor) in entries {
            if out.iter().any(|e: &ParamEntry| e.name == name) {
                return Err(CoreError::InvalidArgument {
                    detail: format!("duplicate parameter name {name}"),
                });
            }
            let len = tensor.len();
            out.push(ParamEntry {
                name,
                tensor,
                offset,
            });
            offset += len;
        }
        Ok(ParameterStore {
            entries: out,
            total: offset,
        })
    }

    pub fn scalar_count(&self) -> usize {
        self.total
    }

    pub fn param_count(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Flat index of scalar `offset` within parameter `name`.
    pub fn flat_index(&self, name: &str, offset: usize) -> CoreResult<usize> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::InvalidArgument {
                detail: format!("unknown parameter {name}"),
            })?;
        if offset >= entry.tensor.len() {
            return Err(CoreError::InvalidArgument {
                detail: format!("offset {offset} out of range for {name}"),
            });
        }
        Ok(entry.offset + offset)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn locate(&self, flat: usize) -> CoreResult<(&str, usize)> {
        if flat >= self.total {
            return Err(CoreError::InvalidArgument {
                detail: format!("flat index {flat} out of range"),
            });
        }
        let i = self
            .entries
            .partition_point(|e| e.offset <= flat)
            .saturating_sub(1);
        let entry = &self.entries[i];
        Ok((entry.name.as_str(), flat - entry.offset))
    }

    /// All scalar values in flat order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Applies `delta` per flat scalar: `value[i] += delta[i]`.
    pub fn add_flat(&mut self, delta: &[f64]) -> CoreResult<()> {
        if delta.len() != self.total {
            return Err(CoreError::LengthMismatch {
                op: "add-flat",
                left: self.total,
                right: delta.len(),
            });
        }
        for e in &mut self.entries {
            let base = e.offset;
            for (j, v) in e.tensor.data_mut().iter_mut().enumerate() {
                *v += delta[base + j];
            }
        }
        Ok(())
    }

    /// Overwrites a single scalar; used by finite-difference probing.
    pub fn set_scalar(&mut self, flat: usize, value: f64) -> CoreResult<()> {
        if flat >= self.total {
            return Err(CoreError::InvalidArgument {
                detail: format!("flat index {flat} out of range"),
            });
        }
        let i = self
            .entries
            .partition_point(|e| e.offset <= flat)
            .saturating_sub(1);
        let entry = &mut self.entries[i];
        entry.tensor.data_mut()[flat - entry.offset] = value;
        Ok(())
    }

    pub fn scalar(&self, flat: usize) -> CoreResult<f64> {
        let (name, off) = self.locate(flat)?;
        let name = String::from(name);
        Ok(self.tensor(&name).unwrap().data()[off])
    }

    pub fn check_finite(&self) -> CoreResult<()> {
        for e in &self.entries {
            e.tensor.check_finite("parameter-store")?;
        }
        Ok(())
    }
}

/// Scaled uniform initialization: weights in `±1/sqrt(fan_in)` (the leading
/// tensor dimension; the embedding dim for the table), biases zero.
/// Deterministic in `seed`.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> CoreResult<ParameterStore> {
    spec.validate()?;
    let mut rng = RandomSource::new(seed);
    let mut entries = Vec::new();
    for (name, shape) in spec.layout() {
        let len: usize = shape.iter().product();
        let data = if shape.len() == 1 {
            vec![0.0; len]
        } else {
            let fan_in = if name == "embed.table" {
                shape[1]
            } else {
                shape[0]
            };
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            (0..len).map(|_| rng.uniform_in(-bound, bound)).collect()
        };
        entries.push((name, Tensor::new(shape, data)?));
    }
    ParameterStore::from_entries(entries)
}

/// A fixed-length batch of token sequences.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
}

impl TokenBatch {
    pub fn from_rows(rows: &[Vec<usize>]) -> CoreResult<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(CoreError::EmptyInput { op: "token-batch" });
        }
        let seq_len = rows[0].len();
        if rows.iter().any(|r| r.len() != seq_len) {
            return Err(CoreError::InvalidArgument {
                detail: "token rows must share one sequence length".to_string(),
            });
        }
        let mut ids = Vec::with_capacity(rows.len() * seq_len);
        for r in rows {
            ids.extend_from_slice(r);
        }
        Ok(TokenBatch {
            ids,
            batch: rows.len(),
            seq_len,
        })
    }
}

/// Nodes of one forward construction on a tape.
pub struct ForwardPass {
    /// Parameter leaves, aligned with the store's declaration order.
    pub params: Vec<NodeId>,
    /// The `[B, L, d]` embedding node the adversarial step perturbs.
    pub embeddings: NodeId,
    /// `[B, C]` output logits.
    pub logits: NodeId,
}

#[derive(Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParameterStore,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> CoreResult<Self> {
        let store = init_parameters(&spec, seed)?;
        Ok(Model { spec, store })
    }

    /// Rebuilds a model around existing parameters, validating them against
    /// the spec's layout.
    pub fn from_parts(spec: ModelSpec, store: ParameterStore) -> CoreResult<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != store.param_count() {
            return Err(CoreError::InvalidArgument {
                detail: format!(
                    "expected {} parameters, got {}",
                    layout.len(),
                    store.param_count()
                ),
            });
        }
        for ((name, shape), (got_name, got)) in layout.iter().zip(store.iter()) {
            if name != got_name || shape.as_slice() != got.shape() {
                return Err(CoreError::InvalidArgument {
                    detail: format!("parameter {got_name} does not match spec layout"),
                });
            }
        }
        Ok(Model { spec, store })
    }

    /// Registers every parameter tensor as a differentiable leaf.
    pub fn bind_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.store
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), true))
            .collect()
    }

    fn param(&self, params: &[NodeId], name: &str) -> NodeId {
        params[self.store.index_of(name).expect("layout invariant")]
    }

    /// Embedding lookup producing the `[B, L, d]` perturbation point.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        batch: &TokenBatch,
    ) -> CoreResult<NodeId> {
        if self.spec.vocab_size == 0 {
            return Err(CoreError::InvalidArgument {
                detail: "dense-feature model has no embedding table".to_string(),
            });
        }
        let table = self.param(params, "embed.table");
        tape.gather_rows(table, &batch.ids, &[batch.batch, batch.seq_len])
    }

    /// Classifier head over an embedding node of shape `[B, L, d]`.
    pub fn logits_from_embeddings(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        embeddings: NodeId,
    ) -> CoreResult<NodeId> {
        let shape = tape.value(embeddings).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.spec.embed_dim {
            return Err(CoreError::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "expected [batch, seq, {}], got {shape:?}",
                    self.spec.embed_dim
                ),
            });
        }
        let mut x = embeddings;
        if self.spec.kind == ModelKind::TinyTransformer {
            for b in 0..self.spec.blocks {
                x = self.transformer_block(tape, params, x, b)?;
            }
        }
        let pooled = tape.mean_axis(x, 1)?;
        let features = match self.spec.kind {
            ModelKind::Linear | ModelKind::TinyTransformer => pooled,
            ModelKind::Mlp => {
                let mut h = pooled;
                for i in 0..self.spec.hidden_dims.len() {
                    let w = self.param(params, &format!("mlp.{i}.weight"));
                    let b = self.param(params, &format!("mlp.{i}.bias"));
                    let lin = tape.matmul(h, w)?;
                    let biased = tape.add_bias(lin, b)?;
                    h = tape.relu(biased)?;
                }
                h
            }
        };
        let w = self.param(params, "head.weight");
        let b = self.param(params, "head.bias");
        let lin = tape.matmul(features, w)?;
        tape.add_bias(lin, b)
    }

    /// Single-head self-attention plus feed-forward, both residual.
    fn transformer_block(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        x: NodeId,
        block: usize,
    ) -> CoreResult<NodeId> {
        let shape = tape.value(x).shape().to_vec();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let flat_shape = [b * l, d];
        let p = |name: &str| -> NodeId { self.param(params, name) };

        let flat = tape.reshape(x, &flat_shape)?;
        let wq = p(&format!("block.{block}.attn.wq"));
        let wk = p(&format!("block.{block}.attn.wk"));
        let wv = p(&format!("block.{block}.attn.wv"));
        let wo = p(&format!("block.{block}.attn.wo"));

        let q2 = tape.matmul(flat, wq)?;
        let k2 = tape.matmul(flat, wk)?;
        let v2 = tape.matmul(flat, wv)?;
        let q = tape.reshape(q2, &[b, l, d])?;
        let k = tape.reshape(k2, &[b, l, d])?;
        let v = tape.reshape(v2, &[b, l, d])?;

        let kt = tape.transpose_last(k)?;
        let raw_scores = tape.batch_matmul(q, kt)?;
        let scores = tape.scale(raw_scores, 1.0 / libm::sqrt(d as f64))?;
        let attn = tape.row_softmax(scores)?;
        let ctx = tape.batch_matmul(attn, v)?;
        let ctx_flat = tape.reshape(ctx, &flat_shape)?;
        let mixed = tape.matmul(ctx_flat, wo)?;
        let mixed3 = tape.reshape(mixed, &[b, l, d])?;
        let x = tape.add(x, mixed3)?;

        let w1 = p(&format!("block.{block}.ffn.w1"));
        let b1 = p(&format!("block.{block}.ffn.b1"));
        let w2 = p(&format!("block.{block}.ffn.w2"));
        let b2 = p(&format!("block.{block}.ffn.b2"));
        let flat = tape.reshape(x, &flat_shape)?;
        let h_lin = tape.matmul(flat, w1)?;
        let h_biased = tape.add_bias(h_lin, b1)?;
        let h = tape.tanh(h_biased)?;
        let o_lin = tape.matmul(h, w2)?;
        let o = tape.add_bias(o_lin, b2)?;
        let o3 = tape.reshape(o, &[b, l, d])?;
        tape.add(x, o3)
    }

    /// Full forward from token ids.
    pub fn forward_tokens(&self, tape: &mut Tape, batch: &TokenBatch) -> CoreResult<ForwardPass> {
        let params = self.bind_params(tape);
        let embeddings = self.embed_tokens(tape, &params, batch)?;
        let logits = self.logits_from_embeddings(tape, &params, embeddings)?;
        Ok(ForwardPass {
            params,
            embeddings,
            logits,
        })
    }

    /// Forward from a pre-built embedding tensor (dense features or stored
    /// adversarial embeddings). The embedding leaf is differentiable so
    /// `dL/dx` exists at that node.
    pub fn forward_embeddings(&self, tape: &mut Tape, emb: Tensor) -> CoreResult<ForwardPass> {
        let params = self.bind_params(tape);
        let embeddings = tape.leaf(emb, true);
        let logits = self.logits_from_embeddings(tape, &params, embeddings)?;
        Ok(ForwardPass {
            params,
            embeddings,
            logits,
        })
    }

    /// Softmax class probabilities for a token batch.
    pub fn predict_proba(&self, batch: &TokenBatch) -> CoreResult<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward_tokens(&mut tape, batch)?;
        let proba = tape.row_softmax(pass.logits)?;
        Ok(tape.value(proba).clone())
    }

    /// Softmax class probabilities for explicit embeddings.
    pub fn predict_proba_embeddings(&self, emb: Tensor) -> CoreResult<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward_embeddings(&mut tape, emb)?;
        let proba = tape.row_softmax(pass.logits)?;
        Ok(tape.value(proba).clone())
    }

    /// Embedding values for a token batch (no gradient tracking).
    pub fn embedding_values(&self, batch: &TokenBatch) -> CoreResult<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind_params(&mut tape);
        let emb = self.embed_tokens(&mut tape, &params, batch)?;
        Ok(tape.value(emb).clone())
    }

    /// Mean cross-entropy of the model on a labeled token batch.
    pub fn task_loss(&self, batch: &TokenBatch, labels: &[usize]) -> CoreResult<f64> {
        let mut tape = Tape::new();
        let pass = self.forward_tokens(&mut tape, batch)?;
        let ce = loss::cross_entropy(&mut tape, pass.logits, labels)?;
        tape.value(ce).item()
    }
}
