//! Toy encoder–decoder with persona/dialogue cross-attention fusion.
//!
//! Dialogue utterances and persona sentences are each joined with the SEP
//! token and encoded by the same transformer encoder, giving `H_D` and
//! `H_P`. Fusion attends each sequence over the other without
//! `1/sqrt(d)` scaling, adds the result back and layer-normalizes:
//!
//! ```text
//! Z_D = softmax(H_D · H_Pᵀ) · H_P      Ĥ_D = LN(H_D + Z_D)
//! Z_P = softmax(H_P · H_Dᵀ) · H_D      Ĥ_P = LN(H_P + Z_P)
//! H_final = λ₁·Ĥ_D + λ₂·mean(Ĥ_P) + λ₃·H_D,   λ = softmax(w)
//! ```
//!
//! `mean(Ĥ_P)` is the row mean of `Ĥ_P` broadcast over dialogue positions,
//! so `H_final` always has the dialogue's length. With an empty persona the
//! fusion is bypassed and `H_final = H_D`.
//!
//! The decoder is trained on `[strategy token] + response + EOS`.

mod checkpoint;
mod graph;
mod matrix;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, NodeId};
pub use matrix::{log_softmax, softmax, Matrix};
pub use params::{Layout, ModelConfig, ParamStore};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::strategy::Strategy;
use network::{combine_nodes, cross_attend, Net};

/// Encoder outputs and fused states: one row per token, `d_model` columns.
pub type HiddenSeq = Matrix;

/// Which input an encoding is for. Both use the same encoder weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Dialogue,
    Persona,
}

/// Mixing logits `w` of the final hidden-state combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w: [f64; 3],
}

impl FusionWeights {
    /// `λ_i = exp(w_i) / Σ_j exp(w_j)`
    pub fn lambdas(&self) -> [f64; 3] {
        let p = softmax(&self.w);
        [p[0], p[1], p[2]]
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { w: [0.0; 3] }
    }
}

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    /// Checks non-negativity and unit mass within `1e-6`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("distribution has negative or non-finite entries".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("distribution sums to {s}")));
        }
        Ok(TokenDistribution(probs))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        TokenDistribution(softmax(logits))
    }

    pub fn uniform(v: usize) -> Self {
        TokenDistribution(vec![1.0 / v as f64; v])
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        TokenDistribution(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// One teacher-forced training item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Utterance tokens joined by SEP.
    pub dialogue: Vec<usize>,
    /// Persona sentence tokens joined by SEP; empty when nothing is known.
    pub persona: Vec<usize>,
    pub strategy: Strategy,
    pub response: Vec<usize>,
}

/// Joins token sequences with `sep` between them.
pub fn join_with_sep(parts: &[Vec<usize>], sep: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        out.extend_from_slice(p);
    }
    out
}

/// Pure fusion step on given encodings, with a plain (gain 1, bias 0)
/// layer norm. Errors when either input is empty or widths differ.
pub fn cross_fuse(h_d: &HiddenSeq, h_p: &HiddenSeq, eps: f64) -> Result<(HiddenSeq, HiddenSeq)> {
    if h_d.rows() == 0 || h_p.rows() == 0 {
        return Err(Error::Shape("cross_fuse needs non-empty dialogue and persona encodings; use the empty-persona bypass".into()));
    }
    if h_d.cols() != h_p.cols() {
        return Err(Error::Shape(format!("d_model mismatch: {} vs {}", h_d.cols(), h_p.cols())));
    }
    let store = ParamStore::default();
    let mut g = Graph::new(&store);
    let d = g.input(h_d.clone());
    let p = g.input(h_p.clone());
    let (z_d, z_p) = cross_attend(&mut g, d, p);
    let r_d = g.add(d, z_d);
    let r_p = g.add(p, z_p);
    let n_d = g.layer_norm(r_d, eps);
    let n_p = g.layer_norm(r_p, eps);
    Ok((g.value(n_d).clone(), g.value(n_p).clone()))
}

/// Attention weights `softmax(H_D · H_Pᵀ)` used inside [`cross_fuse`].
pub fn fusion_attention(h_d: &HiddenSeq, h_p: &HiddenSeq) -> Matrix {
    let s = h_d.matmul_bt(h_p);
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for i in 0..s.rows() {
        out.row_mut(i).copy_from_slice(&softmax(s.row(i)));
    }
    out
}

/// `λ₁·Ĥ_D + λ₂·mean(Ĥ_P) + λ₃·H_D` with `λ = softmax(w)`.
pub fn combine(h_d_hat: &HiddenSeq, h_p_hat: &HiddenSeq, h_d: &HiddenSeq, fusion: &FusionWeights) -> Result<HiddenSeq> {
    combine_with_lambdas(h_d_hat, h_p_hat, h_d, fusion.lambdas())
}

/// [`combine`] with explicit mixing weights (which need not come from a softmax).
pub fn combine_with_lambdas(h_d_hat: &HiddenSeq, h_p_hat: &HiddenSeq, h_d: &HiddenSeq, lambdas: [f64; 3]) -> Result<HiddenSeq> {
    if h_d_hat.shape() != h_d.shape() {
        return Err(Error::Shape(format!("Ĥ_D {:?} vs H_D {:?}", h_d_hat.shape(), h_d.shape())));
    }
    if h_p_hat.rows() == 0 || h_p_hat.cols() != h_d.cols() {
        return Err(Error::Shape(format!("Ĥ_P {:?} incompatible with H_D {:?}", h_p_hat.shape(), h_d.shape())));
    }
    let store = ParamStore::default();
    let mut g = Graph::new(&store);
    let a = g.input(h_d_hat.clone());
    let b = g.input(h_p_hat.clone());
    let c = g.input(h_d.clone());
    let l = g.input(Matrix::from_vec(1, 3, lambdas.to_vec()));
    let out = combine_nodes(&mut g, a, b, c, l);
    Ok(g.value(out).clone())
}

/// Configuration, vocabulary and parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    layout: Layout,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let (layout, params) = Layout::build(&config, vocab.len());
        Ok(Model {
            config,
            vocab,
            layout,
            params,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let (layout, reference) = Layout::build(&config, vocab.len());
        if reference.names() != params.names() {
            return Err(Error::Checkpoint("parameter names do not match the configured architecture".into()));
        }
        for (name, (a, b)) in reference.names().iter().zip(reference.tensors().iter().zip(params.tensors())) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!("tensor {name}: expected {:?}, found {:?}", a.shape(), b.shape())));
            }
        }
        Ok(Model {
            config,
            vocab,
            layout,
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn net(&self) -> Net<'_> {
        Net {
            cfg: &self.config,
            layout: &self.layout,
        }
    }

    fn check_ids(&self, ids: &[usize], what: &str) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::InvalidArgument(format!("{what} token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        Ok(())
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        let w = &self.params.tensors()[self.layout.fusion.weights];
        FusionWeights {
            w: [w.get(0, 0), w.get(0, 1), w.get(0, 2)],
        }
    }

    /// Runs the shared encoder over one input sequence.
    pub fn encode(&self, tokens: &[usize], which: InputKind) -> Result<HiddenSeq> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {which:?} sequence")));
        }
        self.check_ids(tokens, "encoder")?;
        let mut g = Graph::new(&self.params);
        let h = self.net().encode(&mut g, tokens);
        Ok(g.value(h).clone())
    }

    /// `H_final` for the persona pathway, or `H_D` when `persona` is empty.
    pub fn memory(&self, dialogue: &[usize], persona: &[usize]) -> Result<HiddenSeq> {
        if dialogue.is_empty() {
            return Err(Error::InvalidArgument("empty dialogue".into()));
        }
        self.check_ids(dialogue, "dialogue")?;
        self.check_ids(persona, "persona")?;
        let mut g = Graph::new(&self.params);
        let m = self.net().memory(&mut g, dialogue, persona);
        Ok(g.value(m).clone())
    }

    /// Next-token logits after `prefix` given decoder memory.
    pub fn decoder_logits(&self, memory: &HiddenSeq, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("decoder prefix must start with BOS".into()));
        }
        self.check_ids(prefix, "prefix")?;
        if memory.cols() != self.config.d_model || memory.rows() == 0 {
            return Err(Error::Shape(format!("memory {:?} incompatible with d_model {}", memory.shape(), self.config.d_model)));
        }
        let mut g = Graph::new(&self.params);
        let m = g.input(memory.clone());
        let logits = self.net().decode(&mut g, m, prefix);
        Ok(g.value(logits).row(prefix.len() - 1).to_vec())
    }

    pub fn decoder_step(&self, memory: &HiddenSeq, prefix: &[usize]) -> Result<TokenDistribution> {
        Ok(TokenDistribution::from_logits(&self.decoder_logits(memory, prefix)?))
    }

    /// Decoder input `[BOS, s, r…]` and targets `[s, r…, EOS]`.
    fn teacher_forcing(&self, ex: &Example) -> Result<(Vec<usize>, Vec<usize>)> {
        if ex.response.is_empty() {
            return Err(Error::InvalidArgument("empty response".into()));
        }
        let s = self.vocab.strategy_id(ex.strategy);
        let mut input = vec![self.vocab.bos(), s];
        input.extend_from_slice(&ex.response);
        let mut targets = vec![s];
        targets.extend_from_slice(&ex.response);
        targets.push(self.vocab.eos());
        self.check_ids(&input, "response")?;
        Ok((input, targets))
    }

    /// Per-position negative log-likelihoods of `[s, r…, EOS]`.
    pub fn token_nlls(&self, ex: &Example) -> Result<Vec<f64>> {
        let (input, targets) = self.teacher_forcing(ex)?;
        if ex.dialogue.is_empty() {
            return Err(Error::InvalidArgument("empty dialogue".into()));
        }
        self.check_ids(&ex.dialogue, "dialogue")?;
        self.check_ids(&ex.persona, "persona")?;
        let mut g = Graph::new(&self.params);
        let net = self.net();
        let m = net.memory(&mut g, &ex.dialogue, &ex.persona);
        let logits = net.decode(&mut g, m, &input);
        let l = g.value(logits);
        Ok(targets.iter().enumerate().map(|(i, &t)| -log_softmax(l.row(i))[t]).collect())
    }

    /// Mean token NLL over `[strategy] + response + EOS`.
    pub fn forward_loss(&self, ex: &Example) -> Result<f64> {
        let nll = self.token_nlls(ex)?;
        Ok(nll.iter().sum::<f64>() / nll.len() as f64)
    }

    /// Loss and exact parameter gradients for one example.
    pub fn loss_and_grad(&self, ex: &Example) -> Result<(f64, Gradients)> {
        let (input, targets) = self.teacher_forcing(ex)?;
        if ex.dialogue.is_empty() {
            return Err(Error::InvalidArgument("empty dialogue".into()));
        }
        self.check_ids(&ex.dialogue, "dialogue")?;
        self.check_ids(&ex.persona, "persona")?;
        let mut g = Graph::new(&self.params);
        let net = self.net();
        let m = net.memory(&mut g, &ex.dialogue, &ex.persona);
        let logits = net.decode(&mut g, m, &input);
        let weights = vec![1.0; targets.len()];
        let loss = g.cross_entropy(logits, &targets, &weights);
        let value = g.value(loss).get(0, 0);
        Ok((value, g.backward(loss)))
    }
}
