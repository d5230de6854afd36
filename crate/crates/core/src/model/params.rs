use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Architecture hyperparameters. The vocabulary is stored alongside the
/// config in [`crate::model::Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub layernorm_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_len: 256,
            layernorm_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 || self.d_ff == 0 || self.layernorm_eps.is_nan() || self.layernorm_eps <= 0.0 {
            return Err(Error::InvalidArgument("max_len >= 2, d_ff > 0 and layernorm_eps > 0 are required".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, m: Matrix) -> usize {
        self.names.push(name.into());
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.rows() * t.cols()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub up: LinearIdx,
    pub down: LinearIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub attn: AttnIdx,
    pub norm1: NormIdx,
    pub ffn: FfnIdx,
    pub norm2: NormIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub self_attn: AttnIdx,
    pub norm1: NormIdx,
    pub cross_attn: AttnIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
    pub norm3: NormIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionIdx {
    pub norm_dialogue: NormIdx,
    pub norm_persona: NormIdx,
    /// `1 × 3` mixing logits.
    pub weights: usize,
}

/// Indices of every parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_embedding: usize,
    pub encoder_positions: usize,
    pub decoder_positions: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub fusion: FusionIdx,
    pub decoder: Vec<DecoderLayerIdx>,
    pub output: LinearIdx,
}

enum Init {
    Zeros,
    Ones,
    /// Uniform in ±bound.
    Uniform(f64),
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let m = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::Uniform(b) => Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| self.rng.random_range(-b..=b)).collect()),
        };
        self.store.push(name, m)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        LinearIdx {
            w: self.tensor(format!("{name}.w"), fan_in, fan_out, Init::Uniform(bound)),
            b: self.tensor(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.tensor(format!("{name}.gain"), 1, d, Init::Ones),
            bias: self.tensor(format!("{name}.bias"), 1, d, Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, d_ff: usize) -> FfnIdx {
        FfnIdx {
            up: self.linear(&format!("{name}.up"), d, d_ff),
            down: self.linear(&format!("{name}.down"), d_ff, d),
        }
    }
}

impl Layout {
    /// Registers and initializes every tensor for `cfg` and a vocabulary of
    /// size `vocab_size`. Deterministic in `cfg.seed`.
    pub fn build(cfg: &ModelConfig, vocab_size: usize) -> (Layout, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut b = Builder {
            store: ParamStore::default(),
            rng: &mut rng,
        };
        let d = cfg.d_model;
        let emb_bound = 0.1 * 3f64.sqrt();
        let token_embedding = b.tensor("embed.tokens".into(), vocab_size, d, Init::Uniform(emb_bound));
        let encoder_positions = b.tensor("embed.encoder_positions".into(), cfg.max_len, d, Init::Uniform(emb_bound));
        let decoder_positions = b.tensor("embed.decoder_positions".into(), cfg.max_len, d, Init::Uniform(emb_bound));
        let encoder = (0..cfg.n_layers)
            .map(|l| EncoderLayerIdx {
                attn: b.attn(&format!("encoder.{l}.self_attn"), d),
                norm1: b.norm(&format!("encoder.{l}.norm1"), d),
                ffn: b.ffn(&format!("encoder.{l}.ffn"), d, cfg.d_ff),
                norm2: b.norm(&format!("encoder.{l}.norm2"), d),
            })
            .collect();
        let fusion = FusionIdx {
            norm_dialogue: b.norm("fusion.norm_dialogue", d),
            norm_persona: b.norm("fusion.norm_persona", d),
            weights: b.tensor("fusion.weights".into(), 1, 3, Init::Zeros),
        };
        let decoder = (0..cfg.n_layers)
            .map(|l| DecoderLayerIdx {
                self_attn: b.attn(&format!("decoder.{l}.self_attn"), d),
                norm1: b.norm(&format!("decoder.{l}.norm1"), d),
                cross_attn: b.attn(&format!("decoder.{l}.cross_attn"), d),
                norm2: b.norm(&format!("decoder.{l}.norm2"), d),
                ffn: b.ffn(&format!("decoder.{l}.ffn"), d, cfg.d_ff),
                norm3: b.norm(&format!("decoder.{l}.norm3"), d),
            })
            .collect();
        let output = b.linear("output", d, vocab_size);
        let store = b.store;
        (
            Layout {
                token_embedding,
                encoder_positions,
                decoder_positions,
                encoder,
                fusion,
                decoder,
                output,
            },
            store,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_init() {
        let cfg = ModelConfig::default();
        let (l1, p1) = Layout::build(&cfg, 50);
        let (l2, p2) = Layout::build(&cfg, 50);
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
        let (_, p3) = Layout::build(&ModelConfig { seed: 1, ..cfg }, 50);
        assert_ne!(p1, p3);
    }

    #[test]
    fn names_unique_and_shapes() {
        let cfg = ModelConfig::default();
        let (layout, store) = Layout::build(&cfg, 40);
        let mut names = store.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), store.len());
        assert_eq!(store.tensors()[layout.token_embedding].shape(), (40, 64));
        assert_eq!(store.tensors()[layout.output.w].shape(), (64, 40));
        assert_eq!(store.tensors()[layout.fusion.weights], Matrix::zeros(1, 3));
        assert!(store.all_finite());
    }

    #[test]
    fn rejects_bad_heads() {
        let cfg = ModelConfig {
            d_model: 10,
            n_heads: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
