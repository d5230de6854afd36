//! Graph construction for the encoder, persona/dialogue fusion and decoder.

use super::graph::{Graph, NodeId};
use super::params::{AttnIdx, FfnIdx, Layout, LinearIdx, ModelConfig, NormIdx};

pub(crate) struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
}

impl Net<'_> {
    fn linear(&self, g: &mut Graph, x: NodeId, idx: LinearIdx) -> NodeId {
        let w = g.param(idx.w);
        let b = g.param(idx.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph, x: NodeId, idx: NormIdx) -> NodeId {
        let n = g.layer_norm(x, self.cfg.layernorm_eps);
        let gain = g.param(idx.gain);
        let bias = g.param(idx.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }

    /// Multi-head scaled dot-product attention of `q_in` over `kv_in`.
    fn attention(&self, g: &mut Graph, q_in: NodeId, kv_in: NodeId, idx: AttnIdx, causal: bool) -> NodeId {
        let q = self.linear(g, q_in, idx.q);
        let k = self.linear(g, kv_in, idx.k);
        let v = self.linear(g, kv_in, idx.v);
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.cfg.n_heads)
            .map(|h| {
                let qh = g.col_slice(q, h * hd, hd);
                let kh = g.col_slice(k, h * hd, hd);
                let vh = g.col_slice(v, h * hd, hd);
                let s = g.matmul_bt(qh, kh);
                let mut s = g.scale(s, scale);
                if causal {
                    s = g.causal_mask(s);
                }
                let a = g.softmax_rows(s);
                g.matmul(a, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.linear(g, cat, idx.o)
    }

    fn ffn(&self, g: &mut Graph, x: NodeId, idx: FfnIdx) -> NodeId {
        let h = self.linear(g, x, idx.up);
        let h = g.gelu(h);
        self.linear(g, h, idx.down)
    }

    fn embed(&self, g: &mut Graph, ids: &[usize], positions: usize) -> NodeId {
        let table = g.param(self.layout.token_embedding);
        let tok = g.gather(table, ids);
        let pos_table = g.param(positions);
        let pos_ids: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather(pos_table, &pos_ids);
        g.add(tok, pos)
    }

    /// Shared post-norm transformer encoder.
    pub fn encode(&self, g: &mut Graph, ids: &[usize]) -> NodeId {
        let mut x = self.embed(g, ids, self.layout.encoder_positions);
        for layer in &self.layout.encoder {
            let a = self.attention(g, x, x, layer.attn, false);
            let r = g.add(x, a);
            x = self.norm(g, r, layer.norm1);
            let f = self.ffn(g, x, layer.ffn);
            let r = g.add(x, f);
            x = self.norm(g, r, layer.norm2);
        }
        x
    }

    /// Unscaled cross attention in both directions followed by residual
    /// layer norm with learned affine.
    pub fn fuse(&self, g: &mut Graph, h_d: NodeId, h_p: NodeId) -> (NodeId, NodeId) {
        let fusion = self.layout.fusion;
        let (z_d, z_p) = cross_attend(g, h_d, h_p);
        let r_d = g.add(h_d, z_d);
        let r_p = g.add(h_p, z_p);
        (self.norm(g, r_d, fusion.norm_dialogue), self.norm(g, r_p, fusion.norm_persona))
    }

    /// λ-weighted sum of fused dialogue, pooled fused persona and raw dialogue.
    pub fn combine(&self, g: &mut Graph, h_d_hat: NodeId, h_p_hat: NodeId, h_d: NodeId) -> NodeId {
        let w = g.param(self.layout.fusion.weights);
        let lambdas = g.softmax_rows(w);
        combine_nodes(g, h_d_hat, h_p_hat, h_d, lambdas)
    }

    /// Decoder input for generation and loss. Empty persona skips fusion
    /// entirely and uses the dialogue encoding as memory.
    pub fn memory(&self, g: &mut Graph, dialogue: &[usize], persona: &[usize]) -> NodeId {
        let h_d = self.encode(g, dialogue);
        if persona.is_empty() {
            return h_d;
        }
        let h_p = self.encode(g, persona);
        let (h_d_hat, h_p_hat) = self.fuse(g, h_d, h_p);
        self.combine(g, h_d_hat, h_p_hat, h_d)
    }

    /// Causal decoder with cross attention onto `memory`; returns logits
    /// (`prefix.len() × V`).
    pub fn decode(&self, g: &mut Graph, memory: NodeId, prefix: &[usize]) -> NodeId {
        let mut x = self.embed(g, prefix, self.layout.decoder_positions);
        for layer in &self.layout.decoder {
            let a = self.attention(g, x, x, layer.self_attn, true);
            let r = g.add(x, a);
            x = self.norm(g, r, layer.norm1);
            let c = self.attention(g, x, memory, layer.cross_attn, false);
            let r = g.add(x, c);
            x = self.norm(g, r, layer.norm2);
            let f = self.ffn(g, x, layer.ffn);
            let r = g.add(x, f);
            x = self.norm(g, r, layer.norm3);
        }
        self.linear(g, x, self.layout.output)
    }
}

/// `(softmax(H_D H_Pᵀ) H_P, softmax(H_P H_Dᵀ) H_D)`
pub(crate) fn cross_attend(g: &mut Graph, h_d: NodeId, h_p: NodeId) -> (NodeId, NodeId) {
    let s_d = g.matmul_bt(h_d, h_p);
    let a_d = g.softmax_rows(s_d);
    let z_d = g.matmul(a_d, h_p);
    let s_p = g.matmul_bt(h_p, h_d);
    let a_p = g.softmax_rows(s_p);
    let z_p = g.matmul(a_p, h_d);
    (z_d, z_p)
}

/// `λ₀·Ĥ_D + λ₁·broadcast(mean(Ĥ_P)) + λ₂·H_D` with `lambdas` a `1 × 3` node.
pub(crate) fn combine_nodes(g: &mut Graph, h_d_hat: NodeId, h_p_hat: NodeId, h_d: NodeId, lambdas: NodeId) -> NodeId {
    let n = g.value(h_d).rows();
    let pooled = g.mean_rows(h_p_hat);
    let pooled = g.broadcast_rows(pooled, n);
    let a = g.scale_by_entry(h_d_hat, lambdas, 0);
    let b = g.scale_by_entry(pooled, lambdas, 1);
    let c = g.scale_by_entry(h_d, lambdas, 2);
    let ab = g.add(a, b);
    g.add(ab, c)
}
