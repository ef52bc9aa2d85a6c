//! Transformer encoder stack shared by the speaker and duration models.
//!
//! Post-norm blocks: x = LN(x + SelfAttention(x)); x = LN(x + FFN(x)).
//! Positional encodings are sinusoidal and added after the input projection.
//! Attention softmax is masked to the valid prefix so right-padded frames
//! contribute exactly zero weight.

use super::mat::Mat;
use super::params::{glorot, BoundParams, ParamSet};
use super::tape::{NodeId, Tape};
use crate::rng::Rng;

/// Structural description of one encoder stack.
#[derive(Debug, Clone)]
pub struct TransformerSpec {
    pub input_dim: usize,
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub positional_encoding: bool,
}

impl TransformerSpec {
    pub fn head_dim(&self) -> usize {
        assert!(
            self.model_dim.is_multiple_of(self.n_heads),
            "model_dim {} not divisible by n_heads {}",
            self.model_dim,
            self.n_heads
        );
        self.model_dim / self.n_heads
    }
}

/// Register all encoder parameters under `prefix`, Glorot-initialized.
pub fn init_params(prefix: &str, spec: &TransformerSpec, params: &mut ParamSet, rng: &mut Rng) {
    let d = spec.model_dim;
    params.push(
        format!("{prefix}.in_proj.w"),
        glorot(rng, spec.input_dim, d),
    );
    params.push(format!("{prefix}.in_proj.b"), Mat::zeros(1, d));
    for l in 0..spec.n_layers {
        for name in ["wq", "wk", "wv", "wo"] {
            params.push(format!("{prefix}.l{l}.attn.{name}"), glorot(rng, d, d));
        }
        // No key bias: a constant added to every key cancels in the row
        // softmax, so the parameter would be untrainable dead weight.
        for name in ["bq", "bv", "bo"] {
            params.push(format!("{prefix}.l{l}.attn.{name}"), Mat::zeros(1, d));
        }
        params.push(
            format!("{prefix}.l{l}.ln1.gamma"),
            Mat::from_vec(1, d, vec![1.0; d]),
        );
        params.push(format!("{prefix}.l{l}.ln1.beta"), Mat::zeros(1, d));
        params.push(
            format!("{prefix}.l{l}.ffn.w1"),
            glorot(rng, d, spec.hidden_dim),
        );
        params.push(format!("{prefix}.l{l}.ffn.b1"), Mat::zeros(1, spec.hidden_dim));
        params.push(
            format!("{prefix}.l{l}.ffn.w2"),
            glorot(rng, spec.hidden_dim, d),
        );
        params.push(format!("{prefix}.l{l}.ffn.b2"), Mat::zeros(1, d));
        params.push(
            format!("{prefix}.l{l}.ln2.gamma"),
            Mat::from_vec(1, d, vec![1.0; d]),
        );
        params.push(format!("{prefix}.l{l}.ln2.beta"), Mat::zeros(1, d));
    }
}

/// Sinusoidal positional encoding table for `t_len` positions.
pub fn positional_encoding(t_len: usize, dim: usize) -> Mat {
    let mut pe = Mat::zeros(t_len, dim);
    for t in 0..t_len {
        for i in 0..dim {
            let exponent = 2.0 * (i / 2) as f64 / dim as f64;
            let angle = t as f64 / 10_000f64.powf(exponent);
            *pe.at_mut(t, i) = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = tape.matmul(x, w);
    tape.add_row_broadcast(xw, b)
}

/// Forward one sequence (T x input_dim) through the stack. Only the first
/// `valid_len` rows are meaningful; the rest are right padding.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    spec: &TransformerSpec,
    input: NodeId,
    valid_len: usize,
) -> NodeId {
    let t_len = tape.value(input).rows();
    assert!(valid_len >= 1 && valid_len <= t_len, "valid_len range");
    let d = spec.model_dim;
    let dk = spec.head_dim();

    let w_in = bound.id(&format!("{prefix}.in_proj.w"));
    let b_in = bound.id(&format!("{prefix}.in_proj.b"));
    let mut x = linear(tape, input, w_in, b_in);

    if spec.positional_encoding {
        let pe = tape.leaf(positional_encoding(t_len, d));
        x = tape.add(x, pe);
    }

    for l in 0..spec.n_layers {
        let p = |n: &str| format!("{prefix}.l{l}.{n}");
        let q = linear(tape, x, bound.id(&p("attn.wq")), bound.id(&p("attn.bq")));
        let k = tape.matmul(x, bound.id(&p("attn.wk")));
        let v = linear(tape, x, bound.id(&p("attn.wv")), bound.id(&p("attn.bv")));

        let mut heads = Vec::with_capacity(spec.n_heads);
        for h in 0..spec.n_heads {
            let qh = tape.slice_cols(q, h * dk, dk);
            let kh = tape.slice_cols(k, h * dk, dk);
            let vh = tape.slice_cols(v, h * dk, dk);
            let kh_t = tape.transpose(kh);
            let scores = tape.matmul(qh, kh_t);
            let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
            let attn = tape.softmax_rows_masked(scores, valid_len);
            heads.push(tape.matmul(attn, vh));
        }
        let concat = tape.concat_cols(&heads);
        let attn_out = linear(
            tape,
            concat,
            bound.id(&p("attn.wo")),
            bound.id(&p("attn.bo")),
        );

        let res = tape.add(x, attn_out);
        x = tape.layer_norm(res, bound.id(&p("ln1.gamma")), bound.id(&p("ln1.beta")));

        let f1 = linear(tape, x, bound.id(&p("ffn.w1")), bound.id(&p("ffn.b1")));
        let f1 = tape.relu(f1);
        let f2 = linear(tape, f1, bound.id(&p("ffn.w2")), bound.id(&p("ffn.b2")));

        let res = tape.add(x, f2);
        x = tape.layer_norm(res, bound.id(&p("ln2.gamma")), bound.id(&p("ln2.beta")));
    }
    x
}
