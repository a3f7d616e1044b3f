//! Multi-head attention and pre-norm transformer encoder layers.
//!
//! Every stack here is either self-attention (keys/values come from the
//! running stream) or cross-attention (keys/values come from a fixed second
//! sequence in every layer, queries from the running stream).

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

/// Divisor inside the attention softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnScale {
    /// √(D/H)
    #[default]
    PerHead,
    /// √D
    FullD,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// Forward-time knobs shared by every layer of a stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerOptions {
    pub attn_scale: AttnScale,
    pub activation: Activation,
    pub dropout: f64,
    pub ln_eps: f64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            attn_scale: AttnScale::PerHead,
            activation: Activation::Gelu,
            dropout: 0.0,
            ln_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MhaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub n_heads: usize,
    pub dim: usize,
}

impl MhaParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_heads(dim, n_heads)?;
        let mut mat = |name: &str| store.add(format!("{prefix}.{name}"), init::glorot(rng, dim, dim));
        Ok(Self {
            w_q: mat("w_q"),
            w_k: mat("w_k"),
            w_v: mat("w_v"),
            w_o: mat("w_o"),
            n_heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }
}

pub fn check_heads(dim: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || dim == 0 || !dim.is_multiple_of(n_heads) {
        return Err(Error::Config(format!(
            "embedding width {dim} is not divisible by {n_heads} attention heads"
        )));
    }
    Ok(())
}

/// Per head: `softmax(Q_h K_hᵀ / scale) V_h`, heads concatenated and mixed by `W_O`.
///
/// Queries come from `q_in`, keys and values from `kv_in`; pass the same node
/// twice for self-attention. When the graph is probing, each head's
/// attention map is recorded under `label.h{head}`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    q_in: NodeId,
    kv_in: NodeId,
    p: &MhaParams,
    scale: AttnScale,
    label: &str,
) -> Result<NodeId> {
    for (what, id) in [("query", q_in), ("key/value", kv_in)] {
        let w = g.value(id).cols();
        if w != p.dim {
            return Err(Error::Shape(format!(
                "{label}: {what} width {w}, attention width {}",
                p.dim
            )));
        }
    }
    let (wq, wk, wv, wo) = (g.param(p.w_q), g.param(p.w_k), g.param(p.w_v), g.param(p.w_o));
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(kv_in, wk)?;
    let v = g.matmul(kv_in, wv)?;
    let dh = p.head_dim();
    let inv = 1.0
        / match scale {
            AttnScale::PerHead => dh as f64,
            AttnScale::FullD => p.dim as f64,
        }
        .sqrt();
    let mut heads = Vec::with_capacity(p.n_heads);
    for h in 0..p.n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, inv);
        let attn = g.softmax(scores, 1)?;
        if g.probing() {
            g.note_attention(format!("{label}.h{h}"), attn);
        }
        heads.push(g.matmul(attn, vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    g.matmul(merged, wo)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderLayer {
    pub mha: MhaParams,
    pub ffn_in_w: ParamId,
    pub ffn_in_b: ParamId,
    pub ffn_out_w: ParamId,
    pub ffn_out_b: ParamId,
    pub norm1_g: ParamId,
    pub norm1_b: ParamId,
    pub norm2_g: ParamId,
    pub norm2_b: ParamId,
}

impl EncoderLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mha = MhaParams::new(store, &format!("{prefix}.attn"), dim, n_heads, rng)?;
        let ffn_in_w = store.add(format!("{prefix}.ffn.in_w"), init::glorot(rng, dim, ffn_dim));
        let ffn_in_b = store.add(format!("{prefix}.ffn.in_b"), Tensor::zeros(&[1, ffn_dim]));
        let ffn_out_w = store.add(format!("{prefix}.ffn.out_w"), init::glorot(rng, ffn_dim, dim));
        let ffn_out_b = store.add(format!("{prefix}.ffn.out_b"), Tensor::zeros(&[1, dim]));
        let norm1_g = store.add(
            format!("{prefix}.norm1.gamma"),
            Tensor::filled(&[1, dim], T::one()),
        );
        let norm1_b = store.add(format!("{prefix}.norm1.beta"), Tensor::zeros(&[1, dim]));
        let norm2_g = store.add(
            format!("{prefix}.norm2.gamma"),
            Tensor::filled(&[1, dim], T::one()),
        );
        let norm2_b = store.add(format!("{prefix}.norm2.beta"), Tensor::zeros(&[1, dim]));
        Ok(Self {
            mha,
            ffn_in_w,
            ffn_in_b,
            ffn_out_w,
            ffn_out_b,
            norm1_g,
            norm1_b,
            norm2_g,
            norm2_b,
        })
    }
}

/// `x + MHA(norm1(x), kv or norm1(x))`, then `+ FFN(norm2(·))`.
pub fn encoder_layer_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: NodeId,
    layer: &EncoderLayer,
    kv: Option<NodeId>,
    opts: &LayerOptions,
    label: &str,
) -> Result<NodeId> {
    let (n1g, n1b) = (g.param(layer.norm1_g), g.param(layer.norm1_b));
    let h = g.layer_norm(x, n1g, n1b, opts.ln_eps)?;
    let a = multi_head_attention(g, h, kv.unwrap_or(h), &layer.mha, opts.attn_scale, label)?;
    let a = g.dropout(a, opts.dropout)?;
    let x = g.add(x, a)?;

    let (n2g, n2b) = (g.param(layer.norm2_g), g.param(layer.norm2_b));
    let h = g.layer_norm(x, n2g, n2b, opts.ln_eps)?;
    let (w1, b1) = (g.param(layer.ffn_in_w), g.param(layer.ffn_in_b));
    let f = g.matmul(h, w1)?;
    let f = g.add_row(f, b1)?;
    let f = match opts.activation {
        Activation::Gelu => g.gelu(f),
        Activation::Relu => g.relu(f),
    };
    let (w2, b2) = (g.param(layer.ffn_out_w), g.param(layer.ffn_out_b));
    let f = g.matmul(f, w2)?;
    let f = g.add_row(f, b2)?;
    let f = g.dropout(f, opts.dropout)?;
    g.add(x, f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackMode {
    SelfAttention,
    Cross,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub mode: StackMode,
    pub dim: usize,
    name: String,
}

impl EncoderStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        mode: StackMode,
        n_layers: usize,
        dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_heads(dim, n_heads)?;
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), dim, n_heads, ffn_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            mode,
            dim,
            name: name.to_string(),
        })
    }

    /// Runs every layer; a cross stack requires `kv` and feeds it to each layer.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        kv: Option<NodeId>,
        opts: &LayerOptions,
    ) -> Result<NodeId> {
        let kv = match (self.mode, kv) {
            (StackMode::Cross, None) => {
                return Err(Error::Usage(format!(
                    "{}: cross stack needs keys/values",
                    self.name
                )))
            }
            (StackMode::Cross, kv) => kv,
            (StackMode::SelfAttention, _) => None,
        };
        self.layers.iter().enumerate().try_fold(x, |x, (i, layer)| {
            encoder_layer_forward(g, x, layer, kv, opts, &format!("{}.layer{i}", self.name))
        })
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/D))`, `PE[pos, 2i+1] = cos(pos / 10000^(2i/D))`.
pub fn sinusoidal_pe<T: Scalar>(len: usize, dim: usize) -> Result<Tensor<T>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "sinusoidal positional encoding needs an even width, got {dim}"
        )));
    }
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    Tensor::matrix(len, dim, data)
}

/// Prepends the learned CLS row to a sequence. An empty sequence (`None`)
/// yields the CLS row alone.
pub fn prepend_cls<T: Scalar>(g: &mut Graph<'_, T>, seq: Option<NodeId>, cls: ParamId) -> Result<NodeId> {
    let c = g.param(cls);
    match seq {
        None => Ok(c),
        Some(s) if g.value(s).rows() == 0 => Ok(c),
        Some(s) => {
            let (wc, ws) = (g.value(c).cols(), g.value(s).cols());
            if wc != ws {
                return Err(Error::Shape(format!(
                    "prepend_cls: cls width {wc}, sequence width {ws}"
                )));
            }
            g.concat_rows(&[c, s])
        }
    }
}

/// Writes attention maps as `u32 rows, u32 cols, rows·cols f32`, little-endian,
/// one after another, preceded by a `u32` map count.
pub fn write_attention_maps<T: Scalar, W: Write>(out: &mut W, maps: &[(String, Tensor<T>)]) -> Result<()> {
    out.write_all(&(maps.len() as u32).to_le_bytes())?;
    for (_, m) in maps {
        let (r, c) = m.require_matrix("attention map")?;
        out.write_all(&(r as u32).to_le_bytes())?;
        out.write_all(&(c as u32).to_le_bytes())?;
        for v in m.data() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}
