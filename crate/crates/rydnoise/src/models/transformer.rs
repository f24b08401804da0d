//! Transformer encoder stack for trace denoising. The input Dense lifts each
//! sample into `d_model` features, sine positional encodings restore order
//! information, and the encoder blocks run full (unmasked) self-attention
//! over the whole trace so every sample can draw on local and global
//! structure. A final Dense maps features back to one channel.

use serde::{Deserialize, Serialize};

use super::{param_leaves, ForwardGraph, ModelParams, ParamKind};
use crate::error::{Result, RydError};
use crate::numerics::{Array, Graph, Mode, NodeId, Scalar};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub dropout_rate: f64,
    pub seq_len: usize,
    pub use_layer_norm: bool,
    pub input_channels: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 8,
            ffn_dim: 128,
            n_layers: 3,
            dropout_rate: 0.1,
            seq_len: 1000,
            use_layer_norm: true,
            input_channels: 1,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(RydError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(RydError::Config(format!(
                "positional encoding needs even d_model, got {}",
                self.d_model
            )));
        }
        if self.seq_len < 2 {
            return Err(RydError::Config(format!(
                "seq_len must be at least 2, got {}",
                self.seq_len
            )));
        }
        if self.ffn_dim == 0 || self.n_layers == 0 {
            return Err(RydError::Config(
                "ffn_dim and n_layers must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(RydError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.input_channels != 1 {
            return Err(RydError::Config(format!(
                "only single-channel traces are supported, got input_channels {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    pub(crate) fn param_specs(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        let d = self.d_model;
        let f = self.ffn_dim;
        let mut specs = vec![
            (
                "input.weight".to_string(),
                vec![1, d],
                ParamKind::Weight(1, d),
            ),
            ("input.bias".to_string(), vec![d], ParamKind::Bias),
        ];
        for i in 0..self.n_layers {
            for gate in ["wq", "wk", "wv", "wo"] {
                specs.push((
                    format!("layer{i}.attn.{gate}"),
                    vec![d, d],
                    ParamKind::Weight(d, d),
                ));
                specs.push((
                    format!("layer{i}.attn.{}", gate.replace('w', "b")),
                    vec![d],
                    ParamKind::Bias,
                ));
            }
            if self.use_layer_norm {
                specs.push((format!("layer{i}.ln1.gamma"), vec![d], ParamKind::Gain));
                specs.push((format!("layer{i}.ln1.beta"), vec![d], ParamKind::Bias));
            }
            specs.push((
                format!("layer{i}.ffn.w1"),
                vec![d, f],
                ParamKind::Weight(d, f),
            ));
            specs.push((format!("layer{i}.ffn.b1"), vec![f], ParamKind::Bias));
            specs.push((
                format!("layer{i}.ffn.w2"),
                vec![f, d],
                ParamKind::Weight(f, d),
            ));
            specs.push((format!("layer{i}.ffn.b2"), vec![d], ParamKind::Bias));
            if self.use_layer_norm {
                specs.push((format!("layer{i}.ln2.gamma"), vec![d], ParamKind::Gain));
                specs.push((format!("layer{i}.ln2.beta"), vec![d], ParamKind::Bias));
            }
        }
        specs.push((
            "output.weight".to_string(),
            vec![d, 1],
            ParamKind::Weight(d, 1),
        ));
        specs.push(("output.bias".to_string(), vec![1], ParamKind::Bias));
        specs
    }
}

/// PE[pos, 2i] = sin(pos / 10000^(2i/d_model)), PE[pos, 2i+1] = cos of the
/// same argument. Computed fresh for any length, so shorter diagnostic
/// traces reuse the same formula.
pub fn sine_positional_encoding<T: Scalar>(seq_len: usize, d_model: usize) -> Result<Array<T>> {
    if d_model % 2 != 0 {
        return Err(RydError::Config(format!(
            "positional encoding needs even d_model, got {d_model}"
        )));
    }
    let mut data = vec![T::ZERO; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = T::from_f64(angle.sin());
            data[pos * d_model + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    Array::from_vec(vec![seq_len, d_model], data)
}

/// Build the full forward graph for one trace. Dropout masks are derived
/// from `seed` per site so a fixed seed reproduces the pass exactly.
pub(super) fn transformer_graph<T: Scalar>(
    cfg: &TransformerConfig,
    params: &ModelParams<T>,
    trace: &Array<T>,
    mode: Mode,
    seed: u64,
    use_positional: bool,
) -> Result<ForwardGraph<T>> {
    cfg.validate()?;
    if trace.rank() != 2 || trace.cols() != 1 || trace.rows() != cfg.seq_len {
        return Err(RydError::Dimension(format!(
            "transformer expects a {} x 1 trace, got {:?}",
            cfg.seq_len,
            trace.shape()
        )));
    }
    let mut g = Graph::new();
    let param_ids = param_leaves(&mut g, params);
    let pid = |name: &str| -> NodeId {
        let idx = params
            .names()
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        param_ids[idx]
    };

    let input = g.constant(trace.clone());
    let proj = g.matmul(input, pid("input.weight"))?;
    let mut x = g.add_row(proj, pid("input.bias"))?;
    if use_positional {
        let pe = g.constant(sine_positional_encoding::<T>(cfg.seq_len, cfg.d_model)?);
        x = g.add(x, pe)?;
    }

    let d_head = cfg.d_model / cfg.n_heads;
    let att_scale = 1.0 / (d_head as f64).sqrt();
    for i in 0..cfg.n_layers {
        let at = |gate: &str| format!("layer{i}.attn.{gate}");
        let q0 = g.matmul(x, pid(&at("wq")))?;
        let q = g.add_row(q0, pid(&at("bq")))?;
        let k0 = g.matmul(x, pid(&at("wk")))?;
        let k = g.add_row(k0, pid(&at("bk")))?;
        let v0 = g.matmul(x, pid(&at("wv")))?;
        let v = g.add_row(v0, pid(&at("bv")))?;

        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(q, h * d_head, d_head)?;
            let kh = g.slice_cols(k, h * d_head, d_head)?;
            let vh = g.slice_cols(v, h * d_head, d_head)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scaled = g.scale(scores, att_scale)?;
            let attn = g.softmax(scaled)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let proj = g.matmul(cat, pid(&at("wo")))?;
        let attn_out = g.add_row(proj, pid(&at("bo")))?;
        let attn_out = g.dropout(
            attn_out,
            cfg.dropout_rate,
            mode,
            seeds::derive_indexed(seed, seeds::stream::DROPOUT, 2 * i as u64),
        )?;
        x = g.add(x, attn_out)?;
        if cfg.use_layer_norm {
            x = g.layer_norm(
                x,
                pid(&format!("layer{i}.ln1.gamma")),
                pid(&format!("layer{i}.ln1.beta")),
            )?;
        }

        let h0 = g.matmul(x, pid(&format!("layer{i}.ffn.w1")))?;
        let h1 = g.add_row(h0, pid(&format!("layer{i}.ffn.b1")))?;
        let h2 = g.gelu(h1)?;
        let h3 = g.matmul(h2, pid(&format!("layer{i}.ffn.w2")))?;
        let ffn_out = g.add_row(h3, pid(&format!("layer{i}.ffn.b2")))?;
        let ffn_out = g.dropout(
            ffn_out,
            cfg.dropout_rate,
            mode,
            seeds::derive_indexed(seed, seeds::stream::DROPOUT, 2 * i as u64 + 1),
        )?;
        x = g.add(x, ffn_out)?;
        if cfg.use_layer_norm {
            x = g.layer_norm(
                x,
                pid(&format!("layer{i}.ln2.gamma")),
                pid(&format!("layer{i}.ln2.beta")),
            )?;
        }
    }

    let out0 = g.matmul(x, pid("output.weight"))?;
    let output = g.add_row(out0, pid("output.bias"))?;
    Ok(ForwardGraph { graph: g, input, output, param_ids })
}
