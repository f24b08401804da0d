//! Checkpoint container: a line-oriented text header describing the config
//! and tensor layout, the raw little-endian payload, and a trailing sha256
//! over everything before the checksum line. Layout:
//!
//! ```text
//! rydnoise-checkpoint v1
//! dtype f32
//! meta model transformer
//! meta d_model 64
//! ...
//! tensors 26
//! tensor input.weight 2 1 64
//! ...
//! payload 402436
//! <raw little-endian floats, tensors concatenated in declared order>
//! checksum sha256 <hex>
//! ```
//!
//! Header problems surface as "malformed checkpoint", a short payload as
//! "truncated checkpoint", and a digest mismatch as "checksum mismatch", so
//! callers can tell corruption modes apart.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{LinearConfig, ModelConfig, ModelParams, TransformerConfig, UNetConfig};
use crate::error::{Result, RydError};
use crate::numerics::{Array, DType, Scalar};

const MAGIC: &str = "rydnoise-checkpoint v1";

/// Ordered metadata plus named tensors; the model checkpoint is one of
/// these, and the training state reuses the container with extra entries.
pub(crate) struct Container<T: Scalar> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Array<T>)>,
}

fn malformed(detail: impl std::fmt::Display) -> RydError {
    RydError::Data(format!("malformed checkpoint: {detail}"))
}

pub(crate) fn encode_container<T: Scalar>(c: &Container<T>) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("dtype {}\n", T::DTYPE.name()));
    for (k, v) in &c.meta {
        header.push_str(&format!("meta {k} {v}\n"));
    }
    header.push_str(&format!("tensors {}\n", c.tensors.len()));
    let mut payload = Vec::new();
    for (name, arr) in &c.tensors {
        header.push_str(&format!("tensor {name} {}", arr.rank()));
        for d in arr.shape() {
            header.push_str(&format!(" {d}"));
        }
        header.push('\n');
        T::write_le(arr.data(), &mut payload);
    }
    header.push_str(&format!("payload {}\n", payload.len()));

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    bytes.extend_from_slice(format!("checksum sha256 {hex}\n").as_bytes());
    bytes
}

pub(crate) fn decode_container<T: Scalar>(bytes: &[u8]) -> Result<Container<T>> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("header ended without a newline"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| malformed("header is not valid utf-8"))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };

    if next_line(&mut pos)? != MAGIC {
        return Err(malformed(format!("expected header line `{MAGIC}`")));
    }
    let dtype_line = next_line(&mut pos)?;
    let dtype = dtype_line
        .strip_prefix("dtype ")
        .and_then(DType::parse)
        .ok_or_else(|| malformed(format!("bad dtype line `{dtype_line}`")))?;
    if dtype != T::DTYPE {
        return Err(RydError::Data(format!(
            "checkpoint dtype is {}, expected {}",
            dtype.name(),
            T::DTYPE.name()
        )));
    }

    let mut meta = Vec::new();
    let line = loop {
        let line = next_line(&mut pos)?;
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| malformed(format!("bad meta line `{line}`")))?;
            meta.push((k.to_string(), v.to_string()));
        } else {
            break line;
        }
    };
    let n_tensors: usize = line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(format!("bad tensor count line `{line}`")))?;

    let mut shapes = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = next_line(&mut pos)?;
        let mut it = line
            .strip_prefix("tensor ")
            .ok_or_else(|| malformed(format!("expected tensor line, got `{line}`")))?
            .split(' ');
        let name = it
            .next()
            .ok_or_else(|| malformed("tensor line missing name"))?
            .to_string();
        let rank: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("bad rank in `{line}`")))?;
        let dims: Vec<usize> = it.map(|s| s.parse().ok()).collect::<Option<_>>()
            .ok_or_else(|| malformed(format!("bad dims in `{line}`")))?;
        if dims.len() != rank || dims.iter().any(|&d| d == 0) {
            return Err(malformed(format!("inconsistent tensor line `{line}`")));
        }
        shapes.push((name, dims));
    }

    let line = next_line(&mut pos)?;
    let payload_len: usize = line
        .strip_prefix("payload ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(format!("bad payload line `{line}`")))?;
    let expected: usize = shapes
        .iter()
        .map(|(_, dims)| dims.iter().product::<usize>() * T::DTYPE.size_bytes())
        .sum();
    if payload_len != expected {
        return Err(malformed(format!(
            "payload length {payload_len} does not match tensor shapes ({expected} bytes)"
        )));
    }
    if bytes.len() < pos + payload_len {
        return Err(RydError::Data(format!(
            "truncated checkpoint: payload needs {payload_len} bytes, file has {}",
            bytes.len() - pos
        )));
    }
    let payload = &bytes[pos..pos + payload_len];
    let digest_input_end = pos + payload_len;
    pos += payload_len;

    let checksum_line = next_line(&mut pos)?;
    let stated = checksum_line
        .strip_prefix("checksum sha256 ")
        .ok_or_else(|| malformed(format!("bad checksum line `{checksum_line}`")))?;
    let digest = Sha256::digest(&bytes[..digest_input_end]);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    if stated != hex {
        return Err(RydError::Data(format!(
            "checkpoint checksum mismatch: header states {stated}, contents hash to {hex}"
        )));
    }

    let mut tensors = Vec::with_capacity(n_tensors);
    let mut offset = 0usize;
    for (name, dims) in shapes {
        let n: usize = dims.iter().product();
        let nbytes = n * T::DTYPE.size_bytes();
        let data = T::read_le(&payload[offset..offset + nbytes]);
        offset += nbytes;
        tensors.push((name, Array::from_vec(dims, data)?));
    }
    Ok(Container { meta, tensors })
}

pub(crate) fn write_container<T: Scalar>(path: &Path, c: &Container<T>) -> Result<()> {
    std::fs::write(path, encode_container(c))?;
    Ok(())
}

pub(crate) fn read_container<T: Scalar>(path: &Path) -> Result<Container<T>> {
    let bytes = std::fs::read(path)?;
    decode_container(&bytes)
}

pub(crate) fn config_meta(config: &ModelConfig) -> Vec<(String, String)> {
    let mut meta = vec![("model".to_string(), config.kind().to_string())];
    let mut push = |k: &str, v: String| meta.push((k.to_string(), v));
    match config {
        ModelConfig::Transformer(c) => {
            push("d_model", c.d_model.to_string());
            push("n_heads", c.n_heads.to_string());
            push("ffn_dim", c.ffn_dim.to_string());
            push("n_layers", c.n_layers.to_string());
            push("dropout_rate", c.dropout_rate.to_string());
            push("seq_len", c.seq_len.to_string());
            push("use_layer_norm", c.use_layer_norm.to_string());
            push("input_channels", c.input_channels.to_string());
        }
        ModelConfig::UNet(c) => {
            push("enc1_channels", c.enc1_channels.to_string());
            push("enc2_channels", c.enc2_channels.to_string());
            push("final_channels", c.final_channels.to_string());
            push("kernel_size", c.kernel_size.to_string());
            push("pool", c.pool.to_string());
            push("upsample", c.upsample.to_string());
            push("leaky_slope", c.leaky_slope.to_string());
            push("seq_len", c.seq_len.to_string());
        }
        ModelConfig::Linear(c) => {
            push("seq_len", c.seq_len.to_string());
        }
    }
    meta
}

pub(crate) fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| malformed(format!("missing meta key `{key}`")))
}

pub(crate) fn meta_parse<F: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<F> {
    meta_value(meta, key)?
        .parse()
        .map_err(|_| malformed(format!("bad value for meta key `{key}`")))
}

pub(crate) fn config_from_meta(meta: &[(String, String)]) -> Result<ModelConfig> {
    let config = match meta_value(meta, "model")? {
        "transformer" => ModelConfig::Transformer(TransformerConfig {
            d_model: meta_parse(meta, "d_model")?,
            n_heads: meta_parse(meta, "n_heads")?,
            ffn_dim: meta_parse(meta, "ffn_dim")?,
            n_layers: meta_parse(meta, "n_layers")?,
            dropout_rate: meta_parse(meta, "dropout_rate")?,
            seq_len: meta_parse(meta, "seq_len")?,
            use_layer_norm: meta_parse(meta, "use_layer_norm")?,
            input_channels: meta_parse(meta, "input_channels")?,
        }),
        "unet" => ModelConfig::UNet(UNetConfig {
            enc1_channels: meta_parse(meta, "enc1_channels")?,
            enc2_channels: meta_parse(meta, "enc2_channels")?,
            final_channels: meta_parse(meta, "final_channels")?,
            kernel_size: meta_parse(meta, "kernel_size")?,
            pool: meta_parse(meta, "pool")?,
            upsample: meta_parse(meta, "upsample")?,
            leaky_slope: meta_parse(meta, "leaky_slope")?,
            seq_len: meta_parse(meta, "seq_len")?,
        }),
        "linear" => ModelConfig::Linear(LinearConfig {
            seq_len: meta_parse(meta, "seq_len")?,
        }),
        other => return Err(malformed(format!("unknown model kind `{other}`"))),
    };
    config.validate()?;
    Ok(config)
}

/// Persist model parameters. Bit-exact: `load_params` returns arrays whose
/// bytes equal what was saved.
pub fn save_params<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    let container = Container {
        meta: config_meta(params.config()),
        tensors: params
            .names()
            .iter()
            .zip(params.arrays())
            .map(|(n, a)| (n.clone(), a.clone()))
            .collect(),
    };
    write_container(path, &container)
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let container = read_container::<T>(path)?;
    params_from_container(container)
}

pub(crate) fn params_from_container<T: Scalar>(c: Container<T>) -> Result<ModelParams<T>> {
    let config = config_from_meta(&c.meta)?;
    let (names, arrays): (Vec<_>, Vec<_>) = c.tensors.into_iter().unzip();
    ModelParams::from_parts(config, names, arrays)
}
