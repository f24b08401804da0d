//! Denoiser architectures: a Transformer encoder stack and a small 1D U-Net,
//! plus a scalar linear model used as an analysable reference. All three are
//! expressed over [`crate::numerics`] so one engine provides forward,
//! backward, and optimizer updates.
//!
//! Parameters live in a [`ModelParams`] container: a flat list of named
//! arrays in a canonical order (construction order of the forward graph).
//! The order is load-bearing; the optimizer state and the checkpoint format
//! both index into it.

pub(crate) mod checkpoint;
mod linear;
mod transformer;
mod unet;

pub use checkpoint::{load_params, save_params};
pub use linear::LinearConfig;
pub use transformer::{sine_positional_encoding, TransformerConfig};
pub use unet::UNetConfig;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RydError};
use crate::numerics::{Array, DType, Graph, Mode, NodeId, Scalar};
use crate::seeds;

/// Which architecture a parameter set belongs to, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Transformer(TransformerConfig),
    UNet(UNetConfig),
    Linear(LinearConfig),
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamKind {
    /// Glorot-uniform over (fan_in, fan_out).
    Weight(usize, usize),
    /// Zeros.
    Bias,
    /// Ones (layer-norm gain).
    Gain,
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Transformer(_) => "transformer",
            ModelConfig::UNet(_) => "unet",
            ModelConfig::Linear(_) => "linear",
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelConfig::Transformer(c) => c.seq_len,
            ModelConfig::UNet(c) => c.seq_len,
            ModelConfig::Linear(c) => c.seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::UNet(c) => c.validate(),
            ModelConfig::Linear(c) => c.validate(),
        }
    }

    /// Canonical parameter list: (name, shape, init kind), in forward
    /// construction order.
    pub(crate) fn param_specs(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        match self {
            ModelConfig::Transformer(c) => c.param_specs(),
            ModelConfig::UNet(c) => c.param_specs(),
            ModelConfig::Linear(c) => c.param_specs(),
        }
    }
}

/// Named parameter arrays plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    names: Vec<String>,
    arrays: Vec<Array<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub(crate) fn from_parts(
        config: ModelConfig,
        names: Vec<String>,
        arrays: Vec<Array<T>>,
    ) -> Result<Self> {
        let specs = config.param_specs();
        if names.len() != specs.len() || arrays.len() != specs.len() {
            return Err(RydError::Data(format!(
                "{} model expects {} parameter tensors, got {}",
                config.kind(),
                specs.len(),
                names.len().max(arrays.len())
            )));
        }
        for (i, (name, shape, _)) in specs.iter().enumerate() {
            if &names[i] != name {
                return Err(RydError::Data(format!(
                    "parameter {i} should be named {name}, got {}",
                    names[i]
                )));
            }
            if arrays[i].shape() != &shape[..] {
                return Err(RydError::Dimension(format!(
                    "parameter {name} should have shape {:?}, got {:?}",
                    shape,
                    arrays[i].shape()
                )));
            }
        }
        Ok(Self { config, names, arrays })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array<T>] {
        &self.arrays
    }

    /// Mutable access for the optimizer; order matches `names`.
    pub fn arrays_mut(&mut self) -> &mut [Array<T>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.arrays[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.arrays[i])
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }
}

/// Glorot-uniform weights, zero biases, unit gains. Each tensor draws from
/// its own seed stream so the values do not depend on enumeration order of
/// the other tensors.
pub fn init_params<T: Scalar>(config: ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let specs = config.param_specs();
    let mut names = Vec::with_capacity(specs.len());
    let mut arrays = Vec::with_capacity(specs.len());
    for (i, (name, shape, kind)) in specs.into_iter().enumerate() {
        let arr = match kind {
            ParamKind::Bias => Array::zeros(shape),
            ParamKind::Gain => Array::filled(shape, T::ONE),
            ParamKind::Weight(fan_in, fan_out) => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
                    seed,
                    seeds::stream::INIT,
                    i as u64,
                ));
                let n: usize = shape.iter().product();
                let data: Vec<T> = (0..n)
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                Array::from_vec(shape, data)?
            }
        };
        names.push(name);
        arrays.push(arr);
    }
    Ok(ModelParams { config, names, arrays })
}

/// Total scalar count across all parameter tensors.
pub fn count_params<T: Scalar>(params: &ModelParams<T>) -> usize {
    params.arrays.iter().map(|a| a.len()).sum()
}

/// A forward pass captured as a graph, ready for `backward`. `param_ids`
/// aligns with `ModelParams::names`.
pub struct ForwardGraph<T: Scalar> {
    pub graph: Graph<T>,
    pub input: NodeId,
    pub output: NodeId,
    pub param_ids: Vec<NodeId>,
}

impl<T: Scalar> ForwardGraph<T> {
    pub fn output_value(&self) -> &Array<T> {
        self.graph.value(self.output)
    }
}

/// Build the forward graph for any architecture. `seed` feeds dropout only;
/// infer mode ignores it.
pub fn build_graph<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Array<T>,
    mode: Mode,
    seed: u64,
) -> Result<ForwardGraph<T>> {
    match &params.config {
        ModelConfig::Transformer(cfg) => {
            transformer::transformer_graph(cfg, params, trace, mode, seed, true)
        }
        ModelConfig::UNet(cfg) => unet::unet_graph(cfg, params, trace),
        ModelConfig::Linear(_) => linear::linear_graph(params, trace),
    }
}

/// Run one trace through the model and return the denoised trace.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Array<T>,
    mode: Mode,
    seed: u64,
) -> Result<Array<T>> {
    let fg = build_graph(params, trace, mode, seed)?;
    Ok(fg.output_value().clone())
}

/// Transformer forward with every knob exposed; `use_positional` off makes
/// the block stack permutation-equivariant, which the tests exploit.
pub fn transformer_forward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Array<T>,
    mode: Mode,
    seed: u64,
    use_positional: bool,
) -> Result<Array<T>> {
    let ModelConfig::Transformer(cfg) = &params.config else {
        return Err(RydError::Config(format!(
            "transformer_forward called on {} params",
            params.config.kind()
        )));
    };
    let fg = transformer::transformer_graph(cfg, params, trace, mode, seed, use_positional)?;
    Ok(fg.output_value().clone())
}

/// U-Net forward; the architecture has no stochastic pieces, so there is no
/// mode or seed.
pub fn unet_forward<T: Scalar>(params: &ModelParams<T>, trace: &Array<T>) -> Result<Array<T>> {
    let ModelConfig::UNet(cfg) = &params.config else {
        return Err(RydError::Config(format!(
            "unet_forward called on {} params",
            params.config.kind()
        )));
    };
    let fg = unet::unet_graph(cfg, params, trace)?;
    Ok(fg.output_value().clone())
}

/// Fetch graph leaves for each parameter tensor, in canonical order.
pub(crate) fn param_leaves<T: Scalar>(
    graph: &mut Graph<T>,
    params: &ModelParams<T>,
) -> Vec<NodeId> {
    params
        .arrays
        .iter()
        .map(|a| graph.leaf(a.clone(), true))
        .collect()
}
