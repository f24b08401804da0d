//! Small 1D U-Net: one pooled encoder stage, nearest-neighbor upsampling,
//! and a skip concatenation that hands the full-resolution features to the
//! fusion conv. A 1x1 head collapses the fused channels back to one trace.

use serde::{Deserialize, Serialize};

use super::{param_leaves, ForwardGraph, ModelParams, ParamKind};
use crate::error::{Result, RydError};
use crate::numerics::{Array, Graph, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub enc1_channels: usize,
    pub enc2_channels: usize,
    pub final_channels: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub upsample: usize,
    pub leaky_slope: f64,
    pub seq_len: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            enc1_channels: 24,
            enc2_channels: 48,
            final_channels: 48,
            kernel_size: 3,
            pool: 2,
            upsample: 2,
            leaky_slope: 0.3,
            seq_len: 1000,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(RydError::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.enc1_channels == 0 || self.enc2_channels == 0 || self.final_channels == 0 {
            return Err(RydError::Config("channel counts must be positive".into()));
        }
        if self.pool < 2 || self.upsample != self.pool {
            return Err(RydError::Config(format!(
                "pool {} and upsample {} must match and be at least 2",
                self.pool, self.upsample
            )));
        }
        if self.seq_len == 0 || self.seq_len % self.pool != 0 {
            return Err(RydError::Config(format!(
                "seq_len {} must be a positive multiple of pool {}",
                self.seq_len, self.pool
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(RydError::Config(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    pub(crate) fn param_specs(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        let k = self.kernel_size;
        let (c1, c2, cf) = (self.enc1_channels, self.enc2_channels, self.final_channels);
        let skip = c1 + c2;
        vec![
            (
                "enc1.kernel".to_string(),
                vec![k, 1, c1],
                ParamKind::Weight(k, k * c1),
            ),
            ("enc1.bias".to_string(), vec![c1], ParamKind::Bias),
            (
                "enc2.kernel".to_string(),
                vec![k, c1, c2],
                ParamKind::Weight(k * c1, k * c2),
            ),
            ("enc2.bias".to_string(), vec![c2], ParamKind::Bias),
            (
                "fuse.kernel".to_string(),
                vec![k, skip, cf],
                ParamKind::Weight(k * skip, k * cf),
            ),
            ("fuse.bias".to_string(), vec![cf], ParamKind::Bias),
            (
                "head.kernel".to_string(),
                vec![1, cf, 1],
                ParamKind::Weight(cf, 1),
            ),
            ("head.bias".to_string(), vec![1], ParamKind::Bias),
        ]
    }
}

pub(super) fn unet_graph<T: Scalar>(
    cfg: &UNetConfig,
    params: &ModelParams<T>,
    trace: &Array<T>,
) -> Result<ForwardGraph<T>> {
    cfg.validate()?;
    if trace.rank() != 2 || trace.cols() != 1 || trace.rows() != cfg.seq_len {
        return Err(RydError::Dimension(format!(
            "unet expects a {} x 1 trace, got {:?}",
            cfg.seq_len,
            trace.shape()
        )));
    }
    let mut g = Graph::new();
    let param_ids = param_leaves(&mut g, params);
    let pid = |name: &str| {
        let idx = params
            .names()
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        param_ids[idx]
    };

    let input = g.constant(trace.clone());
    let c1 = g.conv1d(input, pid("enc1.kernel"), pid("enc1.bias"))?;
    let e1 = g.leaky_relu(c1, cfg.leaky_slope)?;
    let p = g.maxpool1d(e1, cfg.pool)?;
    let c2 = g.conv1d(p, pid("enc2.kernel"), pid("enc2.bias"))?;
    let e2 = g.leaky_relu(c2, cfg.leaky_slope)?;
    let up = g.upsample1d(e2, cfg.upsample)?;
    let cat = g.concat_cols(&[e1, up])?;
    let cf = g.conv1d(cat, pid("fuse.kernel"), pid("fuse.bias"))?;
    let fused = g.leaky_relu(cf, cfg.leaky_slope)?;
    let output = g.conv1d(fused, pid("head.kernel"), pid("head.bias"))?;
    Ok(ForwardGraph { graph: g, input, output, param_ids })
}
