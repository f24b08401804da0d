//! Scalar linear model y = w * x + b applied samplewise. Too weak to denoise
//! anything real, but its optimum under mean-squared error is known in closed
//! form, which makes it the reference point for the noisy-target equivalence
//! experiments.

use serde::{Deserialize, Serialize};

use super::{param_leaves, ForwardGraph, ModelParams, ParamKind};
use crate::error::{Result, RydError};
use crate::numerics::{Array, Graph, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub seq_len: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { seq_len: 1000 }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(RydError::Config("seq_len must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn param_specs(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        vec![
            ("w".to_string(), vec![1, 1], ParamKind::Weight(1, 1)),
            ("b".to_string(), vec![1], ParamKind::Bias),
        ]
    }
}

pub(super) fn linear_graph<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Array<T>,
) -> Result<ForwardGraph<T>> {
    let seq_len = params.config().seq_len();
    if trace.rank() != 2 || trace.cols() != 1 || trace.rows() != seq_len {
        return Err(RydError::Dimension(format!(
            "linear model expects a {seq_len} x 1 trace, got {:?}",
            trace.shape()
        )));
    }
    let mut g = Graph::new();
    let param_ids = param_leaves(&mut g, params);
    let input = g.constant(trace.clone());
    let scaled = g.matmul(input, param_ids[0])?;
    let output = g.add_row(scaled, param_ids[1])?;
    Ok(ForwardGraph { graph: g, input, output, param_ids })
}
