//! Tape-based reverse-mode differentiation. Nodes are appended in evaluation
//! order; the gradient pass walks the tape in exact reverse construction
//! order, so topological order is implied and never recomputed.
//!
//! Validation mode (`with_validation`) checks every op output for NaN/Inf and
//! raises a numerical error. It is off by default so callers like the
//! training loop can observe a non-finite loss and abort with diagnostics.

use super::array::Array;
use super::scalar::Scalar;
use crate::error::{Result, RydError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NodeId = usize;

/// Dropout and any other train/infer dependent op switch on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LAYER_NORM_EPS: f64 = 1e-5;

/// Operation record. Ops that need forward-pass state for the backward pass
/// (pool argmax, dropout masks, layer-norm statistics) cache it inline.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, c: f64 },
    Conv1d { x: NodeId, kernel: NodeId, bias: NodeId },
    MaxPool { x: NodeId, pool: usize, argmax: Vec<u32> },
    Upsample { x: NodeId, factor: usize },
    Softmax { x: NodeId },
    Gelu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Dropout { x: NodeId, mask: Vec<T> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, inv_std: Vec<T> },
    Transpose { x: NodeId },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    Sum { x: NodeId },
    MseLoss { pred: NodeId, target: NodeId },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool { .. } => "maxpool1d",
            Op::Upsample { .. } => "upsample1d",
            Op::Softmax { .. } => "softmax",
            Op::Gelu { .. } => "gelu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Dropout { .. } => "dropout",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Transpose { .. } => "transpose",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Sum { .. } => "sum",
            Op::MseLoss { .. } => "mse_loss",
        }
    }
}

pub struct Node<T> {
    pub op: Op<T>,
    pub value: Array<T>,
    pub requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    validate: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), validate: false }
    }

    pub fn with_validation(validate: bool) -> Self {
        Graph { nodes: Vec::new(), validate }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.nodes[id].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn leaf(&mut self, value: Array<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array<T>) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op<T>, value: Array<T>, requires_grad: bool) -> Result<NodeId> {
        if self.validate {
            value.validate_finite(op.name())?;
        }
        self.nodes.push(Node { op, value, requires_grad });
        Ok(self.nodes.len() - 1)
    }

    fn rg2(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a].requires_grad || self.nodes[b].requires_grad
    }

    /// c[i,j] = sum_l a[i,l] b[l,j].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows() {
            return Err(RydError::Dimension(format!(
                "matmul shape mismatch: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = Array::zeros(vec![m, n]);
        unsafe {
            T::gemm_acc(
                m,
                k,
                n,
                va.data().as_ptr(),
                k as isize,
                1,
                vb.data().as_ptr(),
                n as isize,
                1,
                out.data_mut().as_mut_ptr(),
                n as isize,
                1,
            );
        }
        self.push(Op::Matmul { a, b }, out, self.rg2(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "add")?;
        let data: Vec<T> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Array::from_vec(self.nodes[a].value.shape().to_vec(), data)?;
        self.push(Op::Add { a, b }, out, self.rg2(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "sub")?;
        let data: Vec<T> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Array::from_vec(self.nodes[a].value.shape().to_vec(), data)?;
        self.push(Op::Sub { a, b }, out, self.rg2(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "mul")?;
        let data: Vec<T> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Array::from_vec(self.nodes[a].value.shape().to_vec(), data)?;
        self.push(Op::Mul { a, b }, out, self.rg2(a, b))
    }

    fn elementwise_pair(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if !va.same_shape(vb) {
            return Err(RydError::Dimension(format!(
                "{what} shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        Ok(())
    }

    /// Broadcast a length-n row vector over every row of an m x n matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (&self.nodes[a].value, &self.nodes[row].value);
        if va.rank() != 2 || vr.rank() != 1 || vr.len() != va.cols() {
            return Err(RydError::Dimension(format!(
                "add_row expects m x n and n, got {:?} and {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let n = va.cols();
        let data: Vec<T> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vr.data()[i % n])
            .collect();
        let out = Array::from_vec(va.shape().to_vec(), data)?;
        self.push(Op::AddRow { a, row }, out, self.rg2(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let cv = T::from_f64(c);
        let out = self.nodes[a].value.map(|x| x * cv);
        let rg = self.nodes[a].requires_grad;
        self.push(Op::Scale { a, c }, out, rg)
    }

    /// Cross-correlation with "same" zero padding. x is L x C_in, kernel is
    /// K x C_in x C_out with K odd, bias is C_out.
    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vk, vb) = (
            &self.nodes[x].value,
            &self.nodes[kernel].value,
            &self.nodes[bias].value,
        );
        if vx.rank() != 2 || vk.rank() != 3 || vb.rank() != 1 {
            return Err(RydError::Dimension(format!(
                "conv1d expects L x C_in, K x C_in x C_out, C_out; got {:?}, {:?}, {:?}",
                vx.shape(),
                vk.shape(),
                vb.shape()
            )));
        }
        let (ksz, c_in, c_out) = (vk.shape()[0], vk.shape()[1], vk.shape()[2]);
        if ksz % 2 == 0 {
            return Err(RydError::Config(format!(
                "conv1d kernel size must be odd, got {ksz}"
            )));
        }
        if vx.cols() != c_in || vb.len() != c_out {
            return Err(RydError::Dimension(format!(
                "conv1d channel mismatch: x {:?}, kernel {:?}, bias {:?}",
                vx.shape(),
                vk.shape(),
                vb.shape()
            )));
        }
        let l = vx.rows();
        let pad = ksz / 2;
        let mut out = Array::zeros(vec![l, c_out]);
        {
            let xd = vx.data();
            let kd = vk.data();
            let bd = vb.data();
            let od = out.data_mut();
            for pos in 0..l {
                let row = &mut od[pos * c_out..(pos + 1) * c_out];
                row.copy_from_slice(bd);
                for dk in 0..ksz {
                    let xi = pos as isize + dk as isize - pad as isize;
                    if xi < 0 || xi >= l as isize {
                        continue;
                    }
                    let xrow = &xd[xi as usize * c_in..(xi as usize + 1) * c_in];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &kd[(dk * c_in + ci) * c_out..(dk * c_in + ci + 1) * c_out];
                        for (co, &w) in wrow.iter().enumerate() {
                            row[co] += xv * w;
                        }
                    }
                }
            }
        }
        let rg = self.rg2(x, kernel) || self.nodes[bias].requires_grad;
        self.push(Op::Conv1d { x, kernel, bias }, out, rg)
    }

    /// Non-overlapping max over `pool` consecutive rows. Gradient routes to
    /// the argmax row; ties take the first element of the window.
    pub fn maxpool1d(&mut self, x: NodeId, pool: usize) -> Result<NodeId> {
        let vx = &self.nodes[x].value;
        if vx.rank() != 2 {
            return Err(RydError::Dimension(format!(
                "maxpool1d expects L x C, got {:?}",
                vx.shape()
            )));
        }
        if pool < 2 {
            return Err(RydError::Config(format!("pool size must be >= 2, got {pool}")));
        }
        let (l, c) = (vx.rows(), vx.cols());
        if l % pool != 0 {
            return Err(RydError::Dimension(format!(
                "maxpool1d length {l} not divisible by pool {pool}; caller must pad or truncate"
            )));
        }
        let lo = l / pool;
        let mut out = Array::zeros(vec![lo, c]);
        let mut argmax = vec![0u32; lo * c];
        for o in 0..lo {
            for ch in 0..c {
                let mut best = vx.at2(o * pool, ch);
                let mut best_row = o * pool;
                for p in 1..pool {
                    let v = vx.at2(o * pool + p, ch);
                    if v > best {
                        best = v;
                        best_row = o * pool + p;
                    }
                }
                out.set2(o, ch, best);
                argmax[o * c + ch] = best_row as u32;
            }
        }
        let rg = self.nodes[x].requires_grad;
        self.push(Op::MaxPool { x, pool, argmax }, out, rg)
    }

    /// Nearest-neighbor repetition of each row `factor` times.
    pub fn upsample1d(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let vx = &self.nodes[x].value;
        if vx.rank() != 2 {
            return Err(RydError::Dimension(format!(
                "upsample1d expects L x C, got {:?}",
                vx.shape()
            )));
        }
        if factor < 1 {
            return Err(RydError::Config("upsample factor must be >= 1".into()));
        }
        let (l, c) = (vx.rows(), vx.cols());
        let mut out = Array::zeros(vec![l * factor, c]);
        for r in 0..l {
            let src = &vx.data()[r * c..(r + 1) * c];
            for f in 0..factor {
                let dst_row = r * factor + f;
                out.data_mut()[dst_row * c..(dst_row + 1) * c].copy_from_slice(src);
            }
        }
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Upsample { x, factor }, out, rg)
    }

    /// Exp-normalization along the last axis with max subtraction, so inputs
    /// of large magnitude cannot overflow.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x].value;
        let n = vx.cols();
        let rows = vx.len() / n;
        let mut data = vec![T::ZERO; vx.len()];
        for r in 0..rows {
            let src = &vx.data()[r * n..(r + 1) * n];
            let mut mx = src[0];
            for &v in &src[1..] {
                mx = mx.maximum(v);
            }
            let dst = &mut data[r * n..(r + 1) * n];
            let mut sum = T::ZERO;
            for (d, &v) in dst.iter_mut().zip(src.iter()) {
                *d = (v - mx).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d = *d / sum;
            }
        }
        let out = Array::from_vec(vx.shape().to_vec(), data)?;
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Softmax { x }, out, rg)
    }

    /// Exact-erf form 0.5 x (1 + erf(x / sqrt(2))).
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let out = self.nodes[x]
            .value
            .map(|v| half * v * (T::ONE + (v * inv_sqrt2).erf()));
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Gelu { x }, out, rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(RydError::Config(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let s = T::from_f64(slope);
        let out = self.nodes[x]
            .value
            .map(|v| if v >= T::ZERO { v } else { s * v });
        let rg = self.nodes[x].requires_grad;
        self.push(Op::LeakyRelu { x, slope }, out, rg)
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by 1/(1-rate), so the
    /// expectation is the identity. Infer mode returns the input node itself.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: Mode, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(RydError::Config(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Infer {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<T> = (0..self.nodes[x].value.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::ZERO
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<T> = self.nodes[x]
            .value
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Array::from_vec(self.nodes[x].value.shape().to_vec(), data)?;
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Dropout { x, mask }, out, rg)
    }

    /// Row-wise layer normalization over the last axis with learnable gain
    /// and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (vx, vg, vb) = (
            &self.nodes[x].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        let n = vx.cols();
        if vg.rank() != 1 || vb.rank() != 1 || vg.len() != n || vb.len() != n {
            return Err(RydError::Dimension(format!(
                "layer_norm expects gain/shift of length {n}, got {:?} and {:?}",
                vg.shape(),
                vb.shape()
            )));
        }
        let rows = vx.len() / n;
        let inv_n = T::from_f64(1.0 / n as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut xhat = vec![T::ZERO; vx.len()];
        let mut inv_std = vec![T::ZERO; rows];
        let mut data = vec![T::ZERO; vx.len()];
        for r in 0..rows {
            let src = &vx.data()[r * n..(r + 1) * n];
            let mut mean = T::ZERO;
            for &v in src {
                mean += v;
            }
            mean *= inv_n;
            let mut var = T::ZERO;
            for &v in src {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_n;
            let istd = T::ONE / (var + eps).sqrt();
            inv_std[r] = istd;
            for (j, &v) in src.iter().enumerate() {
                let h = (v - mean) * istd;
                xhat[r * n + j] = h;
                data[r * n + j] = vg.data()[j] * h + vb.data()[j];
            }
        }
        let out = Array::from_vec(vx.shape().to_vec(), data)?;
        let rg = self.rg2(x, gamma) || self.nodes[beta].requires_grad;
        self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, out, rg)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x].value;
        if vx.rank() != 2 {
            return Err(RydError::Dimension(format!(
                "transpose expects rank 2, got {:?}",
                vx.shape()
            )));
        }
        let (m, n) = (vx.rows(), vx.cols());
        let mut out = Array::zeros(vec![n, m]);
        for r in 0..m {
            for c in 0..n {
                out.set2(c, r, vx.at2(r, c));
            }
        }
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Transpose { x }, out, rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vx = &self.nodes[x].value;
        if vx.rank() != 2 || start + len > vx.cols() || len == 0 {
            return Err(RydError::Dimension(format!(
                "slice_cols [{start}, {}) out of bounds for {:?}",
                start + len,
                vx.shape()
            )));
        }
        let (m, n) = (vx.rows(), vx.cols());
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&vx.data()[r * n + start..r * n + start + len]);
        }
        let out = Array::from_vec(vec![m, len], data)?;
        let rg = self.nodes[x].requires_grad;
        self.push(Op::SliceCols { x, start, len }, out, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(RydError::Dimension("concat_cols of zero parts".into()));
        }
        let m = self.nodes[parts[0]].value.rows();
        let mut total = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.rank() != 2 || v.rows() != m {
                return Err(RydError::Dimension(format!(
                    "concat_cols row mismatch: expected {m} rows, got {:?}",
                    v.shape()
                )));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let v = &self.nodes[p].value;
                let n = v.cols();
                data.extend_from_slice(&v.data()[r * n..(r + 1) * n]);
            }
        }
        let out = Array::from_vec(vec![m, total], data)?;
        let rg = parts.iter().any(|&p| self.nodes[p].requires_grad);
        self.push(Op::ConcatCols { parts: parts.to_vec() }, out, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let mut acc = T::ZERO;
        for &v in self.nodes[x].value.data() {
            acc += v;
        }
        let rg = self.nodes[x].requires_grad;
        self.push(Op::Sum { x }, Array::scalar(acc), rg)
    }

    /// Mean of squared differences; gradient w.r.t. pred is 2 (pred - target) / N.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.elementwise_pair(pred, target, "mse_loss")?;
        let n = self.nodes[pred].value.len();
        let mut acc = T::ZERO;
        for (&p, &t) in self.nodes[pred]
            .value
            .data()
            .iter()
            .zip(self.nodes[target].value.data())
        {
            let d = p - t;
            acc += d * d;
        }
        let loss = acc / T::from_f64(n as f64);
        let rg = self.rg2(pred, target);
        self.push(Op::MseLoss { pred, target }, Array::scalar(loss), rg)
    }

    /// Gradients of `loss` w.r.t. every learnable leaf, keyed by node id.
    /// Learnable leaves with no path to the loss receive explicit zeros.
    /// Interior gradients are dropped as soon as they have been propagated.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Array<T>>>> {
        let loss_node = &self.nodes[loss];
        if !loss_node.value.is_scalar_shape() {
            return Err(RydError::Dimension(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Array::scalar(T::ONE));
        for i in (0..=loss).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Array::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(grads)
    }

    fn want(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn acc_into(&self, grads: &mut Vec<Option<Array<T>>>, id: NodeId, delta: &Array<T>) {
        let slot = grads[id].get_or_insert_with(|| Array::zeros(self.nodes[id].value.shape().to_vec()));
        for (d, &s) in slot.data_mut().iter_mut().zip(delta.data()) {
            *d += s;
        }
    }

    fn grad_slot<'a>(
        &self,
        grads: &'a mut Vec<Option<Array<T>>>,
        id: NodeId,
    ) -> &'a mut Array<T> {
        grads[id].get_or_insert_with(|| Array::zeros(self.nodes[id].value.shape().to_vec()))
    }

    fn propagate(&self, i: NodeId, g: &Array<T>, grads: &mut Vec<Option<Array<T>>>) {
        match &self.nodes[i].op {
            Op::Leaf => unreachable!("leaf gradients are terminal"),
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[*a].value.rows(), self.nodes[*a].value.cols());
                let n = self.nodes[*b].value.cols();
                if self.want(*a) {
                    // dA += G @ B^T, B^T expressed through swapped strides
                    let b_ptr = self.nodes[*b].value.data().as_ptr();
                    let da = self.grad_slot(grads, *a);
                    unsafe {
                        T::gemm_acc(
                            m,
                            n,
                            k,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            b_ptr,
                            1,
                            n as isize,
                            da.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if self.want(*b) {
                    // dB += A^T @ G
                    let a_ptr = self.nodes[*a].value.data().as_ptr();
                    let db = self.grad_slot(grads, *b);
                    unsafe {
                        T::gemm_acc(
                            k,
                            m,
                            n,
                            a_ptr,
                            1,
                            k as isize,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            db.data_mut().as_mut_ptr(),
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                if self.want(*a) {
                    self.acc_into(grads, *a, g);
                }
                if self.want(*b) {
                    self.acc_into(grads, *b, g);
                }
            }
            Op::Sub { a, b } => {
                if self.want(*a) {
                    self.acc_into(grads, *a, g);
                }
                if self.want(*b) {
                    let neg = g.map(|v| -v);
                    self.acc_into(grads, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.want(*a) {
                    let vb = &self.nodes[*b].value;
                    let da: Vec<T> = g.data().iter().zip(vb.data()).map(|(&gv, &bv)| gv * bv).collect();
                    let da = Array::from_vec(g.shape().to_vec(), da).expect("shape preserved");
                    self.acc_into(grads, *a, &da);
                }
                if self.want(*b) {
                    let va = &self.nodes[*a].value;
                    let db: Vec<T> = g.data().iter().zip(va.data()).map(|(&gv, &av)| gv * av).collect();
                    let db = Array::from_vec(g.shape().to_vec(), db).expect("shape preserved");
                    self.acc_into(grads, *b, &db);
                }
            }
            Op::AddRow { a, row } => {
                if self.want(*a) {
                    self.acc_into(grads, *a, g);
                }
                if self.want(*row) {
                    let n = self.nodes[*row].value.len();
                    let dr = self.grad_slot(grads, *row);
                    for (idx, &gv) in g.data().iter().enumerate() {
                        dr.data_mut()[idx % n] += gv;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.want(*a) {
                    let cv = T::from_f64(*c);
                    let da = g.map(|v| v * cv);
                    self.acc_into(grads, *a, &da);
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let vx = &self.nodes[*x].value;
                let vk = &self.nodes[*kernel].value;
                let (ksz, c_in, c_out) = (vk.shape()[0], vk.shape()[1], vk.shape()[2]);
                let l = vx.rows();
                let pad = ksz / 2;
                if self.want(*x) {
                    let kd = vk.data();
                    let dx = self.grad_slot(grads, *x);
                    let dxd = dx.data_mut();
                    for pos in 0..l {
                        let grow = &g.data()[pos * c_out..(pos + 1) * c_out];
                        for dk in 0..ksz {
                            let xi = pos as isize + dk as isize - pad as isize;
                            if xi < 0 || xi >= l as isize {
                                continue;
                            }
                            for ci in 0..c_in {
                                let wrow = &kd[(dk * c_in + ci) * c_out..(dk * c_in + ci + 1) * c_out];
                                let mut acc = T::ZERO;
                                for (co, &w) in wrow.iter().enumerate() {
                                    acc += w * grow[co];
                                }
                                dxd[xi as usize * c_in + ci] += acc;
                            }
                        }
                    }
                }
                if self.want(*kernel) {
                    let xd = vx.data();
                    let dk_arr = self.grad_slot(grads, *kernel);
                    let dkd = dk_arr.data_mut();
                    for pos in 0..l {
                        let grow = &g.data()[pos * c_out..(pos + 1) * c_out];
                        for dk in 0..ksz {
                            let xi = pos as isize + dk as isize - pad as isize;
                            if xi < 0 || xi >= l as isize {
                                continue;
                            }
                            let xrow = &xd[xi as usize * c_in..(xi as usize + 1) * c_in];
                            for (ci, &xv) in xrow.iter().enumerate() {
                                let base = (dk * c_in + ci) * c_out;
                                for (co, &gv) in grow.iter().enumerate() {
                                    dkd[base + co] += xv * gv;
                                }
                            }
                        }
                    }
                }
                if self.want(*bias) {
                    let db = self.grad_slot(grads, *bias);
                    for pos in 0..l {
                        for co in 0..c_out {
                            db.data_mut()[co] += g.data()[pos * c_out + co];
                        }
                    }
                }
            }
            Op::MaxPool { x, pool: _, argmax } => {
                if self.want(*x) {
                    let c = self.nodes[*x].value.cols();
                    let dx = self.grad_slot(grads, *x);
                    for (o_idx, &src_row) in argmax.iter().enumerate() {
                        let ch = o_idx % c;
                        dx.data_mut()[src_row as usize * c + ch] += g.data()[o_idx];
                    }
                }
            }
            Op::Upsample { x, factor } => {
                if self.want(*x) {
                    let (l, c) = (self.nodes[*x].value.rows(), self.nodes[*x].value.cols());
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..l {
                        for f in 0..*factor {
                            let src = &g.data()[(r * factor + f) * c..(r * factor + f + 1) * c];
                            for (ch, &gv) in src.iter().enumerate() {
                                dx.data_mut()[r * c + ch] += gv;
                            }
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if self.want(*x) {
                    let y = &self.nodes[i].value;
                    let n = y.cols();
                    let rows = y.len() / n;
                    let mut dx = Array::zeros(y.shape().to_vec());
                    for r in 0..rows {
                        let ys = &y.data()[r * n..(r + 1) * n];
                        let gs = &g.data()[r * n..(r + 1) * n];
                        let mut dot = T::ZERO;
                        for (&yv, &gv) in ys.iter().zip(gs) {
                            dot += yv * gv;
                        }
                        let dst = &mut dx.data_mut()[r * n..(r + 1) * n];
                        for ((d, &yv), &gv) in dst.iter_mut().zip(ys).zip(gs) {
                            *d = yv * (gv - dot);
                        }
                    }
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::Gelu { x } => {
                if self.want(*x) {
                    let half = T::from_f64(0.5);
                    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                    let pdf_c = T::from_f64(INV_SQRT_2PI);
                    let vx = &self.nodes[*x].value;
                    let dx: Vec<T> = vx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            let cdf = half * (T::ONE + (v * inv_sqrt2).erf());
                            let pdf = pdf_c * (-(v * v) * half).exp();
                            gv * (cdf + v * pdf)
                        })
                        .collect();
                    let dx = Array::from_vec(vx.shape().to_vec(), dx).expect("shape preserved");
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.want(*x) {
                    let s = T::from_f64(*slope);
                    let vx = &self.nodes[*x].value;
                    let dx: Vec<T> = vx
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v >= T::ZERO { gv } else { s * gv })
                        .collect();
                    let dx = Array::from_vec(vx.shape().to_vec(), dx).expect("shape preserved");
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::Dropout { x, mask } => {
                if self.want(*x) {
                    let dx: Vec<T> = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    let dx = Array::from_vec(g.shape().to_vec(), dx).expect("shape preserved");
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let n = self.nodes[i].value.cols();
                let rows = self.nodes[i].value.len() / n;
                let vg = &self.nodes[*gamma].value;
                if self.want(*x) {
                    let inv_n = T::from_f64(1.0 / n as f64);
                    let mut dx = Array::zeros(self.nodes[*x].value.shape().to_vec());
                    for r in 0..rows {
                        let gs = &g.data()[r * n..(r + 1) * n];
                        let hs = &xhat[r * n..(r + 1) * n];
                        let mut m1 = T::ZERO;
                        let mut m2 = T::ZERO;
                        let mut dxh = vec![T::ZERO; n];
                        for j in 0..n {
                            dxh[j] = gs[j] * vg.data()[j];
                            m1 += dxh[j];
                            m2 += dxh[j] * hs[j];
                        }
                        m1 *= inv_n;
                        m2 *= inv_n;
                        let istd = inv_std[r];
                        let dst = &mut dx.data_mut()[r * n..(r + 1) * n];
                        for j in 0..n {
                            dst[j] = istd * (dxh[j] - m1 - hs[j] * m2);
                        }
                    }
                    self.acc_into(grads, *x, &dx);
                }
                if self.want(*gamma) {
                    let dgm = self.grad_slot(grads, *gamma);
                    for r in 0..rows {
                        for j in 0..n {
                            dgm.data_mut()[j] += g.data()[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                if self.want(*beta) {
                    let db = self.grad_slot(grads, *beta);
                    for r in 0..rows {
                        for j in 0..n {
                            db.data_mut()[j] += g.data()[r * n + j];
                        }
                    }
                }
            }
            Op::Transpose { x } => {
                if self.want(*x) {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dx = Array::zeros(vec![n, m]);
                    for r in 0..m {
                        for c in 0..n {
                            dx.set2(c, r, g.at2(r, c));
                        }
                    }
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.want(*x) {
                    let n = self.nodes[*x].value.cols();
                    let m = self.nodes[*x].value.rows();
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..m {
                        for j in 0..*len {
                            dx.data_mut()[r * n + start + j] += g.data()[r * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = self.nodes[i].value.cols();
                let m = self.nodes[i].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let np = self.nodes[p].value.cols();
                    if self.want(p) {
                        let dp = self.grad_slot(grads, p);
                        for r in 0..m {
                            for j in 0..np {
                                dp.data_mut()[r * np + j] += g.data()[r * total + offset + j];
                            }
                        }
                    }
                    offset += np;
                }
            }
            Op::Sum { x } => {
                if self.want(*x) {
                    let gv = g.data()[0];
                    let dx = Array::filled(self.nodes[*x].value.shape().to_vec(), gv);
                    self.acc_into(grads, *x, &dx);
                }
            }
            Op::MseLoss { pred, target } => {
                let n = self.nodes[*pred].value.len();
                let coef = g.data()[0] * T::from_f64(2.0 / n as f64);
                if self.want(*pred) {
                    let dp: Vec<T> = self.nodes[*pred]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[*target].value.data())
                        .map(|(&p, &t)| coef * (p - t))
                        .collect();
                    let dp = Array::from_vec(self.nodes[*pred].value.shape().to_vec(), dp)
                        .expect("shape preserved");
                    self.acc_into(grads, *pred, &dp);
                }
                if self.want(*target) {
                    let dt: Vec<T> = self.nodes[*pred]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[*target].value.data())
                        .map(|(&p, &t)| -coef * (p - t))
                        .collect();
                    let dt = Array::from_vec(self.nodes[*target].value.shape().to_vec(), dt)
                        .expect("shape preserved");
                    self.acc_into(grads, *target, &dt);
                }
            }
        }
    }
}
