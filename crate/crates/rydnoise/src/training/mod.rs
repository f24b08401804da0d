//! Self-supervised training loop: paired noisy traces act as input and
//! target, Adam follows the tape gradients, and a relative-range window
//! over the epoch losses decides convergence. Checkpoints carry optimizer
//! moments and the loss history, so a resumed run is bit-identical to an
//! uninterrupted one.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{
    batch_indices, destandardize, standardize, standardize_with, DatasetSplit, TraceSet,
    DEFAULT_BATCH_SIZE,
};
use crate::error::{Result, RydError};
use crate::models::checkpoint::{
    config_from_meta, config_meta, meta_parse, meta_value, read_container, write_container,
    Container,
};
use crate::models::{init_params, ModelConfig, ModelParams};
use crate::numerics::{AdamState, Array, Mode, Scalar};
use crate::seeds::{self, stream};

/// Loss floor for the relative-range convergence ratio; keeps the criterion
/// meaningful when the loss itself approaches zero.
pub const CONVERGENCE_FLOOR: f64 = 1e-12;

/// Hyperparameters for one training run. The convergence rule follows the
/// stability-over-a-window reading: training stops once the last `window`
/// epoch losses agree to a relative range below `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub window: usize,
    pub tolerance: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

/// Adam settings; defaults mirror [`AdamState::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            model,
            epochs_max: 100,
            batch_size: DEFAULT_BATCH_SIZE,
            window: 10,
            tolerance: 1e-3,
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.window == 0 {
            return Err(RydError::Config("convergence window must be at least 1".into()));
        }
        if self.epochs_max < self.window {
            return Err(RydError::Config(format!(
                "epochs_max {} is shorter than the convergence window {}",
                self.epochs_max, self.window
            )));
        }
        if self.batch_size == 0 {
            return Err(RydError::Config("batch_size must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(RydError::Config(format!(
                "convergence tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        let o = &self.optimizer;
        for (name, v) in [
            ("learning_rate", o.learning_rate),
            ("beta1", o.beta1),
            ("beta2", o.beta2),
            ("epsilon", o.epsilon),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(RydError::Config(format!("optimizer {name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based, contiguous.
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
    pub param_checksum: String,
}

/// Loss trajectory of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub converged_at_epoch: Option<usize>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// CSV export: epoch, loss, seconds.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .from_path(path)
            .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
        w.write_record(["epoch", "loss", "seconds"])
            .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
        for rec in &self.epochs {
            w.write_record([
                rec.epoch.to_string(),
                rec.loss.to_string(),
                rec.seconds.to_string(),
            ])
            .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stability over the trailing window: relative range of the last `window`
/// losses below `tolerance`. Fewer than `window` epochs never counts as
/// converged.
pub fn has_converged(losses: &[f64], window: usize, tolerance: f64) -> bool {
    if window == 0 || losses.len() < window {
        return false;
    }
    let tail = &losses[losses.len() - window..];
    let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = tail.iter().sum::<f64>() / window as f64;
    (max - min) / mean.abs().max(CONVERGENCE_FLOOR) < tolerance
}

/// First 12 hex characters of a SHA-256 over the parameter payload, in
/// canonical order. Cheap fingerprint for logs and resume checks.
pub fn param_checksum<T: Scalar>(params: &ModelParams<T>) -> String {
    let mut hasher = Sha256::new();
    for (name, arr) in params.names().iter().zip(params.arrays()) {
        hasher.update(name.as_bytes());
        hasher.update(arr.le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to continue a run: parameters, optimizer moments, and
/// the log so far.
pub struct TrainState<T: Scalar> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub log: TrainLog,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state at epoch 0.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(cfg.model.clone(), derive_init_seed(cfg.seed))?;
        let o = &cfg.optimizer;
        let adam = AdamState::with_hyperparams(
            params.arrays(),
            o.learning_rate,
            o.beta1,
            o.beta2,
            o.epsilon,
        );
        Ok(Self { params, adam, log: TrainLog::default() })
    }

    pub fn epochs_done(&self) -> usize {
        self.log.epochs.len()
    }
}

fn derive_init_seed(seed: u64) -> u64 {
    seeds::derive(seed, stream::INIT)
}

/// Run (or continue) training until convergence or `epochs_max`. The state
/// advances in place; per-epoch shuffles and dropout seeds are derived from
/// (cfg.seed, epoch), so a resumed run replays the exact remaining epochs.
/// Logged losses are in the per-trace standardized frame.
pub fn train_epochs<T: Scalar>(
    state: &mut TrainState<T>,
    split: &DatasetSplit<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    let n = split.train_x.n_sets();
    if n == 0 || split.train_y.n_sets() != n {
        return Err(RydError::Data(format!(
            "training pairs misaligned: {} inputs vs {} targets",
            n,
            split.train_y.n_sets()
        )));
    }
    if split.train_x.n_points() != cfg.model.seq_len() {
        return Err(RydError::Dimension(format!(
            "model expects {} points per trace, dataset has {}",
            cfg.model.seq_len(),
            split.train_x.n_points()
        )));
    }

    let mut losses = state.log.losses();
    while state.epochs_done() < cfg.epochs_max {
        if has_converged(&losses, cfg.window, cfg.tolerance) {
            break;
        }
        let epoch = state.epochs_done() + 1;
        let started = Instant::now();
        let epoch_loss = run_one_epoch(state, split, cfg, epoch)?;
        losses.push(epoch_loss);

        state.log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            seconds: started.elapsed().as_secs_f64(),
            param_checksum: param_checksum(&state.params),
        });
        if has_converged(&losses, cfg.window, cfg.tolerance) {
            state.log.converged_at_epoch = Some(epoch);
            break;
        }
    }
    Ok(())
}

/// One pass over the shuffled training pairs; returns the mean per-trace
/// loss. Gradients are averaged per batch in index order, so the reduction
/// is deterministic.
fn run_one_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    split: &DatasetSplit<T>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let n = split.train_x.n_sets();
    let epoch_seed = seeds::derive_indexed(cfg.seed, stream::EPOCH, epoch as u64);
    let batches = batch_indices(n, cfg.batch_size, epoch_seed)?;

    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for (batch_no, batch) in batches.iter().enumerate() {
        let mut grad_acc: Vec<Array<T>> =
            state.params.arrays().iter().map(|a| Array::zeros(a.shape().to_vec())).collect();
        let mut batch_loss = 0.0;

        for &idx in batch {
            // The model lives in the per-trace standardized frame predict()
            // uses; the target borrows its input's record so both sides sit
            // in the same frame.
            let (x_std, record) = standardize(split.train_x.trace(idx))?;
            let y_std = standardize_with(split.train_y.trace(idx), &record);
            let n_points = split.train_x.n_points();
            let x = Array::from_vec(vec![n_points, 1], x_std)?;
            let y = Array::from_vec(vec![n_points, 1], y_std)?;
            // Dropout stream is keyed by the global trace step, which a
            // resumed run recomputes from (epoch, position).
            let step = ((epoch - 1) * n + seen) as u64;
            let dropout_seed = seeds::derive_indexed(cfg.seed, stream::DROPOUT, step);

            let mut fg = crate::models::build_graph(&state.params, &x, Mode::Train, dropout_seed)?;
            let target = fg.graph.constant(y);
            let loss_id = fg.graph.mse_loss(fg.output, target)?;
            let loss = fg.graph.value(loss_id).to_f64_vec()[0];
            let mut grads = fg.graph.backward(loss_id)?;

            for (acc, &pid) in grad_acc.iter_mut().zip(&fg.param_ids) {
                let g = grads[pid]
                    .take()
                    .ok_or_else(|| RydError::Numerical("missing parameter gradient".into()))?;
                if !acc.same_shape(&g) {
                    return Err(RydError::Dimension("gradient shape drifted".into()));
                }
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            batch_loss += loss;
            seen += 1;
        }

        let inv = T::from_f64(1.0 / batch.len() as f64);
        for acc in &mut grad_acc {
            for v in acc.data_mut() {
                *v = *v * inv;
            }
        }

        let mean_loss = batch_loss / batch.len() as f64;
        if !mean_loss.is_finite() {
            let grad_norm = grad_acc
                .iter()
                .flat_map(|a| a.data())
                .map(|v| v.to_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            return Err(RydError::Numerical(format!(
                "training loss became non-finite at epoch {epoch}, batch {} (grad norm {grad_norm:.3e})",
                batch_no + 1
            )));
        }

        state.adam.step(state.params.arrays_mut(), &grad_acc)?;
        loss_sum += batch_loss;
    }
    Ok(loss_sum / n as f64)
}

/// Train from scratch; returns the final-epoch parameters and the log.
pub fn train<T: Scalar>(
    split: &DatasetSplit<T>,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainLog)> {
    let mut state = TrainState::init(cfg)?;
    train_epochs(&mut state, split, cfg)?;
    Ok((state.params, state.log))
}

/// Denoise every trace of `test`. Each trace is standardized with its own
/// record, run in inference mode, and mapped back to input units.
pub fn predict<T: Scalar>(params: &ModelParams<T>, test: &TraceSet<T>) -> Result<TraceSet<T>> {
    if test.n_points() != params.config().seq_len() {
        return Err(RydError::Dimension(format!(
            "model expects {} points per trace, got {}",
            params.config().seq_len(),
            test.n_points()
        )));
    }
    let mut out = Vec::with_capacity(test.n_sets() * test.n_points());
    for trace in test.iter_traces() {
        let (std_trace, record) = standardize(trace)?;
        let x = Array::from_vec(vec![std_trace.len(), 1], std_trace)?;
        let y = crate::models::forward(params, &x, Mode::Infer, 0)?;
        out.extend(destandardize(y.data(), &record));
    }
    TraceSet::new(test.axis().clone(), test.n_points(), out)
}

/// Persist a mid-run state: model tensors plus `optim.m.*` / `optim.v.*`
/// moments, with the loss history in the metadata (decimal strings
/// round-trip f64 exactly).
pub fn save_train_state<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let mut meta = config_meta(state.params.config());
    meta.push(("train.epochs_done".into(), state.epochs_done().to_string()));
    meta.push(("train.adam_t".into(), state.adam.step_count().to_string()));
    let (lr, b1, b2, eps) = state.adam.hyperparams();
    meta.push(("train.learning_rate".into(), lr.to_string()));
    meta.push(("train.beta1".into(), b1.to_string()));
    meta.push(("train.beta2".into(), b2.to_string()));
    meta.push(("train.epsilon".into(), eps.to_string()));
    meta.push((
        "train.converged_at".into(),
        state.log.converged_at_epoch.map_or("none".into(), |e| e.to_string()),
    ));
    for rec in &state.log.epochs {
        // Wall-clock seconds are run telemetry, not state: persisting them
        // would make otherwise identical runs differ byte for byte.
        meta.push((
            format!("epoch.{}", rec.epoch),
            format!("{} {}", rec.loss, rec.param_checksum),
        ));
    }

    let mut tensors = Vec::new();
    for (name, arr) in state.params.names().iter().zip(state.params.arrays()) {
        tensors.push((name.clone(), arr.clone()));
    }
    let (m, v) = state.adam.moments();
    for (name, arr) in state.params.names().iter().zip(m) {
        tensors.push((format!("optim.m.{name}"), arr.clone()));
    }
    for (name, arr) in state.params.names().iter().zip(v) {
        tensors.push((format!("optim.v.{name}"), arr.clone()));
    }
    write_container(path, &Container { meta, tensors })
}

/// Inverse of [`save_train_state`].
pub fn load_train_state<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    let c = read_container::<T>(path)?;
    let config = config_from_meta(&c.meta)?;

    let mut names = Vec::new();
    let mut arrays = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, arr) in c.tensors {
        if let Some(_rest) = name.strip_prefix("optim.m.") {
            m.push(arr);
        } else if let Some(_rest) = name.strip_prefix("optim.v.") {
            v.push(arr);
        } else {
            names.push(name);
            arrays.push(arr);
        }
    }
    let params = ModelParams::from_parts(config, names, arrays)?;
    if m.len() != params.arrays().len() || v.len() != params.arrays().len() {
        return Err(RydError::Data(format!(
            "malformed checkpoint: {} parameters but {}/{} optimizer moments",
            params.arrays().len(),
            m.len(),
            v.len()
        )));
    }

    let epochs_done: usize = meta_parse(&c.meta, "train.epochs_done")?;
    let adam = AdamState::from_parts(
        meta_parse(&c.meta, "train.adam_t")?,
        meta_parse(&c.meta, "train.learning_rate")?,
        meta_parse(&c.meta, "train.beta1")?,
        meta_parse(&c.meta, "train.beta2")?,
        meta_parse(&c.meta, "train.epsilon")?,
        m,
        v,
    );

    let converged = match meta_value(&c.meta, "train.converged_at")? {
        "none" => None,
        s => Some(s.parse::<usize>().map_err(|_| {
            RydError::Data("malformed checkpoint: bad train.converged_at".into())
        })?),
    };
    let mut epochs = Vec::with_capacity(epochs_done);
    for e in 1..=epochs_done {
        let entry = meta_value(&c.meta, &format!("epoch.{e}"))?;
        let mut parts = entry.split(' ');
        let loss: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RydError::Data(format!("malformed checkpoint: bad epoch.{e}")))?;
        let checksum = parts
            .next()
            .ok_or_else(|| RydError::Data(format!("malformed checkpoint: bad epoch.{e}")))?
            .to_string();
        // Timing was not persisted; resumed epochs report zero.
        epochs.push(EpochRecord { epoch: e, loss, seconds: 0.0, param_checksum: checksum });
    }

    Ok(TrainState {
        params,
        adam,
        log: TrainLog { epochs, converged_at_epoch: converged },
    })
}

#[cfg(test)]
mod tests;
