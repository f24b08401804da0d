//! Trace persistence and dataset plumbing: the native binary trace format,
//! CSV interchange, the 4:4:2 train/label/test partition, per-trace
//! standardization, and seeded batch iteration.

mod format;

pub use format::{load_traceset, load_traceset_csv, save_traceset, save_traceset_csv};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RydError};
use crate::numerics::{Array, Scalar};
use crate::seeds;

pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Time,
    Frequency,
}

impl AxisKind {
    pub fn name(self) -> &'static str {
        match self {
            AxisKind::Time => "time",
            AxisKind::Frequency => "frequency",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "time" => Some(AxisKind::Time),
            "frequency" => Some(AxisKind::Frequency),
            _ => None,
        }
    }
}

/// Sample-axis metadata: the i-th sample sits at `start + i * step` in
/// `unit`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub start: f64,
    pub step: f64,
    pub unit: String,
}

impl Axis {
    pub fn time(start: f64, step: f64, unit: &str) -> Self {
        Self { kind: AxisKind::Time, start, step, unit: unit.to_string() }
    }

    pub fn frequency(start: f64, step: f64, unit: &str) -> Self {
        Self { kind: AxisKind::Frequency, start, step, unit: unit.to_string() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() || !self.start.is_finite() {
            return Err(RydError::Config(format!(
                "axis needs finite start and positive step, got start {} step {}",
                self.start, self.step
            )));
        }
        if self.unit.is_empty() || self.unit.contains(char::is_whitespace) {
            return Err(RydError::Config(format!(
                "axis unit must be a non-empty token, got `{}`",
                self.unit
            )));
        }
        Ok(())
    }

    /// Coordinate of sample `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }
}

/// A stack of equal-length traces over one axis, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet<T: Scalar> {
    axis: Axis,
    n_sets: usize,
    n_points: usize,
    data: Vec<T>,
}

impl<T: Scalar> TraceSet<T> {
    pub fn new(axis: Axis, n_points: usize, data: Vec<T>) -> Result<Self> {
        axis.validate()?;
        if n_points == 0 {
            return Err(RydError::Dimension("n_points must be positive".into()));
        }
        if data.is_empty() || data.len() % n_points != 0 {
            return Err(RydError::Dimension(format!(
                "{} values do not form whole traces of {n_points} points",
                data.len()
            )));
        }
        let n_sets = data.len() / n_points;
        Ok(Self { axis, n_sets, n_points, data })
    }

    pub fn from_rows(axis: Axis, rows: &[Vec<T>]) -> Result<Self> {
        let n_points = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n_points) {
            return Err(RydError::Dimension(
                "all traces in a set must have equal length".into(),
            ));
        }
        Self::new(axis, n_points, rows.concat())
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn n_sets(&self) -> usize {
        self.n_sets
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn trace(&self, i: usize) -> &[T] {
        &self.data[i * self.n_points..(i + 1) * self.n_points]
    }

    /// Trace `i` as the n_points x 1 column the models consume.
    pub fn trace_array(&self, i: usize) -> Array<T> {
        Array::from_vec(vec![self.n_points, 1], self.trace(i).to_vec())
            .expect("trace length is positive")
    }

    pub fn iter_traces(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.n_points)
    }

    /// New set holding `indices` in order; indices may repeat.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(RydError::Dimension("subset of zero traces".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_sets) {
            return Err(RydError::Dimension(format!(
                "trace index {bad} out of range for {} sets",
                self.n_sets
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.n_points);
        for &i in indices {
            data.extend_from_slice(self.trace(i));
        }
        Self::new(self.axis.clone(), self.n_points, data)
    }

    pub fn convert<U: Scalar>(&self) -> TraceSet<U> {
        TraceSet {
            axis: self.axis.clone(),
            n_sets: self.n_sets,
            n_points: self.n_points,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Where a split came from: free-text source plus the seed that shuffled it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
}

/// Train inputs, noisy labels, and test inputs. `train_x[i]` pairs with
/// `train_y[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T: Scalar> {
    pub train_x: TraceSet<T>,
    pub train_y: TraceSet<T>,
    pub test_x: TraceSet<T>,
    pub provenance: Provenance,
}

/// Shuffle by seed, then carve contiguous 40/40/20 partitions. The three
/// parts are disjoint and exhaust the source.
pub fn split_442<T: Scalar>(source: &TraceSet<T>, seed: u64) -> Result<DatasetSplit<T>> {
    let n = source.n_sets();
    if n % 10 != 0 {
        let rem = n % 10;
        return Err(RydError::Data(format!(
            "{n} traces cannot split 4:4:2; pad with {} traces or trim {rem}",
            10 - rem
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::SHUFFLE));
    order.shuffle(&mut rng);
    let a = n * 4 / 10;
    let b = n * 8 / 10;
    Ok(DatasetSplit {
        train_x: source.subset(&order[..a])?,
        train_y: source.subset(&order[a..b])?,
        test_x: source.subset(&order[b..])?,
        provenance: Provenance { source: "split_442".to_string(), seed },
    })
}

/// Per-trace location/scale, kept for inversion back to raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub mu: f64,
    pub sigma: f64,
}

/// x' = (x - mu) / sigma with population sigma, computed in 64-bit. A trace
/// whose spread is indistinguishable from rounding of its mean is rejected
/// rather than divided by near-zero.
pub fn standardize<T: Scalar>(trace: &[T]) -> Result<(Vec<T>, StandardizationRecord)> {
    if trace.len() < 2 {
        return Err(RydError::Data(format!(
            "standardize needs at least 2 points, got {}",
            trace.len()
        )));
    }
    let n = trace.len() as f64;
    let mu = trace.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = trace
        .iter()
        .map(|v| {
            let d = v.to_f64() - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    let sigma = var.sqrt();
    if sigma <= mu.abs() * 1e-13 {
        return Err(RydError::Data(format!(
            "degenerate trace: standard deviation {sigma} is zero (or rounding noise) around mean {mu}"
        )));
    }
    let out = trace
        .iter()
        .map(|v| T::from_f64((v.to_f64() - mu) / sigma))
        .collect();
    Ok((out, StandardizationRecord { mu, sigma }))
}

pub fn destandardize<T: Scalar>(trace: &[T], record: &StandardizationRecord) -> Vec<T> {
    trace
        .iter()
        .map(|v| T::from_f64(v.to_f64() * record.sigma + record.mu))
        .collect()
}

/// x' = (x - mu) / sigma under a record borrowed from another trace, so a
/// target can share its input's frame.
pub fn standardize_with<T: Scalar>(trace: &[T], record: &StandardizationRecord) -> Vec<T> {
    trace
        .iter()
        .map(|v| T::from_f64((v.to_f64() - record.mu) / record.sigma))
        .collect()
}

/// Standardize every trace, returning the new set and one record per trace.
pub fn standardize_set<T: Scalar>(
    set: &TraceSet<T>,
) -> Result<(TraceSet<T>, Vec<StandardizationRecord>)> {
    let mut data = Vec::with_capacity(set.data().len());
    let mut records = Vec::with_capacity(set.n_sets());
    for trace in set.iter_traces() {
        let (out, rec) = standardize(trace)?;
        data.extend_from_slice(&out);
        records.push(rec);
    }
    Ok((TraceSet::new(set.axis().clone(), set.n_points(), data)?, records))
}

/// Seed-shuffled index batches covering 0..n_items exactly once; the final
/// batch may be short.
pub fn batch_indices(n_items: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(RydError::Config("batch_size must be at least 1".into()));
    }
    if n_items == 0 {
        return Err(RydError::Data("cannot batch zero traces".into()));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Materialized per-batch subsets of `set` in a seed-shuffled order.
pub fn batch_iter<'a, T: Scalar>(
    set: &'a TraceSet<T>,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = TraceSet<T>> + 'a> {
    let batches = batch_indices(set.n_sets(), batch_size, seed)?;
    Ok(batches.into_iter().map(|idx| {
        set.subset(&idx)
            .expect("batch indices are in range by construction")
    }))
}

#[cfg(test)]
mod tests;
