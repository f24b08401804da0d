//! Comparison methods: multi-measurement averaging, scalar Kalman
//! filtering, and coiflet wavelet thresholding, plus the exhaustive grid
//! search that tunes the latter two against a reference trace.

mod wavelet;

pub use wavelet::{
    coif4_dec_hi, dwt, idwt, wavelet_denoise, Boundary, ThresholdMode, WaveletCoeffs,
    WaveletConfig, WaveletFamily, COIF4_DEC_LO,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::TraceSet;
use crate::error::{Result, RydError};

/// Pointwise arithmetic mean across the set.
pub fn average(set: &TraceSet<f64>) -> Vec<f64> {
    let n = set.n_points();
    let mut out = vec![0.0; n];
    for trace in set.iter_traces() {
        for (o, v) in out.iter_mut().zip(trace) {
            *o += v;
        }
    }
    let scale = 1.0 / set.n_sets() as f64;
    for o in &mut out {
        *o *= scale;
    }
    out
}

/// Scalar random-walk Kalman filter: x_k = x_{k-1} + w (variance Q),
/// z_k = x_k + v (variance R). The recursion is pointwise and uses no
/// timestamps, so re-timing the axis cannot change the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    pub process_noise: f64,
    pub measurement_noise: f64,
    /// None starts the state at the first sample.
    pub initial_state: Option<f64>,
    /// None starts the variance at the measurement noise R.
    pub initial_variance: Option<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.0175,
            measurement_noise: 0.06,
            initial_state: None,
            initial_variance: None,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0) || !self.process_noise.is_finite() {
            return Err(RydError::Config(format!(
                "process noise Q must be non-negative, got {}",
                self.process_noise
            )));
        }
        if !(self.measurement_noise > 0.0) || !self.measurement_noise.is_finite() {
            return Err(RydError::Config(format!(
                "measurement noise R must be positive, got {}",
                self.measurement_noise
            )));
        }
        if let Some(p0) = self.initial_variance {
            if !(p0 >= 0.0) || !p0.is_finite() {
                return Err(RydError::Config(format!(
                    "initial variance P0 must be non-negative, got {p0}"
                )));
            }
        }
        Ok(())
    }
}

/// Full filter trajectory; `states` is the denoised trace.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub states: Vec<f64>,
    pub variances: Vec<f64>,
    pub gains: Vec<f64>,
}

/// Predict/update over the whole trace, returning state, variance, and gain
/// sequences.
pub fn kalman_filter_full(trace: &[f64], cfg: &KalmanConfig) -> Result<KalmanRun> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(RydError::Data("cannot filter an empty trace".into()));
    }
    let q = cfg.process_noise;
    let r = cfg.measurement_noise;
    let mut x = cfg.initial_state.unwrap_or(trace[0]);
    let mut p = cfg.initial_variance.unwrap_or(r);
    let mut run = KalmanRun {
        states: Vec::with_capacity(trace.len()),
        variances: Vec::with_capacity(trace.len()),
        gains: Vec::with_capacity(trace.len()),
    };
    for &z in trace {
        let pp = p + q;
        let k = pp / (pp + r);
        x += k * (z - x);
        p = (1.0 - k) * pp;
        run.states.push(x);
        run.variances.push(p);
        run.gains.push(k);
    }
    Ok(run)
}

/// Denoised trace only.
pub fn kalman_filter(trace: &[f64], cfg: &KalmanConfig) -> Result<Vec<f64>> {
    Ok(kalman_filter_full(trace, cfg)?.states)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// One evaluated grid cell: parameter names with their printed values, and
/// the mean MSE against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub params: Vec<(String, String)>,
    pub mse: f64,
}

/// Exhaustive search outcome. `table` preserves grid order, `best_index`
/// points at the first cell attaining the minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult<C> {
    pub best: C,
    pub best_mse: f64,
    pub best_index: usize,
    pub table: Vec<GridCell>,
}

fn run_grid<C: Clone>(
    cells: Vec<(C, Vec<(String, String)>)>,
    mut objective: impl FnMut(&C) -> Result<f64>,
) -> Result<GridSearchResult<C>> {
    if cells.is_empty() {
        return Err(RydError::Config("empty parameter grid".into()));
    }
    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (cfg, params)) in cells.iter().enumerate() {
        let m = objective(cfg)?;
        if !m.is_finite() {
            return Err(RydError::Numerical(format!(
                "grid cell {params:?} produced a non-finite objective"
            )));
        }
        table.push(GridCell { params: params.clone(), mse: m });
        // Strict comparison keeps the first minimum on ties.
        if best.map_or(true, |(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    let (best_index, best_mse) = best.expect("grid is non-empty");
    Ok(GridSearchResult {
        best: cells[best_index].0.clone(),
        best_mse,
        best_index,
        table,
    })
}

/// Mean MSE of the method output across all noisy traces against one
/// reference trace.
fn set_objective(
    noisy: &TraceSet<f64>,
    reference: &[f64],
    method: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    if reference.len() != noisy.n_points() {
        return Err(RydError::Dimension(format!(
            "reference of {} points cannot score {}-point traces",
            reference.len(),
            noisy.n_points()
        )));
    }
    let mut total = 0.0;
    for trace in noisy.iter_traces() {
        total += mse(&method(trace)?, reference);
    }
    Ok(total / noisy.n_sets() as f64)
}

/// Kalman tuning grid. Defaults bracket the published operating point
/// (Q = 0.0175, R = 0.06) and include a near-identity cell (large Q, tiny
/// R) so clean inputs are not penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanGrid {
    pub process_noise: Vec<f64>,
    pub measurement_noise: Vec<f64>,
}

impl Default for KalmanGrid {
    fn default() -> Self {
        Self {
            process_noise: vec![0.004375, 0.00875, 0.0175, 0.035, 0.07, 0.28, 1.0, 10.0, 100.0],
            measurement_noise: vec![0.001, 0.015, 0.03, 0.06, 0.12, 0.24, 0.6],
        }
    }
}

pub fn grid_search_kalman(
    grid: &KalmanGrid,
    noisy: &TraceSet<f64>,
    reference: &[f64],
) -> Result<GridSearchResult<KalmanConfig>> {
    let mut cells = Vec::new();
    for &q in &grid.process_noise {
        for &r in &grid.measurement_noise {
            let cfg = KalmanConfig { process_noise: q, measurement_noise: r, ..Default::default() };
            cfg.validate()?;
            let params = vec![
                ("process_noise".to_string(), q.to_string()),
                ("measurement_noise".to_string(), r.to_string()),
            ];
            cells.push((cfg, params));
        }
    }
    run_grid(cells, |cfg| set_objective(noisy, reference, |t| kalman_filter(t, cfg)))
}

/// Wavelet tuning grid; covers the published threshold 0.55 with hard
/// thresholding at 4 levels, plus a threshold-0 identity cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletGrid {
    pub threshold: Vec<f64>,
    pub threshold_mode: Vec<ThresholdMode>,
    pub levels: Vec<usize>,
}

impl Default for WaveletGrid {
    fn default() -> Self {
        Self {
            threshold: vec![0.0, 0.1375, 0.275, 0.55, 1.1, 2.2],
            threshold_mode: vec![ThresholdMode::Hard, ThresholdMode::Soft],
            levels: vec![2, 3, 4, 5],
        }
    }
}

pub fn grid_search_wavelet(
    grid: &WaveletGrid,
    noisy: &TraceSet<f64>,
    reference: &[f64],
) -> Result<GridSearchResult<WaveletConfig>> {
    let mut cells = Vec::new();
    for &t in &grid.threshold {
        for &mode in &grid.threshold_mode {
            for &levels in &grid.levels {
                let cfg = WaveletConfig {
                    threshold: t,
                    threshold_mode: mode,
                    levels,
                    ..Default::default()
                };
                cfg.validate()?;
                let params = vec![
                    ("threshold".to_string(), t.to_string()),
                    (
                        "threshold_mode".to_string(),
                        match mode {
                            ThresholdMode::Hard => "hard".to_string(),
                            ThresholdMode::Soft => "soft".to_string(),
                        },
                    ),
                    ("levels".to_string(), levels.to_string()),
                ];
                cells.push((cfg, params));
            }
        }
    }
    run_grid(cells, |cfg| set_objective(noisy, reference, |t| wavelet_denoise(t, cfg)))
}

/// Objective table as tidy CSV: one parameter column per name, then `mse`.
pub fn save_grid_csv(table: &[GridCell], path: &Path) -> Result<()> {
    if table.is_empty() {
        return Err(RydError::Data("empty grid table".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    let mut header: Vec<&str> = table[0].params.iter().map(|(k, _)| k.as_str()).collect();
    header.push("mse");
    w.write_record(&header)
        .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    for cell in table {
        let mut row: Vec<String> = cell.params.iter().map(|(_, v)| v.clone()).collect();
        row.push(cell.mse.to_string());
        w.write_record(&row)
            .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
