//! Scoring and comparison: per-trace MSE against a reference trace,
//! training-size sweeps over nested subsets, the four-method comparison
//! table, inference latency, and tidy CSV exports for external plotting.

use std::path::Path;
use std::time::Instant;

use crate::baselines::{average, kalman_filter, wavelet_denoise, KalmanConfig, WaveletConfig};
use crate::dataio::TraceSet;
use crate::error::{Result, RydError};
use crate::models::ModelParams;
use crate::training::{param_checksum, predict, train, TrainConfig, TrainLog};

/// Mean and population standard deviation of the per-trace MSEs.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub mean: f64,
    pub std: f64,
    pub per_trace: Vec<f64>,
}

fn trace_mse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Per-trace MSE against one reference, then mean and population std over
/// the set.
pub fn mse_against_reference(outputs: &TraceSet<f64>, reference: &[f64]) -> Result<MseSummary> {
    if outputs.n_points() != reference.len() {
        return Err(RydError::Dimension(format!(
            "outputs have {} points per trace, reference has {}",
            outputs.n_points(),
            reference.len()
        )));
    }
    let per_trace: Vec<f64> = outputs.iter_traces().map(|t| trace_mse(t, reference)).collect();
    Ok(summarize(per_trace))
}

fn summarize(per_trace: Vec<f64>) -> MseSummary {
    let n = per_trace.len() as f64;
    let mean = per_trace.iter().sum::<f64>() / n;
    let var = per_trace.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    MseSummary { mean, std: var.sqrt(), per_trace }
}

/// One scored method. MSEs appear twice: in raw trace units and divided by
/// the reference variance ("standardized"), since the literature is
/// ambiguous about which scale comparison tables use.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    /// Human-readable settings fingerprint for the method.
    pub config: String,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mse_mean_standardized: f64,
    pub mse_std_standardized: f64,
    pub seconds_total: f64,
    pub seconds_per_trace: f64,
}

/// The comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MethodReport>,
    pub n_test: usize,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&MethodReport> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn reference_variance(reference: &[f64]) -> f64 {
    let n = reference.len() as f64;
    let mu = reference.iter().sum::<f64>() / n;
    reference.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
}

fn check_scoring_inputs(noisy_test: &TraceSet<f64>, reference: &[f64]) -> Result<f64> {
    if noisy_test.n_points() != reference.len() {
        return Err(RydError::Dimension(format!(
            "test traces have {} points, reference has {}",
            noisy_test.n_points(),
            reference.len()
        )));
    }
    let sigma_ref_sq = reference_variance(reference);
    if sigma_ref_sq <= 0.0 {
        return Err(RydError::Data("reference trace is constant; cannot standardize".into()));
    }
    Ok(sigma_ref_sq)
}

fn make_row(
    method: &str,
    config: String,
    summary: MseSummary,
    seconds: f64,
    sigma_ref_sq: f64,
    n: usize,
) -> MethodReport {
    MethodReport {
        method: method.to_string(),
        config,
        mse_mean: summary.mean,
        mse_std: summary.std,
        mse_mean_standardized: summary.mean / sigma_ref_sq,
        mse_std_standardized: summary.std / sigma_ref_sq,
        seconds_total: seconds,
        seconds_per_trace: seconds / n as f64,
    }
}

fn baseline_rows(
    noisy_test: &TraceSet<f64>,
    reference: &[f64],
    sigma_ref_sq: f64,
    kalman_cfg: &KalmanConfig,
    wavelet_cfg: &WaveletConfig,
) -> Result<Vec<MethodReport>> {
    let n = noisy_test.n_sets();
    let mut rows = Vec::with_capacity(3);

    let started = Instant::now();
    let filtered: Vec<Vec<f64>> = noisy_test
        .iter_traces()
        .map(|t| kalman_filter(t, kalman_cfg))
        .collect::<Result<_>>()?;
    let kalman_seconds = started.elapsed().as_secs_f64();
    let filtered_set = TraceSet::from_rows(noisy_test.axis().clone(), &filtered)?;
    rows.push(make_row(
        "kalman",
        format!("q={} r={}", kalman_cfg.process_noise, kalman_cfg.measurement_noise),
        mse_against_reference(&filtered_set, reference)?,
        kalman_seconds,
        sigma_ref_sq,
        n,
    ));

    let started = Instant::now();
    let shrunk: Vec<Vec<f64>> = noisy_test
        .iter_traces()
        .map(|t| wavelet_denoise(t, wavelet_cfg))
        .collect::<Result<_>>()?;
    let wavelet_seconds = started.elapsed().as_secs_f64();
    let shrunk_set = TraceSet::from_rows(noisy_test.axis().clone(), &shrunk)?;
    rows.push(make_row(
        "wavelet",
        format!(
            "threshold={} mode={:?} levels={}",
            wavelet_cfg.threshold, wavelet_cfg.threshold_mode, wavelet_cfg.levels
        ),
        mse_against_reference(&shrunk_set, reference)?,
        wavelet_seconds,
        sigma_ref_sq,
        n,
    ));

    let started = Instant::now();
    let averaged = average(noisy_test);
    let average_seconds = started.elapsed().as_secs_f64();
    rows.push(make_row(
        "average",
        format!("n={n}"),
        summarize(vec![trace_mse(&averaged, reference)]),
        average_seconds,
        sigma_ref_sq,
        n,
    ));

    Ok(rows)
}

/// Score the trained model and the three classical methods on the same
/// noisy test set. Baseline configs are expected to be grid-search-tuned
/// against the same reference beforehand. Averaging collapses the whole
/// set into one output trace, so its std over traces is zero by
/// construction.
pub fn compare_methods(
    noisy_test: &TraceSet<f64>,
    reference: &[f64],
    params: &ModelParams<f64>,
    kalman_cfg: &KalmanConfig,
    wavelet_cfg: &WaveletConfig,
) -> Result<EvalReport> {
    let sigma_ref_sq = check_scoring_inputs(noisy_test, reference)?;
    let n = noisy_test.n_sets();

    let started = Instant::now();
    let denoised = predict(params, noisy_test)?;
    let model_seconds = started.elapsed().as_secs_f64();
    let mut rows = vec![make_row(
        "model",
        format!("{} {}", params.config().kind(), param_checksum(params)),
        mse_against_reference(&denoised, reference)?,
        model_seconds,
        sigma_ref_sq,
        n,
    )];
    rows.extend(baseline_rows(noisy_test, reference, sigma_ref_sq, kalman_cfg, wavelet_cfg)?);
    Ok(EvalReport { rows, n_test: n })
}

/// The classical methods alone, for runs without a trained checkpoint.
pub fn compare_baselines(
    noisy_test: &TraceSet<f64>,
    reference: &[f64],
    kalman_cfg: &KalmanConfig,
    wavelet_cfg: &WaveletConfig,
) -> Result<EvalReport> {
    let sigma_ref_sq = check_scoring_inputs(noisy_test, reference)?;
    let rows = baseline_rows(noisy_test, reference, sigma_ref_sq, kalman_cfg, wavelet_cfg)?;
    Ok(EvalReport { rows, n_test: noisy_test.n_sets() })
}

/// One row of the training-size sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeSweepRow {
    pub size: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub epochs_run: usize,
    pub converged_at: Option<usize>,
}

/// Train a fresh model per size on nested prefixes of the training pool
/// (smaller subsets are strict prefixes of larger ones), then score each
/// against the fixed test set. Sizes must be ascending and fit the pool.
pub fn size_sweep(
    sizes: &[usize],
    pool: &crate::dataio::DatasetSplit<f64>,
    reference: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<SizeSweepRow>> {
    if sizes.is_empty() {
        return Ok(Vec::new());
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RydError::Config(format!("sizes must be strictly ascending, got {sizes:?}")));
    }
    if sizes[0] == 0 || *sizes.last().unwrap() > pool.train_x.n_sets() {
        return Err(RydError::Config(format!(
            "sizes must lie in 1..={}, got {sizes:?}",
            pool.train_x.n_sets()
        )));
    }

    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let indices: Vec<usize> = (0..size).collect();
        let sub = crate::dataio::DatasetSplit {
            train_x: pool.train_x.subset(&indices)?,
            train_y: pool.train_y.subset(&indices)?,
            test_x: pool.test_x.clone(),
            provenance: pool.provenance.clone(),
        };
        let (params, log) = train(&sub, cfg)?;
        let outputs = predict(&params, &pool.test_x)?;
        let summary = mse_against_reference(&outputs, reference)?;
        rows.push(SizeSweepRow {
            size,
            mse_mean: summary.mean,
            mse_std: summary.std,
            epochs_run: log.epochs.len(),
            converged_at: log.converged_at_epoch,
        });
    }
    Ok(rows)
}

/// Median wall-clock seconds for one single-trace inference, after one
/// discarded warm-up run.
pub fn bench_latency(params: &ModelParams<f64>, trace: &TraceSet<f64>) -> Result<f64> {
    Ok(median(&bench_latency_samples(params, trace, 5)?))
}

/// The raw timing samples behind [`bench_latency`]; `runs` must be >= 1.
pub fn bench_latency_samples(
    params: &ModelParams<f64>,
    trace: &TraceSet<f64>,
    runs: usize,
) -> Result<Vec<f64>> {
    if runs == 0 {
        return Err(RydError::Config("latency benchmark needs at least one run".into()));
    }
    let single = trace.subset(&[0])?;
    predict(params, &single)?;
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let started = Instant::now();
        predict(params, &single)?;
        samples.push(started.elapsed().as_secs_f64());
    }
    Ok(samples)
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

fn csv_err(e: impl std::fmt::Display) -> RydError {
    RydError::Data(format!("csv error: {e}"))
}

/// Comparison table as tidy CSV, one method per row.
pub fn save_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(csv_err)?;
    w.write_record([
        "method",
        "config",
        "n_test",
        "mse_mean",
        "mse_std",
        "mse_mean_standardized",
        "mse_std_standardized",
        "seconds_total",
        "seconds_per_trace",
    ])
    .map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            r.method.clone(),
            r.config.clone(),
            report.n_test.to_string(),
            r.mse_mean.to_string(),
            r.mse_std.to_string(),
            r.mse_mean_standardized.to_string(),
            r.mse_std_standardized.to_string(),
            r.seconds_total.to_string(),
            r.seconds_per_trace.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Size sweep as tidy CSV, one size per row; empty sweeps still produce the
/// header.
pub fn save_sweep_csv(rows: &[SizeSweepRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(csv_err)?;
    w.write_record(["size", "mse_mean", "mse_std", "epochs_run", "converged_at"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            r.mse_mean.to_string(),
            r.mse_std.to_string(),
            r.epochs_run.to_string(),
            r.converged_at.map_or(String::new(), |e| e.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Named traces side by side, one sample per row with the axis value first.
/// Feeds external plotting of denoised-vs-reference figures.
pub fn save_traces_csv(
    axis: &crate::dataio::Axis,
    traces: &[(&str, &[f64])],
    path: &Path,
) -> Result<()> {
    if traces.is_empty() {
        return Err(RydError::Data("no traces to export".into()));
    }
    let n = traces[0].1.len();
    if traces.iter().any(|(_, t)| t.len() != n) {
        return Err(RydError::Dimension("trace columns differ in length".into()));
    }
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(csv_err)?;
    let mut header = vec![axis.unit.as_str()];
    header.extend(traces.iter().map(|(name, _)| *name));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let mut row = vec![axis.at(i).to_string()];
        row.extend(traces.iter().map(|(_, t)| t[i].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Training log re-export, kept here so the CLI has one module to call for
/// every artifact table.
pub fn save_train_log_csv(log: &TrainLog, path: &Path) -> Result<()> {
    log.save_csv(path)
}
