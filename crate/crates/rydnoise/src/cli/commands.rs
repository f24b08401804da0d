//! The six subcommands. Each one re-derives everything it needs from the
//! resolved config and the files earlier stages left in the run directory,
//! so stages can be re-run independently and out of order failures name the
//! missing files instead of panicking.

use std::path::{Path, PathBuf};

use super::{write_manifest, ReferenceKind, RunConfig, RunPaths, SignalDomain};
use crate::baselines::{
    average, grid_search_kalman, grid_search_wavelet, save_grid_csv, KalmanConfig, WaveletConfig,
};
use crate::dataio::{load_traceset, save_traceset, Axis, DatasetSplit, Provenance, TraceSet};
use crate::error::{Result, RydError};
use crate::evaluation::{
    bench_latency_samples, compare_baselines, compare_methods, save_report_csv, save_sweep_csv,
    save_traces_csv, size_sweep, EvalReport,
};
use crate::models::{load_params, save_params, ModelParams};
use crate::seeds::{self, stream};
use crate::synth::{add_noise, beat_signal, clean_spectrum, make_paired_dataset};
use crate::training::{
    load_train_state, param_checksum, predict, save_train_state, train_epochs, TrainState,
};

fn require_files(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> =
        paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(RydError::Data(format!(
            "missing inputs: {} (run the earlier pipeline stages first)",
            missing.join(", ")
        )))
    }
}

fn clean_trace(cfg: &RunConfig) -> Result<(Vec<f64>, Axis)> {
    match cfg.synth.domain {
        SignalDomain::Time => {
            let h = &cfg.synth.heterodyne;
            Ok((beat_signal(h)?, h.axis()))
        }
        SignalDomain::Frequency => {
            let s = &cfg.synth.spectrum;
            let (clean, warnings) = clean_spectrum(s)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok((clean, s.axis()))
        }
    }
}

fn saved(path: &Path, what: &str) {
    println!("wrote {} ({what})", path.display());
}

pub fn cmd_synth(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    paths.ensure_dirs()?;
    let (clean, axis) = clean_trace(cfg)?;
    let split = make_paired_dataset(
        &clean,
        &axis,
        &cfg.synth.noise,
        cfg.dataset.n_train,
        cfg.dataset.n_test,
        cfg.seed,
    )?;

    let clean_set = TraceSet::from_rows(axis.clone(), std::slice::from_ref(&clean))?;
    let jobs: [(&str, &TraceSet<f64>, &str); 4] = [
        ("clean.rtr", &clean_set, "1 clean trace"),
        ("train_x.rtr", &split.train_x, "training inputs"),
        ("train_y.rtr", &split.train_y, "training targets"),
        ("test_x.rtr", &split.test_x, "test inputs"),
    ];
    for (name, set, what) in jobs {
        let path = paths.trace(name);
        save_traceset(set, &path)?;
        saved(&path, &format!("{} x {}, {what}", set.n_sets(), set.n_points()));
    }

    if cfg.dataset.n_shots > 0 {
        let mut data = Vec::with_capacity(cfg.dataset.n_shots * clean.len());
        for i in 0..cfg.dataset.n_shots {
            let shot_seed = seeds::derive_indexed(cfg.seed, stream::NOISE, i as u64);
            data.extend(add_noise(&clean, &cfg.synth.noise, shot_seed)?);
        }
        let shots = TraceSet::new(axis, clean.len(), data)?;
        let path = paths.trace("shots.rtr");
        save_traceset(&shots, &path)?;
        saved(&path, &format!("{} x {}, averaging shots", shots.n_sets(), shots.n_points()));
    }

    write_manifest(cfg, paths)?;
    Ok(())
}

fn load_split(cfg: &RunConfig, paths: &RunPaths) -> Result<DatasetSplit<f64>> {
    let tx = paths.trace("train_x.rtr");
    let ty = paths.trace("train_y.rtr");
    let sx = paths.trace("test_x.rtr");
    require_files(&[&tx, &ty, &sx])?;
    Ok(DatasetSplit {
        train_x: load_traceset(&tx)?,
        train_y: load_traceset(&ty)?,
        test_x: load_traceset(&sx)?,
        provenance: Provenance { source: "traces/train_{x,y}.rtr".to_string(), seed: cfg.seed },
    })
}

pub fn cmd_train(
    cfg: &RunConfig,
    paths: &RunPaths,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<()> {
    paths.ensure_dirs()?;
    let split = load_split(cfg, paths)?;
    let mut tcfg = cfg.train.to_train_config(cfg.model.resolve(), cfg.seed);
    if let Some(n) = stop_after {
        if n < tcfg.window {
            return Err(RydError::Config(format!(
                "--stop-after {n} lies inside the convergence window of {} epochs",
                tcfg.window
            )));
        }
        tcfg.epochs_max = tcfg.epochs_max.min(n);
    }

    let state_path = paths.checkpoint("train_state.ckpt");
    let mut state = if resume {
        require_files(&[&state_path])?;
        let state = load_train_state::<f64>(&state_path)?;
        if state.params.config() != &tcfg.model {
            return Err(RydError::Config(
                "training state was saved for a different model config; \
                 drop --resume or restore the original config"
                    .to_string(),
            ));
        }
        state
    } else {
        TrainState::init(&tcfg)?
    };

    train_epochs(&mut state, &split, &tcfg)?;

    save_train_state(&state, &state_path)?;
    let params_path = paths.checkpoint("model.ckpt");
    save_params(&state.params, &params_path)?;
    let log_path = paths.log("train_log.csv");
    state.log.save_csv(&log_path)?;
    write_manifest(cfg, paths)?;

    saved(&state_path, "resumable training state");
    saved(&params_path, "model parameters");
    saved(&log_path, "epoch log");
    let final_loss = state.log.epochs.last().map_or(f64::NAN, |e| e.loss);
    match state.log.converged_at_epoch {
        Some(e) => println!(
            "{} epochs, final loss {final_loss:.6e}, converged at epoch {e}, params {}",
            state.epochs_done(),
            param_checksum(&state.params)
        ),
        None => println!(
            "{} epochs, final loss {final_loss:.6e}, not converged, params {}",
            state.epochs_done(),
            param_checksum(&state.params)
        ),
    }
    Ok(())
}

pub fn cmd_denoise(
    cfg: &RunConfig,
    paths: &RunPaths,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    paths.ensure_dirs()?;
    let ckpt: PathBuf = checkpoint.map_or_else(|| paths.checkpoint("model.ckpt"), Path::to_path_buf);
    let input: PathBuf = input.map_or_else(|| paths.trace("test_x.rtr"), Path::to_path_buf);
    let output: PathBuf = output.map_or_else(|| paths.trace("denoised.rtr"), Path::to_path_buf);
    require_files(&[&ckpt, &input])?;

    let params: ModelParams<f64> = load_params(&ckpt)?;
    let set: TraceSet<f64> = load_traceset(&input)?;
    if params.config().seq_len() != set.n_points() {
        return Err(RydError::Dimension(format!(
            "checkpoint {} expects {} points per trace, {} has {}",
            ckpt.display(),
            params.config().seq_len(),
            input.display(),
            set.n_points()
        )));
    }
    let out = predict(&params, &set)?;
    save_traceset(&out, &output)?;
    write_manifest(cfg, paths)?;
    saved(&output, &format!("{} x {}, denoised", out.n_sets(), out.n_points()));
    Ok(())
}

fn reference_path(cfg: &RunConfig, paths: &RunPaths) -> PathBuf {
    match cfg.eval.reference {
        ReferenceKind::Clean => paths.trace("clean.rtr"),
        ReferenceKind::Average => paths.trace("shots.rtr"),
    }
}

fn load_reference(cfg: &RunConfig, paths: &RunPaths) -> Result<Vec<f64>> {
    let path = reference_path(cfg, paths);
    require_files(&[&path])?;
    let set: TraceSet<f64> = load_traceset(&path)?;
    Ok(match cfg.eval.reference {
        ReferenceKind::Clean => set.trace(0).to_vec(),
        ReferenceKind::Average => average(&set),
    })
}

/// Grid-search the classical filters against the reference when tuning is
/// on, persisting the full tables; otherwise use the configured settings.
fn tuned_configs(
    cfg: &RunConfig,
    paths: &RunPaths,
    test: &TraceSet<f64>,
    reference: &[f64],
) -> Result<(KalmanConfig, WaveletConfig)> {
    if !cfg.baselines.tune {
        return Ok((cfg.baselines.kalman.clone(), cfg.baselines.wavelet.clone()));
    }
    let kalman = grid_search_kalman(&cfg.baselines.kalman_grid, test, reference)?;
    let kalman_path = paths.report("grid_kalman.csv");
    save_grid_csv(&kalman.table, &kalman_path)?;
    saved(&kalman_path, &format!("{} cells", kalman.table.len()));
    let wavelet = grid_search_wavelet(&cfg.baselines.wavelet_grid, test, reference)?;
    let wavelet_path = paths.report("grid_wavelet.csv");
    save_grid_csv(&wavelet.table, &wavelet_path)?;
    saved(&wavelet_path, &format!("{} cells", wavelet.table.len()));
    Ok((kalman.best, wavelet.best))
}

fn print_report(report: &EvalReport) {
    println!("{:<10} {:>13} {:>13} {:>13} {:>11}", "method", "mse_mean", "mse_std", "mse_std_units", "sec/trace");
    for r in &report.rows {
        println!(
            "{:<10} {:>13.4e} {:>13.4e} {:>13.4e} {:>11.3e}",
            r.method, r.mse_mean, r.mse_std, r.mse_mean_standardized, r.seconds_per_trace
        );
    }
}

pub fn cmd_baseline(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    paths.ensure_dirs()?;
    let test_path = paths.trace("test_x.rtr");
    require_files(&[&test_path, &reference_path(cfg, paths)])?;
    let test: TraceSet<f64> = load_traceset(&test_path)?;
    let reference = load_reference(cfg, paths)?;

    let (kalman, wavelet) = tuned_configs(cfg, paths, &test, &reference)?;
    let report = compare_baselines(&test, &reference, &kalman, &wavelet)?;
    let report_path = paths.report("baseline_report.csv");
    save_report_csv(&report, &report_path)?;
    write_manifest(cfg, paths)?;
    saved(&report_path, "baseline comparison");
    print_report(&report);
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    paths.ensure_dirs()?;
    let ckpt = paths.checkpoint("model.ckpt");
    let test_path = paths.trace("test_x.rtr");
    let mut required = vec![ckpt.clone(), test_path.clone(), reference_path(cfg, paths)];
    if !cfg.eval.sweep_sizes.is_empty() {
        required.push(paths.trace("train_x.rtr"));
        required.push(paths.trace("train_y.rtr"));
    }
    require_files(&required.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;

    let params: ModelParams<f64> = load_params(&ckpt)?;
    let test: TraceSet<f64> = load_traceset(&test_path)?;
    let reference = load_reference(cfg, paths)?;

    let (kalman, wavelet) = tuned_configs(cfg, paths, &test, &reference)?;
    let report = compare_methods(&test, &reference, &params, &kalman, &wavelet)?;
    let report_path = paths.report("report.csv");
    save_report_csv(&report, &report_path)?;
    saved(&report_path, "method comparison");

    let denoised = predict(&params, &test)?;
    let plot_path = paths.report("denoised_vs_reference.csv");
    save_traces_csv(
        test.axis(),
        &[
            ("noisy", test.trace(0)),
            ("denoised", denoised.trace(0)),
            ("reference", &reference),
        ],
        &plot_path,
    )?;
    saved(&plot_path, "plot data, first test trace");

    if !cfg.eval.sweep_sizes.is_empty() {
        let pool = load_split(cfg, paths)?;
        let tcfg = cfg.train.to_train_config(cfg.model.resolve(), cfg.seed);
        let rows = size_sweep(&cfg.eval.sweep_sizes, &pool, &reference, &tcfg)?;
        let sweep_path = paths.report("sweep.csv");
        save_sweep_csv(&rows, &sweep_path)?;
        saved(&sweep_path, &format!("{} training sizes", rows.len()));
    }

    write_manifest(cfg, paths)?;
    print_report(&report);
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    paths.ensure_dirs()?;
    let ckpt = paths.checkpoint("model.ckpt");
    let test_path = paths.trace("test_x.rtr");
    require_files(&[&ckpt, &test_path])?;
    let params: ModelParams<f64> = load_params(&ckpt)?;
    let test: TraceSet<f64> = load_traceset(&test_path)?;

    let samples = bench_latency_samples(&params, &test, cfg.eval.bench_runs)?;
    let bench_path = paths.report("bench.csv");
    let mut w = csv::WriterBuilder::new()
        .from_path(&bench_path)
        .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    w.write_record(["run", "seconds"]).map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    for (i, s) in samples.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()])
            .map_err(|e| RydError::Data(format!("csv error: {e}")))?;
    }
    w.flush()?;
    write_manifest(cfg, paths)?;
    saved(&bench_path, &format!("{} timing runs", samples.len()));

    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    println!(
        "median single-trace latency {median:.3e} s over {} runs ({} points, {})",
        samples.len(),
        test.n_points(),
        params.config().kind()
    );
    Ok(())
}
