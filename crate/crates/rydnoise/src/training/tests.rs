use super::*;
use crate::dataio::{Axis, Provenance};
use crate::models::{LinearConfig, TransformerConfig, UNetConfig};
use crate::synth::{beat_signal, make_paired_dataset, HeterodyneConfig, NoiseKind, NoiseSpec};

fn axis() -> Axis {
    Axis::time(0.0, 1e-6, "s")
}

fn tiny_transformer(seq_len: usize, dropout: f64) -> ModelConfig {
    ModelConfig::Transformer(TransformerConfig {
        d_model: 8,
        n_heads: 2,
        ffn_dim: 16,
        n_layers: 1,
        dropout_rate: dropout,
        seq_len,
        ..Default::default()
    })
}

fn tiny_unet(seq_len: usize) -> ModelConfig {
    ModelConfig::UNet(UNetConfig {
        enc1_channels: 4,
        enc2_channels: 8,
        final_channels: 8,
        seq_len,
        ..Default::default()
    })
}

/// Paired dataset around the synthesizer's beat trace at a short length.
fn small_split(n: usize, n_train: usize, sigma: f64, seed: u64) -> DatasetSplit<f64> {
    let het = HeterodyneConfig { n_points: n, ..Default::default() };
    let clean = beat_signal(&het).unwrap();
    let spec = NoiseSpec { kind: NoiseKind::WhiteGaussian, sigma, ..Default::default() };
    make_paired_dataset(&clean, &het.axis(), &spec, n_train, 4, seed).unwrap()
}

// --- convergence rule ---

#[test]
fn convergence_needs_a_full_window() {
    assert!(!has_converged(&[1.0; 9], 10, 1e-3));
    assert!(!has_converged(&[], 10, 1e-3));
    assert!(has_converged(&[1.0; 10], 10, 1e-3));
    assert!(has_converged(&[0.5; 37], 10, 1e-3));
}

#[test]
fn identical_losses_converge_even_at_zero() {
    assert!(has_converged(&[0.0; 10], 10, 1e-3));
    assert!(has_converged(&[42.0; 10], 10, 1e-3));
}

#[test]
fn steady_decrease_is_not_convergence() {
    // 10% decay per epoch: relative range over the window stays near 1.
    let losses: Vec<f64> = (0..20).map(|k| 0.9f64.powi(k)).collect();
    assert!(!has_converged(&losses, 10, 1e-3));
}

#[test]
fn only_the_trailing_window_counts() {
    let mut losses = vec![9.0, 1.5, 4.0, 0.2];
    losses.extend(std::iter::repeat(0.75).take(10));
    assert!(has_converged(&losses, 10, 1e-3));
    // A late spike breaks it again.
    losses.push(0.80);
    assert!(!has_converged(&losses, 10, 1e-3));
}

// --- optimizer sanity ---

#[test]
fn zero_learning_rate_freezes_parameters() {
    let split = small_split(16, 8, 0.1, 11);
    let mut cfg = TrainConfig::new(tiny_transformer(16, 0.0), 11);
    cfg.optimizer.learning_rate = 0.0;
    cfg.epochs_max = 5;
    cfg.window = 3;

    let init = TrainState::<f64>::init(&cfg).unwrap();
    let before = param_checksum(&init.params);
    let (params, log) = train(&split, &cfg).unwrap();
    assert_eq!(param_checksum(&params), before);

    // Same parameters every epoch, so the mean loss is the same number up
    // to summation order of the shuffled batches.
    let losses = log.losses();
    assert_eq!(log.converged_at_epoch, Some(cfg.window));
    for l in &losses {
        assert!((l - losses[0]).abs() < 1e-12);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let split = small_split(16, 10, 0.1, 21);
    let mut cfg = TrainConfig::new(tiny_transformer(16, 0.1), 21);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 4;
    cfg.window = 2;
    cfg.tolerance = 1e-15;

    let (pa, la) = train(&split, &cfg).unwrap();
    let (pb, lb) = train(&split, &cfg).unwrap();
    assert_eq!(param_checksum(&pa), param_checksum(&pb));
    assert_eq!(la.losses(), lb.losses());
    assert_eq!(
        la.epochs.iter().map(|e| &e.param_checksum).collect::<Vec<_>>(),
        lb.epochs.iter().map(|e| &e.param_checksum).collect::<Vec<_>>()
    );
}

#[test]
fn loss_decreases_on_clean_identity_task() {
    // sigma = 0: inputs, targets, and clean trace coincide. The model only
    // has to learn a identity-ish mapping; loss must drop from epoch 1.
    let split = small_split(16, 12, 0.0, 31);
    let mut cfg = TrainConfig::new(tiny_unet(16), 31);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 8;
    cfg.window = 8;
    cfg.tolerance = 1e-15;

    let (_, log) = train(&split, &cfg).unwrap();
    let losses = log.losses();
    assert!(losses.len() >= 2);
    assert!(
        losses.last().unwrap() < &losses[0],
        "no improvement: first {} last {}",
        losses[0],
        losses.last().unwrap()
    );
}

#[test]
fn smoothed_loss_trend_is_non_increasing_early() {
    let split = small_split(64, 20, 0.1, 41);
    let mut cfg = TrainConfig::new(tiny_unet(64), 41);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 5;
    cfg.window = 5;
    cfg.tolerance = 1e-15;

    let (_, log) = train(&split, &cfg).unwrap();
    let losses = log.losses();
    assert_eq!(losses.len(), 5);
    let mut ema = losses[0];
    for &l in &losses[1..] {
        let next = 0.3 * l + 0.7 * ema;
        assert!(next <= ema * (1.0 + 1e-9), "EMA rose: {ema} -> {next}");
        ema = next;
    }
}

// --- the noise-cancellation property on the scalar linear task ---

const LIN_SEQ: usize = 16;

struct LinearTask {
    split_noisy: DatasetSplit<f64>,
    split_clean: DatasetSplit<f64>,
    clean: Vec<f64>,
    noisy_targets: Vec<f64>,
    sigma_n: f64,
}

fn linear_task(n: usize, sigma_c: f64, sigma_n: f64, seed: u64) -> LinearTask {
    let spec = NoiseSpec { kind: NoiseKind::WhiteGaussian, sigma: 1.0, ..Default::default() };
    let draw = |tag: u64, sigma: f64| -> Vec<f64> {
        crate::synth::noise_draw(&spec.with_sigma(sigma), n, crate::seeds::derive(seed, tag))
            .unwrap()
    };
    let clean = draw(1, sigma_c);
    let n1 = draw(2, sigma_n);
    let n2 = draw(3, sigma_n);
    let inputs: Vec<f64> = clean.iter().zip(&n1).map(|(c, e)| c + e).collect();
    let noisy_targets: Vec<f64> = clean.iter().zip(&n2).map(|(c, e)| c + e).collect();

    // Short traces rather than single samples so each one carries a usable
    // standardization record.
    let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(LIN_SEQ).map(|c| c.to_vec()).collect() };
    let ax = axis();
    let x_set = TraceSet::from_rows(ax.clone(), &rows(&inputs)).unwrap();
    let test_x = TraceSet::from_rows(ax.clone(), &rows(&inputs[..8 * LIN_SEQ])).unwrap();
    let prov = |s: &str| Provenance { source: s.into(), seed };
    let split_noisy = DatasetSplit {
        train_x: x_set.clone(),
        train_y: TraceSet::from_rows(ax.clone(), &rows(&noisy_targets)).unwrap(),
        test_x: test_x.clone(),
        provenance: prov("linear-task-noisy"),
    };
    let split_clean = DatasetSplit {
        train_x: x_set,
        train_y: TraceSet::from_rows(ax, &rows(&clean)).unwrap(),
        test_x,
        provenance: prov("linear-task-clean"),
    };
    LinearTask { split_noisy, split_clean, clean, noisy_targets, sigma_n }
}

fn fit_linear(split: &DatasetSplit<f64>, seed: u64) -> ModelParams<f64> {
    let mut cfg = TrainConfig::new(ModelConfig::Linear(LinearConfig { seq_len: LIN_SEQ }), seed);
    // Adam dithers near the optimum at roughly the step size, so the
    // stability tolerance has to sit above curvature * lr^2.
    cfg.optimizer.learning_rate = 0.005;
    cfg.epochs_max = 100;
    cfg.window = 5;
    cfg.tolerance = 1e-3;
    let (params, log) = train(split, &cfg).unwrap();
    assert!(log.converged_at_epoch.is_some(), "linear fit ran out of epochs");
    params
}

#[test]
fn noisy_targets_learn_the_clean_target_model() {
    // Targets corrupted by independent zero-mean noise pull the optimum to
    // the same place as clean targets; the extra noise only shifts the
    // achievable loss by its variance.
    let sigma_c = 1.0;
    let sigma_n = 0.5;
    let task = linear_task(10_000, sigma_c, sigma_n, 7);

    let params_noisy = fit_linear(&task.split_noisy, 7);
    let params_clean = fit_linear(&task.split_clean, 7);

    // Both should sit near the attenuation optimum sigma_c^2 / (sigma_c^2
    // + sigma_n^2) = 0.8 for this draw size; sharing the input's record
    // between both sides of the pair leaves the slope untouched.
    let w_star = sigma_c * sigma_c / (sigma_c * sigma_c + sigma_n * sigma_n);
    let w_noisy = params_noisy.get("w").unwrap().data()[0];
    let w_clean = params_clean.get("w").unwrap().data()[0];
    assert!((w_noisy - w_star).abs() < 0.05, "w_noisy = {w_noisy}");
    assert!((w_clean - w_star).abs() < 0.05, "w_clean = {w_clean}");

    // Raw-unit losses through the full predict path.
    let mse = |params: &ModelParams<f64>, targets: &[f64]| -> f64 {
        let out = predict(params, &task.split_noisy.train_x).unwrap();
        out.data()
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / targets.len() as f64
    };

    // Output quality against the clean signal: within 20% of each other.
    let to_clean_noisy = mse(&params_noisy, &task.clean);
    let to_clean_clean = mse(&params_clean, &task.clean);
    assert!(
        to_clean_noisy <= to_clean_clean * 1.2 && to_clean_clean <= to_clean_noisy * 1.2,
        "clean-MSE gap too wide: {to_clean_noisy} vs {to_clean_clean}"
    );

    // Training-loss offset: noisy-target loss = clean-target loss plus the
    // target-noise variance, within 15%.
    let loss_noisy = mse(&params_noisy, &task.noisy_targets);
    let loss_clean = mse(&params_clean, &task.clean);
    let predicted = loss_clean + task.sigma_n * task.sigma_n;
    assert!(
        (loss_noisy - predicted).abs() < 0.15 * predicted,
        "offset law violated: {loss_noisy} vs {predicted}"
    );
}

// --- checkpoint resume ---

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let split = small_split(16, 10, 0.1, 51);
    let mut cfg = TrainConfig::new(tiny_transformer(16, 0.1), 51);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 6;
    cfg.window = 2;
    cfg.tolerance = 1e-15;

    // Uninterrupted reference run.
    let (params_full, log_full) = train(&split, &cfg).unwrap();

    // Same run split at epoch 3 with a save/load in between.
    let dir = std::env::temp_dir().join("rydnoise-training-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("resume.ckpt");

    let mut cfg_head = cfg.clone();
    cfg_head.epochs_max = 3;
    let mut state = TrainState::<f64>::init(&cfg_head).unwrap();
    train_epochs(&mut state, &split, &cfg_head).unwrap();
    assert_eq!(state.epochs_done(), 3);
    save_train_state(&state, &path).unwrap();

    let mut resumed = load_train_state::<f64>(&path).unwrap();
    assert_eq!(resumed.epochs_done(), 3);
    assert_eq!(param_checksum(&resumed.params), param_checksum(&state.params));
    assert_eq!(resumed.adam.step_count(), state.adam.step_count());
    train_epochs(&mut resumed, &split, &cfg).unwrap();

    assert_eq!(param_checksum(&resumed.params), param_checksum(&params_full));
    assert_eq!(resumed.log.losses(), log_full.losses());
    assert_eq!(resumed.log.converged_at_epoch, log_full.converged_at_epoch);
}

#[test]
fn train_state_round_trips_bit_exactly() {
    let split = small_split(16, 6, 0.1, 61);
    let mut cfg = TrainConfig::new(tiny_unet(16), 61);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 2;
    cfg.window = 2;
    cfg.tolerance = 1e-15;
    let mut state = TrainState::<f64>::init(&cfg).unwrap();
    train_epochs(&mut state, &split, &cfg).unwrap();

    let dir = std::env::temp_dir().join("rydnoise-training-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roundtrip.ckpt");
    save_train_state(&state, &path).unwrap();
    let loaded = load_train_state::<f64>(&path).unwrap();

    assert_eq!(loaded.params.names(), state.params.names());
    for (a, b) in loaded.params.arrays().iter().zip(state.params.arrays()) {
        assert_eq!(a.data(), b.data());
    }
    let (ma, va) = loaded.adam.moments();
    let (mb, vb) = state.adam.moments();
    for (a, b) in ma.iter().zip(mb).chain(va.iter().zip(vb)) {
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(loaded.adam.hyperparams(), state.adam.hyperparams());
    // Epoch timing is telemetry and deliberately not persisted.
    let mut expected = state.log.clone();
    for rec in &mut expected.epochs {
        rec.seconds = 0.0;
    }
    assert_eq!(loaded.log, expected);
}

// --- prediction path ---

#[test]
fn predict_is_deterministic_and_shape_preserving() {
    let split = small_split(16, 6, 0.1, 71);
    let params = init_params::<f64>(tiny_transformer(16, 0.1), 71).unwrap();
    let a = predict(&params, &split.test_x).unwrap();
    let b = predict(&params, &split.test_x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_sets(), split.test_x.n_sets());
    assert_eq!(a.n_points(), split.test_x.n_points());
    assert_eq!(a.axis(), split.test_x.axis());
}

#[test]
fn zeroed_head_predicts_the_per_trace_mean() {
    let mut params = init_params::<f64>(ModelConfig::Linear(LinearConfig { seq_len: 5 }), 3).unwrap();
    for arr in params.arrays_mut() {
        for v in arr.data_mut() {
            *v = 0.0;
        }
    }
    let rows = vec![vec![1.0, 2.0, 3.0, 4.0, 10.0], vec![-3.0, 1.0, 0.0, 0.0, 2.0]];
    let set = TraceSet::from_rows(axis(), &rows).unwrap();
    let out = predict(&params, &set).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let mu = row.iter().sum::<f64>() / row.len() as f64;
        for v in out.trace(i) {
            assert!((v - mu).abs() < 1e-12);
        }
    }
}

#[test]
fn predict_rejects_wrong_length() {
    let params = init_params::<f64>(tiny_unet(16), 5).unwrap();
    let set = TraceSet::from_rows(axis(), &[vec![0.0; 24], vec![1.0; 24]]).unwrap();
    assert!(matches!(predict(&params, &set).unwrap_err(), RydError::Dimension(_)));
}

// --- failure paths and logging ---

#[test]
fn nan_targets_abort_with_location() {
    let mut rows: Vec<Vec<f64>> = (0..8)
        .map(|i| {
            crate::synth::noise_draw(
                &NoiseSpec::default(),
                16,
                100 + i,
            )
            .unwrap()
        })
        .collect();
    rows[3][7] = f64::NAN;
    let x = TraceSet::from_rows(axis(), &rows).unwrap();
    let split = DatasetSplit {
        train_x: x.clone(),
        train_y: x.clone(),
        test_x: x,
        provenance: Provenance { source: "poisoned".into(), seed: 0 },
    };
    let mut cfg = TrainConfig::new(tiny_unet(16), 9);
    cfg.epochs_max = 2;
    cfg.window = 2;

    let err = train(&split, &cfg).unwrap_err();
    assert!(matches!(err, RydError::Numerical(_)));
    let msg = err.to_string();
    assert!(msg.contains("epoch 1"), "{msg}");
    assert!(msg.contains("batch"), "{msg}");
    assert!(msg.contains("grad norm"), "{msg}");
}

#[test]
fn config_validation_rejects_bad_settings() {
    let base = TrainConfig::new(tiny_unet(16), 0);
    let mut c = base.clone();
    c.epochs_max = 5;
    c.window = 10;
    assert!(matches!(c.validate().unwrap_err(), RydError::Config(_)));
    let mut c = base.clone();
    c.tolerance = 0.0;
    assert!(matches!(c.validate().unwrap_err(), RydError::Config(_)));
    let mut c = base.clone();
    c.batch_size = 0;
    assert!(matches!(c.validate().unwrap_err(), RydError::Config(_)));
    let mut c = base;
    c.optimizer.learning_rate = f64::NAN;
    assert!(matches!(c.validate().unwrap_err(), RydError::Config(_)));
}

#[test]
fn epochs_are_contiguous_and_log_exports_csv() {
    let split = small_split(16, 6, 0.1, 81);
    let mut cfg = TrainConfig::new(tiny_unet(16), 81);
    cfg.optimizer.learning_rate = 1e-3;
    cfg.epochs_max = 3;
    cfg.window = 3;
    cfg.tolerance = 1e-15;
    let (_, log) = train(&split, &cfg).unwrap();
    for (i, rec) in log.epochs.iter().enumerate() {
        assert_eq!(rec.epoch, i + 1);
        assert!(rec.loss.is_finite());
        assert!(rec.seconds >= 0.0);
        assert_eq!(rec.param_checksum.len(), 12);
    }

    let dir = std::env::temp_dir().join("rydnoise-training-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("log.csv");
    log.save_csv(&path).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["epoch", "loss", "seconds"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), log.epochs.len());
    for (row, rec) in rows.iter().zip(&log.epochs) {
        assert_eq!(row[0].parse::<usize>().unwrap(), rec.epoch);
        assert_eq!(row[1].parse::<f64>().unwrap(), rec.loss);
    }
}
