//! End-to-end runs of the installed binary: every subcommand, the run-dir
//! layout, reproducibility, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rydnoise::dataio::{load_traceset, AxisKind};

const BIN: &str = env!("CARGO_BIN_EXE_rydnoise");

/// Per-trace length 16 keeps every stage sub-second.
const TINY: &str = r#"
seed = 7

[synth.heterodyne]
n_points = 16

[synth.noise]
sigma = 0.05

[dataset]
n_train = 6
n_test = 4

[model]
kind = "unet"

[model.unet]
enc1_channels = 4
enc2_channels = 8
final_channels = 8
seq_len = 16

[train]
epochs_max = 3
batch_size = 4
window = 2
tolerance = 1e-12

[train.optimizer]
learning_rate = 1e-3

[eval]
bench_runs = 3
"#;

fn workspace(name: &str) -> (PathBuf, PathBuf) {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(&config, TINY).unwrap();
    (dir, config)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// The single fingerprint directory under an output root.
fn run_dir(out_root: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(out_root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "expected exactly one run dir in {}", out_root.display());
    entries.pop().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn synth_writes_loadable_artifacts() {
    let (dir, config) = workspace("synth-basic");
    let out_root = dir.join("out");
    run_ok(&["synth", "--config", config.to_str().unwrap(), "--out", out_root.to_str().unwrap()]);

    let run = run_dir(&out_root);
    assert!(run.join("manifest.toml").exists());
    let clean = load_traceset::<f64>(&run.join("traces/clean.rtr")).unwrap();
    assert_eq!((clean.n_sets(), clean.n_points()), (1, 16));
    let train_x = load_traceset::<f64>(&run.join("traces/train_x.rtr")).unwrap();
    assert_eq!((train_x.n_sets(), train_x.n_points()), (6, 16));
    let train_y = load_traceset::<f64>(&run.join("traces/train_y.rtr")).unwrap();
    assert_eq!((train_y.n_sets(), train_y.n_points()), (6, 16));
    let test_x = load_traceset::<f64>(&run.join("traces/test_x.rtr")).unwrap();
    assert_eq!((test_x.n_sets(), test_x.n_points()), (4, 16));
    assert_ne!(train_x.trace(0), train_y.trace(0));
}

#[test]
fn default_config_works_out_of_the_box() {
    let (dir, _) = workspace("synth-defaults");
    let out_root = dir.join("out");
    run_ok(&["synth", "--out", out_root.to_str().unwrap()]);
    let run = run_dir(&out_root);
    let train_x = load_traceset::<f64>(&run.join("traces/train_x.rtr")).unwrap();
    assert_eq!((train_x.n_sets(), train_x.n_points()), (2000, 1000));
    let test_x = load_traceset::<f64>(&run.join("traces/test_x.rtr")).unwrap();
    assert_eq!((test_x.n_sets(), test_x.n_points()), (1000, 1000));
}

#[test]
fn synth_is_byte_reproducible_and_seed_forks_the_run() {
    let (dir, config) = workspace("synth-repro");
    let cfg = config.to_str().unwrap();
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run_ok(&["synth", "--config", cfg, "--out", out_a.to_str().unwrap()]);
    run_ok(&["synth", "--config", cfg, "--out", out_b.to_str().unwrap()]);

    let run_a = run_dir(&out_a);
    let run_b = run_dir(&out_b);
    assert_eq!(run_a.file_name(), run_b.file_name());
    for name in ["clean.rtr", "train_x.rtr", "train_y.rtr", "test_x.rtr"] {
        let a = std::fs::read(run_a.join("traces").join(name)).unwrap();
        let b = std::fs::read(run_b.join("traces").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    run_ok(&["synth", "--config", cfg, "--out", out_a.to_str().unwrap(), "--seed", "9"]);
    let entries = std::fs::read_dir(&out_a).unwrap().count();
    assert_eq!(entries, 2, "a new seed must land in a new fingerprint dir");
}

#[test]
fn shots_pile_has_the_requested_shape() {
    let (dir, config) = workspace("synth-shots");
    let out_root = dir.join("out");
    run_ok(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_root.to_str().unwrap(),
        "--set",
        "dataset.n_shots=24",
    ]);
    let run = run_dir(&out_root);
    let shots = load_traceset::<f64>(&run.join("traces/shots.rtr")).unwrap();
    assert_eq!((shots.n_sets(), shots.n_points()), (24, 16));
}

#[test]
fn train_writes_checkpoints_and_a_full_log() {
    let (dir, config) = workspace("train-basic");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["train", "--config", cfg, "--out", out]);

    let run = run_dir(&out_root);
    assert!(run.join("checkpoints/train_state.ckpt").exists());
    assert!(run.join("checkpoints/model.ckpt").exists());
    let log = csv_rows(&run.join("logs/train_log.csv"));
    assert_eq!(log.len(), 3, "one log row per epoch");
    for (i, row) in log.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        assert!(row[1].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn transformer_kind_is_accepted() {
    let (dir, config) = workspace("train-transformer");
    let cfg = config.to_str().unwrap();
    let out = dir.join("out");
    let sets = [
        "model.kind=transformer",
        "model.transformer.d_model=8",
        "model.transformer.n_heads=2",
        "model.transformer.ffn_dim=16",
        "model.transformer.n_layers=1",
        "model.transformer.seq_len=16",
        "train.epochs_max=1",
        "train.window=1",
    ];
    let mut args = vec!["synth", "--config", cfg, "--out", out.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s]);
    }
    run_ok(&args);
    args[0] = "train";
    run_ok(&args);
    let run = run_dir(&out);
    assert_eq!(csv_rows(&run.join("logs/train_log.csv")).len(), 1);
}

#[test]
fn resumed_training_matches_the_unbroken_run() {
    let (dir, config) = workspace("train-resume");
    let cfg = config.to_str().unwrap();
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let epochs = ["--set", "train.epochs_max=4"];

    let mut args_a = vec!["synth", "--config", cfg, "--out", out_a.to_str().unwrap()];
    args_a.extend(epochs);
    run_ok(&args_a);
    args_a[0] = "train";
    run_ok(&args_a);

    let mut args_b = vec!["synth", "--config", cfg, "--out", out_b.to_str().unwrap()];
    args_b.extend(epochs);
    run_ok(&args_b);
    args_b[0] = "train";
    let mut paused = args_b.clone();
    paused.extend(["--stop-after", "2"]);
    run_ok(&paused);
    assert_eq!(csv_rows(&run_dir(&out_b).join("logs/train_log.csv")).len(), 2);
    let mut resumed = args_b.clone();
    resumed.push("--resume");
    run_ok(&resumed);

    let run_a = run_dir(&out_a);
    let run_b = run_dir(&out_b);
    let params_a = std::fs::read(run_a.join("checkpoints/model.ckpt")).unwrap();
    let params_b = std::fs::read(run_b.join("checkpoints/model.ckpt")).unwrap();
    assert_eq!(params_a, params_b, "resume must reproduce the unbroken parameters");

    let log_a = csv_rows(&run_a.join("logs/train_log.csv"));
    let log_b = csv_rows(&run_b.join("logs/train_log.csv"));
    assert_eq!(log_a.len(), 4);
    assert_eq!(log_b.len(), 4);
    for (ra, rb) in log_a.iter().zip(&log_b) {
        assert_eq!(ra[0], rb[0]);
        assert_eq!(ra[1], rb[1], "per-epoch losses must match bit for bit");
    }
}

#[test]
fn denoise_preserves_shape_and_is_deterministic() {
    let (dir, config) = workspace("denoise-basic");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["train", "--config", cfg, "--out", out]);
    run_ok(&["denoise", "--config", cfg, "--out", out]);

    let run = run_dir(&out_root);
    let denoised = load_traceset::<f64>(&run.join("traces/denoised.rtr")).unwrap();
    assert_eq!((denoised.n_sets(), denoised.n_points()), (4, 16));

    let again = run.join("traces/denoised-again.rtr");
    run_ok(&[
        "denoise",
        "--config",
        cfg,
        "--out",
        out,
        "--output",
        again.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(run.join("traces/denoised.rtr")).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn denoise_rejects_length_mismatch_naming_both() {
    let (dir, config) = workspace("denoise-mismatch");
    let cfg = config.to_str().unwrap();
    let out_16 = dir.join("n16");
    let out_32 = dir.join("n32");
    run_ok(&["synth", "--config", cfg, "--out", out_16.to_str().unwrap()]);
    run_ok(&["train", "--config", cfg, "--out", out_16.to_str().unwrap()]);
    run_ok(&[
        "synth",
        "--config",
        cfg,
        "--out",
        out_32.to_str().unwrap(),
        "--set",
        "synth.heterodyne.n_points=32",
        "--set",
        "model.unet.seq_len=32",
    ]);

    let ckpt = run_dir(&out_16).join("checkpoints/model.ckpt");
    let input = run_dir(&out_32).join("traces/test_x.rtr");
    let out = run(&[
        "denoise",
        "--config",
        cfg,
        "--out",
        out_16.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_of(&out);
    assert!(err.contains("16") && err.contains("32"), "stderr must name both lengths: {err}");
}

#[test]
fn denoise_handles_frequency_axis_traces() {
    let (dir, config) = workspace("denoise-frequency");
    let cfg = config.to_str().unwrap();
    let out_time = dir.join("time");
    let out_freq = dir.join("freq");
    run_ok(&["synth", "--config", cfg, "--out", out_time.to_str().unwrap()]);
    run_ok(&["train", "--config", cfg, "--out", out_time.to_str().unwrap()]);

    // A 16-point sweep so the time-domain checkpoint fits the spectra.
    let sets = [
        "synth.domain=frequency",
        "synth.spectrum.freq_start=49000",
        "synth.spectrum.freq_stop=49075",
        "synth.spectrum.freq_step=5",
        "synth.spectrum.main.center_hz=49040",
        "synth.spectrum.weak_line_freq=49010",
        "synth.spectrum.sideband_offset=20",
    ];
    let mut args = vec!["synth", "--config", cfg, "--out", out_freq.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s]);
    }
    run_ok(&args);

    let ckpt = run_dir(&out_time).join("checkpoints/model.ckpt");
    let input = run_dir(&out_freq).join("traces/test_x.rtr");
    let output = dir.join("denoised_spectrum.rtr");
    run_ok(&[
        "denoise",
        "--config",
        cfg,
        "--out",
        out_time.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    let denoised = load_traceset::<f64>(&output).unwrap();
    assert_eq!((denoised.n_sets(), denoised.n_points()), (4, 16));
    assert_eq!(denoised.axis().kind, AxisKind::Frequency);
}

#[test]
fn baseline_scores_the_three_classical_methods() {
    let (dir, config) = workspace("baseline-basic");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["baseline", "--config", cfg, "--out", out]);

    let run = run_dir(&out_root);
    let rows = csv_rows(&run.join("reports/baseline_report.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["kalman", "wavelet", "average"]);
    assert!(run.join("reports/grid_kalman.csv").exists());
    assert!(run.join("reports/grid_wavelet.csv").exists());

    let kalman_cells = csv_rows(&run.join("reports/grid_kalman.csv"));
    assert_eq!(kalman_cells.len(), 9 * 7, "full default grid must be tabulated");
}

#[test]
fn overrides_fork_the_run_fingerprint() {
    let (dir, config) = workspace("eval-forked");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["train", "--config", cfg, "--out", out]);

    // Any config override moves the run to a fresh fingerprint dir, where
    // the synth artifacts do not exist yet.
    let result =
        run(&["eval", "--config", cfg, "--out", out, "--set", "eval.sweep_sizes=[2, 4]"]);
    assert_eq!(result.status.code(), Some(3));
    assert!(stderr_of(&result).contains("missing inputs"));
    assert_eq!(std::fs::read_dir(&out_root).unwrap().count(), 2);
}

#[test]
fn eval_end_to_end_with_sweep_in_one_config() {
    let (dir, config) = workspace("eval-sweep");
    // Sweep sizes live in the config file so every stage shares one
    // fingerprint.
    let full = TINY.replace("[eval]\nbench_runs = 3", "[eval]\nbench_runs = 3\nsweep_sizes = [2, 4]");
    assert_ne!(full, TINY);
    std::fs::write(&config, full).unwrap();
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["train", "--config", cfg, "--out", out]);
    run_ok(&["eval", "--config", cfg, "--out", out]);

    let run = run_dir(&out_root);
    let rows = csv_rows(&run.join("reports/report.csv"));
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["model", "kalman", "wavelet", "average"]);
    for row in &rows {
        assert!(row[3].parse::<f64>().unwrap().is_finite());
    }

    let plot = csv_rows(&run.join("reports/denoised_vs_reference.csv"));
    assert_eq!(plot.len(), 16, "one row per sample");
    assert_eq!(plot[0].len(), 4, "axis + noisy + denoised + reference");

    let sweep = csv_rows(&run.join("reports/sweep.csv"));
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[0][0], "2");
    assert_eq!(sweep[1][0], "4");
}

#[test]
fn eval_without_a_checkpoint_lists_the_missing_files() {
    let (dir, config) = workspace("eval-missing");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    let result = run(&["eval", "--config", cfg, "--out", out]);
    assert_eq!(result.status.code(), Some(3));
    let err = stderr_of(&result);
    assert!(err.contains("model.ckpt"), "stderr must name the missing file: {err}");
}

#[test]
fn unknown_keys_exit_with_config_code() {
    let (dir, config) = workspace("bad-config");
    std::fs::write(&config, "unknwon_section = 1\n").unwrap();
    let result = run(&["synth", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    assert!(stderr_of(&result).contains("unknwon_section"));

    std::fs::write(&config, TINY).unwrap();
    let result = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--set",
        "train.bogus_knob=1",
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(stderr_of(&result).contains("bogus_knob"));
}

#[test]
fn numerical_abort_exits_with_its_own_code() {
    let (dir, config) = workspace("nan-abort");
    let cfg = config.to_str().unwrap();
    let out = dir.join("out");
    // Adam steps scale with the learning rate, so 1e100 puts the weights
    // far enough out that the epoch-2 forward pass overflows.
    let sets = ["--set", "train.optimizer.learning_rate=1e100"];
    let mut args = vec!["synth", "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend(sets);
    run_ok(&args);
    args[0] = "train";
    let result = run(&args);
    assert_eq!(result.status.code(), Some(4));
    assert!(stderr_of(&result).contains("non-finite"));
}

#[test]
fn bench_records_every_timing_run() {
    let (dir, config) = workspace("bench-basic");
    let cfg = config.to_str().unwrap();
    let out_root = dir.join("out");
    let out = out_root.to_str().unwrap();
    run_ok(&["synth", "--config", cfg, "--out", out]);
    run_ok(&["train", "--config", cfg, "--out", out]);
    let result = run_ok(&["bench", "--config", cfg, "--out", out]);
    assert!(String::from_utf8_lossy(&result.stdout).contains("median"));

    let rows = csv_rows(&run_dir(&out_root).join("reports/bench.csv"));
    assert_eq!(rows.len(), 3, "bench_runs timing rows");
    for row in &rows {
        assert!(row[1].parse::<f64>().unwrap() > 0.0);
    }
}
