use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn time_axis() -> Axis {
    Axis::time(0.0, 1e-6, "s")
}

/// Set whose trace i is the constant i, so identity survives shuffling.
fn tagged_set(n_sets: usize, n_points: usize) -> TraceSet<f64> {
    let mut data = Vec::with_capacity(n_sets * n_points);
    for i in 0..n_sets {
        data.extend(std::iter::repeat(i as f64).take(n_points));
    }
    TraceSet::new(time_axis(), n_points, data).unwrap()
}

fn rand_set(n_sets: usize, n_points: usize, seed: u64) -> TraceSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n_sets * n_points)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    TraceSet::new(time_axis(), n_points, data).unwrap()
}

#[test]
fn split_ratios() {
    let split = split_442(&tagged_set(10, 3), 1).unwrap();
    assert_eq!(split.train_x.n_sets(), 4);
    assert_eq!(split.train_y.n_sets(), 4);
    assert_eq!(split.test_x.n_sets(), 2);

    let split = split_442(&tagged_set(10_000, 2), 1).unwrap();
    assert_eq!(split.train_x.n_sets(), 4000);
    assert_eq!(split.train_y.n_sets(), 4000);
    assert_eq!(split.test_x.n_sets(), 2000);
}

#[test]
fn split_is_deterministic_and_partitions() {
    let source = tagged_set(40, 2);
    let a = split_442(&source, 7).unwrap();
    let b = split_442(&source, 7).unwrap();
    assert_eq!(a.train_x, b.train_x);
    assert_eq!(a.train_y, b.train_y);
    assert_eq!(a.test_x, b.test_x);

    // Tags of all three parts together hit 0..40 exactly once.
    let mut seen: Vec<usize> = a
        .train_x
        .iter_traces()
        .chain(a.train_y.iter_traces())
        .chain(a.test_x.iter_traces())
        .map(|t| t[0] as usize)
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..40).collect::<Vec<_>>());

    let c = split_442(&source, 8).unwrap();
    assert_ne!(a.train_x, c.train_x);
}

#[test]
fn split_reports_padding_amount() {
    let err = split_442(&tagged_set(13, 2), 1).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("pad with 7"), "{msg}");
    assert!(msg.contains("trim 3"), "{msg}");
}

#[test]
fn standardize_two_point_example() {
    let (out, rec) = standardize(&[0.0f64, 2.0]).unwrap();
    assert_eq!(out, vec![-1.0, 1.0]);
    assert_eq!(rec.mu, 1.0);
    assert_eq!(rec.sigma, 1.0);
}

#[test]
fn standardize_moments_and_idempotence() {
    let set = rand_set(50, 200, 3);
    for trace in set.iter_traces() {
        let (out, _) = standardize(trace).unwrap();
        let n = out.len() as f64;
        let mean: f64 = out.iter().sum::<f64>() / n;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-10, "std {}", var.sqrt());

        let (again, rec2) = standardize(&out).unwrap();
        assert!(rec2.mu.abs() < 1e-10);
        assert!((rec2.sigma - 1.0).abs() < 1e-10);
        for (a, b) in out.iter().zip(&again) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn standardize_rejects_degenerate_traces() {
    assert!(standardize(&[5.0f64]).is_err());
    assert!(standardize(&[2.0f64, 2.0, 2.0]).is_err());
    // Constant trace whose mean rounds away from the value itself; the
    // rounding-noise guard must still reject it.
    assert!(standardize(&[0.1f64, 0.1, 0.1]).is_err());
}

#[test]
fn destandardize_inverts() {
    let rec = StandardizationRecord { mu: 5.0, sigma: 2.0 };
    assert_eq!(destandardize(&[-1.0f64, 1.0], &rec), vec![3.0, 7.0]);

    let identity = StandardizationRecord { mu: 0.0, sigma: 1.0 };
    assert_eq!(destandardize(&[0.25f64, -4.0], &identity), vec![0.25, -4.0]);

    // Identity within 1e-10 relative over many random traces.
    let set = rand_set(10_000, 20, 9);
    for trace in set.iter_traces() {
        let (std_trace, rec) = standardize(trace).unwrap();
        let back = destandardize(&std_trace, &rec);
        for (orig, b) in trace.iter().zip(&back) {
            assert!((orig - b).abs() <= 1e-10 * orig.abs().max(1.0));
        }
    }
}

#[test]
fn standardize_with_matches_and_inverts() {
    let rec = StandardizationRecord { mu: 5.0, sigma: 2.0 };
    assert_eq!(standardize_with(&[3.0f64, 7.0], &rec), vec![-1.0, 1.0]);

    // Under a trace's own record it reproduces standardize exactly, and
    // destandardize undoes it under any record.
    let set = rand_set(1_000, 20, 11);
    let other = StandardizationRecord { mu: -0.7, sigma: 0.31 };
    for trace in set.iter_traces() {
        let (std_trace, rec) = standardize(trace).unwrap();
        assert_eq!(standardize_with(trace, &rec), std_trace);
        let back = destandardize(&standardize_with(trace, &other), &other);
        for (orig, b) in trace.iter().zip(&back) {
            assert!((orig - b).abs() <= 1e-10 * orig.abs().max(1.0));
        }
    }
}

#[test]
fn standardize_set_matches_per_trace() {
    let set = rand_set(5, 50, 11);
    let (std_set, recs) = standardize_set(&set).unwrap();
    assert_eq!(recs.len(), 5);
    let (first, rec0) = standardize(set.trace(0)).unwrap();
    assert_eq!(std_set.trace(0), &first[..]);
    assert_eq!(recs[0], rec0);
}

fn temp_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("rydnoise-dataio-test");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn native_round_trip_is_bit_exact() {
    let dir = temp_dir();

    let mut data = rand_set(6, 40, 21).data;
    // Exercise payload corners: negative zero, subnormal-adjacent, huge.
    data[0] = -0.0;
    data[1] = 1e-300;
    data[2] = 3.5e38;
    data[3] = 0.1;
    let set64 = TraceSet::new(time_axis(), 40, data).unwrap();
    let p64 = dir.join("traces.f64.ryd");
    save_traceset(&set64, &p64).unwrap();
    let loaded: TraceSet<f64> = load_traceset(&p64).unwrap();
    assert_eq!(set64, loaded);

    let set32: TraceSet<f32> = set64.convert();
    let p32 = dir.join("traces.f32.ryd");
    save_traceset(&set32, &p32).unwrap();
    let loaded: TraceSet<f32> = load_traceset(&p32).unwrap();
    assert_eq!(set32, loaded);

    // Axis metadata with awkward floats survives.
    let axis = Axis::frequency(49_000.0, 5.000000000000001, "Hz");
    let set = TraceSet::new(axis.clone(), 3, vec![1.0f64, 2.0, 3.0]).unwrap();
    let p = dir.join("axis.ryd");
    save_traceset(&set, &p).unwrap();
    assert_eq!(load_traceset::<f64>(&p).unwrap().axis(), &axis);
}

#[test]
fn native_load_errors_are_distinct() {
    let dir = temp_dir();
    let set = rand_set(4, 100, 33);
    let path = dir.join("corrupt.ryd");
    save_traceset(&set, &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    std::fs::write(&path, b"not a trace file\n").unwrap();
    let err = load_traceset::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("malformed trace file"), "{err}");

    std::fs::write(&path, &good[..good.len() / 2]).unwrap();
    let err = load_traceset::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("truncated trace file"), "{err}");

    let mut flipped = good.clone();
    let idx = good.len() - 90;
    flipped[idx] ^= 0x55;
    std::fs::write(&path, &flipped).unwrap();
    let err = load_traceset::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("checksum mismatch"), "{err}");

    std::fs::write(&path, &good).unwrap();
    let err = load_traceset::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains("dtype"), "{err}");
}

#[test]
fn csv_round_trip() {
    let dir = temp_dir();
    let path = dir.join("traces.csv");
    std::fs::write(&path, "1.0,2.5,-3.0\n4.0,5.0,6.25\n").unwrap();
    let set = load_traceset_csv(&path, time_axis()).unwrap();
    assert_eq!(set.n_sets(), 2);
    assert_eq!(set.n_points(), 3);
    assert_eq!(set.trace(0), &[1.0, 2.5, -3.0]);

    let out = dir.join("traces-out.csv");
    save_traceset_csv(&set, &out).unwrap();
    let again = load_traceset_csv(&out, time_axis()).unwrap();
    assert_eq!(set, again);

    std::fs::write(&path, "1.0,oops\n").unwrap();
    assert!(load_traceset_csv(&path, time_axis()).is_err());
}

#[test]
fn batching_visits_everything_once() {
    let batches = batch_indices(100, 32, 5).unwrap();
    assert_eq!(batches.len(), 4);
    assert_eq!(batches.last().unwrap().len(), 4);
    let mut all: Vec<usize> = batches.concat();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());

    // batch_size == n_sets: one batch with every trace.
    let single = batch_indices(10, 10, 5).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].len(), 10);

    let a = batch_indices(100, 32, 5).unwrap();
    let b = batch_indices(100, 32, 5).unwrap();
    assert_eq!(a, b);
    let c = batch_indices(100, 32, 6).unwrap();
    assert_ne!(a, c);

    assert!(batch_indices(10, 0, 1).is_err());
}

#[test]
fn batch_iter_materializes_subsets() {
    let set = tagged_set(7, 2);
    let batches: Vec<TraceSet<f64>> = batch_iter(&set, 3, 2).unwrap().collect();
    assert_eq!(batches.len(), 3);
    let total: usize = batches.iter().map(|b| b.n_sets()).sum();
    assert_eq!(total, 7);
    let mut tags: Vec<usize> = batches
        .iter()
        .flat_map(|b| b.iter_traces().map(|t| t[0] as usize))
        .collect();
    tags.sort_unstable();
    assert_eq!(tags, (0..7).collect::<Vec<_>>());
}

#[test]
fn traceset_validation() {
    assert!(TraceSet::<f64>::new(time_axis(), 0, vec![]).is_err());
    assert!(TraceSet::new(time_axis(), 3, vec![1.0, 2.0]).is_err());
    let bad_axis = Axis::time(0.0, 0.0, "s");
    assert!(TraceSet::new(bad_axis, 1, vec![1.0]).is_err());
    let set = tagged_set(3, 2);
    assert!(set.subset(&[0, 5]).is_err());
    assert!(set.subset(&[]).is_err());
    assert_eq!(set.trace_array(1).shape(), &[2, 1]);
    assert_eq!(set.axis().at(3), 3e-6);
}
