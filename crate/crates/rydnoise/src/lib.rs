//! Self-supervised denoising of 1D intermediate-frequency sensor traces.
//!
//! A heterodyne sensing chain mixes a signal under test with a local
//! oscillator and reads out a beat note at an intermediate frequency. This
//! crate trains denoisers on pairs of independently noisy measurements of
//! that beat (no clean targets required), and benchmarks them against
//! classical filters:
//!
//! - [`numerics`]: dense arrays, reverse-mode autodiff, Adam
//! - [`models`]: Transformer encoder and 1D U-Net denoisers
//! - [`synth`]: beat-note and spectrum synthesizer with controlled noise
//! - [`dataio`]: trace persistence, 4:4:2 splitting, standardization, batching
//! - [`baselines`]: averaging, scalar Kalman filter, coiflet-4 wavelet
//!   thresholding, and the grid-search tuner that keeps comparisons fair
//! - [`training`]: the noisy-pair training loop, convergence rule, prediction
//! - [`evaluation`]: MSE reports, training-size sweeps, latency benchmarks
//! - [`cli`]: config-file driven pipeline (synth, train, denoise, baseline,
//!   eval, bench)

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod seeds;
pub mod synth;
pub mod training;

pub use error::{Result, RydError};
