//! Synthetic measurement chain: heterodyne beat traces in the time domain,
//! swept IF spectra in the frequency domain, and seeded noise models, so the
//! full pipeline runs without lab data.
//!
//! All generation is f64 and pure given (config, seed); per-trace seeds are
//! derived with [`crate::seeds`] so datasets are independent of generation
//! order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Axis, DatasetSplit, Provenance, TraceSet};
use crate::error::{Result, RydError};
use crate::seeds;

/// Heterodyne beat between the signal under test and the local oscillator.
/// The AC term at `if_frequency` carries the sensing information; its
/// amplitude is proportional to `sut_amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeterodyneConfig {
    pub sut_amplitude: f64,
    pub lo_amplitude: f64,
    pub polarizability_alpha: f64,
    pub if_frequency: f64,
    pub phase: f64,
    pub sample_rate: f64,
    pub n_points: usize,
}

impl Default for HeterodyneConfig {
    fn default() -> Self {
        Self {
            sut_amplitude: 0.2,
            lo_amplitude: 1.0,
            polarizability_alpha: 1.0,
            if_frequency: 50_000.0,
            phase: 0.0,
            sample_rate: 1_000_000.0,
            n_points: 1000,
        }
    }
}

impl HeterodyneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(RydError::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.if_frequency >= 0.0) || self.if_frequency >= self.sample_rate / 2.0 {
            return Err(RydError::Config(format!(
                "if_frequency {} violates Nyquist for sample_rate {}",
                self.if_frequency, self.sample_rate
            )));
        }
        if self.n_points < 2 {
            return Err(RydError::Config(format!(
                "n_points must be at least 2, got {}",
                self.n_points
            )));
        }
        if self.sut_amplitude < 0.0 || self.lo_amplitude < 0.0 {
            return Err(RydError::Config(
                "field amplitudes must be non-negative".into(),
            ));
        }
        if !self.phase.is_finite() || !self.polarizability_alpha.is_finite() {
            return Err(RydError::Config(
                "phase and polarizability must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn axis(&self) -> Axis {
        Axis::time(0.0, 1.0 / self.sample_rate, "s")
    }

    /// AC amplitude of the beat term, alpha * E_S * E_L.
    pub fn beat_amplitude(&self) -> f64 {
        self.polarizability_alpha * self.sut_amplitude * self.lo_amplitude
    }
}

/// Clean trace s(t_i) = -(alpha/2) [E_S^2 + E_L^2 + 2 E_S E_L cos(2 pi f t_i
/// + phi)] at t_i = i / sample_rate. The DC offset is kept; standardization
/// strips it downstream.
pub fn beat_signal(cfg: &HeterodyneConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dc = cfg.sut_amplitude * cfg.sut_amplitude + cfg.lo_amplitude * cfg.lo_amplitude;
    let ac = 2.0 * cfg.sut_amplitude * cfg.lo_amplitude;
    let half_alpha = cfg.polarizability_alpha / 2.0;
    let w = 2.0 * std::f64::consts::PI * cfg.if_frequency / cfg.sample_rate;
    Ok((0..cfg.n_points)
        .map(|i| -half_alpha * (dc + ac * (w * i as f64 + cfg.phase).cos()))
        .collect())
}

/// Scale a clean trace; apply before adding noise so only the signal
/// component attenuates.
pub fn attenuate(trace: &[f64], factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(RydError::Config(format!(
            "attenuation factor must lie in (0, 1], got {factor}"
        )));
    }
    Ok(trace.iter().map(|v| v * factor).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    WhiteGaussian,
    Pink,
    Burst,
}

/// Additive noise model. Every kind is zero-mean by construction and fully
/// determined by (spec, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Per-sample standard deviation in trace units.
    pub sigma: f64,
    /// Pink spectral exponent gamma: power falls as 1/f^gamma.
    pub pink_exponent: f64,
    /// Probability that a sample carries a burst spike.
    pub burst_probability: f64,
    /// Per-spike std multiplier; 1.0 keeps the overall std equal to sigma.
    pub burst_amplitude: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::WhiteGaussian,
            sigma: 0.1,
            pink_exponent: 1.0,
            burst_probability: 0.02,
            burst_amplitude: 1.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(RydError::Config(format!(
                "noise sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        if !(0.0..=3.0).contains(&self.pink_exponent) {
            return Err(RydError::Config(format!(
                "pink_exponent must lie in [0, 3], got {}",
                self.pink_exponent
            )));
        }
        if !(self.burst_probability > 0.0 && self.burst_probability <= 1.0) {
            return Err(RydError::Config(format!(
                "burst_probability must lie in (0, 1], got {}",
                self.burst_probability
            )));
        }
        if !(self.burst_amplitude > 0.0) || !self.burst_amplitude.is_finite() {
            return Err(RydError::Config(format!(
                "burst_amplitude must be positive, got {}",
                self.burst_amplitude
            )));
        }
        Ok(())
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self { sigma, ..self.clone() }
    }
}

/// Number of held generator rows for the pink octave stack; row r refreshes
/// every 2^r samples.
const PINK_ROWS: usize = 16;

/// One noise trace of length n. Pink draws are centered per draw: the
/// octave stack holds a random DC component whose sample mean decays far
/// slower than 1/sqrt(n), so an uncentered draw would fail any finite-n
/// zero-mean check even though the process mean is zero.
pub fn noise_draw(spec: &NoiseSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let out = match spec.kind {
        NoiseKind::WhiteGaussian => (0..n)
            .map(|_| {
                let z: f64 = normal.sample(&mut rng);
                z * spec.sigma
            })
            .collect(),
        NoiseKind::Burst => {
            // Bernoulli-gated spikes; spike std sigma/sqrt(p) keeps the
            // per-sample variance at sigma^2 when burst_amplitude is 1.
            let spike_std =
                spec.sigma * spec.burst_amplitude / spec.burst_probability.sqrt();
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < spec.burst_probability {
                        let z: f64 = normal.sample(&mut rng);
                        z * spike_std
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        NoiseKind::Pink => {
            // Octave stack: row r holds a Gaussian refreshed every 2^r
            // samples; weighting 2^(r (gamma-1)/2) steers the spectral
            // exponent, gamma = 1 being the classic equal-weight stack.
            let weights: Vec<f64> = (0..PINK_ROWS)
                .map(|r| 2f64.powf(r as f64 * (spec.pink_exponent - 1.0) / 2.0))
                .collect();
            let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            let mut rows = vec![0.0f64; PINK_ROWS];
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                for (r, row) in rows.iter_mut().enumerate() {
                    if i % (1usize << r) == 0 {
                        *row = normal.sample(&mut rng);
                    }
                }
                let v: f64 = rows.iter().zip(&weights).map(|(x, w)| x * w).sum();
                out.push(v / norm * spec.sigma);
            }
            let mean = out.iter().sum::<f64>() / n as f64;
            for v in &mut out {
                *v -= mean;
            }
            out
        }
    };
    Ok(out)
}

/// trace + one noise draw; deterministic per (spec, seed).
pub fn add_noise(trace: &[f64], spec: &NoiseSpec, seed: u64) -> Result<Vec<f64>> {
    let noise = noise_draw(spec, trace.len(), seed)?;
    Ok(trace.iter().zip(&noise).map(|(s, n)| s + n).collect())
}

/// Lorentzian line: `amplitude` at `center_hz`, half width at half maximum
/// `width_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Peak {
    pub center_hz: f64,
    pub amplitude: f64,
    pub width_hz: f64,
}

impl Default for Peak {
    fn default() -> Self {
        Self { center_hz: 50_000.0, amplitude: 1.0, width_hz: 20.0 }
    }
}

/// Swept IF spectrum: main beat line, a symmetric sideband pair, one weak
/// line below the carrier, all over a flat floor. Sidebands and the weak
/// line reuse the main linewidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    pub freq_start: f64,
    pub freq_stop: f64,
    pub freq_step: f64,
    pub main: Peak,
    pub sideband_offset: f64,
    pub sideband_amplitude: f64,
    pub weak_line_freq: f64,
    pub weak_line_amplitude: f64,
    pub floor: f64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self {
            freq_start: 49_000.0,
            freq_stop: 51_000.0,
            freq_step: 5.0,
            main: Peak::default(),
            sideband_offset: 300.0,
            sideband_amplitude: 0.15,
            weak_line_freq: 49_100.0,
            weak_line_amplitude: 0.05,
            floor: 0.01,
        }
    }
}

impl SpectrumSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq_start < self.freq_stop) || !(self.freq_step > 0.0) {
            return Err(RydError::Config(format!(
                "spectrum grid needs freq_start < freq_stop and positive step, got {} .. {} step {}",
                self.freq_start, self.freq_stop, self.freq_step
            )));
        }
        let within = |f: f64| f >= self.freq_start && f <= self.freq_stop;
        for (label, f) in [
            ("main peak", self.main.center_hz),
            ("lower sideband", self.main.center_hz - self.sideband_offset),
            ("upper sideband", self.main.center_hz + self.sideband_offset),
            ("weak line", self.weak_line_freq),
        ] {
            if !within(f) {
                return Err(RydError::Config(format!(
                    "{label} at {f} Hz lies outside the sweep range {} .. {}",
                    self.freq_start, self.freq_stop
                )));
            }
        }
        if self.main.amplitude < 0.0
            || self.sideband_amplitude < 0.0
            || self.weak_line_amplitude < 0.0
            || self.floor < 0.0
            || !(self.main.width_hz > 0.0)
        {
            return Err(RydError::Config(
                "peak amplitudes and floor must be non-negative, width positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        ((self.freq_stop - self.freq_start) / self.freq_step + 1e-9) as usize + 1
    }

    pub fn axis(&self) -> Axis {
        Axis::frequency(self.freq_start, self.freq_step, "Hz")
    }

    /// Frequency of grid index i.
    pub fn freq_at(&self, i: usize) -> f64 {
        self.freq_start + i as f64 * self.freq_step
    }
}

fn lorentzian(f: f64, center: f64, amplitude: f64, width: f64) -> f64 {
    let d = f - center;
    amplitude * width * width / (d * d + width * width)
}

/// Noise-free spectrum plus snap warnings for any configured line center
/// that does not land on the grid.
pub fn clean_spectrum(spec: &SpectrumSpec) -> Result<(Vec<f64>, Vec<String>)> {
    spec.validate()?;
    let n = spec.n_points();
    let mut warnings = Vec::new();
    let mut snap = |label: &str, f: f64| -> f64 {
        let k = ((f - spec.freq_start) / spec.freq_step).round();
        let k = k.clamp(0.0, (n - 1) as f64);
        let snapped = spec.freq_start + k * spec.freq_step;
        if (snapped - f).abs() > 1e-9 * spec.freq_step.max(1.0) {
            warnings.push(format!(
                "{label} center {f} Hz is off-grid; snapped to {snapped} Hz"
            ));
        }
        snapped
    };
    let main_c = snap("main peak", spec.main.center_hz);
    let lower_c = snap("lower sideband", spec.main.center_hz - spec.sideband_offset);
    let upper_c = snap("upper sideband", spec.main.center_hz + spec.sideband_offset);
    let weak_c = snap("weak line", spec.weak_line_freq);

    let w = spec.main.width_hz;
    let values = (0..n)
        .map(|i| {
            let f = spec.freq_at(i);
            spec.floor
                + lorentzian(f, main_c, spec.main.amplitude, w)
                + lorentzian(f, lower_c, spec.sideband_amplitude, w)
                + lorentzian(f, upper_c, spec.sideband_amplitude, w)
                + lorentzian(f, weak_c, spec.weak_line_amplitude, w)
        })
        .collect();
    Ok((values, warnings))
}

/// Clean spectrum plus one noise draw; sigma = 0 recovers the clean trace.
pub fn synth_spectrum(
    spec: &SpectrumSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(Vec<f64>, Vec<String>)> {
    let (clean, warnings) = clean_spectrum(spec)?;
    let noisy = add_noise(&clean, noise, seed)?;
    Ok((noisy, warnings))
}

/// Noisy copies of one clean trace with train-input, train-label, and
/// test-input seed streams kept disjoint; pairs share an index only.
pub fn make_paired_dataset(
    clean_source: &[f64],
    axis: &Axis,
    noise: &NoiseSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetSplit<f64>> {
    if n_train == 0 || n_test == 0 {
        return Err(RydError::Config(format!(
            "need at least one train pair and one test trace, got {n_train} and {n_test}"
        )));
    }
    if clean_source.is_empty() {
        return Err(RydError::Dimension("clean source trace is empty".into()));
    }
    let stack = |tag: u64, count: usize| -> Result<TraceSet<f64>> {
        let mut data = Vec::with_capacity(count * clean_source.len());
        for i in 0..count {
            let trace_seed = seeds::derive_indexed(seed, tag, i as u64);
            data.extend(add_noise(clean_source, noise, trace_seed)?);
        }
        TraceSet::new(axis.clone(), clean_source.len(), data)
    };
    Ok(DatasetSplit {
        train_x: stack(seeds::stream::TRAIN_X, n_train)?,
        train_y: stack(seeds::stream::TRAIN_Y, n_train)?,
        test_x: stack(seeds::stream::TEST_X, n_test)?,
        provenance: Provenance {
            source: format!(
                "synthetic pairs: {n_train} train, {n_test} test, one shared clean trace"
            ),
            seed,
        },
    })
}
