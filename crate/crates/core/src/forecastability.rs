//! Spectral predictability (SP) and its pure-noise benchmark.
//!
//! SP is one minus the normalized Shannon entropy of the periodogram of the
//! linearly detrended series, taken over the positive frequencies
//! `k = 1..=n/2`:
//!
//! ```text
//! p_k = P_k / sum(P),   SP = 1 - H(p) / ln(n/2)
//! ```
//!
//! A flat spectrum (white noise) scores near 0, a single tone near 1. Note
//! this differs from Goerg's Omega, which normalizes by the uniform-spectrum
//! entropy in bits with a different frequency grid. A series is forecastable
//! when its SP exceeds the mean SP of matched-length, matched-sparsity
//! Gaussian noise.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::blackbox::linear_fit;
use crate::data::ProcessedSeries;
use crate::error::{Error, Result};

/// Shortest series SP is defined for.
pub const MIN_SP_LENGTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPredictability {
    pub sp: f64,
    /// Set when the detrended series carries no power (perfectly linear input);
    /// SP is then defined as 1.
    pub degenerate: bool,
}

/// Linear least-squares residuals.
pub fn detrend(values: &[f64]) -> Vec<f64> {
    let (a, b) = linear_fit(values);
    values.iter().enumerate().map(|(i, v)| v - (a + b * i as f64)).collect()
}

/// Power `|X_k|^2` at `k = 1..=n/2`.
pub fn periodogram(values: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(values.len());
    periodogram_with(values, fft.as_ref())
}

fn periodogram_with(values: &[f64], fft: &dyn Fft<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[1..=values.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Normalized entropy of a nonnegative spectrum, in [0, 1].
pub fn normalized_spectral_entropy(power: &[f64]) -> f64 {
    let total: f64 = power.iter().sum();
    let h: f64 = power
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    (h / (power.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn spectral_predictability(values: &[f64]) -> Result<SpectralPredictability> {
    let fft = FftPlanner::new().plan_fft_forward(values.len().max(1));
    sp_with(values, fft.as_ref())
}

fn sp_with(values: &[f64], fft: &dyn Fft<f64>) -> Result<SpectralPredictability> {
    if values.len() < MIN_SP_LENGTH {
        return Err(Error::InvalidParameter(format!(
            "spectral predictability needs at least {MIN_SP_LENGTH} points, got {}",
            values.len()
        )));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::NoSignal(String::new()));
    }
    let residual = detrend(values);
    let residual_energy: f64 = residual.iter().map(|r| r * r).sum();
    let scale: f64 = values.iter().map(|v| v * v).sum();
    if residual_energy <= 1e-20 * scale {
        return Ok(SpectralPredictability { sp: 1.0, degenerate: true });
    }
    let power = periodogram_with(&residual, fft);
    if power.iter().sum::<f64>() <= 0.0 {
        return Ok(SpectralPredictability { sp: 1.0, degenerate: true });
    }
    Ok(SpectralPredictability {
        sp: 1.0 - normalized_spectral_entropy(&power),
        degenerate: false,
    })
}

/// SP distribution of matched pure noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBenchmark {
    pub length: usize,
    pub replicates: usize,
    pub sparsity: f64,
    pub mean: f64,
    pub std: f64,
    pub p95: f64,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One noise replicate: standard Gaussian with `round(sparsity * length)`
/// positions zeroed. Replicate `r` draws from ChaCha stream `r` of `seed`.
pub fn noise_replicate(length: usize, sparsity: f64, seed: u64, replicate: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut values: Vec<f64> = (0..length).map(|_| StandardNormal.sample(&mut rng)).collect();
    let zeros = (sparsity * length as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, length, zeros.min(length)) {
        values[i] = 0.0;
    }
    values
}

pub fn noise_benchmark(length: usize, replicates: usize, sparsity: f64, seed: u64) -> Result<NoiseBenchmark> {
    if length < MIN_SP_LENGTH {
        return Err(Error::InvalidParameter(format!(
            "benchmark length {length} < {MIN_SP_LENGTH}"
        )));
    }
    if replicates < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 replicates, got {replicates}")));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidParameter(format!("sparsity {sparsity} outside [0, 1]")));
    }
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(length);
    let scores = (0..replicates as u64)
        .into_par_iter()
        .map(|r| sp_with(&noise_replicate(length, sparsity, seed, r), fft.as_ref()).map(|s| s.sp))
        .collect::<Result<Vec<f64>>>()
        .map_err(|e| match e {
            Error::NoSignal(_) => Error::NoSignal(format!("noise benchmark (length {length}, sparsity {sparsity})")),
            other => other,
        })?;
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = scores;
    sorted.sort_by(f64::total_cmp);
    Ok(NoiseBenchmark {
        length,
        replicates,
        sparsity,
        mean,
        std,
        p95: quantile_sorted(&sorted, 0.95),
    })
}

/// Forecastable iff SP strictly exceeds the noise mean.
pub fn classify(sp: f64, benchmark: &NoiseBenchmark) -> bool {
    sp > benchmark.mean
}

/// SP over sliding windows: `(start, sp)` pairs. All-zero windows carry no
/// spectrum and are left out.
pub fn rolling_sp(values: &[f64], window: usize, step: usize) -> Result<Vec<(usize, f64)>> {
    if window < MIN_SP_LENGTH {
        return Err(Error::InvalidParameter(format!("window {window} < {MIN_SP_LENGTH}")));
    }
    if window > values.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window} exceeds series length {}",
            values.len()
        )));
    }
    if step == 0 {
        return Err(Error::InvalidParameter("step must be >= 1".into()));
    }
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut trace = Vec::new();
    let mut start = 0;
    while start + window <= values.len() {
        match sp_with(&values[start..start + window], fft.as_ref()) {
            Ok(s) => trace.push((start, s.sp)),
            Err(Error::NoSignal(_)) => {}
            Err(e) => return Err(e),
        }
        start += step;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastabilityParams {
    pub replicates: usize,
    pub seed: u64,
    /// Match the benchmark's zero fraction to the series'.
    pub match_sparsity: bool,
    /// Rolling window; `None` means four horizons.
    pub rolling_window: Option<usize>,
    /// Rolling step; `None` means one horizon.
    pub rolling_step: Option<usize>,
}

impl Default for ForecastabilityParams {
    fn default() -> Self {
        Self {
            replicates: 100,
            seed: 7,
            match_sparsity: true,
            rolling_window: None,
            rolling_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastabilityReport {
    pub item_id: String,
    pub length: usize,
    pub sparsity: f64,
    pub sp: f64,
    pub degenerate: bool,
    pub noise_mean: f64,
    pub noise_p95: f64,
    pub forecastable: bool,
    pub rolling: Vec<(usize, f64)>,
}

fn benchmark_key(series: &ProcessedSeries, params: &ForecastabilityParams) -> (usize, usize) {
    let zeros = if params.match_sparsity {
        series.values.iter().filter(|v| **v == 0.0).count()
    } else {
        0
    };
    (series.effective_length(), zeros)
}

/// Scores every series against its own length/sparsity benchmark. Benchmarks
/// are shared between series with identical keys. Output follows input order.
pub fn analyze(series: &[ProcessedSeries], horizon: usize, params: &ForecastabilityParams) -> Result<Vec<ForecastabilityReport>> {
    let keys: std::collections::BTreeSet<(usize, usize)> = series.iter().map(|s| benchmark_key(s, params)).collect();
    let benchmarks: BTreeMap<(usize, usize), NoiseBenchmark> = keys
        .into_iter()
        .map(|(len, zeros)| noise_benchmark(len, params.replicates, zeros as f64 / len as f64, params.seed).map(|b| ((len, zeros), b)))
        .collect::<Result<_>>()?;
    let window = params.rolling_window.unwrap_or(4 * horizon);
    let step = params.rolling_step.unwrap_or(horizon).max(1);
    series
        .par_iter()
        .map(|s| {
            let bench = &benchmarks[&benchmark_key(s, params)];
            let sp = spectral_predictability(&s.values).map_err(|e| match e {
                Error::NoSignal(_) => Error::NoSignal(s.item_id.clone()),
                other => other,
            })?;
            let rolling = if window >= MIN_SP_LENGTH && window <= s.values.len() {
                rolling_sp(&s.values, window, step)?
            } else {
                Vec::new()
            };
            Ok(ForecastabilityReport {
                item_id: s.item_id.clone(),
                length: s.effective_length(),
                sparsity: s.sparsity(),
                sp: sp.sp,
                degenerate: sp.degenerate,
                noise_mean: bench.mean,
                noise_p95: bench.p95,
                forecastable: classify(sp.sp, bench),
                rolling,
            })
        })
        .collect()
}

/// One row of the per-level forecastable-share table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: String,
    pub n_series: usize,
    pub n_forecastable: usize,
    pub percent_forecastable: f64,
}

pub fn summarize(level: &str, reports: &[ForecastabilityReport]) -> LevelSummary {
    let n = reports.len();
    let k = reports.iter().filter(|r| r.forecastable).count();
    LevelSummary {
        level: level.to_string(),
        n_series: n,
        n_forecastable: k,
        percent_forecastable: if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (1..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn periodogram_matches_naive_dft() {
        for n in [8usize, 9, 64, 101] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64).sin() + 0.1 * i as f64).collect();
            let fast = periodogram(&x);
            let slow = naive_dft_power(&x);
            assert_eq!(fast.len(), n / 2);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9 * b.max(1.0));
            }
        }
    }

    #[test]
    fn sinusoid_is_predictable() {
        let x: Vec<f64> = (0..256).map(|i| (2.0 * PI * i as f64 / 8.0).sin()).collect();
        let s = spectral_predictability(&x).unwrap();
        assert!(s.sp >= 0.9, "{}", s.sp);
        assert!(!s.degenerate);
    }

    #[test]
    fn ramp_is_degenerate() {
        let x: Vec<f64> = (0..100).map(|i| 3.0 + 0.5 * i as f64).collect();
        let s = spectral_predictability(&x).unwrap();
        assert_eq!(s, SpectralPredictability { sp: 1.0, degenerate: true });
    }

    #[test]
    fn errors() {
        assert!(spectral_predictability(&[1.0; 7]).is_err());
        assert!(matches!(spectral_predictability(&[0.0; 16]), Err(Error::NoSignal(_))));
        assert!(matches!(noise_benchmark(64, 20, 1.0, 1), Err(Error::NoSignal(_))));
        assert!(noise_benchmark(7, 20, 0.0, 1).is_err());
        assert!(noise_benchmark(64, 9, 0.0, 1).is_err());
        assert!(rolling_sp(&[1.0; 20], 21, 1).is_err());
        assert!(rolling_sp(&[1.0; 20], 7, 1).is_err());
    }

    #[test]
    fn classify_is_strict() {
        let b = NoiseBenchmark {
            length: 100,
            replicates: 100,
            sparsity: 0.0,
            mean: 0.15,
            std: 0.01,
            p95: 0.17,
        };
        assert!(classify(0.9, &b));
        assert!(!classify(0.10, &b));
        assert!(!classify(0.15, &b));
    }

    #[test]
    fn sparsity_zeroes_requested_share() {
        let v = noise_replicate(200, 0.25, 3, 4);
        assert_eq!(v.iter().filter(|x| **x == 0.0).count(), 50);
        assert_eq!(v, noise_replicate(200, 0.25, 3, 4));
        assert_ne!(v, noise_replicate(200, 0.25, 3, 5));
    }

    #[test]
    fn rolling_full_window_matches_single() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.9).sin() + (i % 5) as f64).collect();
        let trace = rolling_sp(&x, 64, 10).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0], (0, spectral_predictability(&x).unwrap().sp));
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert!((quantile_sorted(&s, 0.95) - 3.8).abs() < 1e-12);
    }
}
