//! Monte Carlo study of two aggregation behaviors: the collapse of class
//! means under weighted-mean graph aggregation, and the distribution shift
//! produced by the scaled circular convolution that the grouped layers use.
//!
//! Both simulators are sequential and fully seeded, so a fixed seed yields a
//! bit-identical summary and histogram file. The convolution simulator calls
//! the same raw circular-convolution kernel as the model, so the two can
//! never drift apart on indexing conventions.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv1d_circular_raw;

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

/// Scenario settings for the convolution-shift simulator.
///
/// Features are drawn i.i.d. from `N(mu, sigma²)` and channel `j` is scaled
/// by `scalers[j]`; weights are drawn i.i.d. from
/// `N(weight_mu, weight_sigma²)` afresh for every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub mu: f64,
    pub sigma: f64,
    /// Circular kernel length (k_g).
    pub kernel_len: usize,
    /// Channels per group (z/G).
    pub channels: usize,
    /// Positions per channel the convolution wraps over (D).
    pub spatial: usize,
    /// Per-channel feature scaling, one entry per channel.
    pub scalers: Vec<f64>,
    pub weight_mu: f64,
    pub weight_sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Histogram bin count.
    pub bins: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            mu: 1.0,
            sigma: 1.0,
            kernel_len: 2,
            channels: 2,
            spatial: 32,
            scalers: vec![-0.25, 0.25],
            weight_mu: 0.0,
            weight_sigma: 1.0,
            n_samples: 100_000,
            seed: 0,
            bins: 60,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config("mc.sigma", "must be a positive finite real"));
        }
        if !(self.weight_sigma.is_finite() && self.weight_sigma > 0.0) {
            return Err(Error::config(
                "mc.weight_sigma",
                "must be a positive finite real",
            ));
        }
        if !self.mu.is_finite() || !self.weight_mu.is_finite() {
            return Err(Error::config("mc.mu", "means must be finite"));
        }
        if self.n_samples < 1000 {
            return Err(Error::config(
                "mc.n_samples",
                format!("need at least 1000 samples, got {}", self.n_samples),
            ));
        }
        if self.channels == 0 {
            return Err(Error::config("mc.channels", "must be positive"));
        }
        if self.spatial == 0 {
            return Err(Error::config("mc.spatial", "must be positive"));
        }
        if self.kernel_len == 0 || self.kernel_len > self.spatial {
            return Err(Error::config(
                "mc.kernel_len",
                format!(
                    "must be in [1, spatial={}], got {}",
                    self.spatial, self.kernel_len
                ),
            ));
        }
        if self.scalers.len() != self.channels {
            return Err(Error::config(
                "mc.scalers",
                format!(
                    "need one scaler per channel ({}), got {}",
                    self.channels,
                    self.scalers.len()
                ),
            ));
        }
        if self.scalers.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("mc.scalers", "must be finite"));
        }
        if self.bins == 0 {
            return Err(Error::config("mc.bins", "must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Summaries.
// ---------------------------------------------------------------------------

/// Equal-width bin counts spanning `[lo, hi]`; the top edge is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins the values over their own range. A degenerate range (all values
    /// equal) is widened to unit width so every value lands in bin 0.
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        assert!(!values.is_empty(), "histogram needs at least one value");
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Moments and histogram of one simulated output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_samples: usize,
    pub empirical_mean: f64,
    /// Sample standard deviation (n − 1 in the denominator).
    pub empirical_std: f64,
    /// Exactly `empirical_std / sqrt(n_samples)`.
    pub standard_error: f64,
    pub histogram: Histogram,
}

impl McSummary {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let n = values.len();
        assert!(n >= 2, "summary needs at least two values");
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        McSummary {
            n_samples: n,
            empirical_mean: mean,
            empirical_std: std,
            standard_error: std / (n as f64).sqrt(),
            histogram: Histogram::from_values(values, bins),
        }
    }
}

// ---------------------------------------------------------------------------
// Simulators.
// ---------------------------------------------------------------------------

fn normal(mean: f64, std: f64, field: &'static str) -> Result<Normal<f64>> {
    Normal::new(mean, std)
        .map_err(|e| Error::config(field, format!("invalid normal distribution: {e}")))
}

/// Measures how far apart two node classes remain after weighted-mean graph
/// aggregation.
///
/// Each draw samples `n_nodes_per_class` features i.i.d. from
/// `N(mu_i, sigma_i²)` and `N(mu_j, sigma_j²)` and aggregates every class
/// with the uniform weighted mean (each neighbor weighted `1/n`). Returns the
/// absolute difference of the two aggregated-output means over all draws and
/// its Monte Carlo standard error. Classes that differ only in spread
/// collapse onto each other; classes with distinct means stay separated by
/// the mean gap.
pub fn simulate_collapse(
    mu_i: f64,
    mu_j: f64,
    sigma_i: f64,
    sigma_j: f64,
    n_nodes_per_class: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(sigma_i.is_finite() && sigma_i > 0.0 && sigma_j.is_finite() && sigma_j > 0.0) {
        return Err(Error::config(
            "mc.sigma",
            "class spreads must be positive finite reals",
        ));
    }
    if n_nodes_per_class == 0 {
        return Err(Error::config("mc.n_nodes_per_class", "must be positive"));
    }
    if n_samples < 1000 {
        return Err(Error::config(
            "mc.n_samples",
            format!("need at least 1000 samples, got {n_samples}"),
        ));
    }
    let dist_i = normal(mu_i, sigma_i, "mc.class_i")?;
    let dist_j = normal(mu_j, sigma_j, "mc.class_j")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = n_nodes_per_class as f64;

    let mut agg_i = Vec::with_capacity(n_samples);
    let mut agg_j = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut sum_i = 0.0;
        let mut sum_j = 0.0;
        for _ in 0..n_nodes_per_class {
            sum_i += rng.sample(dist_i);
            sum_j += rng.sample(dist_j);
        }
        agg_i.push(sum_i / m);
        agg_j.push(sum_j / m);
    }

    let n = n_samples as f64;
    let mean_i = agg_i.iter().sum::<f64>() / n;
    let mean_j = agg_j.iter().sum::<f64>() / n;
    let var_i = agg_i.iter().map(|v| (v - mean_i) * (v - mean_i)).sum::<f64>() / (n - 1.0);
    let var_j = agg_j.iter().map(|v| (v - mean_j) * (v - mean_j)).sum::<f64>() / (n - 1.0);
    let se = (var_i / n + var_j / n).sqrt();
    Ok(((mean_i - mean_j).abs(), se))
}

/// Simulates the rectified circular convolution's output distribution.
///
/// Every draw samples fresh features (`N(mu, sigma²)` scaled per channel by
/// `scalers[j]`) and fresh weights (`N(weight_mu, weight_sigma²)`), runs the
/// same raw circular convolution the model layers use (no bias), applies the
/// rectifier, and records channel 0 at position 0.
pub fn simulate_gfc_shift(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let dist_x = normal(cfg.mu, cfg.sigma, "mc.features")?;
    let dist_w = normal(cfg.weight_mu, cfg.weight_sigma, "mc.weights")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (c, d, k) = (cfg.channels, cfg.spatial, cfg.kernel_len);
    let bias = vec![0.0f64; c];
    let mut input = vec![0.0f64; c * d];
    let mut kernel = vec![0.0f64; k * c * c];
    let mut values = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        for ch in 0..c {
            for p in 0..d {
                input[ch * d + p] = cfg.scalers[ch] * rng.sample(dist_x);
            }
        }
        for w in kernel.iter_mut() {
            *w = rng.sample(dist_w);
        }
        let out = conv1d_circular_raw(&input, c, d, &kernel, k, c, &bias);
        values.push(out[0].max(0.0));
    }
    Ok(McSummary::from_values(&values, cfg.bins))
}

/// Writes the histogram as `bin_left,bin_right,count` CSV with the summary
/// moments appended as comment lines (`#`). Identical summaries produce
/// byte-identical files.
pub fn emit_histogram(summary: &McSummary, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("bin_left,bin_right,count\n");
    let h = &summary.histogram;
    let width = h.bin_width();
    for (i, &count) in h.counts.iter().enumerate() {
        let left = h.lo + width * i as f64;
        let right = if i + 1 == h.counts.len() {
            h.hi
        } else {
            h.lo + width * (i + 1) as f64
        };
        let _ = writeln!(text, "{left},{right},{count}");
    }
    let _ = writeln!(text, "# n_samples={}", summary.n_samples);
    let _ = writeln!(text, "# empirical_mean={}", summary.empirical_mean);
    let _ = writeln!(text, "# empirical_std={}", summary.empirical_std);
    let _ = writeln!(text, "# standard_error={}", summary.standard_error);
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
