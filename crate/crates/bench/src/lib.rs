//! Shared fixtures for the criterion benchmarks: deterministic synthetic
//! series and ready-made model configurations at realistic sizes.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nodecast_core::{Frequency, ModelConfig, RawSeries, Tensor, Variant};

/// Hourly series of `rows` steps over `n_nodes` variates: per-node daily
/// periodicity plus a mild trend plus seeded noise.
pub fn synthetic_series(n_nodes: usize, rows: usize, seed: u64) -> RawSeries<f64> {
    let base = NaiveDate::from_ymd_opt(2021, 1, 4)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timestamps = (0..rows).map(|i| base + Duration::hours(i as i64)).collect();
    let mut data = Vec::with_capacity(rows * n_nodes);
    for row in 0..rows {
        let phase = (row % 24) as f64 / 24.0 * std::f64::consts::TAU;
        for node in 0..n_nodes {
            let val = (phase + 0.5 * node as f64).sin()
                + 0.001 * row as f64
                + 0.05 * rng.gen_range(-1.0..1.0);
            data.push(val);
        }
    }
    RawSeries {
        timestamps,
        values: Tensor::new(vec![rows, n_nodes], data).unwrap(),
        variate_names: (0..n_nodes).map(|i| format!("v{i}")).collect(),
        frequency: Frequency::Hourly,
    }
}

/// A mid-sized configuration comparable to the hourly benchmark datasets.
pub fn mid_config(n_nodes: usize, input_len: usize, output_len: usize) -> ModelConfig {
    ModelConfig {
        n_nodes,
        input_len,
        output_len,
        embed_dim: 64,
        layers: 2,
        scalers: 8,
        groups: 4,
        kernel_lengths: vec![3, 5, 7],
        factor_dim: 10,
        variant: Variant::Gfc,
        use_variate: true,
        use_hid: true,
        use_diw: true,
        instance_norm: true,
        global_standardize: true,
        use_adaptive: true,
        seed: 7,
    }
}
