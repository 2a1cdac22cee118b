//! Multivariate time-series forecasting as graph node regression.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] — dense tensors, raw numeric kernels, the reverse-mode tape,
//!   and the Adam optimizer.
//! * [`gradcheck`] — finite-difference verification of analytic gradients.
//! * [`data`] — CSV loading, splits, standardization, windowing, presets.
//! * [`model`] — the full forecasting model and its checkpoints.
//! * [`train`] — the optimizer loop, metrics, reports, and ablations.
//!
//! Commonly used types are re-exported at the crate root.

pub mod data;
pub mod embed;
pub mod error;
pub mod gfc;
pub mod gradcheck;
pub mod graph;
pub mod mc;
pub mod model;
pub mod tensor;
pub mod train;

pub use data::{
    calendar_indices, chronological_split, fit_standardizer, load_csv, naive_forecast, preset,
    prepare_windows, window_iter, DatasetPreset, Frequency, PreparedData, RawSeries, SeriesSlice,
    SplitSpec, Standardizer, WindowSample, WindowSet,
};
pub use error::{Error, Result};
pub use mc::{emit_histogram, simulate_collapse, simulate_gfc_shift, Histogram, McConfig, McSummary};
pub use model::{Model, ModelConfig, Variant};
pub use tensor::adam::{adam_step, AdamConfig};
pub use tensor::tape::{GradBuffer, ParamId, ParamStore, Parameter, Tape, Var};
pub use tensor::{Dtype, Element, Tensor};
pub use train::{
    ablation_run, apply_switches, config_fingerprint, evaluate_model, evaluate_naive, mae, mse,
    plot_data_csv, train, AblationReport, AblationRow, AblationSwitch, EarlyMetric, EpochRecord,
    ForecastReport, HorizonMetrics, TrainConfig, TrainOutcome,
};
