//! Data pipeline: CSV loading, chronological splits, train-statistic
//! standardization, calendar indices, and sliding-window supervised samples.
//!
//! The canonical on-disk layout is a CSV with a header row whose first column
//! is `date` (ISO-like datetimes at a fixed frequency) and whose remaining
//! columns are one numeric variate each. Loaded series are immutable; every
//! downstream view (splits, window sets) is read-only and safe to consume
//! from multiple threads.
//!
//! Windowing convention: a sample's input `x` covers rows `[i, i+h)` and its
//! target `y` covers rows `[i+h, i+h+S)` — contiguous, non-overlapping, with
//! calendar indices taken at the last input row. Validation/test windows are
//! anchored by their target block: their inputs may reach back up to `h` rows
//! into the preceding split, so target counts match the benchmark convention.

use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Sampling interval of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "5min")]
    Min5,
    #[serde(rename = "10min")]
    Min10,
    #[serde(rename = "15min")]
    Min15,
    #[serde(rename = "hourly")]
    Hourly,
    #[serde(rename = "daily")]
    Daily,
}

impl Frequency {
    pub fn minutes(self) -> i64 {
        match self {
            Frequency::Min5 => 5,
            Frequency::Min10 => 10,
            Frequency::Min15 => 15,
            Frequency::Hourly => 60,
            Frequency::Daily => 1440,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Min5 => "5min",
            Frequency::Min10 => "10min",
            Frequency::Min15 => "15min",
            Frequency::Hourly => "hourly",
            Frequency::Daily => "daily",
        }
    }

    fn from_minutes(m: i64) -> Option<Self> {
        match m {
            5 => Some(Frequency::Min5),
            10 => Some(Frequency::Min10),
            15 => Some(Frequency::Min15),
            60 => Some(Frequency::Hourly),
            1440 => Some(Frequency::Daily),
            _ => None,
        }
    }
}

/// A loaded multivariate series: `values` is `[T_total, N]` row-major with
/// one row per time step, plus aligned timestamps.
#[derive(Debug, Clone)]
pub struct RawSeries<E: Element> {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Tensor<E>,
    pub variate_names: Vec<String>,
    pub frequency: Frequency,
}

impl<E: Element> RawSeries<E> {
    pub fn t_total(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_variates(&self) -> usize {
        self.variate_names.len()
    }
}

/// Chronological split lengths, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
}

impl SplitSpec {
    pub fn new(train_len: usize, val_len: usize, test_len: usize) -> Self {
        SplitSpec {
            train_len,
            val_len,
            test_len,
        }
    }

    pub fn total(&self) -> usize {
        self.train_len + self.val_len + self.test_len
    }

    pub fn validate(&self, t_total: usize) -> Result<()> {
        for (field, v) in [
            ("split.train_len", self.train_len),
            ("split.val_len", self.val_len),
            ("split.test_len", self.test_len),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.total() > t_total {
            return Err(Error::config(
                "split",
                format!(
                    "train+val+test = {} exceeds series length {t_total}",
                    self.total()
                ),
            ));
        }
        Ok(())
    }
}

/// A contiguous chronological slice of a series: `values` is `[len, N]`.
#[derive(Debug, Clone)]
pub struct SeriesSlice<E: Element> {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Tensor<E>,
}

impl<E: Element> SeriesSlice<E> {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_variates(&self) -> usize {
        self.values.shape()[1]
    }

    fn from_rows(raw: &RawSeries<E>, start: usize, len: usize) -> Result<Self> {
        let n = raw.n_variates();
        let data = raw.values.data()[start * n..(start + len) * n].to_vec();
        Ok(SeriesSlice {
            timestamps: raw.timestamps[start..start + len].to_vec(),
            values: Tensor::new(vec![len, n], data)?,
        })
    }
}

/// Per-variate affine transform fitted on the training split.
#[derive(Debug, Clone)]
pub struct Standardizer<E: Element> {
    pub mean: Tensor<E>,
    pub std: Tensor<E>,
    pub enabled: bool,
}

/// Floor applied to standard deviations so constant variates stay finite.
pub const STD_FLOOR: f64 = 1e-8;

impl<E: Element> Standardizer<E> {
    /// The identity transform.
    pub fn identity(n: usize) -> Self {
        Standardizer {
            mean: Tensor::zeros(vec![n]).expect("shape"),
            std: Tensor::full(vec![n], E::one()).expect("shape"),
            enabled: false,
        }
    }

    /// Applies `(v - mean) / std` column-wise to a slice.
    pub fn apply(&self, slice: &SeriesSlice<E>) -> Result<SeriesSlice<E>> {
        if !self.enabled {
            return Ok(slice.clone());
        }
        let n = slice.n_variates();
        if self.mean.len() != n {
            return Err(Error::shape(
                "Standardizer::apply",
                format!("[{}] statistics", self.mean.len()),
                format!("slice with {n} variates"),
            ));
        }
        let mean = self.mean.data();
        let std = self.std.data();
        let mut data = slice.values.data().to_vec();
        for row in data.chunks_mut(n) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
        Ok(SeriesSlice {
            timestamps: slice.timestamps.clone(),
            values: Tensor::new(vec![slice.len(), n], data)?,
        })
    }

    /// Inverts [`Standardizer::apply`] column-wise.
    pub fn invert(&self, slice: &SeriesSlice<E>) -> Result<SeriesSlice<E>> {
        if !self.enabled {
            return Ok(slice.clone());
        }
        let n = slice.n_variates();
        let mean = self.mean.data();
        let std = self.std.data();
        let mut data = slice.values.data().to_vec();
        for row in data.chunks_mut(n) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * std[c] + mean[c];
            }
        }
        Ok(SeriesSlice {
            timestamps: slice.timestamps.clone(),
            values: Tensor::new(vec![slice.len(), n], data)?,
        })
    }
}

/// One supervised sample: input `x` is `[N, h]`, target `y` is `[N, S]`,
/// with `y` starting exactly one step after `x` ends.
#[derive(Debug, Clone)]
pub struct WindowSample<E: Element> {
    pub x: Tensor<E>,
    pub y: Tensor<E>,
    /// Hour-in-day of the last input step, in `[0, 24)`.
    pub hid_index: usize,
    /// Day-in-week of the last input step, Monday = 0, in `[0, 7)`.
    pub diw_index: usize,
    /// Position of the last input step within the window set's slice.
    pub t_anchor: usize,
}

/// Indexed access to every sliding window of a slice; cheap to share across
/// threads (samples are materialized on demand).
#[derive(Debug, Clone)]
pub struct WindowSet<E: Element> {
    slice: SeriesSlice<E>,
    h: usize,
    s: usize,
}

impl<E: Element> WindowSet<E> {
    pub fn new(slice: SeriesSlice<E>, h: usize, s: usize) -> Result<Self> {
        if h == 0 || s == 0 {
            return Err(Error::config(
                "window",
                format!("input_len and output_len must be positive, got h={h}, S={s}"),
            ));
        }
        Ok(WindowSet { slice, h, s })
    }

    pub fn input_len(&self) -> usize {
        self.h
    }

    pub fn output_len(&self) -> usize {
        self.s
    }

    pub fn slice(&self) -> &SeriesSlice<E> {
        &self.slice
    }

    /// Number of windows: `len − h − S + 1`, or zero when the slice is too
    /// short (not an error).
    pub fn count(&self) -> usize {
        (self.slice.len() + 1).saturating_sub(self.h + self.s)
    }

    /// Materializes window `i` (input rows `[i, i+h)`, target rows
    /// `[i+h, i+h+S)`), transposing into the `[N, h]` / `[N, S]` layout.
    pub fn sample(&self, i: usize) -> WindowSample<E> {
        assert!(i < self.count(), "window index {i} out of range");
        let n = self.slice.n_variates();
        let (h, s) = (self.h, self.s);
        let vals = self.slice.values.data();

        let mut x = vec![E::zero(); n * h];
        for t in 0..h {
            let row = &vals[(i + t) * n..(i + t + 1) * n];
            for (variate, &v) in row.iter().enumerate() {
                x[variate * h + t] = v;
            }
        }
        let mut y = vec![E::zero(); n * s];
        for t in 0..s {
            let row = &vals[(i + h + t) * n..(i + h + t + 1) * n];
            for (variate, &v) in row.iter().enumerate() {
                y[variate * s + t] = v;
            }
        }
        let t_anchor = i + h - 1;
        let (hid_index, diw_index) = calendar_indices(self.slice.timestamps[t_anchor]);
        WindowSample {
            x: Tensor::new(vec![n, h], x).expect("shape"),
            y: Tensor::new(vec![n, s], y).expect("shape"),
            hid_index,
            diw_index,
            t_anchor,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample<E>> + '_ {
        (0..self.count()).map(|i| self.sample(i))
    }
}

/// Loads a CSV with a `date` column plus one numeric column per variate.
/// Frequency is inferred from the first two timestamps and validated across
/// the whole file. Row numbers in errors are 1-based physical lines.
pub fn load_csv<E: Element>(path: impl AsRef<Path>) -> Result<RawSeries<E>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let load_err = |row: usize, reason: String| Error::Load {
        path: display.clone(),
        row,
        reason,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| load_err(1, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| load_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || !headers[0].trim().eq_ignore_ascii_case("date") {
        return Err(load_err(
            1,
            format!(
                "first column must be named \"date\", got {:?}",
                headers.get(0).unwrap_or("")
            ),
        ));
    }
    let variate_names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = variate_names.len();
    if n == 0 {
        return Err(load_err(1, "no variate columns after \"date\"".to_string()));
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut data: Vec<E> = Vec::new();
    for (rec_index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(rec_index + 2, e.to_string()))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rec_index + 2);
        if record.len() != n + 1 {
            return Err(load_err(
                line,
                format!("expected {} fields, got {}", n + 1, record.len()),
            ));
        }
        let ts = parse_datetime(record[0].trim())
            .ok_or_else(|| load_err(line, format!("unparsable datetime {:?}", &record[0])))?;
        timestamps.push(ts);
        for c in 1..=n {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| {
                load_err(
                    line,
                    format!("non-numeric value {:?} in column {:?}", cell, headers[c].to_string()),
                )
            })?;
            if v.is_nan() {
                return Err(load_err(
                    line,
                    format!("missing value (NaN) in column {:?}", headers[c].to_string()),
                ));
            }
            data.push(E::of_f64(v));
        }
    }

    if timestamps.len() < 2 {
        return Err(load_err(
            timestamps.len() + 1,
            "need at least 2 rows to establish the sampling frequency".to_string(),
        ));
    }
    let delta = (timestamps[1] - timestamps[0]).num_minutes();
    let frequency = Frequency::from_minutes(delta).ok_or_else(|| {
        load_err(3, format!("unsupported sampling interval of {delta} minutes"))
    })?;
    for (i, pair) in timestamps.windows(2).enumerate() {
        let d = (pair[1] - pair[0]).num_minutes();
        if d != delta {
            return Err(load_err(
                i + 3,
                format!("irregular spacing: {d} minutes here vs {delta} at the start"),
            ));
        }
    }

    let t_total = timestamps.len();
    Ok(RawSeries {
        timestamps,
        values: Tensor::new(vec![t_total, n], data)?,
        variate_names,
        frequency,
    })
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    const DATETIME_FORMATS: [&str; 5] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y/%m/%d %H:%M:%S",
        "%Y/%m/%d %H:%M",
        "%Y-%m-%dT%H:%M:%S",
    ];
    for f in DATETIME_FORMATS {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, f) {
            return Some(ts);
        }
    }
    for f in ["%Y-%m-%d", "%Y/%m/%d"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, f) {
            return Some(d.and_hms_opt(0, 0, 0).expect("midnight is valid"));
        }
    }
    None
}

/// Splits a series into three disjoint, contiguous, chronological slices of
/// exactly the requested lengths.
pub fn chronological_split<E: Element>(
    raw: &RawSeries<E>,
    spec: &SplitSpec,
) -> Result<(SeriesSlice<E>, SeriesSlice<E>, SeriesSlice<E>)> {
    spec.validate(raw.t_total())?;
    let train = SeriesSlice::from_rows(raw, 0, spec.train_len)?;
    let val = SeriesSlice::from_rows(raw, spec.train_len, spec.val_len)?;
    let test = SeriesSlice::from_rows(raw, spec.train_len + spec.val_len, spec.test_len)?;
    Ok((train, val, test))
}

/// Fits per-variate mean and population standard deviation on the training
/// slice. With `enabled = false` the identity transform is returned.
pub fn fit_standardizer<E: Element>(train: &SeriesSlice<E>, enabled: bool) -> Result<Standardizer<E>> {
    let n = train.n_variates();
    if !enabled {
        return Ok(Standardizer::identity(n));
    }
    if train.is_empty() {
        return Err(Error::contract(
            "fit_standardizer",
            "training slice is empty",
        ));
    }
    let len = train.len();
    let vals = train.values.data();
    // Statistics in f64 regardless of element type for stable accumulation.
    let mut mean = vec![0.0f64; n];
    for row in vals.chunks(n) {
        for (c, &v) in row.iter().enumerate() {
            mean[c] += v.as_f64();
        }
    }
    for m in &mut mean {
        *m /= len as f64;
    }
    let mut var = vec![0.0f64; n];
    for row in vals.chunks(n) {
        for (c, &v) in row.iter().enumerate() {
            let d = v.as_f64() - mean[c];
            var[c] += d * d;
        }
    }
    let std: Vec<E> = var
        .iter()
        .map(|&v| E::of_f64((v / len as f64).sqrt().max(STD_FLOOR)))
        .collect();
    Ok(Standardizer {
        mean: Tensor::new(vec![n], mean.into_iter().map(E::of_f64).collect())?,
        std: Tensor::new(vec![n], std)?,
        enabled: true,
    })
}

/// Calendar indices of a timestamp: `(hour_in_day, day_in_week)` with hours
/// floored to the containing hour and Monday = 0.
pub fn calendar_indices(ts: NaiveDateTime) -> (usize, usize) {
    (
        ts.hour() as usize,
        ts.weekday().num_days_from_monday() as usize,
    )
}

/// Iterates sliding windows over a slice with the given stride (1 = every
/// window). A slice shorter than `h + S` yields an empty sequence.
pub fn window_iter<E: Element>(
    slice: &SeriesSlice<E>,
    h: usize,
    s: usize,
    stride: usize,
) -> Result<impl Iterator<Item = WindowSample<E>> + '_> {
    if stride == 0 {
        return Err(Error::contract("window_iter", "stride must be positive"));
    }
    let set = WindowSet::new(slice.clone(), h, s)?;
    let count = set.count();
    Ok((0..count)
        .step_by(stride)
        .map(move |i| set.sample(i)))
}

/// Forecast by repeating the last 24 input values of each variate:
/// `output[n][i] = x[n][h − 24 + (i mod 24)]`.
pub fn naive_forecast<E: Element>(x: &Tensor<E>, s: usize) -> Result<Tensor<E>> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "naive_forecast",
            "[N, h]".to_string(),
            crate::tensor::shape_string(x.shape()),
        ));
    }
    let (n, h) = (x.shape()[0], x.shape()[1]);
    if h < 24 {
        return Err(Error::config(
            "model.input_len",
            format!("the periodic-repeat baseline needs h >= 24, got {h}"),
        ));
    }
    if s == 0 {
        return Err(Error::config("model.output_len", "must be positive"));
    }
    let xd = x.data();
    let mut out = Vec::with_capacity(n * s);
    for variate in 0..n {
        let row = &xd[variate * h..(variate + 1) * h];
        for i in 0..s {
            out.push(row[h - 24 + (i % 24)]);
        }
    }
    Tensor::new(vec![n, s], out)
}

/// Everything needed to train and evaluate on one dataset at one horizon.
#[derive(Debug, Clone)]
pub struct PreparedData<E: Element> {
    pub train: WindowSet<E>,
    pub val: WindowSet<E>,
    pub test: WindowSet<E>,
    pub standardizer: Standardizer<E>,
    pub n_variates: usize,
}

/// Splits, standardizes (train statistics only), and windows a series.
///
/// Validation and test windows are anchored by their target block: their
/// inputs reach back up to `h` rows into the preceding split, so a split of
/// length `L` contributes exactly `L − S + 1` evaluation windows.
pub fn prepare_windows<E: Element>(
    raw: &RawSeries<E>,
    spec: &SplitSpec,
    standardize: bool,
    h: usize,
    s: usize,
) -> Result<PreparedData<E>> {
    spec.validate(raw.t_total())?;
    if spec.train_len < h {
        return Err(Error::config(
            "split.train_len",
            format!(
                "must be at least input_len {h} so later splits can reach back, got {}",
                spec.train_len
            ),
        ));
    }
    let (train_slice, _, _) = chronological_split(raw, spec)?;
    let standardizer = fit_standardizer(&train_slice, standardize)?;

    // Extended slices: val/test include the h rows preceding them.
    let val_start = spec.train_len - h;
    let val_ext = SeriesSlice::from_rows(raw, val_start, h + spec.val_len)?;
    let test_start = spec.train_len + spec.val_len - h;
    let test_ext = SeriesSlice::from_rows(raw, test_start, h + spec.test_len)?;

    let train = standardizer.apply(&train_slice)?;
    let val = standardizer.apply(&val_ext)?;
    let test = standardizer.apply(&test_ext)?;

    Ok(PreparedData {
        train: WindowSet::new(train, h, s)?,
        val: WindowSet::new(val, h, s)?,
        test: WindowSet::new(test, h, s)?,
        standardizer,
        n_variates: raw.n_variates(),
    })
}

// ---------------------------------------------------------------------------
// Dataset presets: split sizes, frequency, and per-dataset hyperparameters.
// ---------------------------------------------------------------------------

/// Bundled configuration reproducing a benchmark dataset's protocol: split
/// sizes, sampling frequency, normalization switches, calendar-embedding
/// availability, and the published per-dataset hyperparameters.
#[derive(Debug, Clone)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub n_nodes: usize,
    pub frequency: Frequency,
    pub split: SplitSpec,
    /// Global train-statistic standardization.
    pub standardize: bool,
    /// Per-window reversible normalization inside the model.
    pub instance_norm: bool,
    pub use_hid: bool,
    pub use_diw: bool,
    /// Forecast lengths evaluated for this dataset.
    pub horizons: &'static [usize],
    // Training hyperparameters.
    pub learning_rate: f64,
    pub layers: usize,
    pub embed_dim: usize,
    pub scalers: usize,
    pub groups: usize,
    pub kernel_lengths: &'static [usize],
    pub factor_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

const LONG_HORIZONS: &[usize] = &[96, 192, 336, 720];
const SHORT_HORIZONS: &[usize] = &[12, 24, 48, 96];
const DEFAULT_KERNELS: &[usize] = &[3, 5, 7];

macro_rules! preset {
    ($name:literal, $n:expr, $freq:expr, ($tr:expr, $va:expr, $te:expr),
     std=$std:expr, inorm=$inorm:expr, hid=$hid:expr, diw=$diw:expr, horizons=$hor:expr,
     lr=$lr:expr, layers=$layers:expr, d=$d:expr, z=$z:expr, c=$c:expr, batch=$batch:expr) => {
        DatasetPreset {
            name: $name,
            n_nodes: $n,
            frequency: $freq,
            split: SplitSpec {
                train_len: $tr,
                val_len: $va,
                test_len: $te,
            },
            standardize: $std,
            instance_norm: $inorm,
            use_hid: $hid,
            use_diw: $diw,
            horizons: $hor,
            learning_rate: $lr,
            layers: $layers,
            embed_dim: $d,
            scalers: $z,
            groups: 4,
            kernel_lengths: DEFAULT_KERNELS,
            factor_dim: $c,
            batch_size: $batch,
            epochs: 10,
        }
    };
}

/// All bundled presets. Daily data carries no hour-in-day signal; the PEMS
/// family is used without global standardization, without instance
/// normalization, and without calendar embeddings.
pub const PRESETS: &[DatasetPreset] = &[
    preset!("etth1", 7, Frequency::Hourly, (8545, 2881, 2881),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=2, d=128, z=32, c=10, batch=32),
    preset!("etth2", 7, Frequency::Hourly, (8545, 2881, 2881),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=1, d=512, z=32, c=10, batch=32),
    preset!("ettm1", 7, Frequency::Min15, (34465, 11521, 11521),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=1, d=512, z=32, c=10, batch=32),
    preset!("ettm2", 7, Frequency::Min15, (34465, 11521, 11521),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=1, d=512, z=32, c=10, batch=32),
    preset!("electricity", 321, Frequency::Hourly, (18317, 2633, 5261),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=5e-4, layers=8, d=512, z=8, c=10, batch=32),
    preset!("exchange", 8, Frequency::Daily, (5120, 665, 1422),
        std=true, inorm=true, hid=false, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=1, d=128, z=8, c=10, batch=32),
    preset!("traffic", 862, Frequency::Hourly, (12185, 1757, 3590),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-3, layers=8, d=512, z=8, c=1000, batch=16),
    preset!("weather", 21, Frequency::Min10, (36792, 5271, 10540),
        std=true, inorm=true, hid=true, diw=true, horizons=LONG_HORIZONS,
        lr=1e-4, layers=6, d=512, z=32, c=10, batch=32),
    preset!("pems03", 358, Frequency::Min5, (15629, 5147, 5147),
        std=false, inorm=false, hid=false, diw=false, horizons=SHORT_HORIZONS,
        lr=1e-3, layers=6, d=512, z=8, c=10, batch=32),
    preset!("pems04", 307, Frequency::Min5, (10100, 3303, 3304),
        std=false, inorm=false, hid=false, diw=false, horizons=SHORT_HORIZONS,
        lr=5e-4, layers=9, d=512, z=8, c=10, batch=32),
    preset!("pems07", 883, Frequency::Min5, (16839, 5550, 5550),
        std=false, inorm=false, hid=false, diw=false, horizons=SHORT_HORIZONS,
        lr=1e-3, layers=6, d=512, z=8, c=10, batch=32),
    preset!("pems08", 170, Frequency::Min5, (10618, 3476, 3477),
        std=false, inorm=false, hid=false, diw=false, horizons=SHORT_HORIZONS,
        lr=1e-3, layers=6, d=512, z=8, c=10, batch=32),
];

/// Looks up a preset by (case-insensitive) name.
pub fn preset(name: &str) -> Option<&'static DatasetPreset> {
    PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
}

/// Names of all bundled presets, for diagnostics.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn hourly_csv(rows: usize) -> String {
        let mut s = String::from("date,v1,v2\n");
        for i in 0..rows {
            let day = 1 + i / 24;
            let hour = i % 24;
            s.push_str(&format!(
                "2016-07-{day:02} {hour:02}:00:00,{},{}\n",
                i as f64,
                (i * 2) as f64
            ));
        }
        s
    }

    #[test]
    fn load_csv_small_file_shapes() {
        let f = write_csv(&hourly_csv(3));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        assert_eq!(raw.n_variates(), 2);
        assert_eq!(raw.t_total(), 3);
        assert_eq!(raw.frequency, Frequency::Hourly);
        assert_eq!(raw.variate_names, vec!["v1", "v2"]);
        assert_eq!(raw.values.at2(1, 1), 2.0);
    }

    #[test]
    fn load_csv_blank_cell_names_row() {
        let f = write_csv("date,v1\n2016-07-01 00:00:00,1.0\n2016-07-01 01:00:00,\n");
        let err = load_csv::<f64>(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "row number missing in {msg:?}");
    }

    #[test]
    fn load_csv_rejects_irregular_spacing() {
        let f = write_csv(
            "date,v1\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n2016-07-01 03:00:00,3\n",
        );
        let err = load_csv::<f64>(f.path()).unwrap_err();
        assert!(err.to_string().contains("irregular spacing"));
    }

    #[test]
    fn load_csv_rejects_wrong_first_header() {
        let f = write_csv("time,v1\n2016-07-01 00:00:00,1\n2016-07-01 01:00:00,2\n");
        assert!(load_csv::<f64>(f.path()).is_err());
    }

    #[test]
    fn load_csv_daily_dates() {
        let f = write_csv("date,v1\n1990-01-01,1\n1990-01-02,2\n1990-01-03,3\n");
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        assert_eq!(raw.frequency, Frequency::Daily);
    }

    #[test]
    fn chronological_split_lengths_and_order() {
        let f = write_csv(&hourly_csv(10));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        let (train, val, test) =
            chronological_split(&raw, &SplitSpec::new(6, 2, 2)).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));
        assert_eq!(train.values.at2(0, 0), 0.0);
        assert_eq!(val.values.at2(0, 0), 6.0);
        assert_eq!(test.values.at2(1, 0), 9.0);
    }

    #[test]
    fn chronological_split_overflow_is_config_error() {
        let f = write_csv(&hourly_csv(10));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        assert!(chronological_split(&raw, &SplitSpec::new(6, 3, 2)).is_err());
    }

    #[test]
    fn standardizer_matches_hand_arithmetic() {
        // Column [1, 2, 3]: mean 2, population std sqrt(2/3).
        let slice = SeriesSlice {
            timestamps: (0..3)
                .map(|i| {
                    NaiveDate::from_ymd_opt(2016, 7, 1)
                        .unwrap()
                        .and_hms_opt(i, 0, 0)
                        .unwrap()
                })
                .collect(),
            values: Tensor::new(vec![3, 1], vec![1.0f64, 2.0, 3.0]).unwrap(),
        };
        let st = fit_standardizer(&slice, true).unwrap();
        assert!((st.mean.data()[0] - 2.0).abs() < 1e-12);
        assert!((st.std.data()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);

        let applied = st.apply(&slice).unwrap();
        let restored = st.invert(&applied).unwrap();
        for (a, b) in restored.values.data().iter().zip(slice.values.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn standardizer_disabled_is_identity() {
        let slice = SeriesSlice {
            timestamps: vec![NaiveDate::from_ymd_opt(2016, 7, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap()],
            values: Tensor::new(vec![1, 2], vec![5.0f64, -3.0]).unwrap(),
        };
        let st = fit_standardizer(&slice, false).unwrap();
        assert!(!st.enabled);
        let applied = st.apply(&slice).unwrap();
        assert_eq!(applied.values.data(), slice.values.data());
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let slice = SeriesSlice {
            timestamps: (0..3)
                .map(|i| {
                    NaiveDate::from_ymd_opt(2016, 7, 1)
                        .unwrap()
                        .and_hms_opt(i, 0, 0)
                        .unwrap()
                })
                .collect(),
            values: Tensor::new(vec![3, 1], vec![5.0f64; 3]).unwrap(),
        };
        let st = fit_standardizer(&slice, true).unwrap();
        assert_eq!(st.std.data()[0], STD_FLOOR);
        let applied = st.apply(&slice).unwrap();
        assert!(applied.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn calendar_indices_monday_convention() {
        // 2016-07-04 was a Monday.
        let ts = NaiveDate::from_ymd_opt(2016, 7, 4)
            .unwrap()
            .and_hms_opt(13, 0, 0)
            .unwrap();
        assert_eq!(calendar_indices(ts), (13, 0));
        let midnight = NaiveDate::from_ymd_opt(2016, 7, 6)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        assert_eq!(calendar_indices(midnight).0, 0);
        // Sub-hourly timestamps floor to the hour.
        let sub = NaiveDate::from_ymd_opt(2016, 7, 4)
            .unwrap()
            .and_hms_opt(13, 50, 0)
            .unwrap();
        assert_eq!(calendar_indices(sub).0, 13);
    }

    #[test]
    fn window_counts_match_formula() {
        let f = write_csv(&hourly_csv(200));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        let slice = SeriesSlice::from_rows(&raw, 0, 200).unwrap();
        let set = WindowSet::new(slice.clone(), 96, 96).unwrap();
        assert_eq!(set.count(), 9); // 200 - 192 + 1

        let short = SeriesSlice::from_rows(&raw, 0, 191).unwrap();
        let set = WindowSet::new(short, 96, 96).unwrap();
        assert_eq!(set.count(), 0);
        assert_eq!(window_iter(&slice, 96, 96, 1).unwrap().count(), 9);
    }

    #[test]
    fn windows_are_leak_free_and_anchored() {
        let f = write_csv(&hourly_csv(30));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        let slice = SeriesSlice::from_rows(&raw, 0, 30).unwrap();
        let set = WindowSet::new(slice, 5, 3).unwrap();
        for (i, sample) in set.iter().enumerate() {
            // Values were set to the row index, so boundaries are visible.
            let last_x = sample.x.at2(0, 4);
            let first_y = sample.y.at2(0, 0);
            assert_eq!(first_y, last_x + 1.0, "y must start right after x");
            assert_eq!(sample.t_anchor, i + 4);
        }
        // First sample starts at slice row 0.
        assert_eq!(set.sample(0).x.at2(0, 0), 0.0);
    }

    #[test]
    fn naive_forecast_repeats_last_day() {
        let day: Vec<f64> = (1..=24).map(|v| v as f64).collect();
        let mut x = vec![0.0f64; 48];
        x[24..].copy_from_slice(&day);
        let x = Tensor::new(vec![1, 48], x).unwrap();
        let out = naive_forecast(&x, 48).unwrap();
        let expect: Vec<f64> = day.iter().chain(day.iter()).copied().collect();
        assert_eq!(out.data(), expect.as_slice());

        let short = naive_forecast(&x, 12).unwrap();
        assert_eq!(short.data(), &day[..12]);
    }

    #[test]
    fn naive_forecast_requires_full_day() {
        let x = Tensor::<f64>::zeros(vec![1, 23]).unwrap();
        assert!(naive_forecast(&x, 4).is_err());
    }

    #[test]
    fn naive_forecast_fixed_point_on_periodic_window() {
        // A purely 24-periodic window reproduces its own continuation.
        let pattern: Vec<f64> = (0..24).map(|v| (v as f64).sin()).collect();
        let mut x = Vec::new();
        for _ in 0..4 {
            x.extend_from_slice(&pattern);
        }
        let x = Tensor::new(vec![1, 96], x).unwrap();
        let out = naive_forecast(&x, 96).unwrap();
        for i in 0..96 {
            assert_eq!(out.at2(0, i), pattern[i % 24]);
        }
    }

    #[test]
    fn prepare_windows_reach_back_counts() {
        let f = write_csv(&hourly_csv(100));
        let raw: RawSeries<f64> = load_csv(f.path()).unwrap();
        let spec = SplitSpec::new(60, 20, 20);
        let prep = prepare_windows(&raw, &spec, true, 12, 4).unwrap();
        // Train: 60 - 12 - 4 + 1; val/test: len - 4 + 1 (inputs reach back).
        assert_eq!(prep.train.count(), 45);
        assert_eq!(prep.val.count(), 17);
        assert_eq!(prep.test.count(), 17);
        // First val target row is the first val row (index 60 => value 60),
        // in standardized space.
        let sample = prep.val.sample(0);
        let st = &prep.standardizer;
        let raw_y = sample.y.at2(0, 0) * st.std.data()[0] + st.mean.data()[0];
        assert!((raw_y - 60.0).abs() < 1e-9);
    }

    #[test]
    fn presets_cover_all_datasets_with_table_splits() {
        assert_eq!(PRESETS.len(), 12);
        let e = preset("etth1").unwrap();
        assert_eq!(
            (e.split.train_len, e.split.val_len, e.split.test_len),
            (8545, 2881, 2881)
        );
        let m = preset("ETTm1").unwrap();
        assert_eq!(
            (m.split.train_len, m.split.val_len, m.split.test_len),
            (34465, 11521, 11521)
        );
        let p = preset("pems03").unwrap();
        assert_eq!(
            (p.split.train_len, p.split.val_len, p.split.test_len),
            (15629, 5147, 5147)
        );
        assert!(!p.standardize && !p.instance_norm);
        let el = preset("electricity").unwrap();
        assert_eq!(
            (el.split.train_len, el.split.val_len, el.split.test_len),
            (18317, 2633, 5261)
        );
        let p4 = preset("pems04").unwrap();
        assert_eq!(
            (p4.split.train_len, p4.split.val_len, p4.split.test_len),
            (10100, 3303, 3304)
        );
        assert!(preset("nope").is_none());
        // Traffic's published batch size and factor width differ from the rest.
        let t = preset("traffic").unwrap();
        assert_eq!((t.batch_size, t.factor_dim), (16, 1000));
    }

    #[test]
    fn proptest_window_count_formula() {
        use proptest::prelude::*;
        proptest!(|(len in 1usize..400, h in 1usize..64, s in 1usize..64)| {
            let timestamps: Vec<NaiveDateTime> = (0..len)
                .map(|i| {
                    NaiveDate::from_ymd_opt(2016, 7, 1).unwrap()
                        .and_hms_opt(0, 0, 0).unwrap()
                        + chrono::Duration::hours(i as i64)
                })
                .collect();
            let slice = SeriesSlice {
                timestamps,
                values: Tensor::new(vec![len, 1], vec![0.0f64; len]).unwrap(),
            };
            let set = WindowSet::new(slice, h, s).unwrap();
            let expect = if len >= h + s { len - h - s + 1 } else { 0 };
            prop_assert_eq!(set.count(), expect);
        });
    }
}
