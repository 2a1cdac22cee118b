//! The run-configuration file: a TOML document with `[data]`, `[model]`, and
//! `[train]` sections. Every field is optional; a dataset preset (named in
//! the file or on the command line) supplies the baseline values and explicit
//! fields override it. Unknown keys are rejected with the key's name.

use std::path::Path;

use serde::Deserialize;

use nodecast_core::data::{preset, preset_names, DatasetPreset, SplitSpec};
use nodecast_core::{Error, ModelConfig, Result, TrainConfig, Variant};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub preset: Option<String>,
    pub train_len: Option<usize>,
    pub val_len: Option<usize>,
    pub test_len: Option<usize>,
    pub standardize: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_nodes: Option<usize>,
    pub input_len: Option<usize>,
    pub output_len: Option<usize>,
    pub embed_dim: Option<usize>,
    pub layers: Option<usize>,
    pub scalers: Option<usize>,
    pub groups: Option<usize>,
    pub kernel_lengths: Option<Vec<usize>>,
    pub factor_dim: Option<usize>,
    pub variant: Option<String>,
    pub use_variate: Option<bool>,
    pub use_hid: Option<bool>,
    pub use_diw: Option<bool>,
    pub instance_norm: Option<bool>,
    pub use_adaptive: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub shuffle_seed: Option<u64>,
}

/// Everything a run needs, after preset resolution and overrides.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub split: SplitSpec,
    pub standardize: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Forecast lengths to run: explicit output_len if given, else the
    /// preset's list, else the default output length.
    pub horizons: Vec<usize>,
}

pub fn parse_variant(name: &str) -> Result<Variant> {
    match name {
        "gfc" => Ok(Variant::Gfc),
        "gcn_gfc" | "gcn-gfc" => Ok(Variant::GcnGfc),
        "plain_gcn" | "plain-gcn" | "plain" => Ok(Variant::PlainGcn),
        other => Err(Error::config(
            "model.variant",
            format!("unknown variant '{other}'; expected gfc, gcn_gfc, or plain_gcn"),
        )),
    }
}

pub fn load_config_file(path: &Path) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        Error::config(
            "config",
            format!("{} is not a valid run configuration: {e}", path.display()),
        )
    })
}

pub fn lookup_preset(name: &str) -> Result<&'static DatasetPreset> {
    preset(name).ok_or_else(|| {
        Error::config(
            "data.preset",
            format!(
                "unknown preset '{name}'; available: {}",
                preset_names().join(", ")
            ),
        )
    })
}

/// Merges the file with an optional preset (the command-line preset wins over
/// the one named in the file; explicit file fields win over the preset).
pub fn resolve(file: &RunConfigFile, preset_flag: Option<&str>) -> Result<ResolvedRun> {
    let preset = match preset_flag.or(file.data.preset.as_deref()) {
        Some(name) => Some(lookup_preset(name)?),
        None => None,
    };

    let split = match preset {
        Some(p) => SplitSpec {
            train_len: file.data.train_len.unwrap_or(p.split.train_len),
            val_len: file.data.val_len.unwrap_or(p.split.val_len),
            test_len: file.data.test_len.unwrap_or(p.split.test_len),
        },
        None => SplitSpec {
            train_len: require(file.data.train_len, "data.train_len")?,
            val_len: require(file.data.val_len, "data.val_len")?,
            test_len: require(file.data.test_len, "data.test_len")?,
        },
    };
    let standardize = file
        .data
        .standardize
        .unwrap_or_else(|| preset.map_or(true, |p| p.standardize));

    let m = &file.model;
    let groups = m.groups.unwrap_or_else(|| preset.map_or(2, |p| p.groups));
    let default_kernels = || -> Vec<usize> {
        match preset {
            Some(p) if p.kernel_lengths.len() == groups.saturating_sub(1) => {
                p.kernel_lengths.to_vec()
            }
            // One kernel per non-bypass group, odd lengths 3, 5, 7, ...
            _ => (0..groups.saturating_sub(1)).map(|i| 3 + 2 * i).collect(),
        }
    };
    let output_len = m
        .output_len
        .unwrap_or_else(|| preset.map_or(96, |p| p.horizons[0]));
    let model = ModelConfig {
        n_nodes: match m.n_nodes.or_else(|| preset.map(|p| p.n_nodes)) {
            Some(n) => n,
            None => return Err(Error::config("model.n_nodes", "required without a preset")),
        },
        input_len: m.input_len.unwrap_or(96),
        output_len,
        embed_dim: m.embed_dim.unwrap_or_else(|| preset.map_or(64, |p| p.embed_dim)),
        layers: m.layers.unwrap_or_else(|| preset.map_or(2, |p| p.layers)),
        scalers: m.scalers.unwrap_or_else(|| preset.map_or(8, |p| p.scalers)),
        groups,
        kernel_lengths: m.kernel_lengths.clone().unwrap_or_else(default_kernels),
        factor_dim: m.factor_dim.unwrap_or_else(|| preset.map_or(10, |p| p.factor_dim)),
        variant: match &m.variant {
            Some(v) => parse_variant(v)?,
            None => Variant::Gfc,
        },
        use_variate: m.use_variate.unwrap_or(true),
        use_hid: m.use_hid.unwrap_or_else(|| preset.map_or(true, |p| p.use_hid)),
        use_diw: m.use_diw.unwrap_or_else(|| preset.map_or(true, |p| p.use_diw)),
        instance_norm: m
            .instance_norm
            .unwrap_or_else(|| preset.map_or(true, |p| p.instance_norm)),
        global_standardize: standardize,
        use_adaptive: m.use_adaptive.unwrap_or(true),
        seed: m.seed.unwrap_or(42),
    };
    model.validate()?;

    let t = &file.train;
    let train = TrainConfig {
        epochs: t.epochs.unwrap_or_else(|| preset.map_or(10, |p| p.epochs)),
        batch_size: t
            .batch_size
            .unwrap_or_else(|| preset.map_or(32, |p| p.batch_size)),
        learning_rate: t
            .learning_rate
            .unwrap_or_else(|| preset.map_or(1e-3, |p| p.learning_rate)),
        shuffle_seed: t.shuffle_seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    train.validate()?;

    let horizons = match m.output_len {
        Some(s) => vec![s],
        None => preset.map_or_else(|| vec![output_len], |p| p.horizons.to_vec()),
    };

    Ok(ResolvedRun {
        split,
        standardize,
        model,
        train,
        horizons,
    })
}

fn require(v: Option<usize>, field: &'static str) -> Result<usize> {
    v.ok_or_else(|| Error::config(field, "required without a preset"))
}
