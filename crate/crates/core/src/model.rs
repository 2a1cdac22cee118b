//! The assembled forecasting model: embedding → scaler expansion → stacked
//! graph layers → residual channel contraction → node-regression head; plus
//! deterministic initialization, closed-form parameter counting, and binary
//! checkpointing.
//!
//! The forward pipeline for one `[N, h]` window:
//!
//! 1. optional per-window normalization (inverted after the head),
//! 2. `H⁰ = embed(x)` — `[N, D]`,
//! 3. `Ĥ⁰ = expand_scalers(H⁰)` — `[z, N, D]`,
//! 4. `L` graph-layer applications (each with its own adjacency),
//! 5. `H^L = H⁰ + Σ_c w_concat[c] · Ĥ^{last}[c]` — residual contraction,
//! 6. `Y = H^L · w_reg + b_reg` — `[N, S]`.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{embed, instance_normalize, register_scalers, EmbeddingIds};
use crate::error::{Error, Result};
use crate::gfc::{
    gcn_variant_forward, gfc_forward, plain_gcn_forward, GfcLayerIds, GroupPartition,
    PlainGcnLayerIds,
};
use crate::graph::adjacency;
use crate::tensor::tape::{ParamStore, Tape, Var};
use crate::tensor::{Dtype, Element, Tensor};

/// Which graph layer the model stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Grouped feature convolution with a bypass first group.
    Gfc,
    /// Grouped feature convolution, no bypass (group 1 aggregated too).
    GcnGfc,
    /// Per-channel `relu(A·H·W)` with no grouping.
    PlainGcn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gfc => "gfc",
            Variant::GcnGfc => "gcn_gfc",
            Variant::PlainGcn => "plain_gcn",
        }
    }
}

fn default_true() -> bool {
    true
}

/// Full hyperparameter record for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of variates / graph nodes (N).
    pub n_nodes: usize,
    /// Input window length (h).
    pub input_len: usize,
    /// Forecast length (S).
    pub output_len: usize,
    /// Node embedding width (D).
    pub embed_dim: usize,
    /// Stacked graph layers (L).
    pub layers: usize,
    /// Scaler channels (z).
    pub scalers: usize,
    /// Channel groups (G).
    pub groups: usize,
    /// Kernel length per group 2..G (empty when G = 1).
    pub kernel_lengths: Vec<usize>,
    /// Adjacency factor width (c).
    pub factor_dim: usize,
    pub variant: Variant,
    /// Learn per-variate identity embeddings.
    #[serde(default = "default_true")]
    pub use_variate: bool,
    /// Learn hour-in-day embeddings.
    #[serde(default = "default_true")]
    pub use_hid: bool,
    /// Learn day-in-week embeddings.
    #[serde(default = "default_true")]
    pub use_diw: bool,
    /// Per-window reversible normalization.
    #[serde(default = "default_true")]
    pub instance_norm: bool,
    /// Whether the data pipeline standardizes with train statistics
    /// (recorded here so a checkpoint is self-describing).
    #[serde(default = "default_true")]
    pub global_standardize: bool,
    /// Learn the adjacency from factor tables; when false every layer mixes
    /// through one fixed adjacency attached to the model.
    #[serde(default = "default_true")]
    pub use_adaptive: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("model.n_nodes", self.n_nodes),
            ("model.input_len", self.input_len),
            ("model.output_len", self.output_len),
            ("model.embed_dim", self.embed_dim),
            ("model.scalers", self.scalers),
            ("model.groups", self.groups),
            ("model.factor_dim", self.factor_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.groups > self.scalers {
            return Err(Error::config(
                "model.groups",
                format!(
                    "groups ({}) cannot exceed scaler channels ({})",
                    self.groups, self.scalers
                ),
            ));
        }
        if self.kernel_lengths.len() != self.groups - 1 {
            return Err(Error::config(
                "model.kernel_lengths",
                format!(
                    "need exactly G-1 = {} kernel lengths, got {}",
                    self.groups - 1,
                    self.kernel_lengths.len()
                ),
            ));
        }
        for &k in &self.kernel_lengths {
            if k == 0 || k > self.embed_dim {
                return Err(Error::config(
                    "model.kernel_lengths",
                    format!("kernel length {k} must be in [1, D={}]", self.embed_dim),
                ));
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<GroupPartition> {
        GroupPartition::new(self.scalers, self.groups)
    }
}

/// Parameter handles for one stacked layer.
#[derive(Debug, Clone)]
pub enum LayerParams {
    Grouped(GfcLayerIds),
    Plain(PlainGcnLayerIds),
}

/// All parameter handles of one model, in registration order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embedding: EmbeddingIds,
    pub scalers: crate::tensor::tape::ParamId,
    pub layers: Vec<LayerParams>,
    pub w_concat: crate::tensor::tape::ParamId,
    pub w_reg: crate::tensor::tape::ParamId,
    pub b_reg: crate::tensor::tape::ParamId,
}

/// A configured model: hyperparameters, the parameter store, and (for the
/// fixed-graph ablation) an optional static adjacency.
#[derive(Debug, Clone)]
pub struct Model<E: Element> {
    pub cfg: ModelConfig,
    pub store: ParamStore<E>,
    pub params: ModelParams,
    pub static_adjacency: Option<Tensor<E>>,
}

impl<E: Element> Model<E> {
    /// Builds a model with freshly initialized parameters; deterministic
    /// given `cfg.seed` (two calls with the same config are bitwise equal).
    pub fn init(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let partition = cfg.partition()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();

        let embedding = EmbeddingIds::register(
            &mut store,
            &mut rng,
            cfg.n_nodes,
            cfg.input_len,
            cfg.embed_dim,
            cfg.use_variate,
            cfg.use_hid,
            cfg.use_diw,
        )?;
        let scalers = register_scalers(&mut store, cfg.scalers)?;

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let layer = match cfg.variant {
                Variant::Gfc | Variant::GcnGfc => LayerParams::Grouped(GfcLayerIds::register(
                    &mut store,
                    &mut rng,
                    l,
                    cfg.n_nodes,
                    cfg.factor_dim,
                    cfg.embed_dim,
                    &partition,
                    &cfg.kernel_lengths,
                    cfg.use_adaptive,
                )?),
                Variant::PlainGcn => LayerParams::Plain(PlainGcnLayerIds::register(
                    &mut store,
                    &mut rng,
                    l,
                    cfg.n_nodes,
                    cfg.factor_dim,
                    cfg.embed_dim,
                    cfg.use_adaptive,
                )?),
            };
            layers.push(layer);
        }

        let w_concat = store.register(
            "w_concat",
            Tensor::full(vec![cfg.scalers], E::of_f64(1.0 / cfg.scalers as f64))?,
        )?;
        let bound = 1.0 / (cfg.embed_dim as f64).sqrt();
        let w_reg = store.register(
            "w_reg",
            Tensor::uniform(
                vec![cfg.embed_dim, cfg.output_len],
                -bound,
                bound,
                &mut rng,
            )?,
        )?;
        let b_reg = store.register("b_reg", Tensor::zeros(vec![cfg.output_len])?)?;

        Ok(Model {
            cfg,
            store,
            params: ModelParams {
                embedding,
                scalers,
                layers,
                w_concat,
                w_reg,
                b_reg,
            },
            static_adjacency: None,
        })
    }

    /// Attaches a fixed row-normalized adjacency (required when
    /// `use_adaptive` is false).
    pub fn with_static_adjacency(mut self, a: Tensor<E>) -> Result<Self> {
        if a.rank() != 2 || a.shape() != [self.cfg.n_nodes, self.cfg.n_nodes] {
            return Err(Error::shape(
                "with_static_adjacency",
                format!("[{0}, {0}]", self.cfg.n_nodes),
                crate::tensor::shape_string(a.shape()),
            ));
        }
        self.static_adjacency = Some(a);
        Ok(self)
    }

    /// Builds the adjacency for layer `l` on the tape: the layer's learned
    /// factors when adaptive, otherwise the attached static matrix.
    fn layer_adjacency(&self, tape: &mut Tape<E>, l: usize) -> Result<Var> {
        let factors = match &self.params.layers[l] {
            LayerParams::Grouped(ids) => ids.factors,
            LayerParams::Plain(ids) => ids.factors,
        };
        match (self.cfg.use_adaptive, factors, &self.static_adjacency) {
            (true, Some(f), _) => adjacency(tape, &self.store, &f),
            (false, _, Some(a)) => Ok(tape.constant(a.clone())),
            (false, _, None) => Err(Error::config(
                "model.use_adaptive",
                "a static adjacency file is required when the learned adjacency is disabled",
            )),
            (true, None, _) => Err(Error::contract(
                "forward",
                "layer has no adjacency factors but the config says adaptive",
            )),
        }
    }

    /// Runs the full pipeline on the tape, returning the `[N, S]` forecast.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<E>,
        x: &Tensor<E>,
        hid: usize,
        diw: usize,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        if x.rank() != 2 || x.shape() != [cfg.n_nodes, cfg.input_len] {
            return Err(Error::shape(
                "forward/input",
                format!("[{}, {}]", cfg.n_nodes, cfg.input_len),
                crate::tensor::shape_string(x.shape()),
            ));
        }
        let partition = cfg.partition()?;
        let (x_norm, stats) = instance_normalize(x, cfg.instance_norm)?;
        let xv = tape.constant(x_norm);
        let h0 = embed(tape, &self.store, xv, hid, diw, &self.params.embedding)?;
        let s = tape.param(&self.store, self.params.scalers);
        let mut h = tape.expand_scale(h0, s)?;

        for l in 0..cfg.layers {
            let a = self.layer_adjacency(tape, l)?;
            h = match (&self.params.layers[l], cfg.variant) {
                (LayerParams::Grouped(ids), Variant::Gfc) => {
                    gfc_forward(tape, &self.store, h, a, ids, &partition)?
                }
                (LayerParams::Grouped(ids), Variant::GcnGfc) => {
                    gcn_variant_forward(tape, &self.store, h, a, ids, &partition)?
                }
                (LayerParams::Plain(ids), _) => {
                    plain_gcn_forward(tape, &self.store, h, a, ids.w)?
                }
                (LayerParams::Grouped(_), Variant::PlainGcn) => {
                    return Err(Error::contract(
                        "forward",
                        "layer parameters do not match the configured variant",
                    ))
                }
            };
        }

        let w_concat = tape.param(&self.store, self.params.w_concat);
        let contracted = tape.contract_scale(h, w_concat)?;
        let h_final = tape.add(h0, contracted)?;

        let w_reg = tape.param(&self.store, self.params.w_reg);
        let b_reg = tape.param(&self.store, self.params.b_reg);
        let y = tape.matmul(h_final, w_reg)?;
        let y = tape.add_row(y, b_reg)?;
        if cfg.instance_norm {
            tape.rows_scale_shift(y, &stats.std, &stats.mean)
        } else {
            Ok(y)
        }
    }

    /// Convenience forward returning a plain tensor (no gradients kept).
    pub fn forward(&self, x: &Tensor<E>, hid: usize, diw: usize) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let y = self.forward_on_tape(&mut tape, x, hid, diw)?;
        Ok(tape.value(y).clone())
    }

    /// Materializes layer `l`'s mixing matrix as a plain `[N, N]` tensor
    /// (the learned adjacency when adaptive, the attached static one
    /// otherwise).
    pub fn adjacency_matrix(&self, layer: usize) -> Result<Tensor<E>> {
        if layer >= self.cfg.layers {
            return Err(Error::config(
                "layer",
                format!("model has {} layers, layer index {layer} is out of range", self.cfg.layers),
            ));
        }
        let mut tape = Tape::new();
        let a = self.layer_adjacency(&mut tape, layer)?;
        Ok(tape.value(a).clone())
    }

    /// Total number of trainable scalars (equals the registry size).
    pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
        cfg.validate()?;
        let partition = cfg.partition()?;
        let mut count = EmbeddingIds::scalar_count(
            cfg.n_nodes,
            cfg.input_len,
            cfg.embed_dim,
            cfg.use_variate,
            cfg.use_hid,
            cfg.use_diw,
        );
        count += cfg.scalers; // scaler vector
        let per_layer = match cfg.variant {
            Variant::Gfc | Variant::GcnGfc => GfcLayerIds::scalar_count(
                cfg.n_nodes,
                cfg.factor_dim,
                cfg.embed_dim,
                &partition,
                &cfg.kernel_lengths,
                cfg.use_adaptive,
            ),
            Variant::PlainGcn => PlainGcnLayerIds::scalar_count(
                cfg.n_nodes,
                cfg.factor_dim,
                cfg.embed_dim,
                cfg.use_adaptive,
            ),
        };
        count += cfg.layers * per_layer;
        count += cfg.scalers; // w_concat
        count += cfg.embed_dim * cfg.output_len + cfg.output_len; // head
        Ok(count)
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"NCCKPT1\n";
/// Name under which a static adjacency rides along in the tensor table.
const STATIC_ADJ_KEY: &str = "__static_adjacency";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data blob, in elements.
    offset: usize,
    /// Element count.
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    dtype: Dtype,
    tensors: Vec<TensorEntry>,
}

/// Reads just the config and element type of a checkpoint, without loading
/// tensor data — used to dispatch on precision before a full load.
pub fn peek_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, Dtype)> {
    let header = read_header(&mut std::fs::File::open(path.as_ref())?)?;
    Ok((header.config, header.dtype))
}

fn read_header(file: &mut std::fs::File) -> Result<CheckpointHeader> {
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("truncated magic: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(
            "not a model checkpoint (bad magic bytes)".to_string(),
        ));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated header length: {e}")))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))
}

impl<E: Element> Model<E> {
    /// Writes config plus every parameter tensor (and any static adjacency)
    /// as little-endian binary. A save/load round trip is bit-exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, t: &Tensor<E>, blob: &mut Vec<u8>| {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            });
            for &v in t.data() {
                v.write_le(blob);
            }
            offset += t.len();
        };
        for (_, p) in self.store.iter() {
            push(p.name().to_string(), p.value(), &mut blob);
        }
        if let Some(a) = &self.static_adjacency {
            push(STATIC_ADJ_KEY.to_string(), a, &mut blob);
        }
        let header = CheckpointHeader {
            config: self.cfg.clone(),
            dtype: E::DTYPE,
            tensors,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        file.write_all(&blob)?;
        file.flush()?;
        Ok(())
    }

    /// Reconstructs a model from a checkpoint written by [`Model::save`].
    /// The element type must match the stored dtype.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::fs::File::open(path.as_ref())?;
        let header = read_header(&mut file)?;
        if header.dtype != E::DTYPE {
            return Err(Error::Checkpoint(format!(
                "stored dtype is {:?} but {:?} was requested",
                header.dtype,
                E::DTYPE
            )));
        }
        let mut blob = Vec::new();
        file.read_to_end(&mut blob)?;

        let mut model = Model::<E>::init(header.config)?;
        let mut seen = 0usize;
        for entry in &header.tensors {
            let start = entry.offset * E::BYTE_WIDTH;
            let end = start + entry.len * E::BYTE_WIDTH;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} extends past the end of the file",
                    entry.name
                )));
            }
            let mut data = Vec::with_capacity(entry.len);
            for i in 0..entry.len {
                data.push(E::read_le(&blob[start + i * E::BYTE_WIDTH..]));
            }
            let tensor = Tensor::new(entry.shape.clone(), data)?;
            if entry.name == STATIC_ADJ_KEY {
                model.static_adjacency = Some(tensor);
                continue;
            }
            let id = model.store.id_by_name(&entry.name).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "checkpoint tensor {:?} has no matching parameter (config mismatch)",
                    entry.name
                ))
            })?;
            model.store.set_value(id, tensor)?;
            seen += 1;
        }
        if seen != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} parameter tensors but the config declares {}",
                model.store.len()
            )));
        }
        Ok(model)
    }
}
