//! The grouped feature-convolution graph layer.
//!
//! An `[z, N, D]` stack of scaler channels is partitioned into `G`
//! contiguous groups along the channel axis. Group 1 bypasses the layer's
//! mixing; groups 2..G are convolved circularly along the feature axis
//! (treating their channels as convolution channels, each node independent),
//! passed through ReLU, and aggregated over the graph by the layer's
//! adjacency. The concatenation is fused by a two-layer feature-axis MLP
//! shared across channels and nodes.
//!
//! Two reduced variants exist for ablations: one that also aggregates group
//! 1 (no bypass), and a plain per-channel `relu(A·H·W)` graph convolution
//! with no grouping at all.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::AdjacencyFactors;
use crate::tensor::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Contiguous partition of `z` channels into `G` groups: every group gets
/// `z/G` channels, with the remainder `z mod G` all given to group 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    pub sizes: Vec<usize>,
}

impl GroupPartition {
    pub fn new(z: usize, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::config("model.groups", "must be at least 1"));
        }
        if z == 0 {
            return Err(Error::config("model.scalers", "must be at least 1"));
        }
        if groups > z {
            return Err(Error::config(
                "model.groups",
                format!("groups ({groups}) cannot exceed scaler channels ({z})"),
            ));
        }
        let base = z / groups;
        let mut sizes = vec![base; groups];
        sizes[0] += z % groups;
        Ok(GroupPartition { sizes })
    }

    pub fn groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Start offset of each group along the channel axis.
    pub fn starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for &s in &self.sizes {
            starts.push(acc);
            acc += s;
        }
        starts
    }
}

/// Splits an `[z, N, D]` tape value into per-group `[C_g, N, D]` views.
/// Concatenating the results along the channel axis reproduces the input.
pub fn partition_groups<E: Element>(
    tape: &mut Tape<E>,
    h: Var,
    partition: &GroupPartition,
) -> Result<Vec<Var>> {
    let z = {
        let t = tape.value(h);
        if t.rank() != 3 {
            return Err(Error::shape(
                "partition_groups",
                "[z, n, d]".to_string(),
                crate::tensor::shape_string(t.shape()),
            ));
        }
        t.shape()[0]
    };
    if partition.total() != z {
        return Err(Error::config(
            "model.groups",
            format!(
                "partition covers {} channels but input has {z}",
                partition.total()
            ),
        ));
    }
    let starts = partition.starts();
    let mut parts = Vec::with_capacity(partition.groups());
    for (g, &start) in starts.iter().enumerate() {
        parts.push(tape.slice0(h, start, partition.sizes[g])?);
    }
    Ok(parts)
}

/// Parameter handles for one group's convolution.
#[derive(Debug, Clone, Copy)]
pub struct GroupConvIds {
    /// `[k_g, C_g, C_g]` circular kernel.
    pub kernel: ParamId,
    /// `[C_g]` bias.
    pub bias: ParamId,
}

/// Parameter handles for one grouped layer (full or no-bypass variant).
/// `factors` is `None` when the layer mixes through a fixed, file-provided
/// adjacency instead of a learned one.
#[derive(Debug, Clone)]
pub struct GfcLayerIds {
    pub factors: Option<AdjacencyFactors>,
    /// One entry per group 2..G, in group order (empty when G = 1).
    pub convs: Vec<GroupConvIds>,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

impl GfcLayerIds {
    /// Registers one layer's parameters under `layer{index}.` names.
    /// Kernels are uniform in `[−1/√(k_g·C_g), 1/√(k_g·C_g)]` with zero
    /// biases; MLP weights are uniform in `[−1/√D, 1/√D]` with zero biases.
    /// With `learned_adjacency = false` no factor tables are created.
    #[allow(clippy::too_many_arguments)]
    pub fn register<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        layer: usize,
        n_nodes: usize,
        factor_dim: usize,
        embed_dim: usize,
        partition: &GroupPartition,
        kernel_lengths: &[usize],
        learned_adjacency: bool,
    ) -> Result<Self> {
        if kernel_lengths.len() + 1 != partition.groups() {
            return Err(Error::config(
                "model.kernel_lengths",
                format!(
                    "need one kernel length per group 2..G ({} entries), got {}",
                    partition.groups() - 1,
                    kernel_lengths.len()
                ),
            ));
        }
        for (i, &k) in kernel_lengths.iter().enumerate() {
            if k == 0 || k > embed_dim {
                return Err(Error::config(
                    "model.kernel_lengths",
                    format!(
                        "kernel length {k} for group {} must be in [1, D={embed_dim}]",
                        i + 2
                    ),
                ));
            }
        }
        let factors = if learned_adjacency {
            Some(AdjacencyFactors::register(
                store, rng, layer, n_nodes, factor_dim,
            )?)
        } else {
            None
        };
        let mut convs = Vec::with_capacity(kernel_lengths.len());
        for (i, &k) in kernel_lengths.iter().enumerate() {
            let g = i + 2; // human group number
            let c_g = partition.sizes[i + 1];
            let bound = 1.0 / ((k * c_g) as f64).sqrt();
            let kernel = store.register(
                format!("layer{layer}.group{g}.kernel"),
                Tensor::uniform(vec![k, c_g, c_g], -bound, bound, rng)?,
            )?;
            let bias = store.register(
                format!("layer{layer}.group{g}.bias"),
                Tensor::zeros(vec![c_g])?,
            )?;
            convs.push(GroupConvIds { kernel, bias });
        }
        let d = embed_dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mlp_w1 = store.register(
            format!("layer{layer}.mlp_w1"),
            Tensor::uniform(vec![d, d], -bound, bound, rng)?,
        )?;
        let mlp_b1 = store.register(format!("layer{layer}.mlp_b1"), Tensor::zeros(vec![d])?)?;
        let mlp_w2 = store.register(
            format!("layer{layer}.mlp_w2"),
            Tensor::uniform(vec![d, d], -bound, bound, rng)?,
        )?;
        let mlp_b2 = store.register(format!("layer{layer}.mlp_b2"), Tensor::zeros(vec![d])?)?;
        Ok(GfcLayerIds {
            factors,
            convs,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
        })
    }

    /// Scalar parameters owned by one grouped layer.
    pub fn scalar_count(
        n_nodes: usize,
        factor_dim: usize,
        embed_dim: usize,
        partition: &GroupPartition,
        kernel_lengths: &[usize],
        learned_adjacency: bool,
    ) -> usize {
        let mut count = if learned_adjacency {
            2 * n_nodes * factor_dim
        } else {
            0
        };
        for (i, &k) in kernel_lengths.iter().enumerate() {
            let c_g = partition.sizes[i + 1];
            count += k * c_g * c_g + c_g;
        }
        count + 2 * (embed_dim * embed_dim + embed_dim)
    }
}

/// Parameter handles for one plain graph-convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct PlainGcnLayerIds {
    pub factors: Option<AdjacencyFactors>,
    /// `[D, D]` weight (no bias).
    pub w: ParamId,
}

impl PlainGcnLayerIds {
    pub fn register<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        layer: usize,
        n_nodes: usize,
        factor_dim: usize,
        embed_dim: usize,
        learned_adjacency: bool,
    ) -> Result<Self> {
        let factors = if learned_adjacency {
            Some(AdjacencyFactors::register(
                store, rng, layer, n_nodes, factor_dim,
            )?)
        } else {
            None
        };
        let bound = 1.0 / (embed_dim as f64).sqrt();
        let w = store.register(
            format!("layer{layer}.gcn_w"),
            Tensor::uniform(vec![embed_dim, embed_dim], -bound, bound, rng)?,
        )?;
        Ok(PlainGcnLayerIds { factors, w })
    }

    pub fn scalar_count(
        n_nodes: usize,
        factor_dim: usize,
        embed_dim: usize,
        learned_adjacency: bool,
    ) -> usize {
        let factors = if learned_adjacency {
            2 * n_nodes * factor_dim
        } else {
            0
        };
        factors + embed_dim * embed_dim
    }
}

/// Circularly convolves a `[C_g, N, D]` group along the feature axis (each
/// node independent, channels mixed by the kernel) and applies ReLU.
pub fn group_conv<E: Element>(
    tape: &mut Tape<E>,
    group: Var,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    let conv = tape.conv1d_circular_per_node(group, kernel, bias)?;
    Ok(tape.relu(conv))
}

/// Two-layer feature-axis MLP shared across channels and nodes. Accepts
/// `[r, D]` or `[z, N, D]` input (rank-3 is flattened and restored). With
/// `inner_relu = false` the nonlinearity is skipped — a diagnostic mode that
/// makes identity weights compose to the identity map in tests.
pub fn mlp_forward<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    x: Var,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    inner_relu: bool,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let (flat, restore) = match shape.len() {
        2 => (x, None),
        3 => (
            tape.reshape(x, vec![shape[0] * shape[1], shape[2]])?,
            Some(shape),
        ),
        _ => {
            return Err(Error::shape(
                "mlp_forward",
                "[r, d] or [z, n, d]".to_string(),
                crate::tensor::shape_string(&shape),
            ))
        }
    };
    let w1v = tape.param(store, w1);
    let b1v = tape.param(store, b1);
    let w2v = tape.param(store, w2);
    let b2v = tape.param(store, b2);
    let h1 = tape.matmul(flat, w1v)?;
    let h1 = tape.add_row(h1, b1v)?;
    let h1 = if inner_relu { tape.relu(h1) } else { h1 };
    let h2 = tape.matmul(h1, w2v)?;
    let out = tape.add_row(h2, b2v)?;
    match restore {
        Some(shape) => tape.reshape(out, shape),
        None => Ok(out),
    }
}

/// The pre-fusion stage shared by both grouped variants: partition, convolve
/// groups 2..G, aggregate over `a`, concatenate back to `[z, N, D]`.
/// With `aggregate_group1 = true` group 1 is also aggregated (no bypass);
/// it is never convolved.
pub fn gfc_combine<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    h: Var,
    a: Var,
    ids: &GfcLayerIds,
    partition: &GroupPartition,
    aggregate_group1: bool,
) -> Result<Var> {
    if ids.convs.len() + 1 != partition.groups() {
        return Err(Error::config(
            "model.groups",
            format!(
                "layer has {} group convolutions but partition has {} groups",
                ids.convs.len(),
                partition.groups()
            ),
        ));
    }
    let parts = partition_groups(tape, h, partition)?;
    let mut outs = Vec::with_capacity(parts.len());
    for (g, &part) in parts.iter().enumerate() {
        if g == 0 {
            outs.push(if aggregate_group1 {
                tape.aggregate(a, part)?
            } else {
                part
            });
        } else {
            let conv = ids.convs[g - 1];
            let kernel = tape.param(store, conv.kernel);
            let bias = tape.param(store, conv.bias);
            let t = group_conv(tape, part, kernel, bias)?;
            outs.push(tape.aggregate(a, t)?);
        }
    }
    tape.concat0(&outs)
}

/// Full grouped layer: bypass group 1, convolve+aggregate groups 2..G,
/// fuse with the MLP.
pub fn gfc_forward<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    h: Var,
    a: Var,
    ids: &GfcLayerIds,
    partition: &GroupPartition,
) -> Result<Var> {
    let combined = gfc_combine(tape, store, h, a, ids, partition, false)?;
    mlp_forward(
        tape, store, combined, ids.mlp_w1, ids.mlp_b1, ids.mlp_w2, ids.mlp_b2, true,
    )
}

/// No-bypass variant: group 1 is aggregated (but not convolved), so every
/// channel passes through the graph.
pub fn gcn_variant_forward<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    h: Var,
    a: Var,
    ids: &GfcLayerIds,
    partition: &GroupPartition,
) -> Result<Var> {
    let combined = gfc_combine(tape, store, h, a, ids, partition, true)?;
    mlp_forward(
        tape, store, combined, ids.mlp_w1, ids.mlp_b1, ids.mlp_w2, ids.mlp_b2, true,
    )
}

/// Plain graph convolution: per channel, `relu(a · h[c] · w)`. No grouping,
/// no feature convolution, no bias.
pub fn plain_gcn_forward<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    h: Var,
    a: Var,
    w: ParamId,
) -> Result<Var> {
    let shape = tape.value(h).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(
            "plain_gcn_forward",
            "[z, n, d]".to_string(),
            crate::tensor::shape_string(&shape),
        ));
    }
    let mixed = tape.aggregate(a, h)?;
    let flat = tape.reshape(mixed, vec![shape[0] * shape[1], shape[2]])?;
    let wv = tape.param(store, w);
    let prod = tape.matmul(flat, wv)?;
    let act = tape.relu(prod);
    tape.reshape(act, shape)
}
