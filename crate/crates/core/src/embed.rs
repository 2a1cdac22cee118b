//! Initial node embeddings: per-window reversible normalization, a linear
//! map of the input window plus variate/hour/day lookup tables, and the
//! learnable scalers that expand embeddings into channels.
//!
//! The embedding of node `n` is additive:
//! `H⁰[n] = x[n]·W + b + variate_table[n] + hid_table[hid] + diw_table[diw]`,
//! where each lookup term is present only when its table is enabled. Tables
//! that are disabled are not registered at all, so the trainable parameter
//! count reflects the switch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Floor applied to per-window standard deviations.
pub const INSTANCE_STD_FLOOR: f64 = 1e-8;

/// Per-window, per-variate statistics captured by [`instance_normalize`],
/// used to de-normalize the model output.
#[derive(Debug, Clone)]
pub struct InstanceStats<E: Element> {
    /// Per-variate mean over the input steps, `[N]`.
    pub mean: Tensor<E>,
    /// Per-variate population standard deviation (floored), `[N]`.
    pub std: Tensor<E>,
}

/// Z-scores each variate of an `[N, h]` window over its `h` input steps
/// (population standard deviation, floored). With `enabled = false` the
/// window passes through and the stats are the identity `(0, 1)`.
pub fn instance_normalize<E: Element>(
    x: &Tensor<E>,
    enabled: bool,
) -> Result<(Tensor<E>, InstanceStats<E>)> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "instance_normalize",
            "[N, h]".to_string(),
            crate::tensor::shape_string(x.shape()),
        ));
    }
    let (n, h) = (x.shape()[0], x.shape()[1]);
    if !enabled {
        return Ok((
            x.clone(),
            InstanceStats {
                mean: Tensor::zeros(vec![n])?,
                std: Tensor::full(vec![n], E::one())?,
            },
        ));
    }
    let xd = x.data();
    let mut mean = vec![E::zero(); n];
    let mut std = vec![E::zero(); n];
    let mut out = vec![E::zero(); n * h];
    for v in 0..n {
        let row = &xd[v * h..(v + 1) * h];
        let m = row.iter().fold(0.0f64, |acc, &e| acc + e.as_f64()) / h as f64;
        let var = row
            .iter()
            .fold(0.0f64, |acc, &e| acc + (e.as_f64() - m).powi(2))
            / h as f64;
        let s = var.sqrt().max(INSTANCE_STD_FLOOR);
        mean[v] = E::of_f64(m);
        std[v] = E::of_f64(s);
        for (dst, &e) in out[v * h..(v + 1) * h].iter_mut().zip(row) {
            *dst = E::of_f64((e.as_f64() - m) / s);
        }
    }
    Ok((
        Tensor::new(vec![n, h], out)?,
        InstanceStats {
            mean: Tensor::new(vec![n], mean)?,
            std: Tensor::new(vec![n], std)?,
        },
    ))
}

/// Parameter handles for the embedding stage. Optional tables are `None`
/// when the corresponding input signal is disabled.
#[derive(Debug, Clone)]
pub struct EmbeddingIds {
    /// `[h, D]` linear map of the input window.
    pub linear_w: ParamId,
    /// `[D]` bias.
    pub linear_b: ParamId,
    /// `[N, D]` per-variate (node identity) table.
    pub variate_table: Option<ParamId>,
    /// `[24, D]` hour-in-day table.
    pub hid_table: Option<ParamId>,
    /// `[7, D]` day-in-week table.
    pub diw_table: Option<ParamId>,
}

impl EmbeddingIds {
    /// Registers the embedding parameters: `linear_w ~ U[−1/√h, 1/√h]`, all
    /// biases and lookup tables zero (so the embedding starts as a pure
    /// linear map). Disabled tables are simply not created.
    #[allow(clippy::too_many_arguments)]
    pub fn register<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        n_nodes: usize,
        input_len: usize,
        embed_dim: usize,
        use_variate: bool,
        use_hid: bool,
        use_diw: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (input_len as f64).sqrt();
        let linear_w = store.register(
            "embed.linear_w",
            Tensor::uniform(vec![input_len, embed_dim], -bound, bound, rng)?,
        )?;
        let linear_b = store.register("embed.linear_b", Tensor::zeros(vec![embed_dim])?)?;
        let variate_table = if use_variate {
            Some(store.register(
                "embed.variate_table",
                Tensor::zeros(vec![n_nodes, embed_dim])?,
            )?)
        } else {
            None
        };
        let hid_table = if use_hid {
            Some(store.register("embed.hid_table", Tensor::zeros(vec![24, embed_dim])?)?)
        } else {
            None
        };
        let diw_table = if use_diw {
            Some(store.register("embed.diw_table", Tensor::zeros(vec![7, embed_dim])?)?)
        } else {
            None
        };
        Ok(EmbeddingIds {
            linear_w,
            linear_b,
            variate_table,
            hid_table,
            diw_table,
        })
    }

    /// Number of scalar parameters this stage owns.
    pub fn scalar_count(
        n_nodes: usize,
        input_len: usize,
        embed_dim: usize,
        use_variate: bool,
        use_hid: bool,
        use_diw: bool,
    ) -> usize {
        let mut count = input_len * embed_dim + embed_dim;
        if use_variate {
            count += n_nodes * embed_dim;
        }
        if use_hid {
            count += 24 * embed_dim;
        }
        if use_diw {
            count += 7 * embed_dim;
        }
        count
    }
}

/// Builds the `[N, D]` embedding of an `[N, h]` window on the tape:
/// linear map plus bias plus whichever lookup-table terms are enabled.
/// Calendar indices outside their table ranges are contract errors.
pub fn embed<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    x: Var,
    hid: usize,
    diw: usize,
    ids: &EmbeddingIds,
) -> Result<Var> {
    if ids.hid_table.is_some() && hid >= 24 {
        return Err(Error::contract(
            "embed",
            format!("hour-in-day index {hid} outside [0, 24)"),
        ));
    }
    if ids.diw_table.is_some() && diw >= 7 {
        return Err(Error::contract(
            "embed",
            format!("day-in-week index {diw} outside [0, 7)"),
        ));
    }
    let w = tape.param(store, ids.linear_w);
    let b = tape.param(store, ids.linear_b);
    let lin = tape.matmul(x, w)?;
    let mut out = tape.add_row(lin, b)?;
    if let Some(vt) = ids.variate_table {
        let table = tape.param(store, vt);
        out = tape.add(out, table)?;
    }
    if let Some(ht) = ids.hid_table {
        let table = tape.param(store, ht);
        let row = tape.select_row(table, hid)?;
        out = tape.add_row(out, row)?;
    }
    if let Some(dt) = ids.diw_table {
        let table = tape.param(store, dt);
        let row = tape.select_row(table, diw)?;
        out = tape.add_row(out, row)?;
    }
    Ok(out)
}

/// Initial scaler values: `z` evenly spaced points on `[0.2, 1.0]` so the
/// channels start distinct (identical scalers would make every group
/// initially redundant). A single scaler starts at 1 (identity).
pub fn scaler_init_values<E: Element>(z: usize) -> Result<Tensor<E>> {
    if z == 0 {
        return Err(Error::config("model.scalers", "must be at least 1"));
    }
    if z == 1 {
        return Tensor::new(vec![1], vec![E::one()]);
    }
    let vals = (0..z)
        .map(|c| E::of_f64(0.2 + 0.8 * c as f64 / (z - 1) as f64))
        .collect();
    Tensor::new(vec![z], vals)
}

/// Registers the scaler vector under the conventional name.
pub fn register_scalers<E: Element>(store: &mut ParamStore<E>, z: usize) -> Result<ParamId> {
    store.register("scalers", scaler_init_values::<E>(z)?)
}
