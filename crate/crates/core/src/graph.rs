//! Graph structure: the self-learned adjacency matrix built from two
//! trainable node-factor tables, and static (file-provided) adjacencies for
//! the fixed-graph ablation.
//!
//! The learned adjacency is `A = row_softmax(relu(E1 · E2ᵀ))`: rows are
//! normalized so each node's outgoing mixing weights sum to one, and a zero
//! pre-activation row softmaxes to the uniform distribution — the
//! maximum-entropy starting point when factors are near zero.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{Element, Tensor};

/// Handles for one layer's pair of adjacency factor tables, each `[N, c]`.
#[derive(Debug, Clone, Copy)]
pub struct AdjacencyFactors {
    pub e1: ParamId,
    pub e2: ParamId,
}

impl AdjacencyFactors {
    /// Registers a factor pair for layer `layer`, initialized uniformly in
    /// `[−1/√c, 1/√c]` so the initial adjacency is near-uniform.
    pub fn register<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        rng: &mut R,
        layer: usize,
        n_nodes: usize,
        factor_dim: usize,
    ) -> Result<Self> {
        if factor_dim == 0 {
            return Err(Error::config("model.factor_dim", "must be at least 1"));
        }
        let bound = 1.0 / (factor_dim as f64).sqrt();
        let e1 = store.register(
            format!("layer{layer}.adj_e1"),
            Tensor::uniform(vec![n_nodes, factor_dim], -bound, bound, rng)?,
        )?;
        let e2 = store.register(
            format!("layer{layer}.adj_e2"),
            Tensor::uniform(vec![n_nodes, factor_dim], -bound, bound, rng)?,
        )?;
        Ok(AdjacencyFactors { e1, e2 })
    }
}

/// Builds the `[N, N]` learned adjacency on the tape:
/// `row_softmax(relu(e1 · e2ᵀ))`. Differentiable w.r.t. both factors.
pub fn adjacency<E: Element>(
    tape: &mut Tape<E>,
    store: &ParamStore<E>,
    factors: &AdjacencyFactors,
) -> Result<Var> {
    let e1 = tape.param(store, factors.e1);
    let e2 = tape.param(store, factors.e2);
    adjacency_from_vars(tape, e1, e2)
}

/// As [`adjacency`], but from arbitrary tape values (used by tests and by
/// callers holding already-placed factors).
pub fn adjacency_from_vars<E: Element>(tape: &mut Tape<E>, e1: Var, e2: Var) -> Result<Var> {
    let c = {
        let t2 = tape.value(e2);
        if t2.rank() != 2 {
            return Err(Error::shape(
                "adjacency",
                "[N, c]".to_string(),
                crate::tensor::shape_string(t2.shape()),
            ));
        }
        t2.shape()[1]
    };
    // e2ᵀ as a reshape-free transpose: matmul expects [c, N], so transpose
    // by building a constant is not differentiable — instead express
    // e1·e2ᵀ via matmul with e2 transposed on the tape.
    let e2t = tape.transpose2(e2)?;
    let logits = tape.matmul(e1, e2t)?;
    debug_assert_eq!(tape.value(e2t).shape()[0], c);
    let active = tape.relu(logits);
    tape.row_softmax(active)
}

/// A fixed, row-normalized `[N, N]` mixing matrix loaded from disk.
#[derive(Debug, Clone)]
pub struct StaticAdjacency<E: Element> {
    pub a: Tensor<E>,
}

/// Renormalizes the rows of a non-negative square matrix to sum to one,
/// replacing all-zero rows with the uniform distribution.
pub fn normalize_rows<E: Element>(a: &Tensor<E>) -> Result<Tensor<E>> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape(
            "normalize_rows",
            "[N, N]".to_string(),
            crate::tensor::shape_string(a.shape()),
        ));
    }
    let n = a.shape()[0];
    let mut data = a.data().to_vec();
    for row in data.chunks_mut(n) {
        let sum = row.iter().fold(E::zero(), |acc, &v| acc + v);
        if sum == E::zero() {
            let u = E::of_f64(1.0 / n as f64);
            row.iter_mut().for_each(|v| *v = u);
        } else {
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
    }
    Tensor::new(vec![n, n], data)
}

/// Loads an `N×N` non-negative matrix from a header-less CSV (N rows of N
/// comma-separated reals) and row-normalizes it. Dimension mismatches and
/// negative entries are load errors naming the offending row.
pub fn load_static_adjacency<E: Element>(
    path: impl AsRef<Path>,
    n: usize,
) -> Result<StaticAdjacency<E>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let load_err = |row: usize, reason: String| Error::Load {
        path: display.clone(),
        row,
        reason,
    };
    let file = std::fs::File::open(path).map_err(|e| load_err(0, e.to_string()))?;
    let reader = BufReader::new(file);
    let mut data: Vec<E> = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| load_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n {
            return Err(load_err(
                i + 1,
                format!("expected {n} columns, got {}", fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| load_err(i + 1, format!("non-numeric entry {f:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(load_err(
                    i + 1,
                    format!("adjacency entries must be finite and non-negative, got {v}"),
                ));
            }
            data.push(E::of_f64(v));
        }
        rows += 1;
    }
    if rows != n {
        return Err(load_err(
            rows + 1,
            format!("expected {n} rows, got {rows}"),
        ));
    }
    Ok(StaticAdjacency {
        a: normalize_rows(&Tensor::new(vec![n, n], data)?)?,
    })
}

/// Writes an `[N, N]` matrix as a header-less CSV with full `f64` precision
/// (round-trips through [`load_static_adjacency`] to within 1e-12).
pub fn write_adjacency_csv<E: Element>(a: &Tensor<E>, path: impl AsRef<Path>) -> Result<()> {
    if a.rank() != 2 {
        return Err(Error::shape(
            "write_adjacency_csv",
            "[N, N]".to_string(),
            crate::tensor::shape_string(a.shape()),
        ));
    }
    let cols = a.shape()[1];
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in a.data().chunks(cols) {
        let mut first = true;
        for v in row {
            if !first {
                write!(out, ",")?;
            }
            first = false;
            write!(out, "{:?}", v.as_f64())?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Extracts the `[k, k]` leading principal submatrix (the first `k` nodes).
pub fn leading_block<E: Element>(a: &Tensor<E>, k: usize) -> Result<Tensor<E>> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape(
            "leading_block",
            "[N, N]".to_string(),
            crate::tensor::shape_string(a.shape()),
        ));
    }
    let n = a.shape()[0];
    if k == 0 || k > n {
        return Err(Error::config(
            "top_k",
            format!("must be in [1, {n}], got {k}"),
        ));
    }
    let mut data = Vec::with_capacity(k * k);
    for r in 0..k {
        data.extend_from_slice(&a.data()[r * n..r * n + k]);
    }
    Tensor::new(vec![k, k], data)
}
