//! Dense row-major tensors over a configurable float element type, plus the
//! raw numeric kernels everything else is built from.
//!
//! Design notes:
//!
//! * Storage is `Arc<Vec<E>>`, so clones are cheap and copy-on-write happens
//!   only when a uniquely-owned tensor is mutated in place (the optimizer
//!   relies on this).
//! * All reductions use a fixed, documented summation order so that results
//!   are bit-for-bit reproducible regardless of thread count. Parallelism is
//!   applied at the level of independent outputs (batch samples, evaluation
//!   windows), never inside a single accumulation.
//! * The circular convolution convention is defined once, here, and shared by
//!   the differentiable layer and the Monte Carlo analysis:
//!   `out(i, a) = bias[i] + sum_j sum_b in(j, (a+b) mod d) * w(b, i, j)` with
//!   tap offsets `b` in `0..k`.

pub mod adam;
pub mod tape;

use std::fmt;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Identifies the element width of a tensor at run time (checkpoint headers,
/// command line precision selection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Float element type usable in tensors. Implemented for `f32` and `f64`.
///
/// The conversion helpers are total for the ranges this crate uses; they exist
/// so generic code never has to unwrap `FromPrimitive` results inline.
pub trait Element:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    /// Width of the little-endian byte encoding used by checkpoints.
    const BYTE_WIDTH: usize;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from `bytes`, which must hold at least `BYTE_WIDTH` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const BYTE_WIDTH: usize = 4;

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const BYTE_WIDTH: usize = 8;

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Dense row-major tensor. Rank 0 (empty shape) is a scalar of length 1.
#[derive(Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.len() <= 16 {
            write!(f, " {:?}", self.data())
        } else {
            write!(f, " [{} elements]", self.len())
        }
    }
}

/// Formats a shape like `[3, 4]` for error messages.
pub fn shape_string(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor, checking that the extents are positive and their
    /// product equals the element count.
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(
                "Tensor::new",
                "positive extents",
                shape_string(&shape),
            ));
        }
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{want} elements for shape {}", shape_string(&shape)),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Rank-0 scalar.
    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
        }
    }

    /// Rank-1 tensor from a plain vector.
    pub fn vector(v: Vec<E>) -> Result<Self> {
        let n = v.len();
        Tensor::new(vec![n], v)
    }

    /// Rank-2 tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<E>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape(
                "Tensor::from_rows",
                format!("rows of equal length {c}"),
                "ragged rows".to_string(),
            ));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![E::zero(); n])
    }

    pub fn full(shape: Vec<usize>, v: E) -> Result<Self> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![v; n])
    }

    /// Tensor with elements drawn independently from `U[lo, hi)`.
    ///
    /// Draws happen in `f64` and are then converted, so a given seed yields
    /// the same values (up to rounding) for every element type.
    pub fn uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| E::of_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when the tensor holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the elements, cloning the buffer first if shared.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Element at a fully-specified index.
    pub fn at(&self, index: &[usize]) -> E {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range for axis {i} ({ext})");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    /// Convenience accessor for rank-2 tensors.
    pub fn at2(&self, r: usize, c: usize) -> E {
        self.at(&[r, c])
    }

    /// Copy of the elements as `f64` (test and reporting helper).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v.as_f64()).collect()
    }

    /// Reinterprets the tensor with a new shape of identical length.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || want != self.len() {
            return Err(Error::shape(
                "Tensor::reshaped",
                format!("shape with product {}", self.len()),
                shape_string(&shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::add",
                shape_string(&self.shape),
                shape_string(&other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: Arc::new(data),
        })
    }

    /// Adds `other` into `self` in place (copy-on-write if shared).
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "Tensor::add_assign",
                shape_string(&self.shape),
                shape_string(&other.shape),
            ));
        }
        let dst = Arc::make_mut(&mut self.data);
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
        Ok(())
    }

    /// Multiplies every element by `k`, returning a new tensor.
    pub fn scaled(&self, k: E) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| v * k).collect()),
        }
    }
}

// ---------------------------------------------------------------------------
// Raw kernels. These operate on plain slices so the tape, the Monte Carlo
// module, and the benchmarks all share one implementation (and therefore one
// numeric convention).
// ---------------------------------------------------------------------------

/// `out[m, n] = a[m, k] * b[k, n]`. Accumulation order over `k` is ascending.
pub fn matmul_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m, n] = transpose(a)[m, k] * b[k, n]` where `a` is stored `[k, m]`.
pub fn matmul_at_b_raw<E: Element>(a: &[E], b: &[E], k: usize, m: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![E::zero(); m * n];
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m, n] = a[m, k] * transpose(b)[k, n]` where `b` is stored `[n, k]`.
pub fn matmul_a_bt_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Circular one-dimensional convolution over the last axis.
///
/// * `input` is `[c_in, d]`, row-major.
/// * `kernel` is `[k, c_out, c_in]`, row-major; `k <= d` is required by callers.
/// * `bias` is `[c_out]`.
/// * Output is `[c_out, d]` with
///   `out(i, a) = bias[i] + sum_j sum_b input(j, (a+b) mod d) * kernel(b, i, j)`.
///
/// This function is the single definition of the convolution convention; the
/// differentiable op and the Monte Carlo recurrence both call it.
pub fn conv1d_circular_raw<E: Element>(
    input: &[E],
    c_in: usize,
    d: usize,
    kernel: &[E],
    k: usize,
    c_out: usize,
    bias: &[E],
) -> Vec<E> {
    debug_assert_eq!(input.len(), c_in * d);
    debug_assert_eq!(kernel.len(), k * c_out * c_in);
    debug_assert_eq!(bias.len(), c_out);
    let mut out = vec![E::zero(); c_out * d];
    for i in 0..c_out {
        for alpha in 0..d {
            let mut acc = bias[i];
            for beta in 0..k {
                let pos = (alpha + beta) % d;
                let w_row = &kernel[(beta * c_out + i) * c_in..(beta * c_out + i + 1) * c_in];
                for (j, &w) in w_row.iter().enumerate() {
                    acc += input[j * d + pos] * w;
                }
            }
            out[i * d + alpha] = acc;
        }
    }
    out
}

/// Gradient of [`conv1d_circular_raw`] with respect to its input.
pub fn conv1d_circular_grad_input<E: Element>(
    adj: &[E],
    kernel: &[E],
    c_in: usize,
    d: usize,
    k: usize,
    c_out: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); c_in * d];
    for j in 0..c_in {
        for pos in 0..d {
            let mut acc = E::zero();
            for beta in 0..k {
                // Inverse of pos = (alpha + beta) mod d, valid because k <= d.
                let alpha = (pos + d - beta) % d;
                for i in 0..c_out {
                    acc += adj[i * d + alpha] * kernel[(beta * c_out + i) * c_in + j];
                }
            }
            out[j * d + pos] = acc;
        }
    }
    out
}

/// Gradient of [`conv1d_circular_raw`] with respect to its kernel.
pub fn conv1d_circular_grad_kernel<E: Element>(
    adj: &[E],
    input: &[E],
    c_in: usize,
    d: usize,
    k: usize,
    c_out: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); k * c_out * c_in];
    for beta in 0..k {
        for i in 0..c_out {
            for j in 0..c_in {
                let mut acc = E::zero();
                for alpha in 0..d {
                    acc += adj[i * d + alpha] * input[j * d + (alpha + beta) % d];
                }
                out[(beta * c_out + i) * c_in + j] = acc;
            }
        }
    }
    out
}

/// Row-wise softmax of a `[rows, cols]` matrix, written into a new vector.
/// Uses the max-subtraction form, so uniform rows are exact.
pub fn row_softmax_raw<E: Element>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![E::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut denom = E::zero();
        let out_row = &mut out[r * cols..(r + 1) * cols];
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            denom += e;
        }
        for o in out_row.iter_mut() {
            *o = *o / denom;
        }
    }
    out
}
