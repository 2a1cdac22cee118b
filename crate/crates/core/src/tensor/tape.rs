//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] records one forward pass as a sequence of nodes; [`Var`] is an
//! index into that tape. Calling [`Tape::backward`] walks the recorded nodes
//! in reverse, propagating adjoints and delivering per-parameter gradients to
//! a sink: either directly into a [`ParamStore`] or into a detached
//! [`GradBuffer`] (used for batch-parallel training, where each sample owns a
//! private buffer and the buffers are merged in deterministic sample order).
//!
//! Gradients accumulate across multiple `backward` calls until explicitly
//! cleared, so mini-batch gradients can be summed over samples.


use crate::error::{Error, Result};
use crate::tensor::{
    conv1d_circular_grad_input, conv1d_circular_grad_kernel, conv1d_circular_raw, matmul_a_bt_raw,
    matmul_at_b_raw, matmul_raw, row_softmax_raw, shape_string, Element, Tensor,
};

/// Handle to a registered parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named, trainable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter<E: Element> {
    name: String,
    value: Tensor<E>,
    grad: Vec<E>,
    /// First-moment estimate (Adam).
    m: Vec<E>,
    /// Second-moment estimate (Adam).
    v: Vec<E>,
    /// Number of optimizer steps applied to this parameter.
    step: u64,
}

impl<E: Element> Parameter<E> {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }
    pub fn grad(&self) -> &[E] {
        &self.grad
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub(crate) fn optimizer_state_mut(&mut self) -> (&mut Tensor<E>, &mut [E], &mut [E], &mut [E], &mut u64) {
        (
            &mut self.value,
            &mut self.grad,
            &mut self.m,
            &mut self.v,
            &mut self.step,
        )
    }
}

/// Registry of all trainable tensors of a model.
///
/// Registration order is the canonical parameter order: snapshots, gradient
/// buffers, checkpoints and the optimizer all iterate in this order, which
/// keeps every accumulation deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element> {
    params: Vec<Parameter<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Registers a tensor under a unique name and returns its handle.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<E>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::contract(
                "ParamStore::register",
                format!("parameter name {name:?} registered twice"),
            ));
        }
        let n = value.len();
        self.params.push(Parameter {
            name,
            value,
            grad: vec![E::zero(); n],
            m: vec![E::zero(); n],
            v: vec![E::zero(); n],
            step: 0,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Number of registered tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    /// Looks a parameter up by name (checkpoint loading, tests).
    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replaces a parameter value; the new tensor must keep the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<E>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set_value",
                shape_string(p.value.shape()),
                shape_string(value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    /// Adds `contribution` into the stored gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, contribution: &Tensor<E>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != contribution.shape() {
            return Err(Error::shape(
                "ParamStore::accumulate_grad",
                shape_string(p.value.shape()),
                shape_string(contribution.shape()),
            ));
        }
        for (g, &c) in p.grad.iter_mut().zip(contribution.data()) {
            *g += c;
        }
        Ok(())
    }

    /// Clears every gradient to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = E::zero();
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter<E>] {
        &mut self.params
    }

    /// Copies all current values (cheap: shares the underlying buffers).
    pub fn snapshot(&self) -> Vec<Tensor<E>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Restores values from a snapshot taken on the same store layout.
    pub fn restore(&mut self, snapshot: &[Tensor<E>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::contract(
                "ParamStore::restore",
                format!(
                    "snapshot holds {} tensors, store holds {}",
                    snapshot.len(),
                    self.params.len()
                ),
            ));
        }
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            if p.value.shape() != s.shape() {
                return Err(Error::shape(
                    "ParamStore::restore",
                    shape_string(p.value.shape()),
                    shape_string(s.shape()),
                ));
            }
            p.value = s.clone();
        }
        Ok(())
    }
}

/// Detached gradient accumulator with the same layout as a [`ParamStore`].
///
/// Batch-parallel training gives each sample its own buffer; buffers are then
/// merged in ascending sample order so the result is independent of thread
/// scheduling.
#[derive(Debug, Clone)]
pub struct GradBuffer<E: Element> {
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Element> GradBuffer<E> {
    /// An empty buffer laid out for `store`.
    pub fn for_store(store: &ParamStore<E>) -> Self {
        GradBuffer {
            slots: vec![None; store.len()],
        }
    }

    /// Adds a contribution for one parameter.
    pub fn add(&mut self, id: ParamId, contribution: Tensor<E>) -> Result<()> {
        let slot = &mut self.slots[id.index()];
        match slot {
            None => *slot = Some(contribution),
            Some(t) => t.add_assign(&contribution)?,
        }
        Ok(())
    }

    /// Merges `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: GradBuffer<E>) -> Result<()> {
        if other.slots.len() != self.slots.len() {
            return Err(Error::contract(
                "GradBuffer::merge",
                "buffers have different layouts".to_string(),
            ));
        }
        for (dst, src) in self.slots.iter_mut().zip(other.slots) {
            if let Some(src) = src {
                match dst {
                    None => *dst = Some(src),
                    Some(t) => t.add_assign(&src)?,
                }
            }
        }
        Ok(())
    }

    /// Scales every stored gradient by `k` (e.g. `1 / batch_size`).
    pub fn scale(&mut self, k: E) {
        for slot in self.slots.iter_mut().flatten() {
            *slot = slot.scaled(k);
        }
    }

    /// Accumulates the buffered gradients into `store`.
    pub fn apply_to(&self, store: &mut ParamStore<E>) -> Result<()> {
        for (i, slot) in self.slots.iter().enumerate() {
            if let Some(t) = slot {
                store.accumulate_grad(ParamId(i), t)?;
            }
        }
        Ok(())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<E> = Box<dyn Fn(&Tensor<E>, &[bool], &mut dyn FnMut(usize, Tensor<E>)) + Send + Sync>;

enum Origin<E: Element> {
    /// Input data or other non-trainable value.
    Constant,
    /// Leaf bound to a registered parameter.
    Param(ParamId),
    /// Result of an op; `back` distributes the node's adjoint to parents.
    Op { parents: Vec<Var>, back: BackFn<E> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    needs_grad: bool,
    origin: Origin<E>,
}

/// Records one forward pass and replays it backwards for gradients.
#[derive(Default)]
pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The tensor held by `v`.
    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, origin: Origin<E>) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            origin,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable value.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, false, Origin::Constant)
    }

    /// Records a leaf bound to a parameter; gradients flow into `id`.
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.push(value, true, Origin::Param(id))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn any_needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.needs(v))
    }

    // -- elementwise ops ---------------------------------------------------

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                shape_string(ta.shape()),
                shape_string(tb.shape()),
            ));
        }
        let value = ta.add(tb)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a, b],
                back: Box::new(|adj, flags, emit| {
                    if flags[0] {
                        emit(0, adj.clone());
                    }
                    if flags[1] {
                        emit(1, adj.clone());
                    }
                }),
            },
        ))
    }

    /// Elementwise difference `a - b`; shapes must match.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "sub",
                shape_string(ta.shape()),
                shape_string(tb.shape()),
            ));
        }
        let data: Vec<E> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a, b],
                back: Box::new(|adj, flags, emit| {
                    if flags[0] {
                        emit(0, adj.clone());
                    }
                    if flags[1] {
                        emit(1, adj.scaled(-E::one()));
                    }
                }),
            },
        ))
    }

    /// Elementwise (Hadamard) product; shapes must match.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                shape_string(ta.shape()),
                shape_string(tb.shape()),
            ));
        }
        let data: Vec<E> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a, b],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let d: Vec<E> = adj
                            .data()
                            .iter()
                            .zip(tb.data())
                            .map(|(&g, &y)| g * y)
                            .collect();
                        emit(0, Tensor::new(adj.shape().to_vec(), d).expect("shape"));
                    }
                    if flags[1] {
                        let d: Vec<E> = adj
                            .data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&g, &x)| g * x)
                            .collect();
                        emit(1, Tensor::new(adj.shape().to_vec(), d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Multiplies every element by the compile-time constant `k`.
    pub fn scale(&mut self, a: Var, k: E) -> Var {
        let value = self.value(a).scaled(k);
        let needs = self.needs(a);
        self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        emit(0, adj.scaled(k));
                    }
                }),
            },
        )
    }

    /// Rectified linear unit, `max(x, 0)`. The derivative at exactly zero is
    /// taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a).clone();
        let data: Vec<E> = ta
            .data()
            .iter()
            .map(|&x| if x > E::zero() { x } else { E::zero() })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("shape");
        let needs = self.needs(a);
        self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let d: Vec<E> = adj
                            .data()
                            .iter()
                            .zip(ta.data())
                            .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                            .collect();
                        emit(0, Tensor::new(adj.shape().to_vec(), d).expect("shape"));
                    }
                }),
            },
        )
    }

    // -- reductions --------------------------------------------------------

    /// Sum of all elements, as a rank-0 scalar. Summation order is the flat
    /// storage order.
    pub fn sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut acc = E::zero();
        for &v in ta.data() {
            acc += v;
        }
        let shape = ta.shape().to_vec();
        let needs = self.needs(a);
        self.push(
            Tensor::scalar(acc),
            needs,
            Origin::Op {
                parents: vec![a],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let g = adj.data()[0];
                        emit(0, Tensor::full(shape.clone(), g).expect("shape"));
                    }
                }),
            },
        )
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, E::one() / E::of_f64(n as f64))
    }

    /// Mean squared error between a recorded prediction and a constant
    /// target, as a rank-0 scalar.
    pub fn mse(&mut self, pred: Var, target: &Tensor<E>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::shape(
                "mse",
                shape_string(self.value(pred).shape()),
                shape_string(target.shape()),
            ));
        }
        let t = self.constant(target.clone());
        let diff = self.sub(pred, t)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    // -- linear algebra ----------------------------------------------------

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                "[m, k] x [k, n]".to_string(),
                format!(
                    "{} x {}",
                    shape_string(ta.shape()),
                    shape_string(tb.shape())
                ),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.any_needs(&[a, b]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a, b],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        // d/da = adj . b^T : [m, n] x [n, k]
                        let d = matmul_a_bt_raw(adj.data(), tb.data(), m, n, k);
                        emit(0, Tensor::new(vec![m, k], d).expect("shape"));
                    }
                    if flags[1] {
                        // d/db = a^T . adj : [k, m] x [m, n]
                        let d = matmul_at_b_raw(ta.data(), adj.data(), m, k, n);
                        emit(1, Tensor::new(vec![k, n], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Adds a length-`c` row vector to every row of an `[r, c]` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        if tm.rank() != 2 || tr.rank() != 1 || tm.shape()[1] != tr.shape()[0] {
            return Err(Error::shape(
                "add_row",
                "[r, c] + [c]".to_string(),
                format!(
                    "{} + {}",
                    shape_string(tm.shape()),
                    shape_string(tr.shape())
                ),
            ));
        }
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        let mut data = tm.data().to_vec();
        for row_chunk in data.chunks_mut(c) {
            for (dst, &v) in row_chunk.iter_mut().zip(tr.data()) {
                *dst += v;
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        let needs = self.any_needs(&[m, row]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![m, row],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        emit(0, adj.clone());
                    }
                    if flags[1] {
                        // Column sums, accumulated row by row (ascending r).
                        let mut d = vec![E::zero(); c];
                        for row_chunk in adj.data().chunks(c) {
                            for (g, &v) in d.iter_mut().zip(row_chunk) {
                                *g += v;
                            }
                        }
                        emit(1, Tensor::new(vec![c], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Row-wise softmax of a rank-2 tensor; every output row sums to one.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::shape(
                "row_softmax",
                "[r, c]".to_string(),
                shape_string(ta.shape()),
            ));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let out = row_softmax_raw(ta.data(), r, c);
        let value = Tensor::new(vec![r, c], out)?;
        let y = value.clone();
        let needs = self.needs(a);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        // Per row: dx = y * (adj - <adj, y>).
                        let mut d = vec![E::zero(); r * c];
                        for row in 0..r {
                            let ys = &y.data()[row * c..(row + 1) * c];
                            let gs = &adj.data()[row * c..(row + 1) * c];
                            let mut dot = E::zero();
                            for (&g, &yv) in gs.iter().zip(ys) {
                                dot += g * yv;
                            }
                            let ds = &mut d[row * c..(row + 1) * c];
                            for ((dst, &g), &yv) in ds.iter_mut().zip(gs).zip(ys) {
                                *dst = yv * (g - dot);
                            }
                        }
                        emit(0, Tensor::new(vec![r, c], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    // -- convolution and aggregation ----------------------------------------

    /// Circular 1-D convolution of a single `[c_in, d]` input.
    ///
    /// `kernel` is `[k, c_out, c_in]`, `bias` is `[c_out]`; requires `k <= d`.
    /// See [`conv1d_circular_raw`] for the exact convention.
    pub fn conv1d_circular(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (ti, tk, tb) = (
            self.value(input).clone(),
            self.value(kernel).clone(),
            self.value(bias).clone(),
        );
        if ti.rank() != 2 || tk.rank() != 3 || tb.rank() != 1 {
            return Err(Error::shape(
                "conv1d_circular",
                "input [c_in, d], kernel [k, c_out, c_in], bias [c_out]".to_string(),
                format!(
                    "{}, {}, {}",
                    shape_string(ti.shape()),
                    shape_string(tk.shape()),
                    shape_string(tb.shape())
                ),
            ));
        }
        let (c_in, d) = (ti.shape()[0], ti.shape()[1]);
        let (k, c_out) = (tk.shape()[0], tk.shape()[1]);
        if tk.shape()[2] != c_in || tb.shape()[0] != c_out {
            return Err(Error::shape(
                "conv1d_circular",
                format!("kernel [k, c_out, {c_in}], bias [c_out]"),
                format!(
                    "kernel {}, bias {}",
                    shape_string(tk.shape()),
                    shape_string(tb.shape())
                ),
            ));
        }
        if k > d {
            return Err(Error::contract(
                "conv1d_circular",
                format!("kernel length {k} exceeds spatial extent {d}"),
            ));
        }
        let out = conv1d_circular_raw(ti.data(), c_in, d, tk.data(), k, c_out, tb.data());
        let value = Tensor::new(vec![c_out, d], out)?;
        let needs = self.any_needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![input, kernel, bias],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let d_in =
                            conv1d_circular_grad_input(adj.data(), tk.data(), c_in, d, k, c_out);
                        emit(0, Tensor::new(vec![c_in, d], d_in).expect("shape"));
                    }
                    if flags[1] {
                        let d_k =
                            conv1d_circular_grad_kernel(adj.data(), ti.data(), c_in, d, k, c_out);
                        emit(1, Tensor::new(vec![k, c_out, c_in], d_k).expect("shape"));
                    }
                    if flags[2] {
                        let mut d_b = vec![E::zero(); c_out];
                        for (i, db) in d_b.iter_mut().enumerate() {
                            for &g in &adj.data()[i * d..(i + 1) * d] {
                                *db += g;
                            }
                        }
                        emit(2, Tensor::new(vec![c_out], d_b).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Circular 1-D convolution applied independently at every node of a
    /// `[c, n, d]` tensor: for each node, the `[c, d]` slice is convolved
    /// with the shared kernel. Implemented by gathering each node slice and
    /// calling the single-input kernel, so both paths agree bit for bit.
    pub fn conv1d_circular_per_node(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (ti, tk, tb) = (
            self.value(input).clone(),
            self.value(kernel).clone(),
            self.value(bias).clone(),
        );
        if ti.rank() != 3 || tk.rank() != 3 || tb.rank() != 1 {
            return Err(Error::shape(
                "conv1d_circular_per_node",
                "input [c, n, d], kernel [k, c, c], bias [c]".to_string(),
                format!(
                    "{}, {}, {}",
                    shape_string(ti.shape()),
                    shape_string(tk.shape()),
                    shape_string(tb.shape())
                ),
            ));
        }
        let (c, n, d) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let k = tk.shape()[0];
        if tk.shape()[1] != c || tk.shape()[2] != c || tb.shape()[0] != c {
            return Err(Error::shape(
                "conv1d_circular_per_node",
                format!("kernel [k, {c}, {c}], bias [{c}]"),
                format!(
                    "kernel {}, bias {}",
                    shape_string(tk.shape()),
                    shape_string(tb.shape())
                ),
            ));
        }
        if k > d {
            return Err(Error::contract(
                "conv1d_circular_per_node",
                format!("kernel length {k} exceeds spatial extent {d}"),
            ));
        }

        let gather = move |src: &[E], node: usize| -> Vec<E> {
            let mut s = vec![E::zero(); c * d];
            for ch in 0..c {
                let base = (ch * n + node) * d;
                s[ch * d..(ch + 1) * d].copy_from_slice(&src[base..base + d]);
            }
            s
        };

        let mut out = vec![E::zero(); c * n * d];
        for node in 0..n {
            let slice = gather(ti.data(), node);
            let conv = conv1d_circular_raw(&slice, c, d, tk.data(), k, c, tb.data());
            for ch in 0..c {
                let base = (ch * n + node) * d;
                out[base..base + d].copy_from_slice(&conv[ch * d..(ch + 1) * d]);
            }
        }
        let value = Tensor::new(vec![c, n, d], out)?;
        let needs = self.any_needs(&[input, kernel, bias]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![input, kernel, bias],
                back: Box::new(move |adj, flags, emit| {
                    let mut d_in = if flags[0] {
                        Some(vec![E::zero(); c * n * d])
                    } else {
                        None
                    };
                    let mut d_k = if flags[1] {
                        Some(vec![E::zero(); k * c * c])
                    } else {
                        None
                    };
                    let mut d_b = if flags[2] {
                        Some(vec![E::zero(); c])
                    } else {
                        None
                    };
                    // Nodes processed in ascending order so the kernel and
                    // bias accumulations are deterministic.
                    for node in 0..n {
                        let adj_n = gather(adj.data(), node);
                        if let Some(d_in) = d_in.as_mut() {
                            let g = conv1d_circular_grad_input(&adj_n, tk.data(), c, d, k, c);
                            for ch in 0..c {
                                let base = (ch * n + node) * d;
                                d_in[base..base + d].copy_from_slice(&g[ch * d..(ch + 1) * d]);
                            }
                        }
                        if let Some(d_k) = d_k.as_mut() {
                            let in_n = gather(ti.data(), node);
                            let g = conv1d_circular_grad_kernel(&adj_n, &in_n, c, d, k, c);
                            for (dst, &v) in d_k.iter_mut().zip(&g) {
                                *dst += v;
                            }
                        }
                        if let Some(d_b) = d_b.as_mut() {
                            for ch in 0..c {
                                for &g in &adj_n[ch * d..(ch + 1) * d] {
                                    d_b[ch] += g;
                                }
                            }
                        }
                    }
                    if let Some(d_in) = d_in {
                        emit(0, Tensor::new(vec![c, n, d], d_in).expect("shape"));
                    }
                    if let Some(d_k) = d_k {
                        emit(1, Tensor::new(vec![k, c, c], d_k).expect("shape"));
                    }
                    if let Some(d_b) = d_b {
                        emit(2, Tensor::new(vec![c], d_b).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Graph aggregation: multiplies every channel of a `[c, n, d]` tensor by
    /// an `[n, n]` matrix on the left, i.e. `out[ch] = a . t[ch]`.
    pub fn aggregate(&mut self, a: Var, t: Var) -> Result<Var> {
        let (ta, tt) = (self.value(a).clone(), self.value(t).clone());
        if ta.rank() != 2
            || tt.rank() != 3
            || ta.shape()[0] != ta.shape()[1]
            || ta.shape()[0] != tt.shape()[1]
        {
            return Err(Error::shape(
                "aggregate",
                "[n, n] with [c, n, d]".to_string(),
                format!(
                    "{} with {}",
                    shape_string(ta.shape()),
                    shape_string(tt.shape())
                ),
            ));
        }
        let (c, n, d) = (tt.shape()[0], tt.shape()[1], tt.shape()[2]);
        let mut out = vec![E::zero(); c * n * d];
        for ch in 0..c {
            let t_ch = &tt.data()[ch * n * d..(ch + 1) * n * d];
            let prod = matmul_raw(ta.data(), t_ch, n, n, d);
            out[ch * n * d..(ch + 1) * n * d].copy_from_slice(&prod);
        }
        let value = Tensor::new(vec![c, n, d], out)?;
        let needs = self.any_needs(&[a, t]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![a, t],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        // d/da = sum over channels of adj[ch] . t[ch]^T,
                        // channels accumulated in ascending order.
                        let mut d_a = vec![E::zero(); n * n];
                        for ch in 0..c {
                            let adj_ch = &adj.data()[ch * n * d..(ch + 1) * n * d];
                            let t_ch = &tt.data()[ch * n * d..(ch + 1) * n * d];
                            let g = matmul_a_bt_raw(adj_ch, t_ch, n, d, n);
                            for (dst, &v) in d_a.iter_mut().zip(&g) {
                                *dst += v;
                            }
                        }
                        emit(0, Tensor::new(vec![n, n], d_a).expect("shape"));
                    }
                    if flags[1] {
                        // d/dt[ch] = a^T . adj[ch]
                        let mut d_t = vec![E::zero(); c * n * d];
                        for ch in 0..c {
                            let adj_ch = &adj.data()[ch * n * d..(ch + 1) * n * d];
                            let g = matmul_at_b_raw(ta.data(), adj_ch, n, n, d);
                            d_t[ch * n * d..(ch + 1) * n * d].copy_from_slice(&g);
                        }
                        emit(1, Tensor::new(vec![c, n, d], d_t).expect("shape"));
                    }
                }),
            },
        ))
    }

    // -- shape manipulation --------------------------------------------------

    /// Scales an `[n, d]` matrix by each entry of a length-`z` vector,
    /// producing `[z, n, d]` with `out[c] = s[c] * h`.
    pub fn expand_scale(&mut self, h: Var, s: Var) -> Result<Var> {
        let (th, ts) = (self.value(h).clone(), self.value(s).clone());
        if th.rank() != 2 || ts.rank() != 1 {
            return Err(Error::shape(
                "expand_scale",
                "[n, d] with [z]".to_string(),
                format!(
                    "{} with {}",
                    shape_string(th.shape()),
                    shape_string(ts.shape())
                ),
            ));
        }
        let (n, d) = (th.shape()[0], th.shape()[1]);
        let z = ts.shape()[0];
        let mut out = Vec::with_capacity(z * n * d);
        for &sc in ts.data() {
            out.extend(th.data().iter().map(|&v| sc * v));
        }
        let value = Tensor::new(vec![z, n, d], out)?;
        let needs = self.any_needs(&[h, s]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![h, s],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        // d/dh = sum_c s[c] * adj[c], channels ascending.
                        let mut d_h = vec![E::zero(); n * d];
                        for (ch, &sc) in ts.data().iter().enumerate() {
                            let adj_ch = &adj.data()[ch * n * d..(ch + 1) * n * d];
                            for (dst, &g) in d_h.iter_mut().zip(adj_ch) {
                                *dst += sc * g;
                            }
                        }
                        emit(0, Tensor::new(vec![n, d], d_h).expect("shape"));
                    }
                    if flags[1] {
                        // d/ds[c] = <adj[c], h>
                        let mut d_s = vec![E::zero(); z];
                        for (ch, ds) in d_s.iter_mut().enumerate() {
                            let adj_ch = &adj.data()[ch * n * d..(ch + 1) * n * d];
                            for (&g, &v) in adj_ch.iter().zip(th.data()) {
                                *ds += g * v;
                            }
                        }
                        emit(1, Tensor::new(vec![z], d_s).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Weighted sum over the channel axis of a `[z, n, d]` tensor with a
    /// length-`z` weight vector: `out = sum_c w[c] * h[c]`.
    pub fn contract_scale(&mut self, h: Var, w: Var) -> Result<Var> {
        let (th, tw) = (self.value(h).clone(), self.value(w).clone());
        if th.rank() != 3 || tw.rank() != 1 || th.shape()[0] != tw.shape()[0] {
            return Err(Error::shape(
                "contract_scale",
                "[z, n, d] with [z]".to_string(),
                format!(
                    "{} with {}",
                    shape_string(th.shape()),
                    shape_string(tw.shape())
                ),
            ));
        }
        let (z, n, d) = (th.shape()[0], th.shape()[1], th.shape()[2]);
        let mut out = vec![E::zero(); n * d];
        for (ch, &wc) in tw.data().iter().enumerate() {
            let h_ch = &th.data()[ch * n * d..(ch + 1) * n * d];
            for (dst, &v) in out.iter_mut().zip(h_ch) {
                *dst += wc * v;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        let needs = self.any_needs(&[h, w]);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![h, w],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let mut d_h = Vec::with_capacity(z * n * d);
                        for &wc in tw.data() {
                            d_h.extend(adj.data().iter().map(|&g| wc * g));
                        }
                        emit(0, Tensor::new(vec![z, n, d], d_h).expect("shape"));
                    }
                    if flags[1] {
                        let mut d_w = vec![E::zero(); z];
                        for (ch, dw) in d_w.iter_mut().enumerate() {
                            let h_ch = &th.data()[ch * n * d..(ch + 1) * n * d];
                            for (&g, &v) in adj.data().iter().zip(h_ch) {
                                *dw += g * v;
                            }
                        }
                        emit(1, Tensor::new(vec![z], d_w).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Extracts row `index` of an `[r, c]` matrix as a length-`c` vector.
    pub fn select_row(&mut self, table: Var, index: usize) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(Error::shape(
                "select_row",
                "[r, c]".to_string(),
                shape_string(tt.shape()),
            ));
        }
        let (r, c) = (tt.shape()[0], tt.shape()[1]);
        if index >= r {
            return Err(Error::contract(
                "select_row",
                format!("row index {index} out of range for {r} rows"),
            ));
        }
        let data = tt.data()[index * c..(index + 1) * c].to_vec();
        let value = Tensor::new(vec![c], data)?;
        let needs = self.needs(table);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![table],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let mut d = vec![E::zero(); r * c];
                        d[index * c..(index + 1) * c].copy_from_slice(adj.data());
                        emit(0, Tensor::new(vec![r, c], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Concatenates tensors along axis 0; trailing extents must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat0", "empty part list".to_string()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.is_empty() {
            return Err(Error::shape(
                "concat0",
                "rank >= 1".to_string(),
                shape_string(&first),
            ));
        }
        let tail = first[1..].to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        let mut total0 = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s[1..] != tail[..] {
                return Err(Error::shape(
                    "concat0",
                    format!("[*, {}]", shape_string(&tail)),
                    shape_string(s),
                ));
            }
            lens.push(s[0]);
            total0 += s[0];
        }
        let stride: usize = tail.iter().product();
        let mut data = Vec::with_capacity(total0 * stride);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![total0];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        let needs = self.any_needs(parts);
        let parents = parts.to_vec();
        let tail_for_back = tail.clone();
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents,
                back: Box::new(move |adj, flags, emit| {
                    let mut offset = 0usize;
                    for (slot, &len0) in lens.iter().enumerate() {
                        let elems = len0 * stride;
                        if flags[slot] {
                            let d = adj.data()[offset..offset + elems].to_vec();
                            let mut shape = vec![len0];
                            shape.extend_from_slice(&tail_for_back);
                            emit(slot, Tensor::new(shape, d).expect("shape"));
                        }
                        offset += elems;
                    }
                }),
            },
        ))
    }

    /// Slices `len` entries starting at `start` along axis 0.
    pub fn slice0(&mut self, t: Var, start: usize, len: usize) -> Result<Var> {
        let tt = self.value(t);
        let shape = tt.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::shape(
                "slice0",
                "rank >= 1".to_string(),
                shape_string(&shape),
            ));
        }
        if len == 0 || start + len > shape[0] {
            return Err(Error::contract(
                "slice0",
                format!(
                    "slice [{start}, {}) out of range for axis of extent {}",
                    start + len,
                    shape[0]
                ),
            ));
        }
        let stride: usize = shape[1..].iter().product();
        let data = tt.data()[start * stride..(start + len) * stride].to_vec();
        let mut out_shape = vec![len];
        out_shape.extend_from_slice(&shape[1..]);
        let value = Tensor::new(out_shape, data)?;
        let needs = self.needs(t);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![t],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let total: usize = shape.iter().product();
                        let mut d = vec![E::zero(); total];
                        d[start * stride..(start + len) * stride].copy_from_slice(adj.data());
                        emit(0, Tensor::new(shape.clone(), d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Transposes a rank-2 tensor; the adjoint transposes back.
    pub fn transpose2(&mut self, t: Var) -> Result<Var> {
        let tt = self.value(t);
        if tt.rank() != 2 {
            return Err(Error::shape(
                "transpose2",
                "[r, c]".to_string(),
                shape_string(tt.shape()),
            ));
        }
        let (r, c) = (tt.shape()[0], tt.shape()[1]);
        let src = tt.data();
        let mut data = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data)?;
        let needs = self.needs(t);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![t],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let g = adj.data();
                        let mut d = vec![E::zero(); r * c];
                        for i in 0..c {
                            for j in 0..r {
                                d[j * c + i] = g[i * r + j];
                            }
                        }
                        emit(0, Tensor::new(vec![r, c], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Reinterprets a tensor under a new shape with identical element count.
    pub fn reshape(&mut self, t: Var, shape: Vec<usize>) -> Result<Var> {
        let old_shape = self.value(t).shape().to_vec();
        let value = self.value(t).reshaped(shape)?;
        let needs = self.needs(t);
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![t],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        emit(0, adj.reshaped(old_shape.clone()).expect("shape"));
                    }
                }),
            },
        ))
    }

    /// Applies a fixed per-row affine map to an `[n, s]` matrix:
    /// `out[r, c] = y[r, c] * scale[r] + shift[r]`. `scale` and `shift` are
    /// data, not tape values (used to undo per-sample normalization).
    pub fn rows_scale_shift(&mut self, y: Var, scale: &Tensor<E>, shift: &Tensor<E>) -> Result<Var> {
        let ty = self.value(y);
        if ty.rank() != 2
            || scale.rank() != 1
            || shift.rank() != 1
            || scale.shape()[0] != ty.shape()[0]
            || shift.shape()[0] != ty.shape()[0]
        {
            return Err(Error::shape(
                "rows_scale_shift",
                "[n, s] with scale [n], shift [n]".to_string(),
                format!(
                    "{} with scale {}, shift {}",
                    shape_string(ty.shape()),
                    shape_string(scale.shape()),
                    shape_string(shift.shape())
                ),
            ));
        }
        let (n, s) = (ty.shape()[0], ty.shape()[1]);
        let mut data = Vec::with_capacity(n * s);
        for r in 0..n {
            let sc = scale.data()[r];
            let sh = shift.data()[r];
            for &v in &ty.data()[r * s..(r + 1) * s] {
                data.push(v * sc + sh);
            }
        }
        let value = Tensor::new(vec![n, s], data)?;
        let needs = self.needs(y);
        let scale = scale.clone();
        Ok(self.push(
            value,
            needs,
            Origin::Op {
                parents: vec![y],
                back: Box::new(move |adj, flags, emit| {
                    if flags[0] {
                        let mut d = Vec::with_capacity(n * s);
                        for r in 0..n {
                            let sc = scale.data()[r];
                            for &g in &adj.data()[r * s..(r + 1) * s] {
                                d.push(g * sc);
                            }
                        }
                        emit(0, Tensor::new(vec![n, s], d).expect("shape"));
                    }
                }),
            },
        ))
    }

    // -- backward ------------------------------------------------------------

    /// Runs reverse accumulation from a scalar `loss`, delivering gradients to
    /// `sink` as `(parameter, contribution)` pairs. Nodes are visited in
    /// strictly descending recording order, so accumulation order is fixed.
    pub fn backward_with_sink(
        &self,
        loss: Var,
        sink: &mut dyn FnMut(ParamId, Tensor<E>),
    ) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!(
                    "loss must be a scalar, got shape {}",
                    shape_string(loss_node.value.shape())
                ),
            ));
        }
        let mut adjoints: Vec<Option<Tensor<E>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor::full(loss_node.value.shape().to_vec(), E::one())?);

        for idx in (0..=loss.0).rev() {
            let adj = match adjoints[idx].take() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.origin {
                Origin::Constant => {}
                Origin::Param(id) => sink(*id, adj),
                Origin::Op { parents, back } => {
                    let flags: Vec<bool> = parents.iter().map(|&p| self.needs(p)).collect();
                    let mut emit = |slot: usize, contribution: Tensor<E>| {
                        let parent = parents[slot].0;
                        debug_assert!(parent < idx, "parent recorded after child");
                        match &mut adjoints[parent] {
                            None => adjoints[parent] = Some(contribution),
                            Some(t) => t
                                .add_assign(&contribution)
                                .expect("adjoint shapes agree by construction"),
                        }
                    };
                    back(&adj, &flags, &mut emit);
                }
            }
        }
        Ok(())
    }

    /// Backward pass accumulating directly into `store` gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<E>) -> Result<()> {
        let mut pending: Vec<(ParamId, Tensor<E>)> = Vec::new();
        self.backward_with_sink(loss, &mut |id, t| pending.push((id, t)))?;
        for (id, t) in pending {
            store.accumulate_grad(id, &t)?;
        }
        Ok(())
    }

    /// Backward pass accumulating into a detached buffer.
    pub fn backward_into(&self, loss: Var, buf: &mut GradBuffer<E>) -> Result<()> {
        let mut pending: Vec<(ParamId, Tensor<E>)> = Vec::new();
        self.backward_with_sink(loss, &mut |id, t| pending.push((id, t)))?;
        for (id, t) in pending {
            buf.add(id, t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with<E: Element>(pairs: &[(&str, Tensor<E>)]) -> (ParamStore<E>, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = pairs
            .iter()
            .map(|(n, t)| store.register(*n, t.clone()).unwrap())
            .collect();
        (store, ids)
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.register("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.register("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![1.0f64, -2.0, 3.0]).unwrap())]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let s = tape.sum(p);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_two_p() {
        // loss = sum(p * p) at p = [3] has gradient [6].
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![3.0f64]).unwrap())]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[6.0]);
    }

    #[test]
    fn gradients_accumulate_until_cleared() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![2.0f64]).unwrap())]);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let p = tape.param(&store, ids[0]);
            let s = tape.sum(p);
            tape.backward(s, &mut store).unwrap();
        }
        assert_eq!(store.get(ids[0]).grad(), &[2.0]);
        store.zero_grads();
        assert_eq!(store.get(ids[0]).grad(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![1.0f64, 2.0]).unwrap())]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let doubled = tape.scale(p, 2.0);
        assert!(tape.backward(doubled, &mut store).is_err());
    }

    #[test]
    fn matmul_backward_matches_hand_computation() {
        // loss = sum(a . b), a = [[1,2],[3,4]], b = [[5],[6]].
        // d loss / d a = ones . b^T = [[5,6],[5,6]]; d loss / d b = a^T . ones = [[4],[6]].
        let a = Tensor::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0f64], vec![6.0]]).unwrap();
        let (mut store, ids) = store_with(&[("a", a), ("b", b)]);
        let mut tape = Tape::new();
        let va = tape.param(&store, ids[0]);
        let vb = tape.param(&store, ids[1]);
        let prod = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.value(prod).data(), &[17.0, 39.0]);
        let s = tape.sum(prod);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(store.get(ids[1]).grad(), &[4.0, 6.0]);
    }

    #[test]
    fn mse_against_constant_target() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![1.0f64, 2.0]).unwrap())]);
        let target = Tensor::vector(vec![0.0f64, 0.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let loss = tape.mse(p, &target).unwrap();
        // (1 + 4) / 2 = 2.5
        assert_eq!(tape.value(loss).data(), &[2.5]);
        tape.backward(loss, &mut store).unwrap();
        // d/dp mean((p - 0)^2) = 2 p / n = [1, 2].
        assert_eq!(store.get(ids[0]).grad(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_zeroes_gradient_at_and_below_zero() {
        let (mut store, ids) =
            store_with(&[("p", Tensor::vector(vec![-1.0f64, 0.0, 2.0]).unwrap())]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let r = tape.relu(p);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(r);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_subexpression_gradients_add() {
        // loss = sum(x + x) -> d/dx = 2.
        let (mut store, ids) = store_with(&[("x", Tensor::vector(vec![5.0f64]).unwrap())]);
        let mut tape = Tape::new();
        let x = tape.param(&store, ids[0]);
        let twice = tape.add(x, x).unwrap();
        let s = tape.sum(twice);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[2.0]);
    }

    #[test]
    fn grad_buffer_merge_and_apply_match_direct_backward() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![1.5f64, -0.5]).unwrap())]);

        // Two samples accumulated directly.
        for k in [1.0, 3.0] {
            let mut tape = Tape::new();
            let p = tape.param(&store, ids[0]);
            let scaled = tape.scale(p, k);
            let s = tape.sum(scaled);
            tape.backward(s, &mut store).unwrap();
        }
        let direct = store.get(ids[0]).grad().to_vec();
        store.zero_grads();

        // Same two samples through detached buffers merged in order.
        let mut merged = GradBuffer::for_store(&store);
        for k in [1.0, 3.0] {
            let mut tape = Tape::new();
            let p = tape.param(&store, ids[0]);
            let scaled = tape.scale(p, k);
            let s = tape.sum(scaled);
            let mut buf = GradBuffer::for_store(&store);
            tape.backward_into(s, &mut buf).unwrap();
            merged.merge(buf).unwrap();
        }
        merged.apply_to(&mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), direct.as_slice());
    }

    #[test]
    fn constant_branches_receive_no_gradient_work() {
        let (mut store, ids) = store_with(&[("p", Tensor::vector(vec![1.0f64]).unwrap())]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let c = tape.constant(Tensor::vector(vec![10.0f64]).unwrap());
        let s1 = tape.mul(p, c).unwrap();
        let s = tape.sum(s1);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[10.0]);
    }

    #[test]
    fn concat_slice_roundtrip_gradients() {
        let (mut store, ids) = store_with(&[(
            "p",
            Tensor::new(vec![4, 1, 2], (0..8).map(|i| i as f64).collect()).unwrap(),
        )]);
        let mut tape = Tape::new();
        let p = tape.param(&store, ids[0]);
        let head = tape.slice0(p, 0, 1).unwrap();
        let tail = tape.slice0(p, 1, 3).unwrap();
        let tail2 = tape.scale(tail, 2.0);
        let joined = tape.concat0(&[head, tail2]).unwrap();
        assert_eq!(tape.value(joined).shape(), &[4, 1, 2]);
        let s = tape.sum(joined);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(
            store.get(ids[0]).grad(),
            &[1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn select_row_scatters_gradient() {
        let (mut store, ids) = store_with(&[(
            "table",
            Tensor::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
        )]);
        let mut tape = Tape::new();
        let t = tape.param(&store, ids[0]);
        let row = tape.select_row(t, 1).unwrap();
        assert_eq!(tape.value(row).data(), &[3.0, 4.0]);
        let s = tape.sum(row);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn select_row_out_of_range_is_a_contract_error() {
        let (store, ids) = store_with(&[("t", Tensor::from_rows(&[vec![1.0f64]]).unwrap())]);
        let mut tape = Tape::new();
        let t = tape.param(&store, ids[0]);
        assert!(tape.select_row(t, 1).is_err());
    }

    #[test]
    fn transpose_round_trips_values_and_gradients() {
        let (mut store, ids) = store_with(&[(
            "m",
            Tensor::from_rows(&[vec![1.0f64, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap(),
        )]);
        let mut tape = Tape::new();
        let m = tape.param(&store, ids[0]);
        let t = tape.transpose2(m).unwrap();
        assert_eq!(tape.value(t).shape(), &[3, 2]);
        assert_eq!(tape.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = tape.transpose2(t).unwrap();
        assert_eq!(tape.value(back).data(), store.value(ids[0]).data());

        // d/dm of sum(transpose(m) * w) is w transposed back into m's layout.
        let w = tape.constant(
            Tensor::from_rows(&[vec![1.0f64, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]]).unwrap(),
        );
        let prod = tape.mul(t, w).unwrap();
        let s = tape.sum(prod);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn per_node_conv_matches_single_conv_bitwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (c, n, d, k) = (3usize, 4usize, 8usize, 3usize);
        let input = Tensor::<f64>::uniform(vec![c, n, d], -1.0, 1.0, &mut rng).unwrap();
        let kernel = Tensor::<f64>::uniform(vec![k, c, c], -1.0, 1.0, &mut rng).unwrap();
        let bias = Tensor::<f64>::uniform(vec![c], -1.0, 1.0, &mut rng).unwrap();

        let mut tape = Tape::new();
        let vi = tape.constant(input.clone());
        let vk = tape.constant(kernel.clone());
        let vb = tape.constant(bias.clone());
        let out = tape.conv1d_circular_per_node(vi, vk, vb).unwrap();
        let out = tape.value(out).clone();

        for node in 0..n {
            let mut slice = vec![0.0f64; c * d];
            for ch in 0..c {
                for a in 0..d {
                    slice[ch * d + a] = input.at(&[ch, node, a]);
                }
            }
            let single = conv1d_circular_raw(&slice, c, d, kernel.data(), k, c, bias.data());
            for ch in 0..c {
                for a in 0..d {
                    assert_eq!(out.at(&[ch, node, a]), single[ch * d + a]);
                }
            }
        }
    }

    #[test]
    fn aggregate_with_identity_is_identity() {
        let t = Tensor::<f64>::new(vec![2, 3, 2], (0..12).map(|i| i as f64).collect()).unwrap();
        let mut eye = vec![0.0f64; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let a = Tensor::new(vec![3, 3], eye).unwrap();
        let mut tape = Tape::new();
        let va = tape.constant(a);
        let vt = tape.constant(t.clone());
        let out = tape.aggregate(va, vt).unwrap();
        assert_eq!(tape.value(out), &t);
    }

    #[test]
    fn expand_then_contract_matches_weighted_identity() {
        let h = Tensor::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0]]).unwrap();
        let (mut store, ids) = store_with(&[
            ("h", h.clone()),
            ("s", Tensor::vector(vec![0.5f64, 2.0]).unwrap()),
            ("w", Tensor::vector(vec![1.0f64, 1.0]).unwrap()),
        ]);
        let mut tape = Tape::new();
        let vh = tape.param(&store, ids[0]);
        let vs = tape.param(&store, ids[1]);
        let vw = tape.param(&store, ids[2]);
        let expanded = tape.expand_scale(vh, vs).unwrap();
        assert_eq!(tape.value(expanded).shape(), &[2, 2, 2]);
        let contracted = tape.contract_scale(expanded, vw).unwrap();
        // (0.5 + 2.0) * h
        assert_eq!(tape.value(contracted).data(), &[2.5, 5.0, 7.5, 10.0]);
        let s = tape.sum(contracted);
        tape.backward(s, &mut store).unwrap();
        // d/dh = sum_c w[c] s[c] = 2.5 everywhere.
        assert_eq!(store.get(ids[0]).grad(), &[2.5, 2.5, 2.5, 2.5]);
        // d/ds[c] = w[c] * sum(h) = 10.
        assert_eq!(store.get(ids[1]).grad(), &[10.0, 10.0]);
        // d/dw[c] = s[c] * sum(h).
        assert_eq!(store.get(ids[2]).grad(), &[5.0, 20.0]);
    }

    #[test]
    fn rows_scale_shift_applies_and_backpropagates_scale_only() {
        let (mut store, ids) =
            store_with(&[("y", Tensor::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0]]).unwrap())]);
        let scale = Tensor::vector(vec![2.0f64, 10.0]).unwrap();
        let shift = Tensor::vector(vec![1.0f64, -1.0]).unwrap();
        let mut tape = Tape::new();
        let y = tape.param(&store, ids[0]);
        let out = tape.rows_scale_shift(y, &scale, &shift).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 5.0, 29.0, 39.0]);
        let s = tape.sum(out);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[0]).grad(), &[2.0, 2.0, 10.0, 10.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_gradient_sums_to_zero() {
        let (mut store, ids) = store_with(&[(
            "x",
            Tensor::from_rows(&[vec![0.3f64, -1.2, 2.0], vec![0.0, 0.0, 0.0]]).unwrap(),
        )]);
        let mut tape = Tape::new();
        let x = tape.param(&store, ids[0]);
        let y = tape.row_softmax(x).unwrap();
        for r in 0..2 {
            let row_sum: f64 = (0..3).map(|c| tape.value(y).at2(r, c)).sum();
            assert!((row_sum - 1.0).abs() < 1e-15);
        }
        // Pick out one coordinate as the loss; softmax gradient rows sum to 0.
        let mask = Tensor::from_rows(&[vec![1.0f64, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let m = tape.constant(mask);
        let picked = tape.mul(y, m).unwrap();
        let s = tape.sum(picked);
        tape.backward(s, &mut store).unwrap();
        let g = store.get(ids[0]).grad();
        let row0: f64 = g[0..3].iter().sum();
        assert!(row0.abs() < 1e-15);
        assert!(g[0] > 0.0 && g[1] < 0.0 && g[2] < 0.0);
    }
}
