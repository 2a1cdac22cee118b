//! Finite-difference verification of tape gradients, op by op and for the
//! composed grouped-layer pipeline.
//!
//! Every test builds a scalar loss twice: once on a tape (forward + backward
//! for analytic gradients) and once as a value-only closure for central
//! differences. Inputs are random and, where it matters, deliberately
//! non-symmetric so transposition mistakes cannot cancel out.

use nodecast_core::gradcheck::{compare_gradients, GradCheck};
use nodecast_core::tensor::tape::{ParamStore, Tape, Var};
use nodecast_core::tensor::Tensor;
use nodecast_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Runs forward + backward once, then compares every stored gradient
/// coordinate against central differences of the same scalar loss.
fn check<F>(store: &mut ParamStore<f64>, build: F, label: &str)
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(store, &mut tape).unwrap();
    store.zero_grads();
    tape.backward(loss, store).unwrap();

    let mut loss_fn = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(s, &mut t)?;
        Ok(t.value(l).data()[0])
    };
    let outcome = compare_gradients(
        store,
        &GradCheck {
            samples_per_param: 4096,
            epsilon: 1e-6,
            seed: 7,
        },
        &mut loss_fn,
    )
    .unwrap();
    assert!(
        outcome.max_rel_error < 1e-5,
        "{label}: rel {} at {}[{}] analytic {} numeric {}",
        outcome.max_rel_error,
        outcome.worst_param,
        outcome.worst_index,
        outcome.worst_analytic,
        outcome.worst_numeric
    );
}

/// Scalar loss: sum of the output weighted by a fixed random tensor, so every
/// output coordinate contributes with a distinct coefficient.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(rand_tensor(rng, shape, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

#[test]
fn aggregate_gradients_hold_for_nonsymmetric_mixing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let a = store
        .register("a", rand_tensor(&mut rng, vec![4, 4], -1.0, 1.0))
        .unwrap();
    let t = store
        .register("t", rand_tensor(&mut rng, vec![3, 4, 5], -1.0, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(2);
            let va = tape.param(s, a);
            let vt = tape.param(s, t);
            let out = tape.aggregate(va, vt)?;
            weighted_sum(tape, out, &mut wrng)
        },
        "aggregate",
    );
}

#[test]
fn circular_convolution_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let input = store
        .register("input", rand_tensor(&mut rng, vec![2, 7], -1.0, 1.0))
        .unwrap();
    let kernel = store
        .register("kernel", rand_tensor(&mut rng, vec![3, 3, 2], -1.0, 1.0))
        .unwrap();
    let bias = store
        .register("bias", rand_tensor(&mut rng, vec![3], -1.0, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(4);
            let vi = tape.param(s, input);
            let vk = tape.param(s, kernel);
            let vb = tape.param(s, bias);
            let out = tape.conv1d_circular(vi, vk, vb)?;
            weighted_sum(tape, out, &mut wrng)
        },
        "conv1d_circular",
    );
}

#[test]
fn per_node_convolution_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let input = store
        .register("input", rand_tensor(&mut rng, vec![2, 4, 7], -1.0, 1.0))
        .unwrap();
    let kernel = store
        .register("kernel", rand_tensor(&mut rng, vec![3, 2, 2], -1.0, 1.0))
        .unwrap();
    let bias = store
        .register("bias", rand_tensor(&mut rng, vec![2], -1.0, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(6);
            let vi = tape.param(s, input);
            let vk = tape.param(s, kernel);
            let vb = tape.param(s, bias);
            let conv = tape.conv1d_circular_per_node(vi, vk, vb)?;
            let act = tape.relu(conv);
            weighted_sum(tape, act, &mut wrng)
        },
        "conv1d_circular_per_node + relu",
    );
}

#[test]
fn slice_and_reordered_concat_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let x = store
        .register("x", rand_tensor(&mut rng, vec![5, 3, 4], -1.0, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(9);
            let vx = tape.param(s, x);
            let p1 = tape.slice0(vx, 0, 2)?;
            let p2 = tape.slice0(vx, 2, 3)?;
            let cat = tape.concat0(&[p2, p1])?;
            weighted_sum(tape, cat, &mut wrng)
        },
        "slice0 / concat0",
    );
}

#[test]
fn learned_adjacency_chain_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let e1 = store
        .register("e1", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))
        .unwrap();
    let e2 = store
        .register("e2", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(11);
            let v1 = tape.param(s, e1);
            let v2 = tape.param(s, e2);
            let v2t = tape.transpose2(v2)?;
            let logits = tape.matmul(v1, v2t)?;
            let act = tape.relu(logits);
            let a = tape.row_softmax(act)?;
            weighted_sum(tape, a, &mut wrng)
        },
        "relu(matmul(e1, e2^T)) -> row_softmax",
    );
}

#[test]
fn shared_scaler_expand_contract_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let h = store
        .register("h", rand_tensor(&mut rng, vec![4, 5], -1.0, 1.0))
        .unwrap();
    let sc = store
        .register("s", rand_tensor(&mut rng, vec![3], 0.2, 1.0))
        .unwrap();
    check(
        &mut store,
        |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(13);
            let vh = tape.param(s, h);
            let vs = tape.param(s, sc);
            let t = tape.expand_scale(vh, vs)?;
            let act = tape.relu(t);
            let y = tape.contract_scale(act, vs)?;
            weighted_sum(tape, y, &mut wrng)
        },
        "expand_scale -> relu -> contract_scale (shared scaler)",
    );
}

#[test]
fn denormalizing_head_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::<f64>::new();
    let x = store
        .register("x", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))
        .unwrap();
    let scale = rand_tensor(&mut rng, vec![4], 0.5, 2.0);
    let shift = rand_tensor(&mut rng, vec![4], -1.0, 1.0);
    let target = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
    check(
        &mut store,
        move |s, tape| {
            let vx = tape.param(s, x);
            let out = tape.rows_scale_shift(vx, &scale, &shift)?;
            tape.mse(out, &target)
        },
        "rows_scale_shift -> mse",
    );
}

#[test]
fn grouped_layer_pipeline_gradients_match_differences() {
    // Bypass slice, per-node convolution, aggregation over a non-symmetric
    // row-stochastic matrix, concatenation, and the fusing MLP, end to end.
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut store = ParamStore::<f64>::new();
    let h_id = store
        .register("h", rand_tensor(&mut rng, vec![4, 5, 8], -1.0, 1.0))
        .unwrap();
    let kernel = store
        .register("kernel", rand_tensor(&mut rng, vec![3, 2, 2], -0.5, 0.5))
        .unwrap();
    let bias = store
        .register("bias", rand_tensor(&mut rng, vec![2], -0.5, 0.5))
        .unwrap();
    let w1 = store
        .register("w1", rand_tensor(&mut rng, vec![8, 8], -0.5, 0.5))
        .unwrap();
    let b1 = store
        .register("b1", rand_tensor(&mut rng, vec![8], -0.5, 0.5))
        .unwrap();
    let w2 = store
        .register("w2", rand_tensor(&mut rng, vec![8, 8], -0.5, 0.5))
        .unwrap();
    let b2 = store
        .register("b2", rand_tensor(&mut rng, vec![8], -0.5, 0.5))
        .unwrap();
    let mut araw = rand_tensor(&mut rng, vec![5, 5], 0.05, 1.0);
    {
        let data = araw.data_mut();
        for r in 0..5 {
            let s: f64 = data[r * 5..(r + 1) * 5].iter().sum();
            for v in &mut data[r * 5..(r + 1) * 5] {
                *v /= s;
            }
        }
    }

    let a_const = araw.clone();
    check(
        &mut store,
        move |s, tape| {
            let mut wrng = ChaCha8Rng::seed_from_u64(21);
            let h = tape.param(s, h_id);
            let a = tape.constant(a_const.clone());
            let p1 = tape.slice0(h, 0, 2)?;
            let p2 = tape.slice0(h, 2, 2)?;
            let vk = tape.param(s, kernel);
            let vb = tape.param(s, bias);
            let conv = tape.conv1d_circular_per_node(p2, vk, vb)?;
            let t = tape.relu(conv);
            let v = tape.aggregate(a, t)?;
            let cat = tape.concat0(&[p1, v])?;
            let flat = tape.reshape(cat, vec![20, 8])?;
            let vw1 = tape.param(s, w1);
            let vb1 = tape.param(s, b1);
            let vw2 = tape.param(s, w2);
            let vb2 = tape.param(s, b2);
            let m1 = tape.matmul(flat, vw1)?;
            let a1 = tape.add_row(m1, vb1)?;
            let r1 = tape.relu(a1);
            let m2 = tape.matmul(r1, vw2)?;
            let a2 = tape.add_row(m2, vb2)?;
            let out = tape.reshape(a2, vec![4, 5, 8])?;
            weighted_sum(tape, out, &mut wrng)
        },
        "grouped layer pipeline",
    );
}
