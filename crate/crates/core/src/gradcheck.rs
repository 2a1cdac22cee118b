//! Finite-difference verification of analytic gradients.
//!
//! The checker treats the loss as a black box `ParamStore -> f64` and compares
//! stored analytic gradients against central differences
//! `(f(p + e) - f(p - e)) / (2 e)` at randomly sampled coordinates. It is the
//! independent oracle used by the test suite; it deliberately shares no code
//! with the tape's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{ParamId, ParamStore};
use crate::tensor::Element;

/// Black-box loss evaluation used by the checker.
pub type LossFn<'a, E> = dyn FnMut(&ParamStore<E>) -> Result<f64> + 'a;

/// Central-difference estimate of `d loss / d p[index]` for one coordinate.
/// The parameter is restored to its original value afterwards.
pub fn fd_gradient<E: Element>(
    store: &mut ParamStore<E>,
    id: ParamId,
    index: usize,
    epsilon: f64,
    loss: &mut LossFn<'_, E>,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::contract("fd_gradient", "epsilon must be positive"));
    }
    let original = store.value(id).clone();
    if index >= original.len() {
        return Err(Error::contract(
            "fd_gradient",
            format!(
                "coordinate {index} out of range for parameter of {} elements",
                original.len()
            ),
        ));
    }

    let base = original.data()[index].as_f64();
    let mut perturbed = |v: f64, store: &mut ParamStore<E>| -> Result<f64> {
        let mut t = original.clone();
        t.data_mut()[index] = E::of_f64(v);
        store.set_value(id, t)?;
        loss(store)
    };
    let plus = perturbed(base + epsilon, store)?;
    let minus = perturbed(base - epsilon, store)?;
    store.set_value(id, original)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Settings for a sampled gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Coordinates sampled per parameter tensor (capped at its length).
    pub samples_per_param: usize,
    /// Central-difference step.
    pub epsilon: f64,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            samples_per_param: 4,
            epsilon: 1e-5,
            seed: 0,
        }
    }
}

/// Result of a sampled comparison; `max_rel_error` is over all sampled
/// coordinates with denominator `max(|analytic|, |numeric|, 1e-6)`.
#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub compared: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares the analytic gradients currently stored in `store` (the caller
/// runs forward + backward first) against central differences of `loss`.
pub fn compare_gradients<E: Element>(
    store: &mut ParamStore<E>,
    check: &GradCheck,
    loss: &mut LossFn<'_, E>,
) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut outcome = GradCheckOutcome {
        compared: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };

    for id in ids {
        let len = store.value(id).len();
        let samples = check.samples_per_param.min(len);
        // Sampled without replacement when the tensor is small enough.
        let mut indices: Vec<usize> = if samples == len {
            (0..len).collect()
        } else {
            let mut picked = Vec::with_capacity(samples);
            while picked.len() < samples {
                let ix = rng.gen_range(0..len);
                if !picked.contains(&ix) {
                    picked.push(ix);
                }
            }
            picked
        };
        indices.sort_unstable();

        for index in indices {
            let analytic = store.get(id).grad()[index].as_f64();
            let numeric = fd_gradient(store, id, index, check.epsilon, loss)?;
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            outcome.compared += 1;
            if rel > outcome.max_rel_error {
                outcome.max_rel_error = rel;
                outcome.worst_param = store.get(id).name().to_string();
                outcome.worst_index = index;
                outcome.worst_analytic = analytic;
                outcome.worst_numeric = numeric;
            }
        }
    }
    Ok(outcome)
}
