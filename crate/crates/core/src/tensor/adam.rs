//! Adam optimizer operating on a [`ParamStore`].
//!
//! Standard bias-corrected formulation: with gradient `g`,
//!
//! ```text
//! m <- b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
//! v <- b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
//! p <- p - lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! One call advances every registered parameter by one step, then clears all
//! gradients, so callers accumulate a batch gradient and step exactly once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::ParamStore;
use crate::tensor::Element;

/// Adam hyperparameters. `learning_rate` has no sensible universal default
/// and must be set; the moment decays and epsilon default to the customary
/// values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// Customary defaults with the given learning rate.
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "adam.learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        for (name, v) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(
                "adam.epsilon",
                format!("must be positive, got {}", self.epsilon),
            ));
        }
        Ok(())
    }
}

/// Applies one Adam update to every parameter in `store` using the gradients
/// accumulated since the last step, then zeroes the gradients and increments
/// each parameter's step counter.
///
/// With freshly zeroed moment state and zero gradients this is an exact
/// no-op on the values (0 / (sqrt(0) + eps) = 0).
pub fn adam_step<E: Element>(store: &mut ParamStore<E>, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    let lr = E::of_f64(cfg.learning_rate);
    let b1 = E::of_f64(cfg.beta1);
    let b2 = E::of_f64(cfg.beta2);
    let eps = E::of_f64(cfg.epsilon);
    let one = E::one();

    for p in store.params_mut() {
        let (value, grad, m, v, step) = p.optimizer_state_mut();
        *step += 1;
        let t = *step as i32;
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let data = value.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            grad[i] = E::zero();
        }
    }
    Ok(())
}
