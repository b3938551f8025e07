//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numerics::params::ParamStore;

/// Per-parameter moment buffers and step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let m = params
            .iter()
            .map(|e| Matrix::zeros(e.values.rows, e.values.cols))
            .collect();
        let v = params
            .iter()
            .map(|e| Matrix::zeros(e.values.rows, e.values.cols))
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }
}

/// One Adam update over every entry of the store. Gradients are read, never
/// cleared. A non-finite gradient rejects the whole step before any state is
/// touched; parameter values are guaranteed finite afterwards.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    assert_eq!(
        params.len(),
        state.m.len(),
        "adam state built for a different store"
    );
    for e in params.iter() {
        if let Some((r, c)) = e.grads.first_non_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {:?} at ({r},{c}); step rejected",
                e.name
            )));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (i, e) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..e.values.len() {
            let g = e.grads.data[j];
            m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * g;
            v.data[j] = state.beta2 * v.data[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m.data[j] / bc1;
            let v_hat = v.data[j] / bc2;
            e.values.data[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        if let Some((r, c)) = e.values.first_non_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value in {:?} at ({r},{c}) after update",
                e.name
            )));
        }
    }
    Ok(())
}
