use serde::{Deserialize, Serialize};

use super::{NeuralError, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators, one vector per parameter tensor in traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub config: NadamConfig,
}

impl OptimizerState {
    pub fn new<P: Params>(params: &P, config: NadamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        OptimizerState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            config,
        }
    }
}

/// One Nesterov-accelerated Adam update:
///
/// ```text
/// m = β1·m + (1−β1)·g          v = β2·v + (1−β2)·g²
/// m̂ = β1·m / (1−β1^(t+1)) + (1−β1)·g / (1−β1^t)
/// v̂ = v / (1−β2^t)
/// θ −= lr · m̂ / (√v̂ + ε)
/// ```
///
/// Gradients are checked for finiteness before anything is modified.
pub fn nadam_step<P: Params>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), NeuralError> {
    let grads = grads.tensors();
    for g in &grads {
        if let Some(index) = g.values.iter().position(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteGradient {
                tensor: g.name.clone(),
                index,
            });
        }
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.first_moment.len() {
        return Err(NeuralError::StateMismatch("tensor count".into()));
    }
    for (p, g) in tensors.iter().zip(&grads) {
        if p.values.len() != g.values.len() {
            return Err(NeuralError::StateMismatch(p.name.clone()));
        }
    }
    state.step += 1;
    let NadamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let m_scale = beta1 / (1.0 - beta1.powi(t + 1));
    let g_scale = (1.0 - beta1) / (1.0 - beta1.powi(t));
    let v_scale = 1.0 / (1.0 - beta2.powi(t));
    for (i, (p, g)) in tensors.iter_mut().zip(&grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        if m.len() != p.values.len() {
            return Err(NeuralError::StateMismatch(p.name.clone()));
        }
        for (((theta, gi), mi), vi) in p
            .values
            .iter_mut()
            .zip(&g.values)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = m_scale * *mi + g_scale * gi;
            let v_hat = v_scale * *vi;
            *theta -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
