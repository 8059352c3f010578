use super::model::ModelParams;

/// Adam moment estimates mirroring every learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            first_moment: model.zeros_like(),
            second_moment: model.zeros_like(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(state: &mut AdamState, model: &mut ModelParams, grads: &ModelParams, lr: f64) {
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let params = model.tensors_mut();
    let firsts = state.first_moment.tensors_mut();
    let seconds = state.second_moment.tensors_mut();
    for ((((_, p), (_, m)), (_, v)), (_, g)) in params.into_iter().zip(firsts).zip(seconds).zip(grads.tensors()) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
