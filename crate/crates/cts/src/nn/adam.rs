//! Adam optimizer over flat parameter buffers.

use super::{NnError, ParamLayout};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay ("momentum" in the published configuration).
    pub beta2: f64,
    pub epsilon: f64,
    /// Added to every gradient as `l2 * parameter`.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.997,
            epsilon: 1e-5,
            l2: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One Adam update in place. A non-finite gradient aborts with the name of
/// the offending tensor (resolved through `layout`).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
    layout: &ParamLayout,
) -> Result<(), NnError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        let tensor = layout
            .tensor_at(bad)
            .map(|t| t.name.clone())
            .unwrap_or_else(|| format!("<index {bad}>"));
        return Err(NnError::NonFiniteGradient { tensor });
    }
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - config.beta1.powf(t);
    let bias2 = 1.0 - config.beta2.powf(t);
    for i in 0..params.len() {
        let g = grads[i] + config.l2 * params[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(n: usize) -> ParamLayout {
        let mut l = ParamLayout::default();
        l.push("x", &[n]);
        l
    }

    fn no_decay() -> AdamConfig {
        AdamConfig {
            l2: 0.0,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_zero_moments_is_fixed_point() {
        let mut params = vec![1.5, -2.0];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.0, 0.0], &mut state, &no_decay(), &layout(2)).unwrap();
        assert_eq!(params, vec![1.5, -2.0]);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let config = no_decay();
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let mut last = params[0];
        let mut step_size = 0.0;
        for _ in 0..5000 {
            adam_step(&mut params, &[2.5], &mut state, &config, &layout(1)).unwrap();
            step_size = (params[0] - last).abs();
            last = params[0];
        }
        assert!(
            (step_size - config.learning_rate).abs() < 0.05 * config.learning_rate,
            "step size {step_size}"
        );
    }

    #[test]
    fn minimizes_square_within_2000_steps() {
        // Adam's displacement per step is bounded by roughly the learning
        // rate, so covering the distance from x = 5 in 2000 steps needs a
        // scalar-scale rate; 0.001 is a mini-batch setting.
        let config = AdamConfig {
            learning_rate: 0.01,
            l2: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![5.0];
        let mut state = AdamState::new(1);
        for _ in 0..2000 {
            let grad = 2.0 * params[0];
            adam_step(&mut params, &[grad], &mut state, &config, &layout(1)).unwrap();
        }
        assert!(params[0].abs() < 1e-2, "x = {}", params[0]);
    }

    #[test]
    fn nan_gradient_names_the_tensor() {
        let mut l = ParamLayout::default();
        l.push("encoder.w", &[2]);
        l.push("head.b", &[2]);
        let mut params = vec![0.0; 4];
        let mut state = AdamState::new(4);
        let grads = vec![0.0, 0.0, f64::NAN, 0.0];
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default(), &l)
            .unwrap_err();
        assert!(err.to_string().contains("head.b"), "{err}");
    }
}
