use std::collections::HashMap;

use crate::error::Result;
use crate::layers::Layer;
use crate::tensor::{Gradients, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step; returns the updated parameter.
pub fn adam_update(param: &Tensor, grad: &Tensor, state: &mut AdamState, cfg: &AdamConfig) -> Result<Tensor> {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    state.m = state.m.zip_map(grad, |m, g| b1 * m + (1.0 - b1) * g)?;
    state.v = state.v.zip_map(grad, |v, g| b2 * v + (1.0 - b2) * g * g)?;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let step = state
        .m
        .zip_map(&state.v, |m, v| cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon))?;
    param.zip_map(&step, |p, s| p - s)
}

/// Adam over a model's trainable parameters, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: HashMap<String, AdamState>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            config: AdamConfig::new(learning_rate),
            states: HashMap::new(),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update. Parameters absent from `grads` get a zero
    /// gradient, which leaves them in place while their moments decay.
    pub fn step(&mut self, model: &mut dyn Layer, grads: &Gradients) -> Result<()> {
        let mut result = Ok(());
        let cfg = self.config;
        let states = &mut self.states;
        model.visit_parameters(&mut |name, p| {
            if result.is_err() || !p.is_trainable() {
                return;
            }
            let g = grads.param(p).unwrap_or_else(|| Tensor::zeros(p.shape()));
            let state = states.entry(name.to_string()).or_insert_with(|| AdamState::new(p.shape()));
            result = adam_update(p.value(), &g, state, &cfg).and_then(|v| p.set(v));
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = Tensor::vector(&[1.0, -2.0]);
        let mut s = AdamState::new(&[2]);
        let out = adam_update(&p, &Tensor::zeros(&[2]), &mut s, &AdamConfig::new(0.1)).unwrap();
        assert_eq!(out.data(), p.data());
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let p = Tensor::vector(&[0.0, 0.0, 0.0]);
        let g = Tensor::vector(&[3.0, -0.01, 250.0]);
        let mut s = AdamState::new(&[3]);
        let out = adam_update(&p, &g, &mut s, &AdamConfig::new(0.05)).unwrap();
        for (o, gi) in out.data().iter().zip(g.data()) {
            assert!((o + 0.05 * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5, -0.7, 3.0];
        let mut p = crate::tensor::Parameter::new(Tensor::zeros(&[3]));
        let cfg = AdamConfig::new(0.05);
        let mut s = AdamState::new(&[3]);
        for step in 0..2000 {
            let tape = Tape::new();
            let x = tape.param(&p);
            let loss = x.sub(&tape.constant(Tensor::vector(&target))).unwrap().square().sum();
            let g = loss.backward().unwrap().param(&p).unwrap();
            let lr = 0.1 * (1e-2f64).powf(step as f64 / 2000.0);
            let next = adam_update(p.value(), &g, &mut s, &AdamConfig { learning_rate: lr, ..cfg }).unwrap();
            p.set(next).unwrap();
        }
        for (v, t) in p.value().data().iter().zip(target) {
            assert!((v - t).abs() < 1e-6, "{v} vs {t}");
        }
    }
}
