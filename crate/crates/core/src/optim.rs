//! Adam with bias correction and coupled L2 weight decay.

use std::collections::BTreeMap;

use ecgan_tensor::Real;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named parameter and its gradient, as handed to an optimizer.
#[derive(Debug)]
pub struct Slot<'a, T: Real = f32> {
    pub name: &'a str,
    pub value: &'a mut [T],
    pub grad: Option<&'a [T]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Adversarial networks: β = (0.5, 0.999).
    pub fn gan(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Classifier: β = (0.9, 0.999).
    pub fn classifier(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::gan(2e-4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Per-parameter first and second moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Moments)> {
        self.state.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn restore(&mut self, step: u64, moments: Vec<(String, Vec<f32>, Vec<f32>)>) {
        self.step = step;
        self.state = moments.into_iter().map(|(name, m, v)| (name, Moments { m, v })).collect();
    }

    /// One update of every slot. Every slot must carry a gradient of the
    /// parameter's length; nothing is modified if any does not.
    ///
    /// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
    /// `θ ← θ − lr · m̂ / (√v̂ + ε)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
    pub fn step(&mut self, slots: &mut [Slot<'_, f32>]) -> Result<()> {
        for s in slots.iter() {
            match s.grad {
                None => return Err(Error::Contract(format!("missing gradient for {}", s.name))),
                Some(g) if g.len() != s.value.len() => {
                    return Err(Error::Contract(format!(
                        "gradient for {} has {} entries, parameter has {}",
                        s.name,
                        g.len(),
                        s.value.len()
                    )))
                }
                _ => {}
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for s in slots.iter_mut() {
            let grad = s.grad.expect("checked above");
            let n = s.value.len();
            let mom = self.state.entry(s.name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            for (((theta, &g), m), v) in s.value.iter_mut().zip(grad).zip(&mut mom.m).zip(&mut mom.v) {
                let g = f64::from(g);
                let m1 = beta1 * f64::from(*m) + (1.0 - beta1) * g;
                let v1 = beta2 * f64::from(*v) + (1.0 - beta2) * g * g;
                *m = m1 as f32;
                *v = v1 as f32;
                let update = lr * (m1 / c1) / ((v1 / c2).sqrt() + eps);
                *theta = (f64::from(*theta) - update) as f32;
            }
        }
        Ok(())
    }
}

/// Biases and norm parameters are exempt from weight decay.
pub fn default_exempt(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta")
}

/// L2 penalty `coefficient · θ` added to the gradient before the Adam update.
#[derive(Clone, Copy, Debug)]
pub struct DecayPolicy {
    pub coefficient: f64,
    pub exempt: fn(&str) -> bool,
}

impl DecayPolicy {
    pub fn new(coefficient: f64) -> Self {
        DecayPolicy {
            coefficient,
            exempt: default_exempt,
        }
    }

    pub fn none() -> Self {
        DecayPolicy::new(0.0)
    }

    /// `g ← g + c·θ` for non-exempt names. A zero coefficient leaves the
    /// gradient bit-for-bit untouched.
    pub fn apply(&self, name: &str, value: &[f32], grad: &mut [f32]) {
        if self.coefficient == 0.0 || (self.exempt)(name) {
            return;
        }
        for (g, &w) in grad.iter_mut().zip(value) {
            *g = (f64::from(*g) + self.coefficient * f64::from(w)) as f32;
        }
    }

    /// Applies the policy to every gradient of a network.
    pub fn apply_to(&self, network: &crate::nn::Network, grads: &mut crate::nn::Gradients) {
        for (p, g) in network.params().iter().zip(&mut grads.grads) {
            if let Some(g) = g {
                self.apply(&p.name, p.tensor.data(), g);
            }
        }
    }
}
