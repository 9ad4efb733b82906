//! Adam with per-group learning rates.

use crate::error::{Error, Result};
use crate::params::{GroupKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    rates: [f64; 2],
    states: Vec<Option<Moments>>,
}

impl Adam {
    /// Optimizer with fresh state for every parameter currently in `store`.
    pub fn new(config: AdamConfig, store: &ParamStore, base_rate: f64, adapt_rate: f64) -> Self {
        let states = store
            .iter()
            .map(|(_, p)| {
                Some(Moments {
                    m: vec![0.0; p.value.len()],
                    v: vec![0.0; p.value.len()],
                    t: 0,
                })
            })
            .collect();
        Self {
            config,
            rates: [base_rate, adapt_rate],
            states,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn rate(&self, kind: GroupKind) -> f64 {
        self.rates[kind.index()]
    }

    pub fn set_rate(&mut self, kind: GroupKind, rate: f64) {
        self.rates[kind.index()] = rate;
    }

    pub fn state(&self, index: usize) -> Option<&Moments> {
        self.states.get(index).and_then(|s| s.as_ref())
    }

    /// Drop the state of one parameter (the next step touching it fails).
    pub fn forget(&mut self, index: usize) {
        if let Some(s) = self.states.get_mut(index) {
            *s = None;
        }
    }

    /// Apply one bias-corrected Adam update to every parameter that received
    /// a gradient, then clear all gradients. Parameters whose group rate is
    /// zero are left bitwise unchanged.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let AdamConfig { beta1, beta2, eps } = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            let p = store.get(id);
            if !p.touched {
                continue;
            }
            let rate = self.rates[p.group.index()];
            if rate == 0.0 {
                continue;
            }
            let state = self
                .states
                .get_mut(id.0)
                .and_then(|s| s.as_mut())
                .ok_or_else(|| Error::MissingState(p.name.clone()))?;
            state.t += 1;
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            let p = store.get_mut(id);
            let grads = p.grad.data().to_vec();
            for (k, (theta, g)) in p.value.data_mut().iter_mut().zip(grads).enumerate() {
                state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
                state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
                let m_hat = state.m[k] / bc1;
                let v_hat = state.v[k] / bc2;
                *theta -= rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
