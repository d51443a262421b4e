use std::collections::BTreeMap;

use crate::{Grads, NnError, ParamStore, Result};

/// A first-order update rule. Parameters with `requires_grad == false` are
/// left untouched; every other parameter must have a gradient.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamStore, grads: &Grads<f32>) -> Result<()>;
}

fn grad_for<'a>(grads: &'a Grads<f32>, name: &str, len: usize) -> Result<&'a [f32]> {
    let g = grads
        .get(name)
        .ok_or_else(|| NnError::MissingGradient(name.to_string()))?;
    if g.len() != len {
        return Err(NnError::ShapeMismatch {
            op: "optimizer",
            a: vec![len],
            b: vec![g.len()],
        });
    }
    Ok(g)
}

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore, grads: &Grads<f32>) -> Result<()> {
        for (name, p) in params.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let g = grad_for(grads, name, p.numel())?;
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi as f64;
                *w = (*w as f64 - self.lr * *vi) as f32;
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments, state kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore, grads: &Grads<f32>) -> Result<()> {
        // Validate first so a missing gradient leaves every parameter as is.
        for (name, p) in params.iter() {
            if p.requires_grad {
                grad_for(grads, name, p.numel())?;
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let g = grad_for(grads, name, p.numel())?;
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w = (*w as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
