use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its accumulated gradient and moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let n = value.len();
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds graph gradients into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            for (acc, x) in self.params[id.0].grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Update rule applied by [`Optimizer::step`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for UpdateRule {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub rule: UpdateRule,
    /// Number of completed updates (bias-correction exponent for Adam).
    pub steps: u64,
}

impl Optimizer {
    pub fn new(rule: UpdateRule) -> Self {
        Optimizer { rule, steps: 0 }
    }

    /// Clips the global gradient norm to `clip_norm`, applies the update rule
    /// and zeroes every gradient. A non-finite gradient aborts the step with
    /// parameters untouched (gradients are still cleared).
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, clip_norm: Option<f64>) -> Result<(), AutodiffError> {
        if let Some(p) = store.params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            let name = p.name.clone();
            store.zero_grad();
            return Err(AutodiffError::NonFiniteGradient(name));
        }
        let scale = match clip_norm {
            Some(c) => {
                let norm = store.grad_norm();
                if norm > c { c / norm } else { 1.0 }
            }
            None => 1.0,
        };
        self.steps += 1;
        match self.rule {
            UpdateRule::Sgd => {
                for p in &mut store.params {
                    for (w, g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                        *w -= lr * scale * g;
                    }
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for p in &mut store.params {
                    let Parameter { value, grad, first_moment, second_moment, .. } = p;
                    for (((w, g), m), v) in value
                        .data_mut()
                        .iter_mut()
                        .zip(grad.iter())
                        .zip(first_moment.iter_mut())
                        .zip(second_moment.iter_mut())
                    {
                        let g = g * scale;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grad();
        Ok(())
    }
}
