//! Named parameters and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub frozen: bool,
}

/// All parameters of a model; names are unique dotted paths
/// (e.g. `dam.inverted.se.fc1.weight`).
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S: Scalar> {
    items: Vec<Parameter<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            items: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name.into(), value, false)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name.into(), value, true)
    }

    fn insert(&mut self, name: String, value: Tensor<S>, frozen: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        value.ensure_finite(&name)?;
        let id = self.items.len();
        self.by_name.insert(name.clone(), id);
        self.items.push(Parameter {
            name,
            value,
            frozen,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.items[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.items[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Overwrite a parameter value (same shape), frozen or not.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let p = &mut self.items[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "set_value {}: {:?} vs {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        value.ensure_finite(&p.name)?;
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar elements across all parameters.
    pub fn element_count(&self) -> usize {
        self.items.iter().map(|p| p.value.len()).sum()
    }

    /// Bit-exact fingerprint of one parameter's value.
    pub fn fingerprint(&self, id: ParamId) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &v in self.items[id.0].value.as_slice() {
            h ^= v.to_f64_lossy().to_bits();
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

/// Per-step association between parameters and tape leaves.
///
/// Binding the same parameter twice returns the same leaf, so weights shared
/// across timesteps accumulate gradient naturally. Frozen parameters bind as
/// constants and never receive gradient.
#[derive(Default)]
pub struct Bindings {
    map: HashMap<ParamId, ValueId>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings {
            map: HashMap::new(),
        }
    }

    pub fn bind<S: Scalar>(
        &mut self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        id: ParamId,
    ) -> ValueId {
        if let Some(&v) = self.map.get(&id) {
            return v;
        }
        let p = params.get(id);
        let v = tape.leaf(p.value.clone(), !p.frozen);
        self.map.insert(id, v);
        v
    }

    pub fn node(&self, id: ParamId) -> Option<ValueId> {
        self.map.get(&id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, ValueId)> + '_ {
        self.map.iter().map(|(&p, &v)| (p, v))
    }
}

/// Adam with bias correction (lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8).
pub struct Adam<S: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<S>, Vec<S>)>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all trainable parameters. A parameter with no gradient
    /// this step uses a zero gradient (its moments still decay); frozen
    /// parameters are untouched and get no state.
    pub fn step(
        &mut self,
        params: &mut ParamSet<S>,
        mut grad_of: impl FnMut(ParamId) -> Option<Tensor<S>>,
    ) -> Result<()> {
        self.step += 1;
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (nb1, nb2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let lr1 = S::of(self.lr / bc1);
        let inv_bc2 = S::of(1.0 / bc2);
        let eps = S::of(self.eps);

        for idx in 0..params.len() {
            let id = ParamId(idx);
            if params.get(id).frozen {
                continue;
            }
            let n = params.value(id).len();
            let grad = grad_of(id);
            if let Some(g) = &grad {
                if g.shape() != params.value(id).shape() {
                    return Err(Error::shape(format!(
                        "gradient shape {:?} != parameter {} shape {:?}",
                        g.shape(),
                        params.get(id).name,
                        params.value(id).shape()
                    )));
                }
            }
            let (m, v) = self.moments[idx]
                .get_or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
            let mut value = params.value(id).clone();
            let data = value.make_mut();
            match grad {
                Some(g) => {
                    for i in 0..n {
                        let gi = g.as_slice()[i];
                        m[i] = b1 * m[i] + nb1 * gi;
                        v[i] = b2 * v[i] + nb2 * gi * gi;
                        let vhat = v[i] * inv_bc2;
                        data[i] = data[i] - lr1 * m[i] / (vhat.sqrt() + eps);
                    }
                }
                None => {
                    for i in 0..n {
                        m[i] = b1 * m[i];
                        v[i] = b2 * v[i];
                        let vhat = v[i] * inv_bc2;
                        data[i] = data[i] - lr1 * m[i] / (vhat.sqrt() + eps);
                    }
                }
            }
            value.ensure_finite(&params.get(id).name)?;
            params.set_value(id, value)?;
        }
        Ok(())
    }
}
