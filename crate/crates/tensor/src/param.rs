use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Named learnable tensor. The shape is fixed at construction.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

/// Owns every parameter of a model, addressable by id or unique name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name `{name}`")));
        }
        value.check_finite("parameter")?;
        let id = ParamId(self.params.len());
        self.params.push(Parameter { name: name.clone(), value, grad: None, trainable: true });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Replace a parameter's value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::shape("set_value", p.value.shape(), value.shape()));
        }
        value.check_finite("set_value")?;
        p.value = value;
        Ok(())
    }

    /// Set every gradient to zeros of the parameter's shape.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != g.shape() {
            return Err(TensorError::shape("accumulate_grad", p.value.shape(), g.shape()));
        }
        match &mut p.grad {
            Some(existing) => existing.add_assign(g),
            None => p.grad = Some(g.clone()),
        }
        Ok(())
    }

    /// `p ← p − lr·(grad + weight_decay·p)` on every trainable parameter,
    /// then zero the gradients.
    pub fn sgd_step(&mut self, lr: f64, weight_decay: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(TensorError::Contract(format!(
                "sgd_step needs lr > 0 and weight_decay >= 0, got {lr} and {weight_decay}"
            )));
        }
        for p in self.params.iter().filter(|p| p.trainable) {
            match &p.grad {
                None => return Err(TensorError::Contract(format!("parameter `{}` has no gradient", p.name))),
                Some(g) => g.check_finite("gradient")?,
            }
        }
        let (lr, wd) = (T::from_f64(lr), T::from_f64(weight_decay));
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            let g = p.grad.as_ref().expect("checked above");
            for (v, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * (gv + wd * *v);
            }
            p.value.check_finite("sgd_step")?;
        }
        self.zero_grad();
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
