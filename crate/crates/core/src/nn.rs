//! Affine layers over the computation graph.

use std::f64::consts::SQRT_2;

use star_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::Result;
use crate::rng::{normal, uniform, Stream};

/// Fan-in scaled uniform weights `U(-b, b)` with `b = gain·√(3/fan_in)`,
/// so unit-variance inputs give outputs of variance `gain²`. Use gain √2
/// in front of a relu.
pub fn fan_in_uniform<T: Scalar>(rng: &mut Stream, fan_in: usize, fan_out: usize, gain: f64) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| T::from_f64(uniform(rng, -bound, bound)))
}

/// `N(0, std²)` entries.
pub fn gaussian<T: Scalar>(rng: &mut Stream, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(std * normal(rng)))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Stream,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        Self::with_gain(store, rng, name, (fan_in, fan_out), bias, 1.0)
    }

    /// Zero-initialised bias; weights per [`fan_in_uniform`].
    pub fn with_gain<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Stream,
        name: &str,
        (fan_in, fan_out): (usize, usize),
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(rng, fan_in, fan_out, gain))?;
        let bias = if bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let mut y = g.matmul(x, w)?;
        if let Some(b) = self.bias {
            let b = g.param(store, b);
            y = g.add(y, b)?;
        }
        Ok(y)
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

/// Two affine layers with a relu between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Stream,
        name: &str,
        dims: (usize, usize, usize),
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::with_gain(store, rng, &format!("{name}.fc1"), (dims.0, dims.1), true, SQRT_2)?,
            second: Linear::new(store, rng, &format!("{name}.fc2"), dims.1, dims.2, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.second.forward(g, store, h)
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> {
        self.first.params().chain(self.second.params())
    }
}
