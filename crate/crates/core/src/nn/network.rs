use rand::Rng;

use super::{Layer, LayerSpec, Tensor};
use crate::error::{Error, Result};

/// A feed-forward stack of layers.
///
/// Every mutable access to parameters bumps `version`; tapes remember the
/// version they were recorded at so gradients are never computed against
/// parameters that changed after the forward pass. Equality compares layers
/// only.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Layer inputs recorded during [`Network::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Tensor>,
    version: u64,
}

/// Parameter gradients per layer (empty for parameter-free layers) and the
/// gradient with respect to the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn flat(&self) -> Vec<&Tensor> {
        self.layers.iter().flatten().collect()
    }

    /// Adds `other` into `self` (same network).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().flatten().zip(other.layers.iter().flatten()) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.layers.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

impl Network {
    pub fn new(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::init(s, rng)).collect::<Result<_>>()?;
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers, version: 0 }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.version += 1;
        &mut self.layers[i]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.version += 1;
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Indices of layers that carry parameters, in order.
    pub fn parametric_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| !self.layers[i].params().is_empty())
            .collect()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|expected| {
                Error::shape(format!("layer {i} ({:?})", l.spec()), expected, format!("{shape:?}"))
            })?;
        }
        Ok(shape)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        self.output_shape(input.shape())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let y = l.forward(&x);
            inputs.push(x);
            x = y;
        }
        Ok((
            x,
            Tape {
                inputs,
                version: self.version,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.output_shape(input.shape())?;
        Ok(self.layers.iter().fold(input.clone(), |x, l| l.forward(&x)))
    }

    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> Result<Gradients> {
        if tape.version != self.version || tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape {
                tape: tape.version,
                network: self.version,
            });
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (gx, gp) = l.backward(&tape.inputs[i], &g);
            grads[i] = gp;
            g = gx;
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }
}
