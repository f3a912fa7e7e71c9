//! Layer stacks with reverse-mode differentiation.

use serde::{Deserialize, Serialize};

use super::layers::{self, LayerSpec, Mode};
use super::loss::Loss;
use super::Tensor;
use crate::error::{Error, Result};

/// Declarative description of a layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape (batch axis excluded).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Per-sample output shape, validating every layer along the way.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape[1..].to_vec())
    }

    /// Indices into the flat parameter list for each layer.
    pub fn param_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                let n = l.param_shapes().len();
                let r = next..next + n;
                next += n;
                r
            })
            .collect()
    }
}

/// Values a layer keeps from the forward pass for its backward pass.
#[derive(Debug)]
enum Saved {
    Input(Tensor),
    Output(Tensor),
    Shape(Vec<usize>),
}

#[derive(Debug)]
struct Tape {
    saved: Vec<Saved>,
    mode: Mode,
}

/// A layer stack with its parameters.
#[derive(Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    tape: Option<Tape>,
}

impl Clone for Network {
    /// Clones the parameters; any recorded forward pass is not carried over.
    fn clone(&self) -> Self {
        Network {
            spec: self.spec.clone(),
            params: self.params.clone(),
            tape: None,
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.output_shape()?;
        let shapes: Vec<Vec<usize>> = spec.layers.iter().flat_map(LayerSpec::param_shapes).collect();
        if shapes.len() != params.len() {
            return Err(Error::dim("Network::new", "parameter tensors", shapes.len(), params.len()));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::dim(
                    "Network::new",
                    format!("parameter {i} length"),
                    s.iter().product(),
                    p.len(),
                ));
            }
        }
        Ok(Network {
            spec,
            params,
            tape: None,
        })
    }

    /// Build with freshly initialized parameters.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let params = super::init::init_parameters(&spec, seed);
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Concatenation of all parameters in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim("set_flat_params", "parameter count", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Forward pass without recording anything; safe to share across threads.
    pub fn predict(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.run(input, mode, None)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut saved = Vec::with_capacity(self.spec.layers.len());
        let out = self.run(input, mode, Some(&mut saved))?;
        self.tape = Some(Tape { saved, mode });
        Ok(out)
    }

    fn run(&self, input: &Tensor, mode: Mode, mut saved: Option<&mut Vec<Saved>>) -> Result<Tensor> {
        if input.shape().len() != self.spec.input_shape.len() + 1 || input.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::dim(
                "forward",
                "input shape",
                self.spec.input_shape.iter().product(),
                input.shape()[1..].iter().product(),
            ));
        }
        let ranges = self.spec.param_ranges();
        let mut x = input.clone();
        for (layer, range) in self.spec.layers.iter().zip(ranges) {
            let p = &self.params[range];
            let (y, keep) = match layer {
                LayerSpec::FullyConnected { .. } => (layers::fc_forward(&x, &p[0], &p[1])?, Saved::Input(x)),
                LayerSpec::Conv3d { .. } => (layers::conv3d_forward(&x, &p[0], &p[1])?, Saved::Input(x)),
                LayerSpec::TrilinearUpsample => {
                    let shape = x.shape().to_vec();
                    (layers::upsample_trilinear_forward(&x)?, Saved::Shape(shape))
                }
                LayerSpec::LeakyRelu { slope } => (layers::leaky_relu(&x, *slope), Saved::Input(x)),
                LayerSpec::ValvedLeakyRelu { slope } => {
                    (layers::valved_leaky_relu(&x, *slope, mode), Saved::Input(x))
                }
                LayerSpec::Sigmoid => {
                    let y = layers::sigmoid(&x);
                    (y.clone(), Saved::Output(y))
                }
                LayerSpec::Reshape { .. } => {
                    let shape = x.shape().to_vec();
                    let target = layer.output_shape(&shape)?;
                    (x.reshape(&target)?, Saved::Shape(shape))
                }
            };
            if let Some(s) = saved.as_deref_mut() {
                s.push(keep);
            }
            x = y;
        }
        Ok(x)
    }

    /// Back-propagate `loss` through the most recent [`Network::forward`],
    /// accumulating into every parameter's gradient buffer. Returns the
    /// gradient with respect to the network input.
    ///
    /// The recorded pass is consumed; a second call without a new forward
    /// pass is a state error.
    pub fn backward(&mut self, loss: &Loss) -> Result<Tensor> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward pass".into()))?;
        let ranges = self.spec.param_ranges();
        let mut g = loss.grad.clone();
        for ((layer, range), saved) in self.spec.layers.iter().zip(ranges).zip(tape.saved).rev() {
            g = match (layer, saved) {
                (LayerSpec::FullyConnected { .. }, Saved::Input(x)) => {
                    let (gi, gw, gb) = layers::fc_backward(&x, &self.params[range.start], &g);
                    accumulate(&mut self.params[range.start], &gw);
                    accumulate(&mut self.params[range.start + 1], &gb);
                    Tensor::new(x.shape(), gi)?
                }
                (LayerSpec::Conv3d { .. }, Saved::Input(x)) => {
                    let (gi, gw, gb) = layers::conv3d_backward(&x, &self.params[range.start], &g)?;
                    accumulate(&mut self.params[range.start], &gw);
                    accumulate(&mut self.params[range.start + 1], &gb);
                    Tensor::new(x.shape(), gi)?
                }
                (LayerSpec::TrilinearUpsample, Saved::Shape(shape)) => {
                    Tensor::new(&shape, layers::upsample_trilinear_backward(&shape, &g))?
                }
                (LayerSpec::LeakyRelu { slope }, Saved::Input(x)) => {
                    Tensor::new(x.shape(), layers::leaky_relu_backward(&x, *slope, &g))?
                }
                (LayerSpec::ValvedLeakyRelu { slope }, Saved::Input(x)) => {
                    let s = match tape.mode {
                        Mode::Train => *slope,
                        Mode::Eval => 0.0,
                    };
                    Tensor::new(x.shape(), layers::leaky_relu_backward(&x, s, &g))?
                }
                (LayerSpec::Sigmoid, Saved::Output(y)) => Tensor::new(y.shape(), layers::sigmoid_backward(&y, &g))?,
                (LayerSpec::Reshape { .. }, Saved::Shape(shape)) => g.reshape(&shape)?,
                _ => return Err(Error::State("tape does not match layer stack".into())),
            };
        }
        Ok(g)
    }
}

fn accumulate(param: &mut Tensor, grad: &[f64]) {
    for (a, &b) in param.grad_mut().iter_mut().zip(grad) {
        *a += b;
    }
}
