//! A small dense feed-forward engine: batched forward passes, reverse-mode
//! gradients for three losses, Adam, inverted dropout and a
//! finite-difference gradient checker.
//!
//! Weights are stored `(outputs, inputs)`; a batch is a row-major
//! `(examples, features)` matrix.

mod adam;
pub mod checkpoint;
mod dropout;
mod gradcheck;

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use dropout::{dropout_apply, dropout_mask, DropoutSpec};
pub use gradcheck::{finite_diff_check, finite_diff_check_against};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Post-activation values of every layer for one batch; `activations[0]` is
/// the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has an input")
    }
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::validation(format!(
                    "layer {i}: bias length {} != {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(Error::validation(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.inputs(),
                    i - 1,
                    layers[i - 1].outputs()
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    /// ReLU hidden layers and an identity output, Glorot-uniform weights and
    /// zero biases. `dims` lists every width from input to output.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(dims, |fan_in, fan_out| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit))
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |fan_in, fan_out| Array2::zeros((fan_out, fan_in)))
    }

    fn build(dims: &[usize], mut weights: impl FnMut(usize, usize) -> Array2<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::validation(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weights: weights(w[0], w[1]),
                bias: Array1::zeros(w[1]),
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Width of the last hidden layer (the input width for a single-layer net).
    pub fn embedding_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].inputs()
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::validation(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for s in self.param_slices_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::validation(format!(
                "input has dimension {cols}, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Single-example forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for l in &self.layers {
            a = affine(&a.view(), l);
        }
        Ok(a)
    }

    /// Activations of the last hidden layer.
    pub fn embed_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for l in &self.layers[..self.layers.len() - 1] {
            a = affine(&a.view(), l);
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for l in &self.layers {
            let next = affine(&activations[activations.len() - 1].view(), l);
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Back-propagates `d_output` (the loss gradient w.r.t. the network
    /// output, `(examples, outputs)`) through a recorded forward pass.
    pub fn backward_trace(&self, trace: &Trace, d_output: Array2<f64>) -> Gradients {
        let mut delta = d_output;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                delta.zip_mut_with(&trace.activations[i + 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let input = &trace.activations[i];
            // `dot` may hand back a column-major result for thin shapes;
            // gradients are consumed as flat row-major slices.
            let dw = delta.t().dot(input).as_standard_layout().into_owned();
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&l.weights);
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

fn affine(a: &ArrayView2<'_, f64>, l: &Layer) -> Array2<f64> {
    let mut z = a.dot(&l.weights.t());
    z += &l.bias;
    if l.activation == Activation::Relu {
        z.mapv_inplace(|v| v.max(0.0));
    }
    z
}

/// Supported training losses. All act on a single network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean of `softplus(z) - y z` with `y` in `[0, 1]`.
    BinaryCrossEntropy,
    /// Mean of `(z - y)^2`.
    SquaredError,
    /// Mean over groups of `-sum_i p_i log softmax(z)_i`; targets are the
    /// per-group probabilities `p`.
    ListwiseSoftmax,
}

/// Training examples with scalar targets; `groups` partitions the rows for
/// the listwise loss and is ignored by the pointwise ones.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
    pub groups: Vec<Range<usize>>,
}

impl Batch {
    pub fn pointwise(inputs: Array2<f64>, targets: Vec<f64>) -> Self {
        Batch {
            inputs,
            targets,
            groups: Vec::new(),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Loss value and its gradient w.r.t. each output score.
pub fn loss_and_gradient(
    loss: Loss,
    scores: &[f64],
    targets: &[f64],
    groups: &[Range<usize>],
) -> Result<(f64, Vec<f64>)> {
    if scores.is_empty() || scores.len() != targets.len() {
        return Err(Error::training(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let n = scores.len() as f64;
    let (value, grad) = match loss {
        Loss::BinaryCrossEntropy => {
            let mut total = 0.0;
            let grad = scores
                .iter()
                .zip(targets)
                .map(|(&z, &y)| {
                    total += softplus(z) - y * z;
                    (sigmoid(z) - y) / n
                })
                .collect();
            (total / n, grad)
        }
        Loss::SquaredError => {
            let mut total = 0.0;
            let grad = scores
                .iter()
                .zip(targets)
                .map(|(&z, &y)| {
                    total += (z - y) * (z - y);
                    2.0 * (z - y) / n
                })
                .collect();
            (total / n, grad)
        }
        Loss::ListwiseSoftmax => {
            if groups.is_empty() {
                return Err(Error::training("listwise loss needs query groups"));
            }
            let g = groups.len() as f64;
            let mut grad = vec![0.0; scores.len()];
            let mut total = 0.0;
            for r in groups {
                let s = &scores[r.clone()];
                let p = &targets[r.clone()];
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let mass: f64 = p.iter().sum();
                for (i, (&si, &pi)) in s.iter().zip(p).enumerate() {
                    total -= pi * (si - lse);
                    grad[r.start + i] = (mass * (si - lse).exp() - pi) / g;
                }
            }
            (total / g, grad)
        }
    };
    if !value.is_finite() {
        return Err(Error::training(format!("non-finite loss {value}")));
    }
    Ok((value, grad))
}

/// Mean batch loss and its gradient w.r.t. every parameter.
pub fn backward(net: &DenseNet, batch: &Batch, loss: Loss) -> Result<(Gradients, f64)> {
    if batch.inputs.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    if net.output_dim() != 1 {
        return Err(Error::validation("losses require a single network output"));
    }
    let trace = net.forward_trace(batch.inputs.view())?;
    let scores = trace.output().column(0).to_vec();
    let (value, grad) = loss_and_gradient(loss, &scores, &batch.targets, &batch.groups)?;
    let d_out = Array2::from_shape_vec((grad.len(), 1), grad).expect("column shape");
    Ok((net.backward_trace(&trace, d_out), value))
}

/// Mean batch loss without gradients.
pub fn evaluate_loss(net: &DenseNet, batch: &Batch, loss: Loss) -> Result<f64> {
    let out = net.forward_batch(batch.inputs.view())?;
    let scores = out.column(0).to_vec();
    Ok(loss_and_gradient(loss, &scores, &batch.targets, &batch.groups)?.0)
}

/// One Adam update of every network parameter.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.step(net.param_slices_mut(), grads.slices())?;
    if !net.params_finite() {
        return Err(Error::training("parameters became non-finite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
