use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    pub(crate) fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(z),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Softmax => "softmax",
        })
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: Activation,
}

/// Address of a single weight: the edge from neuron `from` of the previous layer
/// into neuron `to` of layer `layer`.
///
/// Ordered by `(layer, to, from)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightRef {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
}

impl WeightRef {
    pub fn new(layer: usize, from: usize, to: usize) -> Self {
        Self { layer, from, to }
    }

    fn key(&self) -> (usize, usize, usize) {
        (self.layer, self.to, self.from)
    }
}

impl Ord for WeightRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for WeightRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for WeightRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}[{}->{}]", self.layer, self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    spec: LayerSpec,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    /// `weights` is row-major `(output_size, input_size)`.
    pub fn new(spec: LayerSpec, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if spec.input_size == 0 || spec.output_size == 0 {
            return Err(Error::InvalidModel("layer sizes must be >= 1".into()));
        }
        if weights.len() != spec.input_size * spec.output_size {
            return Err(Error::InvalidModel(format!(
                "expected {} weights for a {}x{} layer, got {}",
                spec.input_size * spec.output_size,
                spec.output_size,
                spec.input_size,
                weights.len()
            )));
        }
        if biases.len() != spec.output_size {
            return Err(Error::InvalidModel(format!(
                "expected {} biases, got {}",
                spec.output_size,
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite weight or bias".into()));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[to * self.spec.input_size + from]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    /// `z = W x + b`, written into `out`.
    #[inline]
    pub(crate) fn affine(&self, x: &[f64], out: &mut [f64]) {
        let n_in = self.spec.input_size;
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * n_in..(j + 1) * n_in];
            let mut acc = self.biases[j];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *o = acc;
        }
    }
}

/// A labelled batch of samples with stable identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, ids: Vec<u64>) -> Result<Self> {
        if inputs.rows() != labels.len() || labels.len() != ids.len() {
            return Err(Error::InvalidBatch(format!(
                "{} input rows, {} labels, {} ids",
                inputs.rows(),
                labels.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidBatch(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            inputs,
            labels,
            ids,
        })
    }

    pub fn empty(input_dim: usize) -> Self {
        Self {
            inputs: Matrix::empty(input_dim),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&k| self.labels[k]).collect(),
            ids: indices.iter().map(|&k| self.ids[k]).collect(),
        }
    }
}

/// A dense feedforward classifier whose last layer is a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<DenseLayer>,
}

impl Model {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidModel("model has no layers".into()));
        };
        if last.spec.activation != Activation::Softmax {
            return Err(Error::InvalidModel(
                "the final layer must use a softmax activation".into(),
            ));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].spec.activation == Activation::Softmax {
                return Err(Error::InvalidModel(format!(
                    "softmax on layer {k}; only the final layer may use it"
                )));
            }
            if pair[0].spec.output_size != pair[1].spec.input_size {
                return Err(Error::InvalidModel(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].spec.output_size,
                    k + 1,
                    pair[1].spec.input_size
                )));
            }
        }
        Ok(Self { layers })
    }

    /// He-normal weights and zero biases. `sizes` lists every width including the
    /// input and the class count, e.g. `[2, 3, 2]`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidModel(
                "need at least input and output sizes".into(),
            ));
        }
        let n = sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            if n_in == 0 || n_out == 0 {
                return Err(Error::InvalidModel("layer sizes must be >= 1".into()));
            }
            let std = (2.0 / n_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            let weights = (0..n_in * n_out).map(|_| normal.sample(rng)).collect();
            let activation = if k + 1 == n {
                Activation::Softmax
            } else {
                hidden
            };
            layers.push(DenseLayer::new(
                LayerSpec {
                    input_size: n_in,
                    output_size: n_out,
                    activation,
                },
                weights,
                vec![0.0; n_out],
            )?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].spec.input_size
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_size
    }

    pub fn last_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, index: usize) -> Result<&DenseLayer> {
        self.layers.get(index).ok_or(Error::LayerOutOfRange {
            index,
            n_layers: self.layers.len(),
        })
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Every weight reference of a layer, in total order.
    pub fn layer_refs(&self, layer: usize) -> Result<Vec<WeightRef>> {
        let spec = self.layer(layer)?.spec;
        Ok((0..spec.output_size)
            .flat_map(|to| (0..spec.input_size).map(move |from| WeightRef::new(layer, from, to)))
            .collect())
    }

    fn check_ref(&self, r: &WeightRef) -> Result<usize> {
        let layer = self
            .layers
            .get(r.layer)
            .ok_or(Error::WeightOutOfBounds(*r))?;
        if r.from >= layer.spec.input_size || r.to >= layer.spec.output_size {
            return Err(Error::WeightOutOfBounds(*r));
        }
        Ok(r.to * layer.spec.input_size + r.from)
    }

    pub fn weight(&self, r: &WeightRef) -> Result<f64> {
        let idx = self.check_ref(r)?;
        Ok(self.layers[r.layer].weights[idx])
    }

    pub fn read_weights(&self, refs: &[WeightRef]) -> Result<Vec<f64>> {
        refs.iter().map(|r| self.weight(r)).collect()
    }

    /// Returns a copy of the model with `refs[k]` set to `values[k]`.
    pub fn write_weights(&self, refs: &[WeightRef], values: &[f64]) -> Result<Model> {
        let mut patched = self.clone();
        patched.write_weights_in_place(refs, values)?;
        Ok(patched)
    }

    /// Patches the weights of this model; on error nothing is modified.
    pub fn write_weights_in_place(&mut self, refs: &[WeightRef], values: &[f64]) -> Result<()> {
        if refs.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} weight refs but {} values",
                refs.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite weight value".into()));
        }
        let indices = refs
            .iter()
            .map(|r| self.check_ref(r))
            .collect::<Result<Vec<_>>>()?;
        for ((r, idx), v) in refs.iter().zip(indices).zip(values) {
            self.layers[r.layer].weights[idx] = *v;
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix, expected: usize) -> Result<()> {
        if inputs.cols() != expected {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {expected}",
                inputs.cols()
            )));
        }
        Ok(())
    }

    /// Class probabilities for every row of the batch.
    pub fn forward(&self, batch: &Batch) -> Result<Matrix> {
        self.forward_inputs(batch.inputs())
    }

    pub fn forward_inputs(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs, self.input_size())?;
        Ok(self.run_from(0, inputs))
    }

    /// Runs layers `start..` on `inputs`, which must be the outputs of layer `start - 1`
    /// (or raw features when `start == 0`).
    pub fn forward_from(&self, start: usize, inputs: &Matrix) -> Result<Matrix> {
        let layer = self.layer(start)?;
        self.check_inputs(inputs, layer.spec.input_size)?;
        Ok(self.run_from(start, inputs))
    }

    fn run_from(&self, start: usize, inputs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(inputs.rows(), self.n_classes());
        // both buffers hold any layer's input or output since they swap roles
        let width = self
            .layers
            .iter()
            .map(|l| l.spec.output_size)
            .max()
            .unwrap_or(0)
            .max(inputs.cols());
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        for r in 0..inputs.rows() {
            let x = inputs.row(r);
            a[..x.len()].copy_from_slice(x);
            let mut cur = x.len();
            for layer in &self.layers[start..] {
                let n_out = layer.spec.output_size;
                layer.affine(&a[..cur], &mut b[..n_out]);
                layer.spec.activation.apply(&mut b[..n_out]);
                std::mem::swap(&mut a, &mut b);
                cur = n_out;
            }
            out.row_mut(r).copy_from_slice(&a[..cur]);
        }
        out
    }

    /// Post-activation outputs of layer `layer - 1` (the raw inputs when `layer == 0`).
    pub fn layer_inputs(&self, batch: &Batch, layer: usize) -> Result<Matrix> {
        self.layer(layer)?;
        self.check_inputs(batch.inputs(), self.input_size())?;
        let mut current = batch.inputs().clone();
        for l in &self.layers[..layer] {
            current = apply_layer(l, &current, true);
        }
        Ok(current)
    }

    /// `W x + b` of `layer`, before its activation.
    pub fn pre_activations(&self, batch: &Batch, layer: usize) -> Result<Matrix> {
        let inputs = self.layer_inputs(batch, layer)?;
        Ok(apply_layer(&self.layers[layer], &inputs, false))
    }

    /// Predicted class per row (argmax, lowest index on ties).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let probs = self.forward(batch)?;
        Ok(probs.iter_rows().map(super::argmax).collect())
    }

    /// Mean categorical cross-entropy with probabilities clamped at [`PROB_CLAMP`].
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("loss of an empty batch is undefined"));
        }
        let probs = self.forward(batch)?;
        Ok(mean_cross_entropy(&probs, batch.labels()))
    }
}

/// NaN probabilities (from overflowing logits) yield a NaN loss rather than
/// being clamped into a finite one.
pub(crate) fn mean_cross_entropy(probs: &Matrix, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let p = probs.get(r, y);
            if p.is_nan() {
                f64::NAN
            } else {
                -p.max(PROB_CLAMP).ln()
            }
        })
        .sum();
    total / labels.len() as f64
}

fn apply_layer(layer: &DenseLayer, inputs: &Matrix, activate: bool) -> Matrix {
    let n_out = layer.spec.output_size;
    let mut out = Matrix::zeros(inputs.rows(), n_out);
    for r in 0..inputs.rows() {
        let row = out.row_mut(r);
        layer.affine(inputs.row(r), row);
        if activate {
            layer.spec.activation.apply(row);
        }
    }
    out
}
