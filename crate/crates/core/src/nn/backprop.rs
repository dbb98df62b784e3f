use super::model::{Activation, Batch, Model, WeightRef, PROB_CLAMP};
use crate::error::{Error, Result};

/// Gradient of the batch-mean loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    layer: usize,
    input_size: usize,
    output_size: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl LayerGradient {
    fn zeros(layer: usize, input_size: usize, output_size: usize) -> Self {
        Self {
            layer,
            input_size,
            output_size,
            weights: vec![0.0; input_size * output_size],
            biases: vec![0.0; output_size],
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.weights[to * self.input_size + from]
    }

    pub fn at(&self, r: &WeightRef) -> Option<f64> {
        (r.layer == self.layer && r.from < self.input_size && r.to < self.output_size)
            .then(|| self.get(r.from, r.to))
    }

    /// Weight gradients in [`WeightRef`] order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeightRef, f64)> + '_ {
        let n_in = self.input_size;
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &g)| (WeightRef::new(self.layer, k % n_in, k / n_in), g))
    }
}

impl Model {
    /// Exact `dL/dw` for every weight of `layer`, where `L` is the batch-mean
    /// clamped cross-entropy.
    pub fn weight_gradients(&self, batch: &Batch, layer: usize) -> Result<LayerGradient> {
        let (_, mut grads) = self.backprop(batch, layer)?;
        Ok(grads.swap_remove(0))
    }

    /// Backpropagates the batch-mean loss down to `down_to`, returning the loss and
    /// gradients for layers `down_to..n_layers` in layer order.
    pub(crate) fn backprop(
        &self,
        batch: &Batch,
        down_to: usize,
    ) -> Result<(f64, Vec<LayerGradient>)> {
        self.layer(down_to)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch("gradients need at least one sample"));
        }
        if batch.inputs().cols() != self.input_size() {
            return Err(Error::Shape(format!(
                "inputs have {} features, model expects {}",
                batch.inputs().cols(),
                self.input_size()
            )));
        }

        let layers = self.layers();
        let n_layers = layers.len();
        let scale = 1.0 / batch.len() as f64;
        let mut grads: Vec<LayerGradient> = (down_to..n_layers)
            .map(|k| {
                let s = layers[k].spec();
                LayerGradient::zeros(k, s.input_size, s.output_size)
            })
            .collect();

        // outputs[k] is the post-activation output of layer k - 1 (outputs[0] = x)
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut loss = 0.0;

        for (s, &label) in batch.labels().iter().enumerate() {
            outputs.clear();
            pre.clear();
            outputs.push(batch.inputs().row(s).to_vec());
            for layer in layers {
                let mut z = vec![0.0; layer.spec().output_size];
                layer.affine(&outputs[outputs.len() - 1], &mut z);
                let mut a = z.clone();
                layer.spec().activation.apply(&mut a);
                pre.push(z);
                outputs.push(a);
            }

            let probs = &outputs[n_layers];
            let p_true = probs[label];
            loss += -p_true.max(PROB_CLAMP).ln();

            // d(-ln p_y)/dz = p - onehot(y); zero where the clamp is active
            let mut delta: Vec<f64> = if p_true > PROB_CLAMP {
                probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| (p - if c == label { 1.0 } else { 0.0 }) * scale)
                    .collect()
            } else {
                vec![0.0; probs.len()]
            };

            for k in (down_to..n_layers).rev() {
                let g = &mut grads[k - down_to];
                let input = &outputs[k];
                let n_in = input.len();
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.biases[j] += d;
                    let row = &mut g.weights[j * n_in..(j + 1) * n_in];
                    for (gw, &o) in row.iter_mut().zip(input) {
                        *gw += d * o;
                    }
                }
                if k == down_to {
                    break;
                }
                let w = layers[k].weights();
                let below = layers[k - 1].spec().activation;
                let z_below = &pre[k - 1];
                let mut next = vec![0.0; n_in];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wji) in next.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *n += wji * d;
                    }
                }
                for (n, &z) in next.iter_mut().zip(z_below) {
                    *n *= match below {
                        Activation::Relu => {
                            if z > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::Identity => 1.0,
                        Activation::Softmax => unreachable!("softmax only on the final layer"),
                    };
                }
                delta = next;
            }
        }

        Ok((loss * scale, grads))
    }
}
