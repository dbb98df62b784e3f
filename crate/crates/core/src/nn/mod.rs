//! Dense feedforward classifier used as the repair substrate.
//!
//! Weights of layer `k` are stored row-major with shape `(output_size, input_size)`,
//! so the scalar `w[i -> j]` lives at index `j * input_size + i`. That layout matches
//! the [`WeightRef`] total order `(layer, to, from)`.

mod backprop;
mod matrix;
mod model;

pub use backprop::LayerGradient;
pub use matrix::Matrix;
pub(crate) use model::mean_cross_entropy;
pub use model::{Activation, Batch, DenseLayer, LayerSpec, Model, WeightRef, PROB_CLAMP};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::argmax;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.3]), 0);
    }
}
