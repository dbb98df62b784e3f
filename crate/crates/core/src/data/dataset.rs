use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

/// A labelled tabular dataset with globally unique sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_classes: usize,
    class_names: Vec<String>,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        n_classes: usize,
        class_names: Vec<String>,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidDataset("n_classes must be >= 1".into()));
        }
        if class_names.len() != n_classes {
            return Err(Error::InvalidDataset(format!(
                "{} class names for {n_classes} classes",
                class_names.len()
            )));
        }
        if let Some(bad) = class_names.iter().find(|n| n.contains([';', '\n', '\r'])) {
            return Err(Error::InvalidDataset(format!(
                "class name {bad:?} contains a reserved character"
            )));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate sample id {}",
                    s.id
                )));
            }
            if s.label >= n_classes {
                return Err(Error::InvalidDataset(format!(
                    "sample {} has label {} but there are {n_classes} classes",
                    s.id, s.label
                )));
            }
            if s.features.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "sample {} has a non-finite feature",
                    s.id
                )));
            }
        }
        Ok(Self {
            dim,
            n_classes,
            class_names,
            samples,
        })
    }

    /// Class names default to `class0`, `class1`, ...
    pub fn with_default_names(dim: usize, n_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let names = (0..n_classes).map(|c| format!("class{c}")).collect();
        Self::new(dim, n_classes, names, samples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Share of samples labelled `class`; 0 for an empty dataset.
    pub fn prevalence(&self, class: usize) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.label == class).count() as f64 / self.len() as f64
    }

    /// A dataset with the same schema holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
            samples: indices.iter().map(|&k| self.samples[k].clone()).collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Self {
        Self {
            dim: self.dim,
            n_classes: self.n_classes,
            class_names: self.class_names.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn to_batch(&self) -> Batch {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for s in &self.samples {
            data.extend_from_slice(&s.features);
        }
        let inputs = Matrix::from_vec(self.len(), self.dim, data).expect("dims validated");
        Batch::new(
            inputs,
            self.samples.iter().map(|s| s.label).collect(),
            self.ids(),
        )
        .expect("ids validated unique")
    }
}
