use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_drift, io, split, Dataset, DriftSpec, Sample, SplitKind, SplitSpec, Splits,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::nn::{Activation, Model};

/// Tabular data with one Gaussian blob per class.
///
/// Class centers are drawn from `Normal(0, separation)` per coordinate and samples
/// from `Normal(center, spread)`, so `spread / separation` controls overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub n_classes: usize,
    pub dim: usize,
    /// Either one count for every class or one count per class.
    pub samples_per_class: Vec<usize>,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl ClusterSpec {
    fn class_sizes(&self) -> Result<Vec<usize>> {
        match self.samples_per_class.len() {
            1 => Ok(vec![self.samples_per_class[0]; self.n_classes]),
            n if n == self.n_classes => Ok(self.samples_per_class.clone()),
            n => Err(Error::InvalidConfig(format!(
                "samples_per_class has {n} entries for {} classes",
                self.n_classes
            ))),
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.n_classes < 2 || self.dim == 0 {
            return Err(Error::InvalidConfig(
                "clusters need >= 2 classes and >= 1 feature".into(),
            ));
        }
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        if bad(self.separation) || bad(self.spread) {
            return Err(Error::InvalidConfig(
                "separation and spread must be > 0".into(),
            ));
        }
        let sizes = self.class_sizes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers_dist = Normal::new(0.0, self.separation).expect("checked above");
        let noise = Normal::new(0.0, self.spread).expect("checked above");
        let centers: Vec<Vec<f64>> = (0..self.n_classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| centers_dist.sample(&mut rng))
                    .collect()
            })
            .collect();

        let mut samples = Vec::with_capacity(sizes.iter().sum());
        for (label, (&n, center)) in sizes.iter().zip(&centers).enumerate() {
            for _ in 0..n {
                let features = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
                samples.push(Sample {
                    id: 0,
                    features,
                    label,
                });
            }
        }
        // interleave classes so ids carry no label information
        samples.shuffle(&mut rng);
        for (id, s) in samples.iter_mut().enumerate() {
            s.id = id as u64;
        }
        Dataset::with_default_names(self.dim, self.n_classes, samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Clusters(ClusterSpec),
    /// A dataset file; relative paths resolve against the config's directory.
    Csv {
        path: PathBuf,
    },
}

impl DataSource {
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        match self {
            DataSource::Clusters(spec) => spec.generate(),
            DataSource::Csv { path } => io::load_dataset(base_dir.join(path)),
        }
    }
}

/// Minibatch SGD on the mean cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    #[serde(default = "TrainingSpec::default_activation")]
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainingSpec {
    fn default_activation() -> Activation {
        Activation::Relu
    }

    pub fn validate(&self) -> Result<()> {
        if self.activation == Activation::Softmax {
            return Err(Error::InvalidConfig(
                "hidden layers cannot use softmax".into(),
            ));
        }
        if self.batch_size == 0 || !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "training needs batch_size >= 1 and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Trains a fresh MLP on `train`. The same spec and data give a bit-identical model.
pub fn train_subject(train: &Dataset, spec: &TrainingSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sizes = vec![train.dim()];
    sizes.extend(&spec.hidden);
    sizes.push(train.n_classes());
    let mut model = Model::random(&sizes, spec.activation, &mut rng)?;
    if spec.epochs == 0 || train.is_empty() {
        return Ok(model);
    }

    let all = train.to_batch();
    let mut order: Vec<usize> = (0..all.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch = all.select(chunk);
            let (loss, grads) = model.backprop(&batch, 0)?;
            epoch_loss += loss * chunk.len() as f64;
            sgd_step(&mut model, &grads, spec.learning_rate);
        }
        let epoch_loss = epoch_loss / all.len() as f64;
        // the clamped loss stays finite when logits overflow, so check outputs too
        let finite = model
            .layers()
            .iter()
            .all(|l| l.weights().iter().chain(l.biases()).all(|v| v.is_finite()))
            && model
                .forward(&all)?
                .as_slice()
                .iter()
                .all(|p| p.is_finite());
        if !epoch_loss.is_finite() || !finite {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
    }
    Ok(model)
}

fn sgd_step(model: &mut Model, grads: &[crate::nn::LayerGradient], lr: f64) {
    for (layer, g) in model.layers_mut().iter_mut().zip(grads) {
        for (w, d) in layer.weights_mut().iter_mut().zip(g.weights()) {
            *w -= lr * d;
        }
        for (b, d) in layer.biases_mut().iter_mut().zip(g.biases()) {
            *b -= lr * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    pub data: DataSource,
    pub split: SplitSpec,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
    pub training: TrainingSpec,
}

/// A trained model with the data it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub dataset: Dataset,
    pub splits: Splits,
    pub model: Model,
    /// Accuracy of `model` on each split, in [`SplitKind::ALL`] order.
    pub accuracies: [f64; 4],
}

impl Subject {
    pub fn build(spec: &SubjectSpec, base_dir: &Path) -> Result<Self> {
        let dataset = spec.data.load(base_dir)?;
        let splits = make_splits(&dataset, spec)?;
        let model = train_subject(&splits.train, &spec.training)?;
        Self::from_parts(dataset, splits, model)
    }

    pub fn from_parts(dataset: Dataset, splits: Splits, model: Model) -> Result<Self> {
        let mut accuracies = [0.0; 4];
        for (kind, data) in splits.iter() {
            accuracies[kind.index()] = evaluate(&model, data)?.overall_accuracy;
        }
        Ok(Self {
            dataset,
            splits,
            model,
            accuracies,
        })
    }

    pub fn accuracy(&self, kind: SplitKind) -> f64 {
        self.accuracies[kind.index()]
    }
}

/// Plain split, or the drifted split when the spec has a drift block.
pub fn make_splits(dataset: &Dataset, spec: &SubjectSpec) -> Result<Splits> {
    match &spec.drift {
        Some(drift) => apply_drift(dataset, &spec.split, drift),
        None => split(dataset, &spec.split),
    }
}
