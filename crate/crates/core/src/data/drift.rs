use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{assign, SplitKind, SplitSpec, Splits};
use super::Dataset;
use crate::error::{Error, Result};

/// A shift in the prevalence of one class between training time and repair time.
///
/// `train_fraction_of_class` scales the class's natural count in the train split.
/// `repair_fraction_of_class` is the prevalence the repair split is pushed toward,
/// using only the samples displaced from train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub target_class: usize,
    pub train_fraction_of_class: f64,
    pub repair_fraction_of_class: f64,
    pub seed: u64,
}

impl DriftSpec {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let (tf, rf) = (self.train_fraction_of_class, self.repair_fraction_of_class);
        if !(0.0..=1.0).contains(&tf) || !(0.0..=1.0).contains(&rf) {
            return Err(Error::InvalidConfig(format!(
                "drift fractions must lie in [0, 1], got train {tf} and repair {rf}"
            )));
        }
        if tf > rf {
            return Err(Error::InvalidConfig(format!(
                "drift must not lower the class share at repair time (train {tf} > repair {rf})"
            )));
        }
        if self.target_class >= n_classes {
            return Err(Error::InvalidConfig(format!(
                "drift target class {} but there are {n_classes} classes",
                self.target_class
            )));
        }
        Ok(())
    }
}

/// Splits `dataset` as [`super::split`] does, then moves target-class samples out of
/// the train split. Displaced samples go to the repair split while its target
/// prevalence is below `repair_fraction_of_class`, swapping places with a
/// non-target repair sample; the rest go to the test split, swapping with a
/// non-target test (then validation) sample while any remain. Samples
/// are never duplicated, so the result is still an exact partition.
pub fn apply_drift(dataset: &Dataset, split_spec: &SplitSpec, drift: &DriftSpec) -> Result<Splits> {
    drift.validate(dataset.n_classes())?;
    let target = drift.target_class;
    let total = dataset.class_counts()[target];
    if total == 0 {
        return Err(Error::InfeasibleDrift(format!(
            "target class {target} has 0 samples"
        )));
    }

    let mut assignment = assign(dataset, split_spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(drift.seed);
    let is_target = |idx: usize| dataset.samples()[idx].label == target;
    let members = |assignment: &[SplitKind], kind: SplitKind, want_target: bool| -> Vec<usize> {
        (0..assignment.len())
            .filter(|&i| assignment[i] == kind && is_target(i) == want_target)
            .collect()
    };

    let mut train_targets = members(&assignment, SplitKind::Train, true);
    train_targets.shuffle(&mut rng);
    let keep = (drift.train_fraction_of_class * train_targets.len() as f64 + 1e-9).floor() as usize;
    let displaced = train_targets.split_off(keep.min(train_targets.len()));

    let mut repair_others = members(&assignment, SplitKind::Repair, false);
    repair_others.shuffle(&mut rng);
    let mut test_others = members(&assignment, SplitKind::Test, false);
    test_others.shuffle(&mut rng);
    let mut validation_others = members(&assignment, SplitKind::Validation, false);
    validation_others.shuffle(&mut rng);

    let mut repair_size = assignment
        .iter()
        .filter(|k| **k == SplitKind::Repair)
        .count();
    let mut repair_targets = members(&assignment, SplitKind::Repair, true).len();

    for idx in displaced {
        let prevalence = if repair_size == 0 {
            0.0
        } else {
            repair_targets as f64 / repair_size as f64
        };
        if prevalence < drift.repair_fraction_of_class {
            assignment[idx] = SplitKind::Repair;
            repair_targets += 1;
            match repair_others.pop() {
                Some(other) => assignment[other] = SplitKind::Train,
                None => repair_size += 1,
            }
        } else {
            assignment[idx] = SplitKind::Test;
            if let Some(other) = test_others.pop().or_else(|| validation_others.pop()) {
                assignment[other] = SplitKind::Train;
            }
        }
    }

    if drift.repair_fraction_of_class > 0.0 && repair_targets == 0 {
        return Err(Error::InfeasibleDrift(format!(
            "target class {target} has {total} samples, none of which can be placed in the repair split"
        )));
    }

    Ok(Splits::from_assignment(dataset, &assignment))
}
