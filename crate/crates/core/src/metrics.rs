//! Per-sample verdicts, before/after diffs and regression checks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: usize,
    pub predicted: usize,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_classes: usize,
    /// Keyed by sample id.
    pub verdicts: BTreeMap<u64, Verdict>,
    pub n_passed: usize,
    pub overall_accuracy: f64,
    /// Per-class accuracy; a class with no samples scores 1.0.
    pub per_class_accuracy: Vec<f64>,
    pub per_class_counts: Vec<usize>,
    /// No samples were evaluated; accuracy is reported as 1.0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_verdicts(n_classes: usize, verdicts: BTreeMap<u64, Verdict>) -> Self {
        let mut counts = vec![0usize; n_classes];
        let mut passed = vec![0usize; n_classes];
        for v in verdicts.values() {
            counts[v.label] += 1;
            passed[v.label] += v.passed() as usize;
        }
        let n_passed = passed.iter().sum();
        Self {
            n_classes,
            n_passed,
            overall_accuracy: ratio(n_passed, verdicts.len()),
            per_class_accuracy: passed
                .iter()
                .zip(&counts)
                .map(|(&p, &c)| ratio(p, c))
                .collect(),
            per_class_counts: counts,
            degenerate: verdicts.is_empty(),
            verdicts,
        }
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    /// Accuracy over the samples whose true label is in scope.
    pub fn scoped_accuracy(&self, scope: Scope) -> f64 {
        let (mut n, mut ok) = (0, 0);
        for v in self.verdicts.values().filter(|v| scope.contains(v.label)) {
            n += 1;
            ok += v.passed() as usize;
        }
        ratio(ok, n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per sample: `id,label,predicted,passed`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "label", "predicted", "passed"])?;
        for (id, v) in &self.verdicts {
            w.write_record([
                id.to_string(),
                v.label.to_string(),
                v.predicted.to_string(),
                v.passed().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.dim() != model.input_size() {
        return Err(Error::Shape(format!(
            "dataset has {} features, model expects {}",
            dataset.dim(),
            model.input_size()
        )));
    }
    let probs = model.forward(&dataset.to_batch())?;
    let verdicts = dataset
        .samples()
        .iter()
        .zip(probs.iter_rows())
        .map(|(s, row)| {
            (
                s.id,
                Verdict {
                    label: s.label,
                    predicted: argmax(row),
                },
            )
        })
        .collect();
    Ok(EvalReport::from_verdicts(
        model.n_classes().max(dataset.n_classes()),
        verdicts,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepairDiff {
    /// Passed before, failed after.
    pub broken: BTreeSet<u64>,
    /// Failed before, passed after.
    pub repaired: BTreeSet<u64>,
    pub unchanged_pass: usize,
    pub unchanged_fail: usize,
}

impl RepairDiff {
    pub fn total(&self) -> usize {
        self.broken.len() + self.repaired.len() + self.unchanged_pass + self.unchanged_fail
    }
}

pub fn diff(before: &EvalReport, after: &EvalReport) -> Result<RepairDiff> {
    let only_before: Vec<u64> = before
        .verdicts
        .keys()
        .filter(|id| !after.verdicts.contains_key(id))
        .copied()
        .collect();
    let only_after: Vec<u64> = after
        .verdicts
        .keys()
        .filter(|id| !before.verdicts.contains_key(id))
        .copied()
        .collect();
    if !only_before.is_empty() || !only_after.is_empty() {
        return Err(Error::IdMismatch {
            only_before,
            only_after,
        });
    }
    let mut out = RepairDiff::default();
    for (id, b) in &before.verdicts {
        match (b.passed(), after.verdicts[id].passed()) {
            (true, true) => out.unchanged_pass += 1,
            (true, false) => {
                out.broken.insert(*id);
            }
            (false, true) => {
                out.repaired.insert(*id);
            }
            (false, false) => out.unchanged_fail += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLevel {
    Overall,
    Instance,
}

/// Which samples, by true label, a regression check looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    #[default]
    All,
    Class(usize),
}

impl Scope {
    pub fn contains(&self, label: usize) -> bool {
        match self {
            Scope::All => true,
            Scope::Class(c) => *c == label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionEvidence {
    Accuracy { before: f64, after: f64 },
    Broken { ids: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCheck {
    pub level: RegressionLevel,
    pub scope: Scope,
    /// No regression at this level.
    pub holds: bool,
    pub evidence: RegressionEvidence,
}

pub fn check_regression(
    before: &EvalReport,
    after: &EvalReport,
    level: RegressionLevel,
    scope: Scope,
) -> RegressionCheck {
    let (holds, evidence) = match level {
        RegressionLevel::Overall => {
            let (b, a) = (before.scoped_accuracy(scope), after.scoped_accuracy(scope));
            (
                a >= b,
                RegressionEvidence::Accuracy {
                    before: b,
                    after: a,
                },
            )
        }
        RegressionLevel::Instance => {
            let ids: Vec<u64> = before
                .verdicts
                .iter()
                .filter(|(id, b)| {
                    scope.contains(b.label)
                        && b.passed()
                        && after.verdicts.get(id).is_some_and(|a| !a.passed())
                })
                .map(|(id, _)| *id)
                .collect();
            (ids.is_empty(), RegressionEvidence::Broken { ids })
        }
    };
    RegressionCheck {
        level,
        scope,
        holds,
        evidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::nn::{Activation, DenseLayer, LayerSpec};

    fn report(rows: &[(u64, usize, usize)]) -> EvalReport {
        let verdicts = rows
            .iter()
            .map(|&(id, label, predicted)| (id, Verdict { label, predicted }))
            .collect();
        EvalReport::from_verdicts(3, verdicts)
    }

    #[test]
    fn uniform_model_predicts_class_zero() {
        let head = DenseLayer::new(
            LayerSpec {
                input_size: 2,
                output_size: 2,
                activation: Activation::Softmax,
            },
            vec![0.0; 4],
            vec![0.0; 2],
        )
        .unwrap();
        let model = Model::new(vec![head]).unwrap();
        let samples = (0..6)
            .map(|i| Sample {
                id: i,
                features: vec![i as f64, -(i as f64)],
                label: (i % 2) as usize,
            })
            .collect();
        let ds = Dataset::with_default_names(2, 2, samples).unwrap();
        let r = evaluate(&model, &ds).unwrap();
        assert!(r.verdicts.values().all(|v| v.predicted == 0));
        assert_eq!(r.overall_accuracy, 0.5);
        assert_eq!(r.per_class_accuracy, vec![1.0, 0.0]);
    }

    #[test]
    fn empty_dataset_is_degenerate() {
        let r = report(&[]);
        assert!(r.degenerate);
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.per_class_counts, vec![0, 0, 0]);
    }

    #[test]
    fn diff_single_flip_and_identity() {
        let a = report(&[(1, 0, 0), (2, 1, 1), (3, 2, 0)]);
        let same = diff(&a, &a).unwrap();
        assert!(same.broken.is_empty() && same.repaired.is_empty());
        let b = report(&[(1, 0, 2), (2, 1, 1), (3, 2, 0)]);
        let d = diff(&a, &b).unwrap();
        assert_eq!(d.broken, BTreeSet::from([1]));
        assert!(d.repaired.is_empty());
        assert_eq!((d.unchanged_pass, d.unchanged_fail), (1, 1));
    }

    #[test]
    fn diff_rejects_mismatched_ids() {
        let a = report(&[(1, 0, 0), (2, 1, 1)]);
        let b = report(&[(1, 0, 0), (5, 1, 1)]);
        match diff(&a, &b) {
            Err(Error::IdMismatch {
                only_before,
                only_after,
                ..
            }) => {
                assert_eq!((only_before, only_after), (vec![2], vec![5]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overall_and_instance_levels_disagree_on_net_gain() {
        let before = report(&[(1, 0, 0), (2, 1, 0), (3, 2, 0), (4, 0, 0)]);
        let after = report(&[(1, 0, 1), (2, 1, 1), (3, 2, 2), (4, 0, 0)]);
        assert!(check_regression(&before, &after, RegressionLevel::Overall, Scope::All).holds);
        let inst = check_regression(&before, &after, RegressionLevel::Instance, Scope::All);
        assert!(!inst.holds);
        assert_eq!(inst.evidence, RegressionEvidence::Broken { ids: vec![1] });
        assert!(
            check_regression(&before, &after, RegressionLevel::Instance, Scope::Class(2)).holds
        );
        for level in [RegressionLevel::Overall, RegressionLevel::Instance] {
            assert!(check_regression(&before, &before, level, Scope::All).holds);
        }
    }

    #[test]
    fn report_serializes() {
        let r = report(&[(1, 0, 0), (2, 1, 0)]);
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
