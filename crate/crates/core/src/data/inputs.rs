use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Batch, Model};

/// The data a repair run works from.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairInputs {
    /// Training samples the subject already classifies correctly (all classes).
    pub positive_pool: Batch,
    /// Repair-split samples of the target class the subject misclassifies.
    pub negatives: Batch,
}

fn partition_by_verdict(model: &Model, data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let batch = data.to_batch();
    let predicted = model.predict(&batch)?;
    let (mut passed, mut failed) = (Vec::new(), Vec::new());
    for (idx, (p, y)) in predicted.iter().zip(batch.labels()).enumerate() {
        if p == y {
            passed.push(idx);
        } else {
            failed.push(idx);
        }
    }
    Ok((passed, failed))
}

pub fn select_repair_inputs(
    model: &Model,
    train: &Dataset,
    repair: &Dataset,
    target_class: usize,
) -> Result<RepairInputs> {
    let (passed, _) = partition_by_verdict(model, train)?;
    let (_, failed) = partition_by_verdict(model, repair)?;
    let negatives: Vec<usize> = failed
        .into_iter()
        .filter(|&k| repair.samples()[k].label == target_class)
        .collect();
    if negatives.is_empty() {
        return Err(Error::NothingToRepair { target_class });
    }
    if passed.is_empty() {
        return Err(Error::EmptyPositivePool);
    }
    let positive_pool = train.to_batch().select(&passed);
    let negatives = repair.to_batch().select(&negatives);
    if let Some(dup) = positive_pool
        .ids()
        .iter()
        .find(|id| negatives.ids().contains(id))
    {
        return Err(Error::InvalidDataset(format!(
            "sample {dup} appears in both the train and repair splits"
        )));
    }
    Ok(RepairInputs {
        positive_pool,
        negatives,
    })
}
