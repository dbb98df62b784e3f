//! Datasets, four-way splits, drift scenarios and repair-input selection.

mod dataset;
mod drift;
mod inputs;
pub mod io;
mod split;

pub use dataset::{Dataset, Sample};
pub use drift::{apply_drift, DriftSpec};
pub use inputs::{select_repair_inputs, RepairInputs};
pub use split::{split, SplitKind, SplitSpec, Splits};
