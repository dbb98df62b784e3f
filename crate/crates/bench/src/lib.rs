//! Fixtures shared by the criterion benches.

use std::path::Path;

use neurepair_core::data::{select_repair_inputs, DriftSpec, SplitSpec};
use neurepair_core::harness::{ClusterSpec, DataSource, Subject, SubjectSpec, TrainingSpec};
use neurepair_core::localization::{
    compute_impacts, localize_table_to_count, ImpactTable, LocalizedSet,
};
use neurepair_core::nn::{Activation, Batch, Model};
use neurepair_core::pso::sample_positives;

pub const TARGET_CLASS: usize = 3;

/// A trained 10-16-7 subject with the target class scarce at training time.
pub fn subject() -> Subject {
    let spec = SubjectSpec {
        data: DataSource::Clusters(ClusterSpec {
            n_classes: 7,
            dim: 10,
            samples_per_class: vec![300],
            separation: 1.0,
            spread: 1.0,
            seed: 42,
        }),
        split: SplitSpec::new([0.5, 0.1, 0.2, 0.2], 7),
        drift: Some(DriftSpec {
            target_class: TARGET_CLASS,
            train_fraction_of_class: 0.1,
            repair_fraction_of_class: 0.5,
            seed: 8,
        }),
        training: TrainingSpec {
            hidden: vec![16],
            activation: Activation::Relu,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 9,
        },
    };
    Subject::build(&spec, Path::new(".")).expect("fixture subject builds")
}

/// Everything one repair run needs.
pub struct RepairFixture {
    pub model: Model,
    pub i_neg: Batch,
    pub i_pos: Batch,
    pub table: ImpactTable,
    pub localized: LocalizedSet,
}

pub fn repair_fixture(n_pos: usize, target_lw: usize) -> RepairFixture {
    let s = subject();
    let inputs = select_repair_inputs(&s.model, &s.splits.train, &s.splits.repair, TARGET_CLASS)
        .expect("failures to repair");
    let i_pos = sample_positives(&inputs.positive_pool, n_pos, 1).expect("non-empty pool");
    let layer = s.model.last_layer();
    let table = compute_impacts(&s.model, &inputs.negatives, &i_pos, layer).expect("impacts");
    let localized = localize_table_to_count(&table, target_lw).expect("localization");
    RepairFixture {
        model: s.model,
        i_neg: inputs.negatives,
        i_pos,
        table,
        localized,
    }
}
