mod common;

use std::collections::BTreeSet;

use common::{brute_localize, brute_top, random_batch, random_model, random_table, rng};
use neurepair_core::localization::{
    compute_impacts, localize, localize_table_to_count, top_sets, Impact, ImpactKind, ImpactTable,
    LocalizationWarning,
};
use neurepair_core::nn::{Model, WeightRef};
use proptest::prelude::*;

/// Recomputes the table with per-sample loops and finite differences of the
/// per-sample loss, sharing nothing with the library's backprop.
fn brute_force_table(
    model: &Model,
    failed: &neurepair_core::Batch,
    passed: &neurepair_core::Batch,
    layer: usize,
) -> Vec<[f64; 4]> {
    let spec = *model.layer(layer).unwrap().spec();
    let mut rows = Vec::new();
    for to in 0..spec.output_size {
        for from in 0..spec.input_size {
            let r = WeightRef::new(layer, from, to);
            let w = model.weight(&r).unwrap();
            let mut cols = [0.0; 4];
            for (k, batch) in [failed, passed].into_iter().enumerate() {
                let mut grad = 0.0;
                let mut fwd = 0.0;
                for s in 0..batch.len() {
                    let one = batch.select(&[s]);
                    let eps = 1e-6;
                    let plus = model
                        .write_weights(&[r], &[w + eps])
                        .unwrap()
                        .loss(&one)
                        .unwrap();
                    let minus = model
                        .write_weights(&[r], &[w - eps])
                        .unwrap()
                        .loss(&one)
                        .unwrap();
                    grad += (plus - minus) / (2.0 * eps);
                    let o = model.layer_inputs(&one, layer).unwrap().get(0, from);
                    fwd += (o * w).abs();
                }
                cols[2 * k] = (grad / batch.len() as f64).abs();
                cols[2 * k + 1] = fwd / batch.len() as f64;
            }
            rows.push(cols);
        }
    }
    rows
}

#[test]
fn impacts_match_per_sample_loops() {
    let model = random_model(&[2, 3, 2], 21);
    let mut r = rng(22);
    let failed = random_batch(&mut r, 5, 2, 2, 0);
    let passed = random_batch(&mut r, 7, 2, 2, 100);
    for layer in 0..2 {
        let table = compute_impacts(&model, &failed, &passed, layer).unwrap();
        let oracle = brute_force_table(&model, &failed, &passed, layer);
        for ((_, got), want) in table.iter().zip(&oracle) {
            let got = [
                got.back_failed,
                got.fwd_failed,
                got.back_passed,
                got.fwd_passed,
            ];
            for c in 0..4 {
                assert!((got[c] - want[c]).abs() < 1e-8, "{got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn zero_weight_has_zero_forward_impact() {
    let model = random_model(&[3, 4, 3], 2);
    let r = WeightRef::new(1, 2, 1);
    let model = model.write_weights(&[r], &[0.0]).unwrap();
    let mut g = rng(3);
    let t = compute_impacts(
        &model,
        &random_batch(&mut g, 4, 3, 3, 0),
        &random_batch(&mut g, 4, 3, 3, 10),
        1,
    )
    .unwrap();
    assert_eq!(t.get(&r).unwrap().fwd_failed, 0.0);
    assert_eq!(t.get(&r).unwrap().fwd_passed, 0.0);
}

#[test]
fn same_data_gives_equal_columns() {
    let model = random_model(&[3, 4, 3], 8);
    let b = random_batch(&mut rng(9), 6, 3, 3, 0);
    let t = compute_impacts(&model, &b, &b, 1).unwrap();
    for (_, i) in t.iter() {
        assert_eq!(i.back_failed, i.back_passed);
        assert_eq!(i.fwd_failed, i.fwd_passed);
    }
}

#[test]
fn three_way_tie_at_the_cut() {
    let mut impacts = vec![Impact::default(); 6];
    for (k, v) in [0.9, 0.5, 0.5, 0.5, 0.1, 0.0].iter().enumerate() {
        impacts[k].back_failed = *v;
    }
    let t = ImpactTable::new(0, 3, 2, impacts).unwrap();
    for n_g in 1..=6 {
        assert_eq!(
            top_sets(&t, n_g).unwrap().back_failed,
            brute_top(&t, ImpactKind::BackFailed, n_g)
        );
    }
}

#[test]
fn target_count_on_a_trained_subject() {
    let subject = common::small_subject(40);
    let inputs = neurepair_core::data::select_repair_inputs(
        &subject.model,
        &subject.splits.train,
        &subject.splits.repair,
        1,
    )
    .unwrap();
    let table =
        compute_impacts(&subject.model, &inputs.negatives, &inputs.positive_pool, 1).unwrap();
    let set = localize_table_to_count(&table, 4).unwrap();
    assert_eq!(set.len(), 4);
    assert_eq!(set.warning, None);
    let at_n_g: BTreeSet<_> = localize(&table, set.provenance.n_g)
        .unwrap()
        .refs
        .into_iter()
        .collect();
    assert!(set.refs.iter().all(|r| at_n_g.contains(r)));
    assert_eq!(localize_table_to_count(&table, 1).unwrap().len(), 1);
    let huge = localize_table_to_count(&table, table.len() + 1).unwrap();
    assert!(matches!(
        huge.warning,
        Some(LocalizationWarning::TargetUnreachable { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn localize_equals_set_expression(seed in any::<u64>()) {
        let t = random_table(seed, 200);
        for n_g in 1..=t.len() {
            let got = localize(&t, n_g).unwrap();
            let set: BTreeSet<_> = got.refs.iter().copied().collect();
            prop_assert_eq!(set.len(), got.refs.len());
            prop_assert!(got.len() <= n_g);
            prop_assert_eq!(&set, &brute_localize(&t, n_g));
            prop_assert_eq!(&got, &localize(&t, n_g).unwrap());
        }
    }

    #[test]
    fn target_count_is_a_prefix_of_some_cut(seed in any::<u64>(), target in 1usize..40) {
        let t = random_table(seed, 120);
        let set = localize_table_to_count(&t, target).unwrap();
        let full = localize(&t, set.provenance.n_g).unwrap();
        match set.warning {
            Some(LocalizationWarning::TargetUnreachable { achieved, .. }) => {
                let best = (1..=t.len()).map(|n| localize(&t, n).unwrap().len()).max().unwrap();
                prop_assert_eq!(achieved, best);
                prop_assert!(best < target);
            }
            _ => {
                prop_assert_eq!(set.len(), target);
                prop_assert_eq!(&full.refs[..target], &set.refs[..]);
            }
        }
    }

    #[test]
    fn swapping_batches_swaps_columns(seed in any::<u64>()) {
        let model = random_model(&[3, 4, 3], seed);
        let mut r = rng(seed);
        let a = random_batch(&mut r, 5, 3, 3, 0);
        let b = random_batch(&mut r, 4, 3, 3, 50);
        let ab = compute_impacts(&model, &a, &b, 1).unwrap();
        let ba = compute_impacts(&model, &b, &a, 1).unwrap();
        prop_assert_eq!(ab.swapped(), ba);
    }
}
