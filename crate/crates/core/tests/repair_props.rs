mod common;

use common::{random_batch, random_model, rng};
use neurepair_core::localization::{LocalizationProvenance, LocalizedSet};
use neurepair_core::nn::{Activation, Batch, DenseLayer, LayerSpec, Matrix, Model, WeightRef};
use neurepair_core::pso::{
    fitness, repair, BaseLosses, FitnessConfig, FitnessVariant, SwarmConfig,
};
use proptest::prelude::*;

fn set(refs: Vec<WeightRef>) -> LocalizedSet {
    LocalizedSet {
        provenance: LocalizationProvenance {
            n_g: refs.len(),
            set_sizes: [refs.len(); 4],
            target_lw: None,
        },
        refs,
        warning: None,
    }
}

/// Splits a batch into samples the model gets right and wrong.
fn verdict_split(model: &Model, batch: &Batch) -> (Batch, Batch) {
    let pred = model.predict(batch).unwrap();
    let (mut pos, mut neg) = (vec![], vec![]);
    for (k, (p, y)) in pred.iter().zip(batch.labels()).enumerate() {
        if p == y {
            pos.push(k)
        } else {
            neg.push(k)
        }
    }
    (batch.select(&neg), batch.select(&pos))
}

fn swarm(seed: u64, particles: usize, iterations: usize) -> SwarmConfig {
    SwarmConfig {
        n_iterations: iterations,
        ..SwarmConfig::new(particles, seed)
    }
}

#[test]
fn one_weight_pushed_past_its_threshold() {
    // logits: z0 = w * x, z1 = 1.0 * x. For x = 1 with label 0 the sample passes
    // once w > 1, so the analytic threshold is w* = 1.
    let head = DenseLayer::new(
        LayerSpec {
            input_size: 1,
            output_size: 2,
            activation: Activation::Softmax,
        },
        vec![0.5, 1.0],
        vec![0.0, 0.0],
    )
    .unwrap();
    let model = Model::new(vec![head]).unwrap();
    let neg = Batch::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0], vec![1]).unwrap();
    let pos = Batch::new(Matrix::from_rows(&[vec![-1.0]]).unwrap(), vec![1], vec![2]).unwrap();
    let r = WeightRef::new(0, 0, 0);
    let cfg = FitnessConfig::new(FitnessVariant::NegRatio, 8.0, true);
    let out = repair(&model, &set(vec![r]), &neg, &pos, &cfg, &swarm(3, 10, 50)).unwrap();
    assert!(out.best_position[0] > 1.0, "{:?}", out.best_position);
    assert_eq!(out.best.n_patched, 1);
    assert_eq!(out.best.n_intact, 1);
}

#[test]
fn reruns_are_bit_identical() {
    let model = random_model(&[4, 6, 3], 17);
    let (neg, pos) = verdict_split(&model, &random_batch(&mut rng(18), 60, 4, 3, 0));
    let refs = model.layer_refs(1).unwrap()[..6].to_vec();
    let cfg = FitnessConfig::new(FitnessVariant::BothRatios, 6.0, false);
    let a = repair(
        &model,
        &set(refs.clone()),
        &neg,
        &pos,
        &cfg,
        &swarm(9, 8, 15),
    )
    .unwrap();
    let b = repair(&model, &set(refs), &neg, &pos, &cfg, &swarm(9, 8, 15)).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn initial_original_particles_score_the_identity_patch() {
    let model = random_model(&[4, 6, 3], 5);
    let (neg, pos) = verdict_split(&model, &random_batch(&mut rng(6), 40, 4, 3, 0));
    let cfg = FitnessConfig::new(FitnessVariant::NegRatio, 8.0, true);
    let base = BaseLosses::compute(&model, &neg, &pos).unwrap();
    let identity = fitness(&model, &neg, &pos, base, &cfg).unwrap();
    assert_eq!(identity.raw_fitness, 8.25);
    let out = repair(
        &model,
        &set(model.layer_refs(1).unwrap()),
        &neg,
        &pos,
        &cfg,
        &swarm(1, 4, 0),
    )
    .unwrap();
    assert_eq!(out.identity, identity);
    assert!(out.best.gated_fitness >= identity.gated_fitness);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn repair_invariants(seed in any::<u64>(), pi in any::<bool>(), n_refs in 1usize..10, both in any::<bool>()) {
        let model = random_model(&[4, 6, 3], seed);
        let (neg, pos) = verdict_split(&model, &random_batch(&mut rng(seed ^ 7), 50, 4, 3, 0));
        prop_assume!(!neg.is_empty() && !pos.is_empty());
        let all = model.layer_refs(1).unwrap();
        let refs: Vec<WeightRef> = all.iter().step_by(all.len() / n_refs).take(n_refs).copied().collect();
        let variant = if both { FitnessVariant::BothRatios } else { FitnessVariant::NegRatio };
        let cfg = FitnessConfig::new(variant, 6.0, pi);
        let out = repair(&model, &set(refs.clone()), &neg, &pos, &cfg, &swarm(seed, 6, 10)).unwrap();

        // gbest never decreases
        for w in out.trace.windows(2) {
            prop_assert!(w[1].gbest_fitness >= w[0].gbest_fitness);
        }
        // identity dominance
        prop_assert!(out.best.gated_fitness >= out.identity.gated_fitness);
        // confinement: bit-compare every weight outside the set
        for layer in 0..model.n_layers() {
            for r in model.layer_refs(layer).unwrap() {
                if !refs.contains(&r) {
                    prop_assert_eq!(model.weight(&r).unwrap().to_bits(), out.model.weight(&r).unwrap().to_bits());
                }
            }
            prop_assert_eq!(model.layers()[layer].biases(), out.model.layers()[layer].biases());
        }
        // gate soundness
        if pi && !out.identity_fallback {
            prop_assert_eq!(out.best.n_intact, pos.len());
        }
        let rescored = fitness(&out.model, &neg, &pos, BaseLosses::compute(&model, &neg, &pos).unwrap(), &cfg).unwrap();
        prop_assert_eq!(rescored, out.best);
    }

    #[test]
    fn raw_fitness_grows_with_alpha(alpha in 0.0f64..20.0, extra in 0.0f64..5.0, intact in 1usize..50, n_pos in 50usize..100) {
        let base = BaseLosses { neg: 1.2, pos: 0.4 };
        for variant in [FitnessVariant::BothRatios, FitnessVariant::NegRatio] {
            let lo = FitnessConfig::new(variant, alpha, false).score(2, 5, intact, n_pos, base, 0.9, 0.5);
            let hi = FitnessConfig::new(variant, alpha + extra, false).score(2, 5, intact, n_pos, base, 0.9, 0.5);
            prop_assert!(hi.raw_fitness >= lo.raw_fitness);
        }
    }
}
