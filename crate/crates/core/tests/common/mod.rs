#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use neurepair_core::data::DriftSpec;
use neurepair_core::data::SplitSpec;
use neurepair_core::harness::{
    ClusterSpec, DataSource, ExperimentSpec, RunConfig, Subject, SubjectSpec, SwarmSection,
    TrainingSpec,
};
use neurepair_core::localization::{Impact, ImpactKind, ImpactTable};
use neurepair_core::nn::{Activation, Batch, Matrix, Model, WeightRef};
use neurepair_core::pso::FitnessVariant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_model(sizes: &[usize], seed: u64) -> Model {
    Model::random(sizes, Activation::Relu, &mut rng(seed)).unwrap()
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    n_classes: usize,
    first_id: u64,
) -> Batch {
    let data = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    Batch::new(
        Matrix::from_vec(n, dim, data).unwrap(),
        labels,
        (first_id..first_id + n as u64).collect(),
    )
    .unwrap()
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> ExperimentSpec {
    ExperimentSpec::load(configs_dir().join(name)).unwrap()
}

/// A 4-class subject small enough to repair in milliseconds, with class 1
/// under-represented at training time.
pub fn small_subject_spec(seed: u64) -> SubjectSpec {
    SubjectSpec {
        data: DataSource::Clusters(ClusterSpec {
            n_classes: 4,
            dim: 5,
            samples_per_class: vec![120],
            separation: 1.0,
            spread: 1.0,
            seed,
        }),
        split: SplitSpec::new([0.5, 0.1, 0.2, 0.2], seed + 1),
        drift: Some(DriftSpec {
            target_class: 1,
            train_fraction_of_class: 0.2,
            repair_fraction_of_class: 0.5,
            seed: seed + 2,
        }),
        training: TrainingSpec {
            hidden: vec![8],
            activation: Activation::Relu,
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
            seed: seed + 3,
        },
    }
}

pub fn small_subject(seed: u64) -> Subject {
    Subject::build(&small_subject_spec(seed), &configs_dir()).unwrap()
}

pub fn grid_entry(
    variant: FitnessVariant,
    alpha: f64,
    pi: bool,
    target_lw: usize,
    n_pos: usize,
    n_particles: usize,
) -> RunConfig {
    RunConfig {
        variant,
        alpha,
        perfect_intact: pi,
        target_lw: Some(target_lw),
        n_g: None,
        n_pos,
        n_particles,
        beta: None,
        delta: None,
        orientation: None,
        n_iterations: None,
    }
}

pub fn small_experiment(
    master_seed: u64,
    grid: Vec<RunConfig>,
    repetitions: usize,
) -> ExperimentSpec {
    ExperimentSpec {
        version: 1,
        master_seed,
        repetitions,
        target_class: 1,
        layer: None,
        subject: small_subject_spec(5),
        swarm: SwarmSection {
            n_iterations: 20,
            ..SwarmSection::default()
        },
        grid,
    }
}

/// Which hidden units are active for every sample.
fn relu_pattern(model: &Model, batch: &Batch) -> Vec<bool> {
    let mut out = Vec::new();
    for layer in 1..model.n_layers() {
        let h = model.layer_inputs(batch, layer).unwrap();
        for r in 0..h.rows() {
            out.extend(h.row(r).iter().map(|v| *v > 0.0));
        }
    }
    out
}

/// Checks every weight gradient of every layer against central differences
/// with step 1e-4. Returns how many entries were skipped because the step
/// switched a hidden ReLU on or off, where the loss is not differentiable and a
/// central difference is no oracle.
pub fn gradients_agree(model: &Model, batch: &Batch) -> Result<usize, String> {
    let eps = 1e-4;
    let pattern = relu_pattern(model, batch);
    let mut skipped = 0;
    for layer in 0..model.n_layers() {
        let grads = model.weight_gradients(batch, layer).unwrap();
        for (r, g) in grads.iter() {
            let w = model.weight(&r).unwrap();
            let plus = model.write_weights(&[r], &[w + eps]).unwrap();
            let minus = model.write_weights(&[r], &[w - eps]).unwrap();
            if relu_pattern(&plus, batch) != pattern || relu_pattern(&minus, batch) != pattern {
                skipped += 1;
                continue;
            }
            let fd = (plus.loss(batch).unwrap() - minus.loss(batch).unwrap()) / (2.0 * eps);
            let tol = (1e-4 * g.abs().max(fd.abs())).max(1e-6);
            if (g - fd).abs() > tol {
                return Err(format!("{r}: backprop {g}, finite difference {fd}"));
            }
        }
    }
    Ok(skipped)
}

/// A random table with coarse values so ties are common.
pub fn random_table(seed: u64, max_weights: usize) -> ImpactTable {
    let mut r = rng(seed);
    let input = r.random_range(1..=20);
    let output = r.random_range(1..=(max_weights / input).clamp(1, 10));
    // a small value pool forces plenty of ties
    let levels = r.random_range(2..=12);
    let mut v = || r.random_range(0..levels) as f64 / levels as f64;
    let impacts = (0..input * output)
        .map(|_| Impact {
            back_failed: v(),
            fwd_failed: v(),
            back_passed: v(),
            fwd_passed: v(),
        })
        .collect();
    ImpactTable::new(0, input, output, impacts).unwrap()
}

/// Top-`n_g` by a full sort on (impact descending, reference ascending).
pub fn brute_top(table: &ImpactTable, kind: ImpactKind, n_g: usize) -> BTreeSet<WeightRef> {
    let mut all: Vec<(f64, WeightRef)> = table.iter().map(|(r, i)| (i.get(kind), r)).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(n_g).map(|(_, r)| r).collect()
}

pub fn brute_localize(table: &ImpactTable, n_g: usize) -> BTreeSet<WeightRef> {
    let bf = brute_top(table, ImpactKind::BackFailed, n_g);
    let ff = brute_top(table, ImpactKind::FwdFailed, n_g);
    let bp = brute_top(table, ImpactKind::BackPassed, n_g);
    let fp = brute_top(table, ImpactKind::FwdPassed, n_g);
    table
        .refs()
        .into_iter()
        .filter(|r| bf.contains(r) && ff.contains(r) && !(bp.contains(r) && fp.contains(r)))
        .collect()
}
