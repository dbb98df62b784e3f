use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fitness::{FitnessBreakdown, FitnessConfig, FitnessContext};
use crate::error::{Error, Result};
use crate::localization::LocalizedSet;
use crate::nn::{Batch, Model, WeightRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n_particles: usize,
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Maximum speed per dimension, as a multiple of the layer's weight std.
    pub velocity_clamp: f64,
    pub seed: u64,
}

impl SwarmConfig {
    pub const DEFAULT_INERTIA: f64 = 0.7298;
    pub const DEFAULT_ACCELERATION: f64 = 1.49618;
    pub const DEFAULT_ITERATIONS: usize = 100;
    pub const DEFAULT_VELOCITY_CLAMP: f64 = 3.0;

    /// Constriction-style coefficients.
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            n_iterations: Self::DEFAULT_ITERATIONS,
            inertia: Self::DEFAULT_INERTIA,
            cognitive: Self::DEFAULT_ACCELERATION,
            social: Self::DEFAULT_ACCELERATION,
            velocity_clamp: Self::DEFAULT_VELOCITY_CLAMP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 particles, got {}",
                self.n_particles
            )));
        }
        let coeffs = [
            self.inertia,
            self.cognitive,
            self.social,
            self.velocity_clamp,
        ];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "swarm coefficients must be finite and >= 0: {coeffs:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

/// Particle state plus the per-particle random streams that drive it.
#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    /// Mean and std of every weight in the repair layer.
    pub weight_mean: f64,
    pub weight_std: f64,
    pub max_velocity: f64,
    rngs: Vec<ChaCha8Rng>,
}

impl Swarm {
    /// Number of particles that start at the original weights.
    pub fn n_original(&self) -> usize {
        self.particles.len().div_ceil(2)
    }
}

fn repair_layer(localized: &LocalizedSet) -> Result<usize> {
    let layer = localized.refs[0].layer;
    if let Some(r) = localized.refs.iter().find(|r| r.layer != layer) {
        return Err(Error::InvalidConfig(format!(
            "localized weights span layers {layer} and {}",
            r.layer
        )));
    }
    Ok(layer)
}

fn weight_stats(weights: &[f64]) -> (f64, f64) {
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let std = if weights.len() < 2 {
        0.0
    } else {
        (weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Starts the first `ceil(n/2)` particles at the original weights and draws the
/// rest i.i.d. from a normal fitted to all weights of the repair layer. Velocities
/// start at zero. Particle `k` uses ChaCha stream `k` of the seed.
pub fn init_swarm(localized: &LocalizedSet, model: &Model, cfg: &SwarmConfig) -> Result<Swarm> {
    cfg.validate()?;
    if localized.is_empty() {
        return Err(Error::InvalidConfig("localized set is empty".into()));
    }
    let layer = repair_layer(localized)?;
    let original = model.read_weights(&localized.refs)?;
    let (mean, mut std) = weight_stats(model.layer(layer)?.weights());
    if std == 0.0 || !std.is_finite() {
        std = mean.abs().max(1.0) * 1e-2;
    }
    let normal = Normal::new(mean, std).expect("std is positive and finite");
    let n_original = cfg.n_particles.div_ceil(2);
    let dim = original.len();

    let mut rngs = Vec::with_capacity(cfg.n_particles);
    let mut particles = Vec::with_capacity(cfg.n_particles);
    for k in 0..cfg.n_particles {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let position: Vec<f64> = if k < n_original {
            original.clone()
        } else {
            (0..dim).map(|_| normal.sample(&mut rng)).collect()
        };
        particles.push(Particle {
            best_position: position.clone(),
            position,
            velocity: vec![0.0; dim],
            best_fitness: f64::NEG_INFINITY,
        });
        rngs.push(rng);
    }
    Ok(Swarm {
        particles,
        weight_mean: mean,
        weight_std: std,
        max_velocity: cfg.velocity_clamp * std,
        rngs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub gbest_fitness: f64,
    pub n_patched: usize,
    pub n_intact: usize,
}

#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub model: Model,
    pub best: FitnessBreakdown,
    /// Fitness of leaving the weights unchanged.
    pub identity: FitnessBreakdown,
    pub best_position: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// The localized set was empty; nothing was searched.
    pub no_search_space: bool,
    /// No candidate beat the identity patch, so the original model was returned.
    pub identity_fallback: bool,
}

impl RepairOutcome {
    pub fn write_trace_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "gbest_fitness", "n_patched", "n_intact"])?;
        for row in &self.trace {
            w.write_record([
                row.iteration.to_string(),
                row.gbest_fitness.to_string(),
                row.n_patched.to_string(),
                row.n_intact.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn evaluate_all(
    model: &Model,
    refs: &[WeightRef],
    positions: &[&[f64]],
    ctx: &FitnessContext,
    cfg: &FitnessConfig,
) -> Vec<FitnessBreakdown> {
    positions
        .par_iter()
        .map(|pos| {
            let mut candidate = model.clone();
            match candidate.write_weights_in_place(refs, pos) {
                Ok(()) => ctx.evaluate(&candidate, cfg),
                // non-finite position: worst possible score
                Err(_) => cfg.score(
                    0,
                    ctx.i_neg.len(),
                    0,
                    ctx.i_pos.len(),
                    ctx.base,
                    f64::NAN,
                    f64::NAN,
                ),
            }
        })
        .collect()
}

/// Global-best particle swarm search over the localized weights.
///
/// Fitness is evaluated in parallel, but the global best is reduced in particle
/// order and every particle draws from its own random stream, so results do not
/// depend on the thread count.
pub fn repair(
    model: &Model,
    localized: &LocalizedSet,
    i_neg: &Batch,
    i_pos: &Batch,
    fitness_cfg: &FitnessConfig,
    swarm_cfg: &SwarmConfig,
) -> Result<RepairOutcome> {
    fitness_cfg.validate()?;
    swarm_cfg.validate()?;
    let layer = if localized.is_empty() {
        model.last_layer()
    } else {
        repair_layer(localized)?
    };
    let ctx = FitnessContext::new(model, i_neg.clone(), i_pos.clone(), layer)?;
    let identity = ctx.evaluate(model, fitness_cfg);
    let original = model.read_weights(&localized.refs)?;

    if localized.is_empty() {
        return Ok(RepairOutcome {
            model: model.clone(),
            best: identity,
            identity,
            best_position: original,
            trace: vec![TraceRow {
                iteration: 0,
                gbest_fitness: identity.gated_fitness,
                n_patched: identity.n_patched,
                n_intact: identity.n_intact,
            }],
            no_search_space: true,
            identity_fallback: true,
        });
    }

    let refs = &localized.refs;
    let mut swarm = init_swarm(localized, model, swarm_cfg)?;
    let positions: Vec<&[f64]> = swarm
        .particles
        .iter()
        .map(|p| p.position.as_slice())
        .collect();
    let scores = evaluate_all(model, refs, &positions, &ctx, fitness_cfg);

    let mut gbest_idx = 0;
    let mut gbest = scores[0];
    for (k, (p, s)) in swarm.particles.iter_mut().zip(&scores).enumerate() {
        p.best_fitness = s.gated_fitness;
        if s.gated_fitness > gbest.gated_fitness {
            gbest = *s;
            gbest_idx = k;
        }
    }
    let mut gbest_position = swarm.particles[gbest_idx].position.clone();
    let mut trace = Vec::with_capacity(swarm_cfg.n_iterations + 1);
    let row = |iteration: usize, b: &FitnessBreakdown| TraceRow {
        iteration,
        gbest_fitness: b.gated_fitness,
        n_patched: b.n_patched,
        n_intact: b.n_intact,
    };
    trace.push(row(0, &gbest));

    let vmax = swarm.max_velocity;
    for iteration in 1..=swarm_cfg.n_iterations {
        for (p, rng) in swarm.particles.iter_mut().zip(swarm.rngs.iter_mut()) {
            for d in 0..p.position.len() {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let x = p.position[d];
                let v = swarm_cfg.inertia * p.velocity[d]
                    + swarm_cfg.cognitive * r1 * (p.best_position[d] - x)
                    + swarm_cfg.social * r2 * (gbest_position[d] - x);
                let v = v.clamp(-vmax, vmax);
                p.velocity[d] = v;
                p.position[d] = x + v;
            }
        }
        let positions: Vec<&[f64]> = swarm
            .particles
            .iter()
            .map(|p| p.position.as_slice())
            .collect();
        let scores = evaluate_all(model, refs, &positions, &ctx, fitness_cfg);
        for (p, s) in swarm.particles.iter_mut().zip(&scores) {
            if s.gated_fitness > p.best_fitness {
                p.best_fitness = s.gated_fitness;
                p.best_position.clone_from(&p.position);
            }
            if s.gated_fitness > gbest.gated_fitness {
                gbest = *s;
                gbest_position.clone_from(&p.position);
            }
        }
        trace.push(row(iteration, &gbest));
    }

    if gbest.gated_fitness > identity.gated_fitness {
        let repaired = model.write_weights(refs, &gbest_position)?;
        Ok(RepairOutcome {
            model: repaired,
            best: gbest,
            identity,
            best_position: gbest_position,
            trace,
            no_search_space: false,
            identity_fallback: false,
        })
    } else {
        Ok(RepairOutcome {
            model: model.clone(),
            best: identity,
            identity,
            best_position: original,
            trace,
            no_search_space: false,
            identity_fallback: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::{LocalizationProvenance, LocalizedSet};
    use crate::nn::{Activation, Matrix};
    use crate::pso::{BaseLosses, FitnessVariant};

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

    fn seeded_model() -> Model {
        Model::random(
            &[3, 5, 3],
            Activation::Relu,
            &mut ChaCha8Rng::seed_from_u64(31),
        )
        .unwrap()
    }

    #[test]
    fn two_particles_split_half_and_half() {
        let m = seeded_model();
        let refs = vec![WeightRef::new(1, 0, 0), WeightRef::new(1, 4, 2)];
        let s = init_swarm(&set(refs.clone()), &m, &SwarmConfig::new(2, 5)).unwrap();
        assert_eq!(s.n_original(), 1);
        let original = m.read_weights(&refs).unwrap();
        assert_eq!(s.particles[0].position, original);
        assert_ne!(s.particles[1].position, original);
        assert!(s
            .particles
            .iter()
            .all(|p| p.velocity.iter().all(|&v| v == 0.0)));

        let odd = init_swarm(&set(refs), &m, &SwarmConfig::new(5, 5)).unwrap();
        assert_eq!(odd.n_original(), 3);
        assert!(odd.particles[..3].iter().all(|p| p.position == original));
    }

    #[test]
    fn rejects_bad_configs() {
        let m = seeded_model();
        let refs = set(vec![WeightRef::new(1, 0, 0)]);
        assert!(init_swarm(&refs, &m, &SwarmConfig::new(1, 0)).is_err());
        assert!(init_swarm(&set(vec![]), &m, &SwarmConfig::new(4, 0)).is_err());
        let mixed = set(vec![WeightRef::new(0, 0, 0), WeightRef::new(1, 0, 0)]);
        assert!(init_swarm(&mixed, &m, &SwarmConfig::new(4, 0)).is_err());
    }

    #[test]
    fn degenerate_layer_std_falls_back() {
        let head = crate::nn::DenseLayer::new(
            crate::nn::LayerSpec {
                input_size: 2,
                output_size: 2,
                activation: Activation::Softmax,
            },
            vec![3.0; 4],
            vec![0.0; 2],
        )
        .unwrap();
        let m = Model::new(vec![head]).unwrap();
        let s = init_swarm(
            &set(vec![WeightRef::new(0, 0, 0)]),
            &m,
            &SwarmConfig::new(4, 1),
        )
        .unwrap();
        assert_eq!(s.weight_mean, 3.0);
        assert!((s.weight_std - 0.03).abs() < 1e-15);
    }

    #[test]
    fn sampled_half_matches_layer_distribution() {
        let m = seeded_model();
        let refs = vec![WeightRef::new(1, 1, 1)];
        let s = init_swarm(&set(refs), &m, &SwarmConfig::new(20_000, 77)).unwrap();
        let (mu, sigma) = weight_stats(m.layer(1).unwrap().weights());
        assert_eq!((s.weight_mean, s.weight_std), (mu, sigma));
        let draws: Vec<f64> = s.particles[s.n_original()..]
            .iter()
            .map(|p| p.position[0])
            .collect();
        assert_eq!(draws.len(), 10_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - mu).abs() <= 3.0 * sigma / 100.0, "{mean} vs {mu}");
    }

    fn data(rows: &[[f64; 3]], labels: &[usize], first_id: u64) -> Batch {
        let flat = rows.iter().flatten().copied().collect();
        Batch::new(
            Matrix::from_vec(rows.len(), 3, flat).unwrap(),
            labels.to_vec(),
            (first_id..first_id + rows.len() as u64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_localized_set_returns_original() {
        let m = seeded_model();
        let neg = data(&[[1.0, 0.0, 0.0]], &[2], 0);
        let pos = data(&[[0.0, 1.0, 0.0]], &[0], 10);
        let cfg = FitnessConfig::new(FitnessVariant::NegRatio, 8.0, true);
        let out = repair(&m, &set(vec![]), &neg, &pos, &cfg, &SwarmConfig::new(4, 0)).unwrap();
        assert!(out.no_search_space && out.identity_fallback);
        assert_eq!(out.model, m);
    }

    #[test]
    fn zero_iterations_keeps_best_initial_particle() {
        let m = seeded_model();
        let batch = data(
            &[
                [1.0, 0.5, -0.5],
                [0.2, 0.1, 0.9],
                [-1.0, 2.0, 0.3],
                [0.4, -0.4, 1.2],
            ],
            &[0, 1, 2, 0],
            0,
        );
        let pred = m.predict(&batch).unwrap();
        let (mut neg_idx, mut pos_idx) = (vec![], vec![]);
        for k in 0..batch.len() {
            if pred[k] == batch.labels()[k] {
                pos_idx.push(k)
            } else {
                neg_idx.push(k)
            }
        }
        if neg_idx.is_empty() || pos_idx.is_empty() {
            return;
        }
        let (neg, pos) = (batch.select(&neg_idx), batch.select(&pos_idx));
        let refs = m.layer_refs(1).unwrap();
        let cfg = FitnessConfig::new(FitnessVariant::NegRatio, 8.0, true);
        let mut scfg = SwarmConfig::new(6, 3);
        scfg.n_iterations = 0;
        let out = repair(&m, &set(refs), &neg, &pos, &cfg, &scfg).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(out.best.gated_fitness >= out.identity.gated_fitness);
        assert!(out.identity.gated_fitness > 0.0);
        let base = BaseLosses::compute(&m, &neg, &pos).unwrap();
        assert_eq!(
            out.identity,
            crate::pso::fitness(&m, &neg, &pos, base, &cfg).unwrap()
        );
    }
}
