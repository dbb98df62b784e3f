//! Particle swarm search over the localized weights.

mod fitness;
mod sampling;
mod swarm;

pub use fitness::{
    fitness, BaseLosses, FitnessBreakdown, FitnessConfig, FitnessContext, FitnessVariant,
    LossRatioOrientation,
};
pub use sampling::sample_positives;
pub use swarm::{init_swarm, repair, Particle, RepairOutcome, Swarm, SwarmConfig, TraceRow};
