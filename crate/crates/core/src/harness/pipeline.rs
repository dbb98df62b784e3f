use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{config_hash, RunConfig, SwarmSection};
use crate::data::{io, select_repair_inputs, SplitKind, Splits};
use crate::error::{Error, Result};
use crate::localization::{
    compute_impacts, localize, localize_table_to_count, ImpactTable, LocalizedSet, Selection,
};
use crate::metrics::{diff, evaluate, EvalReport, Scope};
use crate::nn::Model;
use crate::pso::{repair, sample_positives, RepairOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// The swarm found a patch better than the original weights.
    Repaired,
    /// Nothing beat the original weights; the model is unchanged.
    IdentityFallback,
    /// Localization selected no weights; the model is unchanged.
    NoSearchSpace,
    /// The subject has no failures in the target class of the repair split.
    NothingToRepair,
    Failed,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Repaired => "repaired",
            RunStatus::IdentityFallback => "identity_fallback",
            RunStatus::NoSearchSpace => "no_search_space",
            RunStatus::NothingToRepair => "nothing_to_repair",
            RunStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            RunStatus::Repaired,
            RunStatus::IdentityFallback,
            RunStatus::NoSearchSpace,
            RunStatus::NothingToRepair,
            RunStatus::Failed,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// Before/after numbers for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split: SplitKind,
    pub n_samples: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub target_accuracy_before: f64,
    pub target_accuracy_after: f64,
    pub n_broken: usize,
    pub n_repaired: usize,
}

impl SplitOutcome {
    fn unchanged(split: SplitKind, report: &EvalReport, target: usize) -> Self {
        Self::compare(split, report, report, target).expect("a report matches itself")
    }

    fn compare(
        split: SplitKind,
        before: &EvalReport,
        after: &EvalReport,
        target: usize,
    ) -> Result<Self> {
        let d = diff(before, after)?;
        Ok(Self {
            split,
            n_samples: before.len(),
            accuracy_before: before.overall_accuracy,
            accuracy_after: after.overall_accuracy,
            target_accuracy_before: before.scoped_accuracy(Scope::Class(target)),
            target_accuracy_after: after.scoped_accuracy(Scope::Class(target)),
            n_broken: d.broken.len(),
            n_repaired: d.repaired.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_index: usize,
    pub repetition: usize,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub n_neg: usize,
    pub n_pos: usize,
    pub n_localized: usize,
    /// Sampled passed instances that the returned model misclassifies.
    pub n_pos_broken: usize,
    pub identity_fitness: Option<f64>,
    pub best_fitness: Option<f64>,
    /// One entry per split in train, validation, repair, test order; empty for failed runs.
    pub splits: Vec<SplitOutcome>,
    /// Wall-clock time; kept out of the persisted record so reruns compare equal.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl RunResult {
    pub fn split(&self, kind: SplitKind) -> Option<&SplitOutcome> {
        self.splits.iter().find(|s| s.split == kind)
    }

    pub fn is_failed(&self) -> bool {
        self.status == RunStatus::Failed
    }

    pub fn failed(
        config_index: usize,
        repetition: usize,
        seed: u64,
        hash: String,
        error: &Error,
    ) -> Self {
        Self {
            config_index,
            repetition,
            seed,
            config_hash: hash,
            status: RunStatus::Failed,
            error: Some(error.to_string()),
            n_neg: 0,
            n_pos: 0,
            n_localized: 0,
            n_pos_broken: 0,
            identity_fitness: None,
            best_fitness: None,
            splits: Vec::new(),
            runtime_secs: 0.0,
        }
    }
}

/// Everything a single repair run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub result: RunResult,
    /// `None` when there was nothing to repair.
    pub repaired: Option<Model>,
    pub impacts: Option<ImpactTable>,
    pub localized: Option<LocalizedSet>,
    pub outcome: Option<RepairOutcome>,
}

impl RunArtifacts {
    /// Writes `run.json` plus, when present, `model.json`, `trace.csv` and
    /// `localized.csv` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(model) = &self.repaired {
            let provenance = io::Provenance {
                seed: self.result.seed,
                config_hash: self.result.config_hash.clone(),
                note: Some(format!("status={}", self.result.status.name())),
            };
            io::save_model(model, Some(&provenance), dir.join("model.json"))?;
        }
        if let Some(outcome) = &self.outcome {
            outcome.write_trace_csv(dir.join("trace.csv"))?;
        }
        if let Some(localized) = &self.localized {
            localized.write_csv(self.impacts.as_ref(), dir.join("localized.csv"))?;
        }
        let json = serde_json::to_string_pretty(&self.result)? + "\n";
        let path = dir.join("run.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Identifies one run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub config_index: usize,
    pub repetition: usize,
    pub seed: u64,
}

/// Inputs shared by every run against one subject.
#[derive(Debug, Clone, Copy)]
pub struct PipelineContext<'a> {
    pub model: &'a Model,
    pub splits: &'a Splits,
    pub target_class: usize,
    /// Repair layer; `None` means the last layer.
    pub layer: Option<usize>,
    pub swarm: &'a SwarmSection,
}

/// Selects the repair inputs, samples `I_pos`, localizes, runs the swarm and
/// evaluates the result on all four splits.
///
/// `I_pos` is also the passed data for localization. The run seed drives both
/// the positive sample and the swarm (on disjoint random streams).
pub fn run_repair_pipeline(
    ctx: &PipelineContext<'_>,
    config: &RunConfig,
    key: RunKey,
) -> Result<RunArtifacts> {
    config.validate()?;
    let model = ctx.model;
    let hash = config_hash(config);
    let before: Vec<EvalReport> = SplitKind::ALL
        .iter()
        .map(|&k| evaluate(model, ctx.splits.get(k)))
        .collect::<Result<_>>()?;

    let inputs = match select_repair_inputs(
        model,
        &ctx.splits.train,
        &ctx.splits.repair,
        ctx.target_class,
    ) {
        Ok(inputs) => inputs,
        Err(Error::NothingToRepair { .. }) => {
            let splits = SplitKind::ALL
                .iter()
                .zip(&before)
                .map(|(&k, r)| SplitOutcome::unchanged(k, r, ctx.target_class))
                .collect();
            return Ok(RunArtifacts {
                result: RunResult {
                    config_index: key.config_index,
                    repetition: key.repetition,
                    seed: key.seed,
                    config_hash: hash,
                    status: RunStatus::NothingToRepair,
                    error: None,
                    n_neg: 0,
                    n_pos: 0,
                    n_localized: 0,
                    n_pos_broken: 0,
                    identity_fitness: None,
                    best_fitness: None,
                    splits,
                    runtime_secs: 0.0,
                },
                repaired: None,
                impacts: None,
                localized: None,
                outcome: None,
            });
        }
        Err(e) => return Err(e),
    };

    let i_neg = inputs.negatives;
    let i_pos = sample_positives(&inputs.positive_pool, config.n_pos, key.seed)?;
    let layer = ctx.layer.unwrap_or_else(|| model.last_layer());
    let impacts = compute_impacts(model, &i_neg, &i_pos, layer)?;
    let localized = match config.selection()? {
        Selection::TopN(n_g) => localize(&impacts, n_g)?,
        Selection::Count(target) => localize_table_to_count(&impacts, target)?,
    };

    let fitness = config.fitness();
    let swarm = config.swarm(ctx.swarm, key.seed);
    let outcome = repair(model, &localized, &i_neg, &i_pos, &fitness, &swarm)?;
    let repaired = &outcome.model;

    let mut splits = Vec::with_capacity(4);
    for (&kind, b) in SplitKind::ALL.iter().zip(&before) {
        let after = evaluate(repaired, ctx.splits.get(kind))?;
        splits.push(SplitOutcome::compare(kind, b, &after, ctx.target_class)?);
    }
    let pos_pred = repaired.predict(&i_pos)?;
    let n_pos_broken = pos_pred
        .iter()
        .zip(i_pos.labels())
        .filter(|(p, y)| p != y)
        .count();

    let status = if outcome.no_search_space {
        RunStatus::NoSearchSpace
    } else if outcome.identity_fallback {
        RunStatus::IdentityFallback
    } else {
        RunStatus::Repaired
    };
    let finite = |v: f64| v.is_finite().then_some(v);
    let result = RunResult {
        config_index: key.config_index,
        repetition: key.repetition,
        seed: key.seed,
        config_hash: hash,
        status,
        error: None,
        n_neg: i_neg.len(),
        n_pos: i_pos.len(),
        n_localized: localized.len(),
        n_pos_broken,
        identity_fitness: finite(outcome.identity.gated_fitness),
        best_fitness: finite(outcome.best.gated_fitness),
        splits,
        runtime_secs: 0.0,
    };
    Ok(RunArtifacts {
        result,
        repaired: Some(outcome.model.clone()),
        impacts: Some(impacts),
        localized: Some(localized),
        outcome: Some(outcome),
    })
}
