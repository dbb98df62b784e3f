use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{config_hash, ExperimentSpec};
use super::pipeline::{run_repair_pipeline, PipelineContext, RunKey, RunResult};
use super::subject::Subject;
use crate::data::{io, SplitKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Where run directories go. Without one nothing is persisted and nothing resumes.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Reuse runs already persisted under `out_dir`.
    pub resume: bool,
}

/// Mean per-split numbers over the successful runs of one config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeans {
    pub split: SplitKind,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub broken: f64,
    pub repaired: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config_index: usize,
    pub label: String,
    pub n_runs: usize,
    pub n_failed: usize,
    /// Empty when every run failed.
    pub means: Vec<SplitMeans>,
    pub mean_pos_broken: f64,
    /// Repetition with the fewest broken test instances, lowest repetition on ties.
    pub min_regression_repetition: Option<usize>,
}

impl ConfigSummary {
    pub fn mean(&self, kind: SplitKind) -> Option<&SplitMeans> {
        self.means.iter().find(|m| m.split == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    /// Sorted by (config, repetition).
    pub runs: Vec<RunResult>,
    pub configs: Vec<ConfigSummary>,
}

impl AggregateResult {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| r.is_failed()).count()
    }

    pub fn run(&self, config_index: usize, repetition: usize) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|r| r.config_index == config_index && r.repetition == repetition)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Folds runs into per-config summaries. `labels[i]` names config `i`.
pub fn aggregate(labels: &[String], mut runs: Vec<RunResult>) -> AggregateResult {
    runs.sort_by_key(|r| (r.config_index, r.repetition));
    let configs = labels
        .iter()
        .enumerate()
        .map(|(ci, label)| {
            let all: Vec<&RunResult> = runs.iter().filter(|r| r.config_index == ci).collect();
            let ok: Vec<&RunResult> = all.iter().copied().filter(|r| !r.is_failed()).collect();
            let means = if ok.is_empty() {
                Vec::new()
            } else {
                SplitKind::ALL
                    .iter()
                    .map(|&kind| {
                        let outcomes: Vec<_> = ok.iter().filter_map(|r| r.split(kind)).collect();
                        SplitMeans {
                            split: kind,
                            accuracy_before: mean(outcomes.iter().map(|o| o.accuracy_before)),
                            accuracy_after: mean(outcomes.iter().map(|o| o.accuracy_after)),
                            broken: mean(outcomes.iter().map(|o| o.n_broken as f64)),
                            repaired: mean(outcomes.iter().map(|o| o.n_repaired as f64)),
                        }
                    })
                    .collect()
            };
            let min_regression_repetition = ok
                .iter()
                .filter_map(|r| r.split(SplitKind::Test).map(|t| (t.n_broken, r.repetition)))
                .min()
                .map(|(_, rep)| rep);
            ConfigSummary {
                config_index: ci,
                label: label.clone(),
                n_runs: all.len(),
                n_failed: all.len() - ok.len(),
                means,
                mean_pos_broken: if ok.is_empty() {
                    f64::NAN
                } else {
                    mean(ok.iter().map(|r| r.n_pos_broken as f64))
                },
                min_regression_repetition,
            }
        })
        .collect();
    AggregateResult { runs, configs }
}

pub fn run_dir(out_dir: &Path, config_index: usize, repetition: usize) -> PathBuf {
    out_dir
        .join("runs")
        .join(format!("c{config_index:03}-r{repetition:03}"))
}

fn load_persisted(dir: &Path, key: RunKey, hash: &str) -> Option<RunResult> {
    let text = std::fs::read_to_string(dir.join("run.json")).ok()?;
    let run: RunResult = serde_json::from_str(&text).ok()?;
    let matches = run.seed == key.seed
        && run.config_hash == hash
        && run.config_index == key.config_index
        && run.repetition == key.repetition
        && !run.is_failed();
    matches.then_some(run)
}

fn execute(spec: &ExperimentSpec, subject: &Subject, opts: &SweepOptions) -> Vec<RunResult> {
    let ctx = PipelineContext {
        model: &subject.model,
        splits: &subject.splits,
        target_class: spec.target_class,
        layer: spec.layer,
        swarm: &spec.swarm,
    };
    let keys: Vec<RunKey> = (0..spec.grid.len())
        .flat_map(|ci| {
            (0..spec.repetitions).map(move |rep| RunKey {
                config_index: ci,
                repetition: rep,
                seed: spec.run_seed(ci, rep),
            })
        })
        .collect();

    keys.par_iter()
        .map(|&key| {
            let config = &spec.grid[key.config_index];
            let hash = config_hash(config);
            let dir = opts
                .out_dir
                .as_ref()
                .map(|d| run_dir(d, key.config_index, key.repetition));
            if let (true, Some(dir)) = (opts.resume, &dir) {
                if let Some(run) = load_persisted(dir, key, &hash) {
                    return run;
                }
            }
            let start = Instant::now();
            let outcome = run_repair_pipeline(&ctx, config, key).and_then(|artifacts| {
                if let Some(dir) = &dir {
                    artifacts.persist(dir)?;
                }
                Ok(artifacts.result)
            });
            let mut run = outcome.unwrap_or_else(|e| {
                RunResult::failed(key.config_index, key.repetition, key.seed, hash, &e)
            });
            run.runtime_secs = start.elapsed().as_secs_f64();
            if let Some(dir) = &dir {
                // timing lives beside run.json so the result file stays reproducible
                let _ = std::fs::create_dir_all(dir);
                let _ = std::fs::write(dir.join("timing.txt"), format!("{}\n", run.runtime_secs));
            }
            run
        })
        .collect()
}

/// Runs every grid entry `repetitions` times against `subject`. A failing run is
/// recorded and the sweep carries on.
pub fn run_sweep_with(
    spec: &ExperimentSpec,
    subject: &Subject,
    opts: &SweepOptions,
) -> Result<AggregateResult> {
    spec.validate()?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let runs = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| execute(spec, subject, opts)),
        None => execute(spec, subject, opts),
    };
    let labels: Vec<String> = spec.grid.iter().map(|g| g.label()).collect();
    Ok(aggregate(&labels, runs))
}

/// Builds the subject from the spec (relative data paths resolve against
/// `base_dir`), saves it under `out_dir/subject` when persisting, and sweeps.
pub fn run_sweep(
    spec: &ExperimentSpec,
    base_dir: &Path,
    opts: &SweepOptions,
) -> Result<AggregateResult> {
    spec.validate()?;
    let subject = Subject::build(&spec.subject, base_dir)?;
    if let Some(dir) = &opts.out_dir {
        let sub = dir.join("subject");
        io::save_splits(&subject.splits, &sub)?;
        let provenance = io::Provenance {
            seed: spec.subject.training.seed,
            config_hash: config_hash(&spec.subject),
            note: None,
        };
        io::save_model(&subject.model, Some(&provenance), sub.join("model.json"))?;
    }
    run_sweep_with(spec, &subject, opts)
}
