use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use neurepair_core::data::{self, io, SplitKind};
use neurepair_core::harness::{
    self, config_hash, emit_report, make_splits, read_runs_csv, run_repair_pipeline, train_subject,
    DataSource, ExperimentSpec, PipelineContext, RunKey, RunStatus, SweepOptions,
};
use neurepair_core::localization::{compute_impacts, localize, localize_table_to_count, Selection};
use neurepair_core::metrics::evaluate;
use neurepair_core::pso::sample_positives;

#[derive(Parser)]
#[command(
    name = "neurepair",
    version,
    about = "Localize and repair misclassifications without regressions"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed the verb would take from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate the configured synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the subject model on the train split.
    Train {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Four-way split without drift.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Four-way split with the configured drift.
    Drift {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize suspicious weights for one grid entry.
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        grid_index: usize,
    },
    /// Run the full repair pipeline once for one grid entry.
    Repair {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        grid_index: usize,
    },
    /// Per-sample verdicts of a model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// JSON report; a sibling `.csv` with per-sample verdicts is also written.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every grid entry, `repetitions` times, plus the report tables.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Rerun persisted runs instead of reusing them.
        #[arg(long)]
        fresh: bool,
    },
    /// Rebuild the report tables from a sweep's runs.csv.
    Report {
        #[arg(long)]
        sweep_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn spec(&self) -> Result<(ExperimentSpec, PathBuf)> {
        let path = self.config.as_ref().context("this verb needs --config")?;
        let spec = ExperimentSpec::load(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((spec, base))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let c = &cli.common;
    match cli.verb {
        Verb::GenData { out } => {
            let (spec, base) = c.spec()?;
            let ds = match spec.subject.data {
                DataSource::Clusters(mut clusters) => {
                    if let Some(seed) = c.seed {
                        clusters.seed = seed;
                    }
                    clusters.generate()?
                }
                other => other.load(&base)?,
            };
            io::save_dataset(&ds, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Verb::Split { data, out } => {
            let (mut spec, _) = c.spec()?;
            if let Some(seed) = c.seed {
                spec.subject.split.seed = seed;
            }
            let ds = io::load_dataset(&data)?;
            let splits = data::split(&ds, &spec.subject.split)?;
            io::save_splits(&splits, &out)?;
            print_split_counts(&splits);
        }
        Verb::Drift { data, out } => {
            let (mut spec, _) = c.spec()?;
            if spec.subject.drift.is_none() {
                bail!("config has no [subject.drift] section");
            }
            if let (Some(seed), Some(d)) = (c.seed, spec.subject.drift.as_mut()) {
                d.seed = seed;
            }
            let ds = io::load_dataset(&data)?;
            let splits = make_splits(&ds, &spec.subject)?;
            io::save_splits(&splits, &out)?;
            print_split_counts(&splits);
        }
        Verb::Train { splits, out } => {
            let (mut spec, _) = c.spec()?;
            if let Some(seed) = c.seed {
                spec.subject.training.seed = seed;
            }
            let splits = io::load_splits(&splits)?;
            let model = train_subject(&splits.train, &spec.subject.training)?;
            let provenance = io::Provenance {
                seed: spec.subject.training.seed,
                config_hash: config_hash(&spec.subject.training),
                note: None,
            };
            io::save_model(&model, Some(&provenance), &out)?;
            for (kind, data) in splits.iter() {
                println!(
                    "{:<10} accuracy {:.4}",
                    kind.name(),
                    evaluate(&model, data)?.overall_accuracy
                );
            }
        }
        Verb::Localize {
            model,
            splits,
            out,
            grid_index,
        } => {
            let (spec, _) = c.spec()?;
            let entry = spec
                .grid
                .get(grid_index)
                .context("grid index out of range")?;
            let model = io::load_model(&model)?;
            let splits = io::load_splits(&splits)?;
            let inputs = data::select_repair_inputs(
                &model,
                &splits.train,
                &splits.repair,
                spec.target_class,
            )?;
            let seed = c.seed.unwrap_or_else(|| spec.run_seed(grid_index, 0));
            let i_pos = sample_positives(&inputs.positive_pool, entry.n_pos, seed)?;
            let layer = spec.layer.unwrap_or_else(|| model.last_layer());
            let table = compute_impacts(&model, &inputs.negatives, &i_pos, layer)?;
            let set = match entry.selection()? {
                Selection::TopN(n_g) => localize(&table, n_g)?,
                Selection::Count(n) => localize_table_to_count(&table, n)?,
            };
            set.write_csv(Some(&table), &out)?;
            if let Some(w) = &set.warning {
                eprintln!("warning: {w:?}");
            }
            println!(
                "localized {} weights of layer {layer} to {}",
                set.len(),
                out.display()
            );
        }
        Verb::Repair {
            model,
            splits,
            out,
            grid_index,
        } => {
            let (spec, _) = c.spec()?;
            let entry = spec
                .grid
                .get(grid_index)
                .context("grid index out of range")?;
            let model = io::load_model(&model)?;
            let splits = io::load_splits(&splits)?;
            let ctx = PipelineContext {
                model: &model,
                splits: &splits,
                target_class: spec.target_class,
                layer: spec.layer,
                swarm: &spec.swarm,
            };
            let key = RunKey {
                config_index: grid_index,
                repetition: 0,
                seed: c.seed.unwrap_or_else(|| spec.run_seed(grid_index, 0)),
            };
            let artifacts = run_repair_pipeline(&ctx, entry, key)?;
            artifacts.persist(&out)?;
            let r = &artifacts.result;
            println!(
                "status {} ({} localized, {} failing target samples)",
                r.status.name(),
                r.n_localized,
                r.n_neg
            );
            for s in &r.splits {
                println!(
                    "{:<10} accuracy {:.4} -> {:.4}  broken {:>3}  repaired {:>3}",
                    s.split.name(),
                    s.accuracy_before,
                    s.accuracy_after,
                    s.n_broken,
                    s.n_repaired
                );
            }
        }
        Verb::Evaluate { model, data, out } => {
            let model = io::load_model(&model)?;
            let ds = io::load_dataset(&data)?;
            let report = evaluate(&model, &ds)?;
            println!(
                "accuracy {:.4} over {} samples",
                report.overall_accuracy,
                report.len()
            );
            for (class, acc) in report.per_class_accuracy.iter().enumerate() {
                println!(
                    "  class {class}: {acc:.4} ({} samples)",
                    report.per_class_counts[class]
                );
            }
            if let Some(out) = out {
                std::fs::write(&out, report.to_json()? + "\n")
                    .with_context(|| format!("writing {}", out.display()))?;
                report.write_csv(out.with_extension("csv"))?;
            }
        }
        Verb::Sweep {
            out,
            threads,
            fresh,
        } => {
            let (mut spec, base) = c.spec()?;
            if let Some(seed) = c.seed {
                spec.master_seed = seed;
            }
            let opts = SweepOptions {
                out_dir: Some(out.clone()),
                threads,
                resume: !fresh,
            };
            let agg = harness::run_sweep(&spec, &base, &opts)?;
            emit_report(&agg, &out)?;
            for cfg in &agg.configs {
                let test = cfg.mean(SplitKind::Test);
                println!(
                    "[{}] {:<28} runs {:>2}  failed {}  test broken {:>6.2}  repaired {:>6.2}",
                    cfg.config_index,
                    cfg.label,
                    cfg.n_runs,
                    cfg.n_failed,
                    test.map_or(f64::NAN, |m| m.broken),
                    test.map_or(f64::NAN, |m| m.repaired)
                );
            }
            let failed = agg.n_failed();
            if failed > 0 {
                for r in agg.runs.iter().filter(|r| r.status == RunStatus::Failed) {
                    eprintln!(
                        "run c{}-r{} failed: {}",
                        r.config_index,
                        r.repetition,
                        r.error.as_deref().unwrap_or("")
                    );
                }
                return Ok(ExitCode::FAILURE);
            }
        }
        Verb::Report { sweep_dir, out } => {
            let (spec, _) = c.spec()?;
            let runs = read_runs_csv(sweep_dir.join("runs.csv"))?;
            let labels: Vec<String> = spec.grid.iter().map(|g| g.label()).collect();
            let agg = harness::aggregate(&labels, runs);
            let out = out.unwrap_or(sweep_dir);
            emit_report(&agg, &out)?;
            println!(
                "wrote report for {} runs to {}",
                agg.runs.len(),
                out.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_split_counts(splits: &data::Splits) {
    for (kind, d) in splits.iter() {
        println!(
            "{:<10} {:>6} samples  class counts {:?}",
            kind.name(),
            d.len(),
            d.class_counts()
        );
    }
}
