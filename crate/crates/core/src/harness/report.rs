use std::collections::HashMap;
use std::path::Path;

use super::pipeline::{RunResult, RunStatus, SplitOutcome};
use super::sweep::AggregateResult;
use crate::data::SplitKind;
use crate::error::{Error, Result};

const SPLIT_FIELDS: [&str; 7] = [
    "n",
    "acc_before",
    "acc_after",
    "target_acc_before",
    "target_acc_after",
    "broken",
    "repaired",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn runs_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "config_index",
        "repetition",
        "seed",
        "config_hash",
        "status",
        "n_neg",
        "n_pos",
        "n_localized",
        "n_pos_broken",
        "identity_fitness",
        "best_fitness",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for kind in SplitKind::ALL {
        for f in SPLIT_FIELDS {
            h.push(format!("{}_{f}", kind.name()));
        }
    }
    h.push("error".into());
    h
}

fn run_row(r: &RunResult) -> Vec<String> {
    let mut row = vec![
        r.config_index.to_string(),
        r.repetition.to_string(),
        r.seed.to_string(),
        r.config_hash.clone(),
        r.status.name().to_string(),
        r.n_neg.to_string(),
        r.n_pos.to_string(),
        r.n_localized.to_string(),
        r.n_pos_broken.to_string(),
        opt(r.identity_fitness),
        opt(r.best_fitness),
    ];
    for kind in SplitKind::ALL {
        match r.split(kind) {
            Some(s) => row.extend([
                s.n_samples.to_string(),
                s.accuracy_before.to_string(),
                s.accuracy_after.to_string(),
                s.target_accuracy_before.to_string(),
                s.target_accuracy_after.to_string(),
                s.n_broken.to_string(),
                s.n_repaired.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), SPLIT_FIELDS.len())),
        }
    }
    row.push(r.error.clone().unwrap_or_default());
    row
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Writes the sweep tables into `out_dir`:
///
/// * `runs.csv`: one row per run.
/// * `config_means.csv`: per-config means for every split.
/// * `min_regression.csv`: the minimum-regression run of each config.
/// * `long.csv`: `config_index,repetition,split,metric,value` rows for plotting.
/// * `summary.json`: the whole aggregate.
pub fn emit_report(agg: &AggregateResult, out_dir: impl AsRef<Path>) -> Result<()> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    write_csv(
        &out.join("runs.csv"),
        &runs_header(),
        agg.runs.iter().map(run_row),
    )?;

    let mut header = strings(&[
        "config_index",
        "label",
        "n_runs",
        "n_failed",
        "mean_pos_broken",
    ]);
    for kind in SplitKind::ALL {
        for f in [
            "mean_acc_before",
            "mean_acc_after",
            "mean_broken",
            "mean_repaired",
        ] {
            header.push(format!("{}_{f}", kind.name()));
        }
    }
    let rows = agg.configs.iter().map(|c| {
        let mut row = vec![
            c.config_index.to_string(),
            c.label.clone(),
            c.n_runs.to_string(),
            c.n_failed.to_string(),
            c.mean_pos_broken.to_string(),
        ];
        for kind in SplitKind::ALL {
            match c.mean(kind) {
                Some(m) => row.extend([
                    m.accuracy_before.to_string(),
                    m.accuracy_after.to_string(),
                    m.broken.to_string(),
                    m.repaired.to_string(),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        row
    });
    write_csv(&out.join("config_means.csv"), &header, rows)?;

    let mut header = strings(&["config_index", "label"]);
    header.extend(runs_header().into_iter().skip(1));
    let rows = agg.configs.iter().filter_map(|c| {
        let rep = c.min_regression_repetition?;
        let run = agg.run(c.config_index, rep)?;
        let mut row = vec![c.config_index.to_string(), c.label.clone()];
        row.extend(run_row(run).into_iter().skip(1));
        Some(row)
    });
    write_csv(&out.join("min_regression.csv"), &header, rows)?;

    let rows = agg.runs.iter().flat_map(|r| {
        r.splits.iter().flat_map(move |s| {
            let metrics = [
                ("accuracy_before", s.accuracy_before),
                ("accuracy_after", s.accuracy_after),
                ("broken", s.n_broken as f64),
                ("repaired", s.n_repaired as f64),
            ];
            metrics.into_iter().map(move |(name, v)| {
                vec![
                    r.config_index.to_string(),
                    r.repetition.to_string(),
                    s.split.name().to_string(),
                    name.to_string(),
                    v.to_string(),
                ]
            })
        })
    });
    write_csv(
        &out.join("long.csv"),
        &strings(&["config_index", "repetition", "split", "metric", "value"]),
        rows,
    )?;

    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(agg)? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads `runs.csv` back into run records.
pub fn read_runs_csv(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut runs = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let fields: HashMap<&str, &str> = header
            .iter()
            .map(String::as_str)
            .zip(record.iter())
            .collect();
        let bad = |what: &str| Error::malformed(path, format!("row {}: bad {what}", line + 1));
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(k));
        let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(k));
        let float = |k: &str| get(k)?.parse::<f64>().map_err(|_| bad(k));
        let opt_float = |k: &str| -> Result<Option<f64>> {
            match get(k)? {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(k)),
            }
        };
        let status = RunStatus::parse(get("status")?).ok_or_else(|| bad("status"))?;
        let mut splits = Vec::new();
        if status != RunStatus::Failed {
            for kind in SplitKind::ALL {
                let k = |f: &str| format!("{}_{f}", kind.name());
                splits.push(SplitOutcome {
                    split: kind,
                    n_samples: num(&k("n"))?,
                    accuracy_before: float(&k("acc_before"))?,
                    accuracy_after: float(&k("acc_after"))?,
                    target_accuracy_before: float(&k("target_acc_before"))?,
                    target_accuracy_after: float(&k("target_acc_after"))?,
                    n_broken: num(&k("broken"))?,
                    n_repaired: num(&k("repaired"))?,
                });
            }
        }
        let error = get("error")?;
        runs.push(RunResult {
            config_index: num("config_index")?,
            repetition: num("repetition")?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            config_hash: get("config_hash")?.to_string(),
            status,
            error: (!error.is_empty()).then(|| error.to_string()),
            n_neg: num("n_neg")?,
            n_pos: num("n_pos")?,
            n_localized: num("n_localized")?,
            n_pos_broken: num("n_pos_broken")?,
            identity_fitness: opt_float("identity_fitness")?,
            best_fitness: opt_float("best_fitness")?,
            splits,
            runtime_secs: 0.0,
        });
    }
    Ok(runs)
}
