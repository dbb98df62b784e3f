//! Weight-level fault localization.
//!
//! Every weight of the repair layer gets four impact scores: backward (gradient
//! magnitude) and forward (`|o_i * w_ij|`) impact on failed data and on passed data.
//! The localized set is `(B_failed ∩ F_failed) \ (B_passed ∩ F_passed)`, where each
//! set holds the top `n_g` weights under one score.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Model, WeightRef};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Impact {
    pub back_failed: f64,
    pub fwd_failed: f64,
    pub back_passed: f64,
    pub fwd_passed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImpactKind {
    BackFailed,
    FwdFailed,
    BackPassed,
    FwdPassed,
}

impl ImpactKind {
    pub const ALL: [ImpactKind; 4] = [
        ImpactKind::BackFailed,
        ImpactKind::FwdFailed,
        ImpactKind::BackPassed,
        ImpactKind::FwdPassed,
    ];
}

impl Impact {
    pub fn get(&self, kind: ImpactKind) -> f64 {
        match kind {
            ImpactKind::BackFailed => self.back_failed,
            ImpactKind::FwdFailed => self.fwd_failed,
            ImpactKind::BackPassed => self.back_passed,
            ImpactKind::FwdPassed => self.fwd_passed,
        }
    }
}

/// Impact scores for every weight of one layer, stored in [`WeightRef`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactTable {
    layer: usize,
    input_size: usize,
    output_size: usize,
    impacts: Vec<Impact>,
}

impl ImpactTable {
    pub fn new(
        layer: usize,
        input_size: usize,
        output_size: usize,
        impacts: Vec<Impact>,
    ) -> Result<Self> {
        if impacts.len() != input_size * output_size {
            return Err(Error::Shape(format!(
                "{} impacts for a {output_size}x{input_size} layer",
                impacts.len()
            )));
        }
        let valid = |v: f64| v.is_finite() && v >= 0.0;
        if let Some(k) = impacts
            .iter()
            .position(|i| !ImpactKind::ALL.iter().all(|&kind| valid(i.get(kind))))
        {
            return Err(Error::InvalidConfig(format!(
                "impact {k} is negative or non-finite: {:?}",
                impacts[k]
            )));
        }
        Ok(Self {
            layer,
            input_size,
            output_size,
            impacts,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn len(&self) -> usize {
        self.impacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impacts.is_empty()
    }

    fn ref_at(&self, k: usize) -> WeightRef {
        WeightRef::new(self.layer, k % self.input_size, k / self.input_size)
    }

    fn index_of(&self, r: &WeightRef) -> Option<usize> {
        (r.layer == self.layer && r.from < self.input_size && r.to < self.output_size)
            .then(|| r.to * self.input_size + r.from)
    }

    pub fn get(&self, r: &WeightRef) -> Option<&Impact> {
        self.index_of(r).map(|k| &self.impacts[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeightRef, &Impact)> + '_ {
        self.impacts
            .iter()
            .enumerate()
            .map(|(k, i)| (self.ref_at(k), i))
    }

    pub fn refs(&self) -> Vec<WeightRef> {
        (0..self.len()).map(|k| self.ref_at(k)).collect()
    }

    /// The table with the failed and passed columns exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            impacts: self
                .impacts
                .iter()
                .map(|i| Impact {
                    back_failed: i.back_passed,
                    fwd_failed: i.fwd_passed,
                    back_passed: i.back_failed,
                    fwd_passed: i.fwd_failed,
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Rank of every weight under `kind`: 0 for the largest impact, ties broken by
    /// [`WeightRef`] order.
    fn ranks(&self, kind: ImpactKind) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        // storage order is WeightRef order, so index order breaks ties
        order.sort_by(|&a, &b| {
            self.impacts[b]
                .get(kind)
                .total_cmp(&self.impacts[a].get(kind))
                .then(a.cmp(&b))
        });
        let mut ranks = vec![0; self.len()];
        for (rank, k) in order.into_iter().enumerate() {
            ranks[k] = rank;
        }
        ranks
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "layer",
            "from",
            "to",
            "back_failed",
            "fwd_failed",
            "back_passed",
            "fwd_passed",
        ])?;
        for (r, i) in self.iter() {
            w.write_record([
                r.layer.to_string(),
                r.from.to_string(),
                r.to.to_string(),
                i.back_failed.to_string(),
                i.fwd_failed.to_string(),
                i.back_passed.to_string(),
                i.fwd_passed.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Computes the four impact scores for `layer`.
///
/// Backward impact is `|mean_X dL/dw|`; forward impact is `mean_X |o_i * w_ij|`.
pub fn compute_impacts(
    model: &Model,
    failed: &Batch,
    passed: &Batch,
    layer: usize,
) -> Result<ImpactTable> {
    if failed.is_empty() {
        return Err(Error::EmptyBatch("impact computation needs failed samples"));
    }
    if passed.is_empty() {
        return Err(Error::EmptyBatch("impact computation needs passed samples"));
    }
    let spec = *model.layer(layer)?.spec();
    let weights = model.layer(layer)?.weights();

    let forward = |batch: &Batch| -> Result<Vec<f64>> {
        let o = model.layer_inputs(batch, layer)?;
        let mut acc = vec![0.0; weights.len()];
        for row in o.iter_rows() {
            for (j, chunk) in acc.chunks_mut(spec.input_size).enumerate() {
                let w_row = &weights[j * spec.input_size..(j + 1) * spec.input_size];
                for ((a, &w), &oi) in chunk.iter_mut().zip(w_row).zip(row) {
                    *a += (oi * w).abs();
                }
            }
        }
        let n = batch.len() as f64;
        Ok(acc.into_iter().map(|v| v / n).collect())
    };

    let back_failed = model.weight_gradients(failed, layer)?;
    let back_passed = model.weight_gradients(passed, layer)?;
    let fwd_failed = forward(failed)?;
    let fwd_passed = forward(passed)?;

    let impacts = (0..weights.len())
        .map(|k| Impact {
            back_failed: back_failed.weights()[k].abs(),
            fwd_failed: fwd_failed[k],
            back_passed: back_passed.weights()[k].abs(),
            fwd_passed: fwd_passed[k],
        })
        .collect();
    ImpactTable::new(layer, spec.input_size, spec.output_size, impacts)
}

/// The four top-`n_g` weight sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopSets {
    pub back_failed: BTreeSet<WeightRef>,
    pub fwd_failed: BTreeSet<WeightRef>,
    pub back_passed: BTreeSet<WeightRef>,
    pub fwd_passed: BTreeSet<WeightRef>,
}

fn check_n_g(table: &ImpactTable, n_g: usize) -> Result<()> {
    if n_g == 0 || n_g > table.len() {
        return Err(Error::InvalidConfig(format!(
            "n_g must be in 1..={}, got {n_g}",
            table.len()
        )));
    }
    Ok(())
}

pub fn top_sets(table: &ImpactTable, n_g: usize) -> Result<TopSets> {
    check_n_g(table, n_g)?;
    let top = |kind| -> BTreeSet<WeightRef> {
        table
            .ranks(kind)
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < n_g)
            .map(|(k, _)| table.ref_at(k))
            .collect()
    };
    Ok(TopSets {
        back_failed: top(ImpactKind::BackFailed),
        fwd_failed: top(ImpactKind::FwdFailed),
        back_passed: top(ImpactKind::BackPassed),
        fwd_passed: top(ImpactKind::FwdPassed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalizationWarning {
    /// The set expression selected no weight.
    Empty,
    /// No `n_g` yields `target` weights; the largest achievable set was returned.
    TargetUnreachable { target: usize, achieved: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationProvenance {
    pub n_g: usize,
    /// Sizes of B_failed, F_failed, B_passed, F_passed.
    pub set_sizes: [usize; 4],
    pub target_lw: Option<usize>,
}

/// Weights chosen for repair, most suspicious first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizedSet {
    pub refs: Vec<WeightRef>,
    pub provenance: LocalizationProvenance,
    pub warning: Option<LocalizationWarning>,
}

impl LocalizedSet {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn write_csv(&self, table: Option<&ImpactTable>, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "rank",
            "layer",
            "from",
            "to",
            "back_failed",
            "fwd_failed",
            "back_passed",
            "fwd_passed",
        ])?;
        for (rank, r) in self.refs.iter().enumerate() {
            let i = table.and_then(|t| t.get(r)).copied().unwrap_or_default();
            w.write_record([
                rank.to_string(),
                r.layer.to_string(),
                r.from.to_string(),
                r.to.to_string(),
                i.back_failed.to_string(),
                i.fwd_failed.to_string(),
                i.back_passed.to_string(),
                i.fwd_passed.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Precomputed ranks so that evaluating many `n_g` values is linear each.
struct Ranking<'a> {
    table: &'a ImpactTable,
    ranks: [Vec<usize>; 4],
}

impl<'a> Ranking<'a> {
    fn new(table: &'a ImpactTable) -> Self {
        Self {
            table,
            ranks: ImpactKind::ALL.map(|k| table.ranks(k)),
        }
    }

    fn localize(&self, n_g: usize) -> LocalizedSet {
        let [bf, ff, bp, fp] = &self.ranks;
        let mut picked: Vec<usize> = (0..self.table.len())
            .filter(|&k| bf[k] < n_g && ff[k] < n_g && !(bp[k] < n_g && fp[k] < n_g))
            .collect();
        // most suspicious first: the weaker of the two failed-data ranks binds
        picked.sort_by_key(|&k| (bf[k].max(ff[k]), k));
        let refs: Vec<WeightRef> = picked.into_iter().map(|k| self.table.ref_at(k)).collect();
        let warning = refs.is_empty().then_some(LocalizationWarning::Empty);
        LocalizedSet {
            refs,
            provenance: LocalizationProvenance {
                n_g,
                set_sizes: [n_g; 4],
                target_lw: None,
            },
            warning,
        }
    }

    fn size(&self, n_g: usize) -> usize {
        let [bf, ff, bp, fp] = &self.ranks;
        (0..self.table.len())
            .filter(|&k| bf[k] < n_g && ff[k] < n_g && !(bp[k] < n_g && fp[k] < n_g))
            .count()
    }
}

/// `(B_failed ∩ F_failed) \ (B_passed ∩ F_passed)` at cut `n_g`. An empty result
/// carries [`LocalizationWarning::Empty`] rather than failing.
pub fn localize(table: &ImpactTable, n_g: usize) -> Result<LocalizedSet> {
    check_n_g(table, n_g)?;
    Ok(Ranking::new(table).localize(n_g))
}

/// Finds the smallest `n_g` (doubling, then bisection) whose localized set has at
/// least `target_lw` weights and keeps the `target_lw` most suspicious of them.
///
/// The set size is not monotone in `n_g` (at `n_g = |layer|` the subtraction removes
/// everything), so the doubling pass falls back to a full scan, and an unreachable
/// target yields the largest achievable set with a warning.
pub fn localize_table_to_count(table: &ImpactTable, target_lw: usize) -> Result<LocalizedSet> {
    if target_lw == 0 {
        return Err(Error::InvalidConfig("target_lw must be >= 1".into()));
    }
    if table.is_empty() {
        return Err(Error::InvalidConfig("impact table is empty".into()));
    }
    let ranking = Ranking::new(table);
    let total = table.len();

    let mut found = None;
    let (mut lo, mut n) = (0, 1);
    loop {
        if ranking.size(n) >= target_lw {
            found = Some((lo, n));
            break;
        }
        if n == total {
            break;
        }
        lo = n;
        n = (n * 2).min(total);
    }

    let n_g = match found {
        Some((mut lo, mut hi)) => {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if ranking.size(mid) >= target_lw {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(hi)
        }
        None => (1..=total).find(|&n| ranking.size(n) >= target_lw),
    };

    let mut set = match n_g {
        Some(n_g) => {
            let mut set = ranking.localize(n_g);
            debug_assert!(set.len() >= target_lw);
            set.refs.truncate(target_lw);
            set
        }
        None => {
            let best = (1..=total)
                .max_by_key(|&n| (ranking.size(n), std::cmp::Reverse(n)))
                .expect("table is non-empty");
            let mut set = ranking.localize(best);
            set.warning = Some(LocalizationWarning::TargetUnreachable {
                target: target_lw,
                achieved: set.len(),
            });
            set
        }
    };
    set.provenance.target_lw = Some(target_lw);
    Ok(set)
}

pub fn localize_to_count(
    model: &Model,
    failed: &Batch,
    passed: &Batch,
    layer: usize,
    target_lw: usize,
) -> Result<LocalizedSet> {
    let table = compute_impacts(model, failed, passed, layer)?;
    localize_table_to_count(&table, target_lw)
}

/// How many weights to localize: a fixed top-`n_g` cut or a target set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    TopN(usize),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    /// Repair layer; `None` means the last layer.
    pub layer: Option<usize>,
    pub selection: Selection,
}

impl LocalizationConfig {
    pub fn resolve_layer(&self, model: &Model) -> Result<usize> {
        let layer = self.layer.unwrap_or_else(|| model.last_layer());
        model.layer(layer)?;
        Ok(layer)
    }

    pub fn run(&self, table: &ImpactTable) -> Result<LocalizedSet> {
        match self.selection {
            Selection::TopN(n_g) => localize(table, n_g),
            Selection::Count(target) => localize_table_to_count(table, target),
        }
    }
}
